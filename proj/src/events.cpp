#include "streambin/events.hpp"

#include <charconv>
#include <cstdio>
#include <cstdlib>

namespace streambin {

std::string fixed(double value, int precision) {
  if (value == 0.0) value = 0.0;  // drop negative zero
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", precision, value);
  std::string out(buf);
  if (out.size() > 1 && out[0] == '-' && out.find_first_not_of("-0.") == std::string::npos) {
    out.erase(0, 1);
  }
  return out;
}

std::optional<std::string> Event::get(std::string_view key) const {
  for (const auto& [k, v] : fields) {
    if (k == key) return v;
  }
  return std::nullopt;
}

double Event::number(std::string_view key, double fallback) const {
  auto v = get(key);
  if (!v) return fallback;
  char* end = nullptr;
  const double d = std::strtod(v->c_str(), &end);
  return end == v->c_str() ? fallback : d;
}

std::string Event::format() const {
  std::string line = "event=" + name + " t=" + fixed(ms_to_seconds(t), 3);
  for (const auto& [k, v] : fields) {
    line += ' ';
    line += k;
    line += '=';
    line += v;
  }
  return line;
}

std::optional<Event> parse_event_line(std::string_view line) {
  Event ev;
  bool has_name = false;
  std::size_t pos = 0;
  while (pos < line.size()) {
    while (pos < line.size() && line[pos] == ' ') ++pos;
    std::size_t end = line.find(' ', pos);
    if (end == std::string_view::npos) end = line.size();
    std::string_view tok = line.substr(pos, end - pos);
    pos = end;
    const auto eq = tok.find('=');
    if (eq == std::string_view::npos) continue;
    std::string key(tok.substr(0, eq));
    std::string value(tok.substr(eq + 1));
    if (key == "event") {
      ev.name = value;
      has_name = true;
    } else if (key == "t") {
      ev.t = seconds_to_ms(std::strtod(value.c_str(), nullptr));
    } else {
      ev.fields.emplace_back(std::move(key), std::move(value));
    }
  }
  if (!has_name) return std::nullopt;
  return ev;
}

void EventLog::emit(Millis t, std::string_view name,
                    std::vector<std::pair<std::string, std::string>> fields) {
  Event ev{t, std::string(name), std::move(fields)};
  std::lock_guard lock(mu_);
  if (mirror_) *mirror_ << ev.format() << '\n' << std::flush;
  events_.push_back(std::move(ev));
}

std::vector<Event> EventLog::events() const {
  std::lock_guard lock(mu_);
  return events_;
}

std::vector<Event> EventLog::named(std::string_view name) const {
  std::lock_guard lock(mu_);
  std::vector<Event> out;
  for (const auto& e : events_) {
    if (e.name == name) out.push_back(e);
  }
  return out;
}

std::size_t EventLog::count(std::string_view name) const {
  std::lock_guard lock(mu_);
  std::size_t n = 0;
  for (const auto& e : events_) n += (e.name == name);
  return n;
}

void EventLog::clear() {
  std::lock_guard lock(mu_);
  events_.clear();
}

void EventLog::set_mirror(std::ostream* mirror) {
  std::lock_guard lock(mu_);
  mirror_ = mirror;
}

}  // namespace streambin
