#pragma once

#include <mutex>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "streambin/clock.hpp"

namespace streambin {

struct Event {
  Millis t = 0;
  std::string name;
  std::vector<std::pair<std::string, std::string>> fields;

  std::optional<std::string> get(std::string_view key) const;
  double number(std::string_view key, double fallback = 0.0) const;
  /// `event=<name> t=<seconds> k=v ...`
  std::string format() const;
};

/// Parses one line produced by Event::format(). Returns nullopt for lines
/// that carry no `event=` key.
std::optional<Event> parse_event_line(std::string_view line);

/// Structured key=value event sink shared by master, workers and the harness.
/// Thread-safe; keeps every event in memory and optionally mirrors lines to a
/// stream.
class EventLog {
 public:
  EventLog() = default;
  explicit EventLog(std::ostream* mirror) : mirror_(mirror) {}

  void emit(Millis t, std::string_view name,
            std::vector<std::pair<std::string, std::string>> fields = {});

  std::vector<Event> events() const;
  std::vector<Event> named(std::string_view name) const;
  std::size_t count(std::string_view name) const;
  void clear();
  void set_mirror(std::ostream* mirror);

 private:
  mutable std::mutex mu_;
  std::vector<Event> events_;
  std::ostream* mirror_ = nullptr;
};

/// Formats a double with fixed precision, trimming nothing; used wherever
/// output must be byte-stable.
std::string fixed(double value, int precision = 6);

}  // namespace streambin
