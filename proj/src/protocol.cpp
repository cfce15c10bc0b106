#include "streambin/protocol.hpp"

#include <array>
#include <cmath>

namespace streambin::protocol {

MalformedFrame::MalformedFrame(const std::string& what, std::size_t offset)
    : std::runtime_error(what + " (at byte " + std::to_string(offset) + ")"), offset_(offset) {}

std::string_view to_string(PeState s) {
  switch (s) {
    case PeState::starting:
      return "starting";
    case PeState::running:
      return "running";
    case PeState::idle:
      return "idle";
  }
  return "starting";
}

PeState pe_state_from_string(std::string_view s) {
  if (s == "starting") return PeState::starting;
  if (s == "running") return PeState::running;
  if (s == "idle") return PeState::idle;
  throw std::invalid_argument("unknown PE state '" + std::string(s) + "'");
}

std::map<std::string, double> WorkerReport::image_averages(const std::vector<PeStat>& stats) {
  std::map<std::string, std::pair<double, int>> acc;
  for (const auto& s : stats) {
    if (s.state != PeState::running) continue;
    auto& [sum, n] = acc[s.image];
    sum += s.cpu_fraction;
    ++n;
  }
  std::map<std::string, double> out;
  for (const auto& [image, sn] : acc) out[image] = sn.first / sn.second;
  return out;
}

// ---- base64 -------------------------------------------------------------

namespace {

constexpr char kAlphabet[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

int b64_value(char c) {
  if (c >= 'A' && c <= 'Z') return c - 'A';
  if (c >= 'a' && c <= 'z') return c - 'a' + 26;
  if (c >= '0' && c <= '9') return c - '0' + 52;
  if (c == '+') return 62;
  if (c == '/') return 63;
  return -1;
}

}  // namespace

std::string base64_encode(std::string_view bytes) {
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  std::size_t i = 0;
  for (; i + 2 < bytes.size(); i += 3) {
    const unsigned v = (static_cast<unsigned char>(bytes[i]) << 16) |
                       (static_cast<unsigned char>(bytes[i + 1]) << 8) |
                       static_cast<unsigned char>(bytes[i + 2]);
    out += kAlphabet[(v >> 18) & 63];
    out += kAlphabet[(v >> 12) & 63];
    out += kAlphabet[(v >> 6) & 63];
    out += kAlphabet[v & 63];
  }
  const std::size_t rest = bytes.size() - i;
  if (rest == 1) {
    const unsigned v = static_cast<unsigned char>(bytes[i]) << 16;
    out += kAlphabet[(v >> 18) & 63];
    out += kAlphabet[(v >> 12) & 63];
    out += "==";
  } else if (rest == 2) {
    const unsigned v = (static_cast<unsigned char>(bytes[i]) << 16) |
                       (static_cast<unsigned char>(bytes[i + 1]) << 8);
    out += kAlphabet[(v >> 18) & 63];
    out += kAlphabet[(v >> 12) & 63];
    out += kAlphabet[(v >> 6) & 63];
    out += '=';
  }
  return out;
}

std::string base64_decode(std::string_view text) {
  if (text.size() % 4 != 0) throw std::invalid_argument("base64 length not a multiple of 4");
  std::string out;
  out.reserve(text.size() / 4 * 3);
  for (std::size_t i = 0; i < text.size(); i += 4) {
    std::array<int, 4> v{};
    int pad = 0;
    for (int k = 0; k < 4; ++k) {
      const char c = text[i + k];
      if (c == '=' && i + 4 == text.size() && k >= 2) {
        v[k] = 0;
        ++pad;
        continue;
      }
      if (pad > 0) throw std::invalid_argument("base64 data after padding");
      v[k] = b64_value(c);
      if (v[k] < 0) throw std::invalid_argument("invalid base64 character");
    }
    const unsigned bits = (v[0] << 18) | (v[1] << 12) | (v[2] << 6) | v[3];
    out += static_cast<char>((bits >> 16) & 0xFF);
    if (pad < 2) out += static_cast<char>((bits >> 8) & 0xFF);
    if (pad < 1) out += static_cast<char>(bits & 0xFF);
  }
  return out;
}

// ---- JSON mapping ---------------------------------------------------------

namespace {

void check(bool ok, const char* what) {
  if (!ok) throw std::invalid_argument(what);
}

double cpu_field(const json& j, const char* key) {
  const double v = j.at(key).get<double>();
  check(v >= 0.0 && v <= 1.0 && !std::isnan(v), "cpu fraction outside [0, 1]");
  return v;
}

}  // namespace

void to_json(json& j, const StreamMessage& v) {
  j = json{{"type", StreamMessage::kType},
           {"payload", base64_encode(v.payload)},
           {"image", v.image},
           {"tag", v.tag},
           {"message_id", v.message_id},
           {"created_at", v.created_at}};
}

void from_json(const json& j, StreamMessage& v) {
  v.payload = base64_decode(j.at("payload").get<std::string>());
  v.image = j.at("image").get<std::string>();
  check(!v.image.empty(), "stream message image must be nonempty");
  v.tag = j.value("tag", "");
  v.message_id = j.at("message_id").get<std::string>();
  v.created_at = j.value("created_at", Millis{0});
}

void to_json(json& j, const PeEndpoint& v) {
  j = json{{"type", PeEndpoint::kType}, {"worker_id", v.worker_id}, {"host", v.host},
           {"port", v.port},           {"pe_id", v.pe_id},         {"image", v.image},
           {"tag", v.tag}};
}

void from_json(const json& j, PeEndpoint& v) {
  v.worker_id = j.at("worker_id").get<std::string>();
  v.host = j.at("host").get<std::string>();
  v.port = j.at("port").get<int>();
  check(v.port >= 1 && v.port <= 65535, "port outside [1, 65535]");
  v.pe_id = j.at("pe_id").get<std::string>();
  v.image = j.at("image").get<std::string>();
  v.tag = j.value("tag", "");
}

void to_json(json& j, const PeStat& v) {
  j = json{{"pe_id", v.pe_id},
           {"image", v.image},
           {"tag", v.tag},
           {"cpu_fraction", v.cpu_fraction},
           {"state", std::string(to_string(v.state))},
           {"last_activity", v.last_activity}};
}

void from_json(const json& j, PeStat& v) {
  v.pe_id = j.at("pe_id").get<std::string>();
  v.image = j.at("image").get<std::string>();
  v.tag = j.value("tag", "");
  v.cpu_fraction = cpu_field(j, "cpu_fraction");
  v.state = pe_state_from_string(j.at("state").get<std::string>());
  v.last_activity = j.value("last_activity", Millis{0});
}

void to_json(json& j, const WorkerReport& v) {
  j = json{{"type", WorkerReport::kType},
           {"worker_id", v.worker_id},
           {"sent_at", v.sent_at},
           {"pe_stats", v.pe_stats},
           {"per_image_avg", v.per_image_avg}};
}

void from_json(const json& j, WorkerReport& v) {
  v.worker_id = j.at("worker_id").get<std::string>();
  v.sent_at = j.at("sent_at").get<Millis>();
  v.pe_stats = j.at("pe_stats").get<std::vector<PeStat>>();
  v.per_image_avg.clear();
  if (j.contains("per_image_avg")) {
    for (const auto& [image, avg] : j.at("per_image_avg").items()) {
      const double a = avg.get<double>();
      check(a >= 0.0 && a <= 1.0, "per-image average outside [0, 1]");
      v.per_image_avg[image] = a;
    }
  } else {
    v.per_image_avg = WorkerReport::image_averages(v.pe_stats);
  }
}

void to_json(json& j, const WorkerRegistration& v) {
  j = json{{"type", WorkerRegistration::kType}, {"host", v.host}, {"port", v.port}};
}

void from_json(const json& j, WorkerRegistration& v) {
  v.host = j.at("host").get<std::string>();
  v.port = j.at("port").get<int>();
  check(v.port >= 1 && v.port <= 65535, "port outside [1, 65535]");
}

void to_json(json& j, const RegistrationAck& v) {
  j = json{{"type", RegistrationAck::kType}, {"worker_id", v.worker_id}};
}

void from_json(const json& j, RegistrationAck& v) {
  v.worker_id = j.at("worker_id").get<std::string>();
}

void to_json(json& j, const PeStartRequest& v) {
  j = json{{"type", PeStartRequest::kType},
           {"image", v.image},
           {"tag", v.tag},
           {"pe_id", v.pe_id},
           {"estimated_cpu", v.estimated_cpu}};
}

void from_json(const json& j, PeStartRequest& v) {
  v.image = j.at("image").get<std::string>();
  check(!v.image.empty(), "image must be nonempty");
  v.tag = j.value("tag", "");
  v.pe_id = j.at("pe_id").get<std::string>();
  v.estimated_cpu = j.value("estimated_cpu", 0.0);
}

void to_json(json& j, const PeStartReply& v) {
  j = json{{"type", PeStartReply::kType},
           {"endpoint", v.endpoint},
           {"state", std::string(to_string(v.state))}};
}

void from_json(const json& j, PeStartReply& v) {
  v.endpoint = j.at("endpoint").get<PeEndpoint>();
  v.state = pe_state_from_string(j.at("state").get<std::string>());
}

void to_json(json& j, const PeStopRequest& v) {
  j = json{{"type", PeStopRequest::kType}, {"pe_id", v.pe_id}};
}

void from_json(const json& j, PeStopRequest& v) { v.pe_id = j.at("pe_id").get<std::string>(); }

void to_json(json& j, const HostingRequest& v) {
  j = json{{"type", HostingRequest::kType}, {"image", v.image}, {"tag", v.tag}, {"count", v.count}};
}

void from_json(const json& j, HostingRequest& v) {
  v.image = j.at("image").get<std::string>();
  check(!v.image.empty(), "image must be nonempty");
  v.tag = j.value("tag", "");
  v.count = j.value("count", 1);
  check(v.count >= 1, "count must be >= 1");
}

void to_json(json& j, const WorkerSample& v) {
  j = json{{"worker_id", v.worker_id},
           {"scheduled_cpu", v.scheduled_cpu},
           {"measured_cpu", v.measured_cpu},
           {"error_pp", v.error_pp}};
}

void from_json(const json& j, WorkerSample& v) {
  v.worker_id = j.at("worker_id").get<std::string>();
  v.scheduled_cpu = j.at("scheduled_cpu").get<double>();
  v.measured_cpu = j.at("measured_cpu").get<double>();
  v.error_pp = j.at("error_pp").get<double>();
  check(v.error_pp >= -100.0 - 1e-9 && v.error_pp <= 100.0 + 1e-9, "error_pp outside [-100, 100]");
}

void to_json(json& j, const MetricsFrame& v) {
  j = json{{"type", MetricsFrame::kType},
           {"t", v.t},
           {"per_worker", v.per_worker},
           {"queue_length", v.queue_length},
           {"active_workers", v.active_workers},
           {"target_workers", v.target_workers},
           {"ideal_bins", v.ideal_bins}};
}

void from_json(const json& j, MetricsFrame& v) {
  v.t = j.at("t").get<double>();
  v.per_worker = j.at("per_worker").get<std::vector<WorkerSample>>();
  v.queue_length = j.at("queue_length").get<long>();
  v.active_workers = j.at("active_workers").get<int>();
  v.target_workers = j.at("target_workers").get<int>();
  v.ideal_bins = j.at("ideal_bins").get<int>();
}

namespace detail {

json parse_frame(std::string_view bytes, std::string_view expected_type) {
  json j;
  try {
    j = json::parse(bytes.begin(), bytes.end());
  } catch (const json::parse_error& e) {
    const std::size_t offset = e.byte > 0 ? e.byte - 1 : 0;
    throw MalformedFrame(std::string("unparseable frame: ") + e.what(), offset);
  }
  if (!j.is_object()) throw MalformedFrame("frame is not a JSON object", 0);
  const auto type = j.find("type");
  if (type == j.end() || !type->is_string()) {
    throw MalformedFrame("frame has no type discriminator", bytes.size());
  }
  if (type->get<std::string>() != expected_type) {
    throw MalformedFrame("expected frame type '" + std::string(expected_type) + "', got '" +
                             type->get<std::string>() + "'",
                         bytes.size());
  }
  return j;
}

}  // namespace detail

}  // namespace streambin::protocol
