#pragma once

#include <cstddef>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "streambin/clock.hpp"

namespace streambin::protocol {

using nlohmann::json;

/// Stream metadata headers used when a payload travels as a raw HTTP body.
inline constexpr const char* kImageHeader = "X-Stream-Image";
inline constexpr const char* kTagHeader = "X-Stream-Tag";
inline constexpr const char* kMessageIdHeader = "X-Message-Id";
inline constexpr const char* kCreatedAtHeader = "X-Created-At";

/// Decoding failure. `offset` is the byte position where the frame stopped
/// making sense (end of frame for schema violations).
class MalformedFrame : public std::runtime_error {
 public:
  MalformedFrame(const std::string& what, std::size_t offset);
  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

struct StreamMessage {
  static constexpr const char* kType = "stream_message";
  std::string payload;  // opaque bytes
  std::string image;
  std::string tag;
  std::string message_id;
  Millis created_at = 0;

  bool operator==(const StreamMessage&) const = default;
};

struct PeEndpoint {
  static constexpr const char* kType = "pe_endpoint";
  std::string worker_id;
  std::string host;
  int port = 0;
  std::string pe_id;
  std::string image;
  std::string tag;

  bool operator==(const PeEndpoint&) const = default;
};

enum class PeState { starting, running, idle };

std::string_view to_string(PeState s);
PeState pe_state_from_string(std::string_view s);

struct PeStat {
  std::string pe_id;
  std::string image;
  std::string tag;
  double cpu_fraction = 0.0;
  PeState state = PeState::starting;
  Millis last_activity = 0;

  bool operator==(const PeStat&) const = default;
};

struct WorkerReport {
  static constexpr const char* kType = "worker_report";
  std::string worker_id;
  Millis sent_at = 0;
  std::vector<PeStat> pe_stats;
  std::map<std::string, double> per_image_avg;

  /// Mean cpu_fraction per image over the PEs currently running a job.
  static std::map<std::string, double> image_averages(const std::vector<PeStat>& stats);

  bool operator==(const WorkerReport&) const = default;
};

struct WorkerRegistration {
  static constexpr const char* kType = "worker_register";
  std::string host;
  int port = 0;

  bool operator==(const WorkerRegistration&) const = default;
};

struct RegistrationAck {
  static constexpr const char* kType = "worker_registered";
  std::string worker_id;

  bool operator==(const RegistrationAck&) const = default;
};

struct PeStartRequest {
  static constexpr const char* kType = "pe_start";
  std::string image;
  std::string tag;
  std::string pe_id;
  double estimated_cpu = 0.0;

  bool operator==(const PeStartRequest&) const = default;
};

struct PeStartReply {
  static constexpr const char* kType = "pe_start_reply";
  PeEndpoint endpoint;
  PeState state = PeState::starting;

  bool operator==(const PeStartReply&) const = default;
};

struct PeStopRequest {
  static constexpr const char* kType = "pe_stop";
  std::string pe_id;

  bool operator==(const PeStopRequest&) const = default;
};

/// Manual hosting request sent by users to the master.
struct HostingRequest {
  static constexpr const char* kType = "pe_request";
  std::string image;
  std::string tag;
  int count = 1;

  bool operator==(const HostingRequest&) const = default;
};

struct WorkerSample {
  std::string worker_id;
  double scheduled_cpu = 0.0;
  double measured_cpu = 0.0;
  double error_pp = 0.0;

  bool operator==(const WorkerSample&) const = default;
};

/// One sampling instant of the whole system.
struct MetricsFrame {
  static constexpr const char* kType = "metrics_frame";
  double t = 0.0;  // seconds since run start
  std::vector<WorkerSample> per_worker;
  long queue_length = 0;
  int active_workers = 0;
  int target_workers = 0;
  int ideal_bins = 0;

  bool operator==(const MetricsFrame&) const = default;
};

void to_json(json& j, const StreamMessage& v);
void from_json(const json& j, StreamMessage& v);
void to_json(json& j, const PeEndpoint& v);
void from_json(const json& j, PeEndpoint& v);
void to_json(json& j, const PeStat& v);
void from_json(const json& j, PeStat& v);
void to_json(json& j, const WorkerReport& v);
void from_json(const json& j, WorkerReport& v);
void to_json(json& j, const WorkerRegistration& v);
void from_json(const json& j, WorkerRegistration& v);
void to_json(json& j, const RegistrationAck& v);
void from_json(const json& j, RegistrationAck& v);
void to_json(json& j, const PeStartRequest& v);
void from_json(const json& j, PeStartRequest& v);
void to_json(json& j, const PeStartReply& v);
void from_json(const json& j, PeStartReply& v);
void to_json(json& j, const PeStopRequest& v);
void from_json(const json& j, PeStopRequest& v);
void to_json(json& j, const HostingRequest& v);
void from_json(const json& j, HostingRequest& v);
void to_json(json& j, const WorkerSample& v);
void from_json(const json& j, WorkerSample& v);
void to_json(json& j, const MetricsFrame& v);
void from_json(const json& j, MetricsFrame& v);

std::string base64_encode(std::string_view bytes);
std::string base64_decode(std::string_view text);

/// Serializes any protocol value as a UTF-8 JSON frame carrying its `type`.
template <class T>
std::string encode(const T& value) {
  json j = value;
  return j.dump();
}

namespace detail {
json parse_frame(std::string_view bytes, std::string_view expected_type);
}

/// Parses a frame and checks its `type` discriminator. Unknown keys are ignored.
template <class T>
T decode(std::string_view bytes) {
  json j = detail::parse_frame(bytes, T::kType);
  try {
    return j.get<T>();
  } catch (const MalformedFrame&) {
    throw;
  } catch (const std::exception& e) {
    throw MalformedFrame(std::string("schema violation: ") + e.what(), bytes.size());
  }
}

}  // namespace streambin::protocol
