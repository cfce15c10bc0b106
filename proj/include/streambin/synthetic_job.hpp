#pragma once

#include <chrono>
#include <string>
#include <string_view>

namespace streambin {

/// Image name whose stream payloads are synthetic CPU jobs.
inline constexpr const char* kSyntheticImage = "synthetic-load";

/// Duty-cycle period used to shape CPU usage.
inline constexpr std::chrono::milliseconds kDutyPeriod{100};

/// Payload of a synthetic job: `{"target_cpu": 0.5, "duration_s": 10}`.
struct SyntheticJob {
  double target_cpu = 1.0;
  double duration_s = 0.0;

  /// Throws std::invalid_argument on malformed JSON or out-of-range fields.
  static SyntheticJob parse(std::string_view payload);
  std::string to_payload() const;
};

/// Busies the calling thread at roughly `target_cpu` for `duration_s` of wall
/// time: each period spins for target*period and sleeps for the rest.
void run_synthetic_job(const SyntheticJob& job);

/// CPU time (user + system) consumed by the calling process, in seconds.
double process_cpu_seconds();

}  // namespace streambin
