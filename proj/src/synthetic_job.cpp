#include "streambin/synthetic_job.hpp"

#include <sys/resource.h>

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <thread>

#include <json.hpp>

namespace streambin {

SyntheticJob SyntheticJob::parse(std::string_view payload) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(payload.begin(), payload.end());
  } catch (const nlohmann::json::parse_error& e) {
    throw std::invalid_argument(std::string("synthetic job payload: ") + e.what());
  }
  if (!j.is_object()) throw std::invalid_argument("synthetic job payload must be an object");
  SyntheticJob job;
  try {
    job.target_cpu = j.at("target_cpu").get<double>();
    job.duration_s = j.at("duration_s").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("synthetic job payload: ") + e.what());
  }
  if (!(job.target_cpu > 0.0) || job.target_cpu > 1.0) {
    throw std::invalid_argument("target_cpu must be in (0, 1]");
  }
  if (!(job.duration_s >= 0.0) || !std::isfinite(job.duration_s)) {
    throw std::invalid_argument("duration_s must be >= 0");
  }
  return job;
}

std::string SyntheticJob::to_payload() const {
  return nlohmann::json{{"target_cpu", target_cpu}, {"duration_s", duration_s}}.dump();
}

void run_synthetic_job(const SyntheticJob& job) {
  using clock = std::chrono::steady_clock;
  const auto start = clock::now();
  const auto end = start + std::chrono::duration_cast<clock::duration>(
                               std::chrono::duration<double>(job.duration_s));
  auto period_start = start;
  volatile double sink = 0.0;
  while (period_start < end) {
    const auto period_end = std::min(period_start + kDutyPeriod, end);
    const auto busy_until =
        period_start + std::chrono::duration_cast<clock::duration>(
                           (period_end - period_start) * job.target_cpu);
    while (clock::now() < busy_until) sink = sink + 1.0;
    if (busy_until < period_end) std::this_thread::sleep_until(period_end);
    period_start = period_end;
  }
}

double process_cpu_seconds() {
  rusage usage{};
  getrusage(RUSAGE_SELF, &usage);
  return static_cast<double>(usage.ru_utime.tv_sec + usage.ru_stime.tv_sec) +
         static_cast<double>(usage.ru_utime.tv_usec + usage.ru_stime.tv_usec) / 1e6;
}

}  // namespace streambin
