#pragma once

#include <cstddef>
#include <deque>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "streambin/clock.hpp"
#include "streambin/events.hpp"

namespace streambin::irm {

/// Tunables of the resource manager. JSON keys match the field names.
/// Durations are seconds in JSON and in this struct.
struct IrmConfig {
  double packing_interval = 2.0;
  int profiler_window_N = 10;
  double report_interval = 1.0;
  double container_idle_timeout = 1.0;
  double default_cpu_estimate = 0.5;
  int ttl_initial = 3;
  long len_low = 10;
  long len_high = 50;
  double roc_low = 1.0;
  double roc_high = 5.0;
  int scale_small = 1;
  int scale_large = 4;
  double predictor_interval = 2.0;
  double predictor_timeout = 10.0;
  double worker_grace = 30.0;
  int max_workers = 5;
  double reservation_window = 5.0;

  /// Throws std::invalid_argument listing every violated constraint.
  void validate() const;

  static IrmConfig from_json(const nlohmann::json& j);
  /// Applies the keys present in `j` on top of `base`; unknown keys are rejected.
  static IrmConfig merge(IrmConfig base, const nlohmann::json& j);
  nlohmann::json to_json() const;
};

/// Smallest item size handed to the packer; profiles can legitimately read 0.
inline constexpr double kMinItemSize = 0.01;

double item_size(double estimate);

struct ContainerRequest {
  std::string request_id;
  std::string image;
  std::string tag;
  int ttl = 0;
  double estimated_cpu = 0.0;
  std::optional<std::string> target_worker;
  Millis enqueued_at = 0;
};

/// One image's CPU history: a ring of the last N samples.
class ImageProfile {
 public:
  ImageProfile(std::string image, std::size_t window, double default_estimate);

  void add(double cpu_fraction);
  /// Moving average, or the default estimate before any sample.
  double estimate() const;
  std::size_t sample_count() const { return sample_count_; }
  const std::deque<double>& window() const { return window_; }
  const std::string& image() const { return image_; }

  void pin(double value);
  bool pinned() const { return pinned_.has_value(); }

 private:
  std::string image_;
  std::size_t capacity_;
  double default_estimate_;
  std::deque<double> window_;
  double sum_ = 0.0;
  std::size_t sample_count_ = 0;
  std::optional<double> pinned_;
};

/// Master half of the worker profiler. Per-image averages reported by
/// workers are collected as pending observations and folded into one sample
/// per image (the mean across reporting workers) on each aggregate() call.
class Profiler {
 public:
  Profiler(std::size_t window, double default_estimate);

  const ImageProfile& add_sample(const std::string& image, double cpu_fraction);
  void observe(const std::string& image, double cpu_fraction);
  /// Folds pending observations into the profiles. Returns images updated.
  std::vector<std::string> aggregate();

  double estimate(const std::string& image) const;
  const ImageProfile* find(const std::string& image) const;
  /// Fixes an image's estimate; later samples are ignored for it.
  void pin(const std::string& image, double value);
  std::size_t window() const { return window_; }
  double default_estimate() const { return default_estimate_; }

 private:
  ImageProfile& profile(const std::string& image);

  std::size_t window_;
  double default_estimate_;
  std::map<std::string, ImageProfile> profiles_;
  std::map<std::string, std::pair<double, int>> pending_;
};

/// FIFO of PE hosting requests waiting for a packing run.
class ContainerQueue {
 public:
  explicit ContainerQueue(EventLog* events = nullptr) : events_(events) {}

  /// Requests with ttl <= 0 are dropped with a `request_dropped` event.
  /// Returns false when the request was dropped.
  bool push(ContainerRequest request, Millis now);
  /// Overwrites each request's estimate with its image's profile average
  /// (only for images that have at least one sample or a pinned value).
  void refresh(const Profiler& profiler);

  /// Appends a request that was taken out by a packing run but not placed;
  /// keeps its original enqueue time.
  void restore(ContainerRequest request) { entries_.push_back(std::move(request)); }

  std::optional<ContainerRequest> pop();
  std::vector<ContainerRequest> take_all();
  const std::deque<ContainerRequest>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  std::size_t count_image(const std::string& image) const;

 private:
  EventLog* events_;
  std::deque<ContainerRequest> entries_;
};

struct QueueMetrics {
  long length = 0;
  double roc = 0.0;  // messages per second, signed
  Millis sampled_at = 0;
};

/// Turns successive backlog length readings into QueueMetrics.
class QueueMonitor {
 public:
  QueueMetrics sample(long length, Millis now);

 private:
  std::optional<QueueMetrics> last_;
};

struct ScalingDecision {
  enum class Kind { none, small, large };
  Kind kind = Kind::none;
  int count = 0;

  bool operator==(const ScalingDecision&) const = default;
};

std::string_view to_string(ScalingDecision::Kind k);

/// Four-case threshold table over queue length and its rate of change, with
/// a quiet period after every non-none decision.
class LoadPredictor {
 public:
  explicit LoadPredictor(const IrmConfig& config) : config_(config) {}

  /// Pure threshold classification, ignoring the quiet period.
  ScalingDecision classify(const QueueMetrics& metrics) const;
  /// classify() subject to the timeout; records the decision time.
  ScalingDecision evaluate(const QueueMetrics& metrics);
  /// Marks a decision taken outside evaluate() (e.g. the liveness guard).
  void note_decision(Millis at) { last_decision_ = at; }
  bool suppressed(Millis now) const;

 private:
  IrmConfig config_;
  std::optional<Millis> last_decision_;
};

/// max(1, ceil(log2(active + 1)))
int idle_buffer(int active);
/// min(max_workers, bins_needed + idle_buffer(active))
int target_workers(int bins_needed, int active, int max_workers);

}  // namespace streambin::irm
