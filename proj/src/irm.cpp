#include "streambin/irm.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace streambin::irm {

// ---- config ----------------------------------------------------------------

void IrmConfig::validate() const {
  std::vector<std::string> errors;
  auto require = [&](bool ok, const char* what) {
    if (!ok) errors.emplace_back(what);
  };
  require(packing_interval > 0, "packing_interval must be > 0");
  require(profiler_window_N >= 1, "profiler_window_N must be >= 1");
  require(report_interval > 0, "report_interval must be > 0");
  require(container_idle_timeout >= 0, "container_idle_timeout must be >= 0");
  require(default_cpu_estimate > 0 && default_cpu_estimate <= 1,
          "default_cpu_estimate must be in (0, 1]");
  require(ttl_initial >= 1, "ttl_initial must be >= 1");
  require(len_low < len_high, "len_low must be < len_high");
  require(roc_low < roc_high, "roc_low must be < roc_high");
  require(scale_small >= 1, "scale_small must be >= 1");
  require(scale_small <= scale_large, "scale_small must be <= scale_large");
  require(predictor_interval > 0, "predictor_interval must be > 0");
  require(predictor_timeout >= 0, "predictor_timeout must be >= 0");
  require(worker_grace >= 0, "worker_grace must be >= 0");
  require(max_workers >= 1, "max_workers must be >= 1");
  require(reservation_window >= 0, "reservation_window must be >= 0");
  if (!errors.empty()) {
    std::ostringstream os;
    os << "invalid IRM config:";
    for (const auto& e : errors) os << "\n  " << e;
    throw std::invalid_argument(os.str());
  }
}

nlohmann::json IrmConfig::to_json() const {
  return {{"packing_interval", packing_interval},
          {"profiler_window_N", profiler_window_N},
          {"report_interval", report_interval},
          {"container_idle_timeout", container_idle_timeout},
          {"default_cpu_estimate", default_cpu_estimate},
          {"ttl_initial", ttl_initial},
          {"len_low", len_low},
          {"len_high", len_high},
          {"roc_low", roc_low},
          {"roc_high", roc_high},
          {"scale_small", scale_small},
          {"scale_large", scale_large},
          {"predictor_interval", predictor_interval},
          {"predictor_timeout", predictor_timeout},
          {"worker_grace", worker_grace},
          {"max_workers", max_workers},
          {"reservation_window", reservation_window}};
}

IrmConfig IrmConfig::merge(IrmConfig c, const nlohmann::json& j) {
  if (!j.is_object()) throw std::invalid_argument("IRM config must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (key == "packing_interval") c.packing_interval = value.get<double>();
    else if (key == "profiler_window_N") c.profiler_window_N = value.get<int>();
    else if (key == "report_interval") c.report_interval = value.get<double>();
    else if (key == "container_idle_timeout") c.container_idle_timeout = value.get<double>();
    else if (key == "default_cpu_estimate") c.default_cpu_estimate = value.get<double>();
    else if (key == "ttl_initial") c.ttl_initial = value.get<int>();
    else if (key == "len_low") c.len_low = value.get<long>();
    else if (key == "len_high") c.len_high = value.get<long>();
    else if (key == "roc_low") c.roc_low = value.get<double>();
    else if (key == "roc_high") c.roc_high = value.get<double>();
    else if (key == "scale_small") c.scale_small = value.get<int>();
    else if (key == "scale_large") c.scale_large = value.get<int>();
    else if (key == "predictor_interval") c.predictor_interval = value.get<double>();
    else if (key == "predictor_timeout") c.predictor_timeout = value.get<double>();
    else if (key == "worker_grace") c.worker_grace = value.get<double>();
    else if (key == "max_workers") c.max_workers = value.get<int>();
    else if (key == "reservation_window") c.reservation_window = value.get<double>();
    else throw std::invalid_argument("unknown IRM config key '" + key + "'");
  }
  c.validate();
  return c;
}

IrmConfig IrmConfig::from_json(const nlohmann::json& j) { return merge(IrmConfig{}, j); }

double item_size(double estimate) { return std::clamp(estimate, kMinItemSize, 1.0); }

// ---- profiler ----------------------------------------------------------------

ImageProfile::ImageProfile(std::string image, std::size_t window, double default_estimate)
    : image_(std::move(image)), capacity_(std::max<std::size_t>(1, window)),
      default_estimate_(default_estimate) {}

void ImageProfile::add(double cpu_fraction) {
  if (pinned_) return;
  cpu_fraction = std::clamp(cpu_fraction, 0.0, 1.0);
  window_.push_back(cpu_fraction);
  if (window_.size() > capacity_) window_.pop_front();
  // Recompute instead of keeping a running sum so the mean is exact for the
  // current window contents.
  sum_ = 0.0;
  for (double v : window_) sum_ += v;
  ++sample_count_;
}

double ImageProfile::estimate() const {
  if (pinned_) return *pinned_;
  if (window_.empty()) return default_estimate_;
  return sum_ / static_cast<double>(window_.size());
}

void ImageProfile::pin(double value) { pinned_ = std::clamp(value, 0.0, 1.0); }

Profiler::Profiler(std::size_t window, double default_estimate)
    : window_(window), default_estimate_(default_estimate) {}

ImageProfile& Profiler::profile(const std::string& image) {
  auto it = profiles_.find(image);
  if (it == profiles_.end()) {
    it = profiles_.emplace(image, ImageProfile(image, window_, default_estimate_)).first;
  }
  return it->second;
}

const ImageProfile& Profiler::add_sample(const std::string& image, double cpu_fraction) {
  if (cpu_fraction < 0.0 || cpu_fraction > 1.0) {
    throw std::invalid_argument("cpu sample outside [0, 1]");
  }
  auto& p = profile(image);
  p.add(cpu_fraction);
  return p;
}

void Profiler::observe(const std::string& image, double cpu_fraction) {
  auto& [sum, n] = pending_[image];
  sum += std::clamp(cpu_fraction, 0.0, 1.0);
  ++n;
}

std::vector<std::string> Profiler::aggregate() {
  std::vector<std::string> updated;
  for (const auto& [image, sn] : pending_) {
    add_sample(image, sn.first / sn.second);
    updated.push_back(image);
  }
  pending_.clear();
  return updated;
}

double Profiler::estimate(const std::string& image) const {
  const auto* p = find(image);
  return p ? p->estimate() : default_estimate_;
}

const ImageProfile* Profiler::find(const std::string& image) const {
  auto it = profiles_.find(image);
  return it == profiles_.end() ? nullptr : &it->second;
}

void Profiler::pin(const std::string& image, double value) { profile(image).pin(value); }

// ---- container queue ------------------------------------------------------

bool ContainerQueue::push(ContainerRequest request, Millis now) {
  if (request.ttl <= 0) {
    if (events_) {
      events_->emit(now, "request_dropped",
                    {{"request", request.request_id}, {"image", request.image},
                     {"reason", "ttl_exhausted"}});
    }
    return false;
  }
  request.target_worker.reset();
  request.enqueued_at = now;
  entries_.push_back(std::move(request));
  return true;
}

void ContainerQueue::refresh(const Profiler& profiler) {
  for (auto& r : entries_) {
    const auto* p = profiler.find(r.image);
    if (p && (p->sample_count() > 0 || p->pinned())) r.estimated_cpu = item_size(p->estimate());
  }
}

std::optional<ContainerRequest> ContainerQueue::pop() {
  if (entries_.empty()) return std::nullopt;
  auto r = std::move(entries_.front());
  entries_.pop_front();
  return r;
}

std::vector<ContainerRequest> ContainerQueue::take_all() {
  std::vector<ContainerRequest> out(std::make_move_iterator(entries_.begin()),
                                    std::make_move_iterator(entries_.end()));
  entries_.clear();
  return out;
}

std::size_t ContainerQueue::count_image(const std::string& image) const {
  return static_cast<std::size_t>(std::count_if(
      entries_.begin(), entries_.end(), [&](const auto& r) { return r.image == image; }));
}

// ---- load predictor -------------------------------------------------------

QueueMetrics QueueMonitor::sample(long length, Millis now) {
  QueueMetrics m{length, 0.0, now};
  if (last_ && now > last_->sampled_at) {
    m.roc = static_cast<double>(length - last_->length) / ms_to_seconds(now - last_->sampled_at);
  }
  last_ = m;
  return m;
}

std::string_view to_string(ScalingDecision::Kind k) {
  switch (k) {
    case ScalingDecision::Kind::none:
      return "none";
    case ScalingDecision::Kind::small:
      return "small";
    case ScalingDecision::Kind::large:
      return "large";
  }
  return "none";
}

ScalingDecision LoadPredictor::classify(const QueueMetrics& m) const {
  using Kind = ScalingDecision::Kind;
  const bool long_queue = m.length >= config_.len_high;
  const bool steep = m.roc >= config_.roc_high;
  const bool queue = m.length >= config_.len_low;
  const bool rising = m.roc >= config_.roc_low;
  if (long_queue || steep) return {Kind::large, config_.scale_large};
  if (queue && rising) return {Kind::large, config_.scale_large};
  if (queue && !rising) return {Kind::small, config_.scale_small};
  if (!queue && rising) return {Kind::small, config_.scale_small};
  return {};
}

bool LoadPredictor::suppressed(Millis now) const {
  return last_decision_ && now - *last_decision_ < seconds_to_ms(config_.predictor_timeout);
}

ScalingDecision LoadPredictor::evaluate(const QueueMetrics& m) {
  if (suppressed(m.sampled_at)) return {};
  auto d = classify(m);
  if (d.kind != ScalingDecision::Kind::none) last_decision_ = m.sampled_at;
  return d;
}

// ---- autoscaler -------------------------------------------------------------

int idle_buffer(int active) {
  const long n = static_cast<long>(std::max(active, 0)) + 1;
  int k = 0;
  while ((1L << k) < n) ++k;
  return std::max(1, k);
}

int target_workers(int bins_needed, int active, int max_workers) {
  return std::min(max_workers, bins_needed + idle_buffer(active));
}

}  // namespace streambin::irm
