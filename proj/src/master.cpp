#include "streambin/master.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace streambin::master {

namespace {
constexpr Millis kStoppedPeMemory = 60'000;
}

std::string_view to_string(WorkerState s) {
  switch (s) {
    case WorkerState::provisioning:
      return "provisioning";
    case WorkerState::active:
      return "active";
    case WorkerState::draining:
      return "draining";
    case WorkerState::removed:
      return "removed";
  }
  return "removed";
}

std::string_view to_string(PeStatus s) {
  switch (s) {
    case PeStatus::starting:
      return "starting";
    case PeStatus::idle:
      return "idle";
    case PeStatus::reserved:
      return "reserved";
    case PeStatus::busy:
      return "busy";
  }
  return "starting";
}

std::string_view to_string(AllocationOutcome o) {
  switch (o) {
    case AllocationOutcome::started:
      return "started";
    case AllocationOutcome::requeued:
      return "requeued";
    case AllocationOutcome::dropped:
      return "dropped";
  }
  return "dropped";
}

double WorkerRecord::scheduled_cpu() const {
  double sum = 0.0;
  for (const auto& [id, pe] : pes) sum += pe.scheduled_cpu;
  return sum;
}

double WorkerRecord::measured_cpu() const {
  double sum = 0.0;
  for (const auto& [id, pe] : pes) sum += pe.measured_cpu;
  return std::clamp(sum, 0.0, 1.0);
}

// ---- packing run --------------------------------------------------------------

PackingResult packing_run(std::vector<irm::ContainerRequest> queued,
                          std::span<const WorkerRecord* const> active_workers) {
  std::vector<binpack::Bin> bins = binpack::make_bins(active_workers.size());
  for (std::size_t i = 0; i < active_workers.size(); ++i) {
    const auto* w = active_workers[i];
    bins[i].residual = std::max(0.0, 1.0 - w->scheduled_cpu());
    for (const auto& [pe_id, pe] : w->pes) bins[i].items.push_back(pe_id);
  }

  PackingResult result;
  for (auto& request : queued) {
    const double size = irm::item_size(request.estimated_cpu);
    const std::size_t pos = binpack::first_fit_place({request.request_id, size}, bins);
    if (pos < active_workers.size()) {
      double min_lower = 1.0;
      for (std::size_t k = 0; k < pos; ++k) min_lower = std::min(min_lower, 1.0 - bins[k].residual);
      result.placements.push_back(
          {request.request_id, active_workers[pos]->index, size, min_lower});
      request.target_worker = active_workers[pos]->worker_id;
      result.allocations.push_back(std::move(request));
    } else {
      request.target_worker.reset();
      result.unplaced.push_back(std::move(request));
    }
  }
  result.bins_needed = static_cast<int>(
      std::count_if(bins.begin(), bins.end(), [](const binpack::Bin& b) { return !b.empty(); }));
  return result;
}

// ---- master ---------------------------------------------------------------

Master::Master(irm::IrmConfig config, WorkerGateway& gateway, Provisioner& provisioner,
               EventLog& events)
    : config_(std::move(config)),
      gateway_(gateway),
      provisioner_(provisioner),
      events_(events),
      queue_(&events),
      profiler_(static_cast<std::size_t>(config_.profiler_window_N), config_.default_cpu_estimate),
      predictor_(config_) {
  config_.validate();
}

WorkerRecord* Master::find_worker(const std::string& worker_id) {
  auto it = workers_.find(worker_id);
  return it == workers_.end() ? nullptr : &it->second;
}

const WorkerRecord* Master::worker(const std::string& worker_id) const {
  auto it = workers_.find(worker_id);
  return it == workers_.end() ? nullptr : &it->second;
}

std::vector<const WorkerRecord*> Master::workers_by_index() const {
  std::vector<const WorkerRecord*> out;
  for (const auto& [id, w] : workers_) out.push_back(&w);
  std::sort(out.begin(), out.end(), [](auto* a, auto* b) { return a->index < b->index; });
  return out;
}

std::vector<WorkerRecord*> Master::active_by_index() {
  std::vector<WorkerRecord*> out;
  for (auto& [id, w] : workers_) {
    if (w.state == WorkerState::active) out.push_back(&w);
  }
  std::sort(out.begin(), out.end(), [](auto* a, auto* b) { return a->index < b->index; });
  return out;
}

int Master::count_workers(WorkerState state) const {
  return static_cast<int>(std::count_if(workers_.begin(), workers_.end(),
                                        [&](const auto& kv) { return kv.second.state == state; }));
}

std::string Master::register_worker(const std::string& host, int port, Millis now) {
  for (auto& [id, w] : workers_) {
    if (w.host == host && w.port == port) {
      if (w.state == WorkerState::removed) {
        w.state = WorkerState::provisioning;
        w.pes.clear();
        w.registered_at = now;
        events_.emit(now, "worker_registered", {{"worker", id}, {"rejoin", "1"}});
      }
      return id;
    }
  }
  WorkerRecord rec;
  rec.index = next_worker_index_++;
  rec.worker_id = "w" + std::to_string(rec.index);
  rec.host = host;
  rec.port = port;
  rec.registered_at = now;
  const std::string id = rec.worker_id;
  workers_.emplace(id, std::move(rec));
  events_.emit(now, "worker_registered",
               {{"worker", id}, {"address", host + ":" + std::to_string(port)}});
  return id;
}

void Master::ingest_report(const protocol::WorkerReport& report, Millis now) {
  WorkerRecord* w = find_worker(report.worker_id);
  if (!w || w->state == WorkerState::removed) throw UnknownWorker(report.worker_id);
  if (w->state == WorkerState::provisioning) {
    w->state = WorkerState::active;
    events_.emit(now, "worker_active", {{"worker", w->worker_id}});
  }
  w->last_report = now;

  for (auto it = w->stopped_pes.begin(); it != w->stopped_pes.end();) {
    it = now - it->second > kStoppedPeMemory ? w->stopped_pes.erase(it) : std::next(it);
  }
  std::set<std::string> seen;
  for (const auto& stat : report.pe_stats) {
    seen.insert(stat.pe_id);
    auto it = w->pes.find(stat.pe_id);
    if (it == w->pes.end()) {
      if (auto gone = w->stopped_pes.find(stat.pe_id); gone != w->stopped_pes.end()) {
        if (report.sent_at <= gone->second) continue;
        w->stopped_pes.erase(gone);  // the stop never reached the worker
      }
      PeRecord rec;
      rec.pe_id = stat.pe_id;
      rec.image = stat.image;
      rec.tag = stat.tag;
      rec.scheduled_cpu = std::min(irm::item_size(profiler_.estimate(stat.image)),
                                   std::max(0.0, w->residual()));
      rec.created_at = now;
      rec.last_activity = stat.last_activity > 0 ? stat.last_activity : now;
      it = w->pes.emplace(stat.pe_id, rec).first;
      events_.emit(now, "pe_adopted",
                   {{"worker", w->worker_id}, {"pe", stat.pe_id}, {"image", stat.image},
                    {"cpu", fixed(rec.scheduled_cpu)}});
    }
    PeRecord& pe = it->second;
    pe.measured_cpu = stat.cpu_fraction;
    // A report built before the master's last handoff to this PE is stale
    // with respect to its state.
    const Millis master_mark = pe.status == PeStatus::reserved ? pe.reserved_at : pe.last_activity;
    const bool stale = (pe.status == PeStatus::busy || pe.status == PeStatus::reserved) &&
                       report.sent_at < master_mark;
    switch (stat.state) {
      case protocol::PeState::starting:
        pe.status = PeStatus::starting;
        break;
      case protocol::PeState::running:
        pe.status = PeStatus::busy;
        pe.last_activity = std::max(pe.last_activity, stat.last_activity);
        break;
      case protocol::PeState::idle:
        if (stale) break;
        if (pe.status == PeStatus::reserved && now < pe.reserved_until &&
            stat.last_activity < pe.reserved_at) {
          break;  // connector has not handed the message over yet
        }
        pe.status = PeStatus::idle;
        pe.last_activity = stat.last_activity > 0 ? stat.last_activity : now;
        break;
    }
  }
  for (auto it = w->pes.begin(); it != w->pes.end();) {
    if (!seen.count(it->first) && it->second.created_at <= report.sent_at) {
      events_.emit(now, "pe_lost", {{"worker", w->worker_id}, {"pe", it->first}});
      it = w->pes.erase(it);
    } else {
      ++it;
    }
  }
  for (const auto& [image, avg] : report.per_image_avg) profiler_.observe(image, avg);
  drain_backlog(now);
}

void Master::check_liveness(Millis now) {
  const Millis limit = 3 * seconds_to_ms(config_.report_interval);
  for (auto& [id, w] : workers_) {
    if (w.state != WorkerState::active && w.state != WorkerState::draining) continue;
    if (now - w.last_report > limit) {
      w.state = WorkerState::removed;
      w.pes.clear();
      events_.emit(now, "worker_lost", {{"worker", id}});
    }
  }
}

std::pair<WorkerRecord*, PeRecord*> Master::idle_pe(const std::string& image,
                                                    const std::string& tag) {
  for (WorkerRecord* w : active_by_index()) {
    for (auto& [pe_id, pe] : w->pes) {
      if (pe.status == PeStatus::idle && pe.image == image && pe.tag == tag) return {w, &pe};
    }
  }
  return {nullptr, nullptr};
}

bool Master::backlog_has(const std::string& image, const std::string& tag) const {
  return std::any_of(backlog_.begin(), backlog_.end(),
                     [&](const auto& m) { return m.image == image && m.tag == tag; });
}

bool Master::image_has_capacity(const std::string& image, const std::string& tag) const {
  for (const auto& [id, w] : workers_) {
    if (w.state == WorkerState::removed) continue;
    for (const auto& [pe_id, pe] : w.pes) {
      if (pe.image == image && pe.tag == tag) return true;
    }
  }
  return std::any_of(queue_.entries().begin(), queue_.entries().end(),
                     [&](const auto& r) { return r.image == image && r.tag == tag; });
}

std::optional<protocol::PeEndpoint> Master::find_available_pe(const std::string& image,
                                                              const std::string& tag, Millis now) {
  // Older backlog messages for this image always go first.
  drain_backlog(now);
  if (backlog_has(image, tag)) return std::nullopt;
  auto [w, pe] = idle_pe(image, tag);
  if (!pe) return std::nullopt;
  pe->status = PeStatus::reserved;
  pe->reserved_at = now;
  pe->reserved_until = now + seconds_to_ms(config_.reservation_window);
  events_.emit(now, "pe_reserved", {{"worker", w->worker_id}, {"pe", pe->pe_id}});
  return protocol::PeEndpoint{w->worker_id, w->host, w->port, pe->pe_id, pe->image, pe->tag};
}

std::size_t Master::enqueue_backlog(protocol::StreamMessage message, Millis now) {
  events_.emit(now, "message_queued",
               {{"message", message.message_id}, {"image", message.image},
                {"queue", std::to_string(backlog_.size() + 1)}});
  backlog_.push_back(std::move(message));
  ++backlog_stats_.accepted;
  backlog_stats_.high_water = std::max(backlog_stats_.high_water, backlog_.size());
  return backlog_.size();
}

void Master::drain_backlog(Millis now) {
  std::set<std::string> blocked;
  for (auto it = backlog_.begin(); it != backlog_.end();) {
    const std::string key = it->image + '\n' + it->tag;
    if (blocked.count(key)) {
      ++it;
      continue;
    }
    bool delivered = false;
    for (;;) {
      auto [w, pe] = idle_pe(it->image, it->tag);
      if (!pe) break;
      const auto d = gateway_.push_stream(*w, *it);
      if (d.status == WorkerGateway::Dispatch::Status::accepted) {
        auto taken = w->pes.find(d.pe_id);
        PeRecord& target = taken != w->pes.end() ? taken->second : *pe;
        target.status = PeStatus::busy;
        target.last_activity = now;
        events_.emit(now, "message_dispatched",
                     {{"message", it->message_id}, {"worker", w->worker_id}, {"pe", target.pe_id}});
        delivered = true;
        break;
      }
      // The master's view of this PE is stale; park it until the next report.
      pe->status = PeStatus::busy;
      pe->last_activity = now;
      events_.emit(now, "dispatch_failed",
                   {{"message", it->message_id}, {"worker", w->worker_id}, {"pe", pe->pe_id},
                    {"reason", d.status == WorkerGateway::Dispatch::Status::rejected ? "rejected"
                                                                                    : "unreachable"}});
    }
    if (delivered) {
      it = backlog_.erase(it);
      ++backlog_stats_.dispatched;
    } else {
      blocked.insert(key);
      ++it;
    }
  }
}

void Master::submit_request(irm::ContainerRequest request, Millis now) {
  if (request.request_id.empty()) request.request_id = "r" + std::to_string(next_request_++);
  request.estimated_cpu = irm::item_size(request.estimated_cpu);
  if (queue_.push(request, now)) {
    events_.emit(now, "request_queued",
                 {{"request", request.request_id}, {"image", request.image},
                  {"cpu", fixed(request.estimated_cpu)}});
  }
}

void Master::queue_pes(const std::string& image, const std::string& tag, int count, Millis now,
                       std::string_view origin) {
  for (int i = 0; i < count; ++i) {
    irm::ContainerRequest r;
    r.image = image;
    r.tag = tag;
    r.ttl = config_.ttl_initial;
    r.estimated_cpu = profiler_.estimate(image);
    submit_request(std::move(r), now);
  }
  (void)origin;
}

void Master::request_hosting(const protocol::HostingRequest& request, Millis now) {
  queue_pes(request.image, request.tag, request.count, now, "manual");
}

irm::ScalingDecision Master::run_predictor(Millis now) {
  const auto metrics = monitor_.sample(static_cast<long>(backlog_.size()), now);
  auto decision = predictor_.evaluate(metrics);
  if (decision.kind != irm::ScalingDecision::Kind::none && !backlog_.empty()) {
    const auto& oldest = backlog_.front();
    events_.emit(now, "predictor_decision",
                 {{"decision", std::string(irm::to_string(decision.kind))},
                  {"count", std::to_string(decision.count)},
                  {"image", oldest.image},
                  {"length", std::to_string(metrics.length)},
                  {"roc", fixed(metrics.roc, 3)}});
    queue_pes(oldest.image, oldest.tag, decision.count, now, "predictor");
    return decision;
  }
  // Starvation guard: backlog images with nothing hosted or queued get one
  // small step regardless of the thresholds.
  std::set<std::string> handled;
  for (const auto& m : backlog_) {
    const std::string key = m.image + '\n' + m.tag;
    if (!handled.insert(key).second) continue;
    if (image_has_capacity(m.image, m.tag)) continue;
    events_.emit(now, "predictor_decision",
                 {{"decision", "small"},
                  {"count", std::to_string(config_.scale_small)},
                  {"image", m.image},
                  {"length", std::to_string(metrics.length)},
                  {"roc", fixed(metrics.roc, 3)},
                  {"reason", "starved"}});
    queue_pes(m.image, m.tag, config_.scale_small, now, "starved");
    decision = {irm::ScalingDecision::Kind::small, config_.scale_small};
  }
  return decision;
}

PackingResult Master::run_packing(Millis now) {
  queue_.refresh(profiler_);
  auto active = active_by_index();
  std::vector<const WorkerRecord*> bins(active.begin(), active.end());
  const std::size_t queued = queue_.size();
  PackingResult result = packing_run(queue_.take_all(), bins);
  for (auto& r : result.unplaced) queue_.restore(std::move(r));
  last_bins_needed_ = result.bins_needed;
  for (const auto& p : result.placements) {
    placement_log_.push_back(p);
    events_.emit(now, "pe_placed",
                 {{"request", p.request_id}, {"worker", "w" + std::to_string(p.worker_index)},
                  {"size", fixed(p.item_size)}, {"min_lower_scheduled", fixed(p.min_lower_scheduled)}});
  }
  if (queued > 0) {
    events_.emit(now, "packing_run",
                 {{"queued", std::to_string(queued)},
                  {"allocated", std::to_string(result.allocations.size())},
                  {"bins_needed", std::to_string(result.bins_needed)}});
  }
  for (auto& r : result.allocations) allocate(r, now);
  autoscale(result.bins_needed, now);
  return result;
}

AllocationOutcome Master::allocate(irm::ContainerRequest request, Millis now) {
  WorkerRecord* w = request.target_worker ? find_worker(*request.target_worker) : nullptr;
  std::optional<protocol::PeStartReply> reply;
  const std::string pe_id = "pe" + std::to_string(next_pe_++);
  if (w && w->state != WorkerState::removed) {
    reply = gateway_.start_pe(*w, {request.image, request.tag, pe_id, request.estimated_cpu});
  }
  if (reply) {
    PeRecord rec;
    rec.pe_id = pe_id;
    rec.image = request.image;
    rec.tag = request.tag;
    rec.status = reply->state == protocol::PeState::idle      ? PeStatus::idle
                 : reply->state == protocol::PeState::running ? PeStatus::busy
                                                              : PeStatus::starting;
    rec.scheduled_cpu = request.estimated_cpu;
    rec.created_at = now;
    rec.last_activity = now;
    w->pes.emplace(pe_id, rec);
    events_.emit(now, "pe_started",
                 {{"worker", w->worker_id}, {"pe", pe_id}, {"image", request.image},
                  {"cpu", fixed(request.estimated_cpu)}, {"request", request.request_id}});
    return AllocationOutcome::started;
  }
  const std::string target = request.target_worker.value_or("");
  request.target_worker.reset();
  request.ttl -= 1;
  if (request.ttl <= 0) {
    queue_.push(std::move(request), now);  // emits request_dropped
    return AllocationOutcome::dropped;
  }
  events_.emit(now, "request_requeued",
               {{"request", request.request_id}, {"worker", target},
                {"ttl", std::to_string(request.ttl)}});
  queue_.push(std::move(request), now);
  return AllocationOutcome::requeued;
}

int Master::autoscale(int bins_needed, Millis now) {
  const auto active = active_by_index();
  const int hosting = static_cast<int>(
      std::count_if(active.begin(), active.end(), [](auto* w) { return w->has_pes(); }));
  const int n_active = static_cast<int>(active.size());
  const int n_provisioning = count_workers(WorkerState::provisioning);
  const int target = irm::target_workers(bins_needed, hosting, config_.max_workers);
  last_target_ = target;

  int current = n_active + n_provisioning;
  if (target > current) {
    int need = target - current;
    std::vector<WorkerRecord*> draining;
    for (auto& [id, w] : workers_) {
      if (w.state == WorkerState::draining) draining.push_back(&w);
    }
    std::sort(draining.begin(), draining.end(), [](auto* a, auto* b) { return a->index < b->index; });
    for (WorkerRecord* w : draining) {
      if (need == 0) break;
      w->state = WorkerState::active;
      --need;
      events_.emit(now, "worker_reactivated", {{"worker", w->worker_id}});
    }
    if (need > 0) {
      events_.emit(now, "scale_up",
                   {{"target", std::to_string(target)}, {"active", std::to_string(n_active)},
                    {"provisioning", std::to_string(n_provisioning)},
                    {"requested", std::to_string(need)}});
      provisioner_.provision(need, now);
    }
  } else if (target < n_active) {
    int excess = n_active - target;
    for (auto it = active.rbegin(); it != active.rend() && excess > 0; ++it) {
      WorkerRecord* w = *it;
      if (w->has_pes()) continue;
      w->state = WorkerState::draining;
      w->draining_since = now;
      --excess;
      events_.emit(now, "scale_down",
                   {{"worker", w->worker_id}, {"target", std::to_string(target)}});
    }
  }
  return target;
}

std::vector<std::string> Master::reap_idle(Millis now) {
  const Millis timeout = seconds_to_ms(config_.container_idle_timeout);
  std::vector<std::string> stopped;
  for (auto& [id, w] : workers_) {
    if (w.state == WorkerState::removed) continue;
    for (auto it = w.pes.begin(); it != w.pes.end();) {
      PeRecord& pe = it->second;
      if (pe.status == PeStatus::idle && now - pe.last_activity >= timeout) {
        gateway_.stop_pe(w, pe.pe_id);
        w.stopped_pes[pe.pe_id] = now;
        events_.emit(now, "pe_stopped",
                     {{"worker", id}, {"pe", pe.pe_id}, {"image", pe.image},
                      {"cpu", fixed(pe.scheduled_cpu)},
                      {"idle_ms", std::to_string(now - pe.last_activity)}});
        stopped.push_back(pe.pe_id);
        it = w.pes.erase(it);
      } else {
        ++it;
      }
    }
  }
  return stopped;
}

void Master::expire_reservations(Millis now) {
  for (auto& [id, w] : workers_) {
    for (auto& [pe_id, pe] : w.pes) {
      if (pe.status == PeStatus::reserved && now >= pe.reserved_until) {
        pe.status = PeStatus::idle;
        events_.emit(now, "reservation_expired", {{"worker", id}, {"pe", pe_id}});
      }
    }
  }
}

void Master::remove_drained(Millis now) {
  const Millis grace = seconds_to_ms(config_.worker_grace);
  for (auto& [id, w] : workers_) {
    if (w.state != WorkerState::draining || w.has_pes()) continue;
    if (now - w.draining_since >= grace) {
      w.state = WorkerState::removed;
      events_.emit(now, "worker_removed", {{"worker", id}});
      provisioner_.release(w, now);
    }
  }
}

bool Master::due(std::optional<Millis>& next, double interval_s, Millis now) {
  if (!next) next = now;
  if (now < *next) return false;
  const Millis step = std::max<Millis>(1, seconds_to_ms(interval_s));
  while (*next <= now) *next += step;
  return true;
}

void Master::control_step(Millis now) {
  if (due(next_profiler_, config_.report_interval, now)) profiler_.aggregate();
  if (due(next_predictor_, config_.predictor_interval, now)) run_predictor(now);
  if (due(next_packing_, config_.packing_interval, now)) run_packing(now);
}

void Master::housekeeping_step(Millis now) {
  check_liveness(now);
  expire_reservations(now);
  drain_backlog(now);
  reap_idle(now);
  remove_drained(now);
}

protocol::MetricsFrame Master::snapshot(Millis now, Millis run_start) const {
  protocol::MetricsFrame f;
  f.t = ms_to_seconds(now - run_start);
  double total = 0.0;
  for (const WorkerRecord* w : workers_by_index()) {
    if (w->state == WorkerState::removed) continue;
    protocol::WorkerSample s;
    s.worker_id = w->worker_id;
    s.scheduled_cpu = w->scheduled_cpu();
    s.measured_cpu = w->measured_cpu();
    s.error_pp = 100.0 * (s.scheduled_cpu - s.measured_cpu);
    total += s.scheduled_cpu;
    f.per_worker.push_back(std::move(s));
  }
  f.queue_length = static_cast<long>(backlog_.size());
  f.active_workers = count_workers(WorkerState::active);
  f.target_workers = last_target_;
  f.ideal_bins = static_cast<int>(std::ceil(total - binpack::kFitTolerance));
  if (f.ideal_bins < 0) f.ideal_bins = 0;
  return f;
}

}  // namespace streambin::master
