#include "streambin/worker.hpp"

#include <algorithm>
#include <stdexcept>

namespace streambin::worker {

std::string_view to_string(BackendKind k) {
  return k == BackendKind::simulated ? "simulated" : "synthetic";
}

BackendKind backend_from_string(std::string_view s) {
  if (s == "simulated") return BackendKind::simulated;
  if (s == "synthetic" || s == "synthetic_process") return BackendKind::synthetic_process;
  throw std::invalid_argument("unknown backend '" + std::string(s) + "'");
}

std::string_view to_string(EngineState s) {
  switch (s) {
    case EngineState::starting:
      return "starting";
    case EngineState::idle:
      return "idle";
    case EngineState::busy:
      return "busy";
  }
  return "starting";
}

// ---- simulated backend --------------------------------------------------------

bool SimulatedBackend::supports(const std::string& image) const {
  return images_.empty() || images_.count(image) > 0;
}

bool SimulatedBackend::launch(const std::string& pe_id, Millis) {
  pes_[pe_id] = std::nullopt;
  return true;
}

void SimulatedBackend::submit(const std::string& pe_id, const protocol::StreamMessage& message,
                              Millis now) {
  const auto job = SyntheticJob::parse(message.payload);
  pes_[pe_id] = Job{message.message_id, now + seconds_to_ms(job.duration_s), job.target_cpu};
}

std::vector<Completion> SimulatedBackend::poll(Millis now) {
  std::vector<Completion> done;
  for (auto& [pe_id, job] : pes_) {
    if (job && job->end <= now) {
      done.push_back({pe_id, job->message_id, job->end});
      job.reset();
    }
  }
  return done;
}

double SimulatedBackend::sample_cpu(const std::string& pe_id, Millis now) {
  auto it = pes_.find(pe_id);
  if (it == pes_.end() || !it->second || now >= it->second->end) return 0.0;
  return it->second->target_cpu;
}

void SimulatedBackend::terminate(const std::string& pe_id) { pes_.erase(pe_id); }

// ---- worker -----------------------------------------------------------------

Worker::Worker(WorkerOptions options, std::unique_ptr<PeBackend> backend, EventLog& events,
               Millis launched_at)
    : options_(std::move(options)),
      backend_(std::move(backend)),
      events_(events),
      launched_at_(launched_at),
      next_report_(launched_at + seconds_to_ms(options_.startup_delay_s)) {}

bool Worker::provisioning(Millis now) const {
  return now < launched_at_ + seconds_to_ms(options_.startup_delay_s);
}

protocol::PeEndpoint Worker::endpoint_for(const ProcessingEngine& pe) const {
  return {worker_id_, options_.host, options_.port, pe.pe_id, pe.image, pe.tag};
}

static protocol::PeState wire_state(EngineState s) {
  switch (s) {
    case EngineState::starting:
      return protocol::PeState::starting;
    case EngineState::idle:
      return protocol::PeState::idle;
    case EngineState::busy:
      return protocol::PeState::running;
  }
  return protocol::PeState::starting;
}

Worker::StartResult Worker::start_pe(const protocol::PeStartRequest& request, Millis now) {
  StartResult result;
  if (auto it = engines_.find(request.pe_id); it != engines_.end()) {
    result.status = StartResult::Status::existing;
    result.reply = {endpoint_for(it->second), wire_state(it->second.state)};
    return result;
  }
  if (provisioning(now)) {
    result.reason = "initializing";
    return result;
  }
  if (!backend_->supports(request.image)) {
    result.reason = "unknown_image";
    return result;
  }
  if (engines_.size() >= options_.max_pes || !backend_->launch(request.pe_id, now)) {
    result.reason = "exhausted";
    return result;
  }
  ProcessingEngine pe;
  pe.pe_id = request.pe_id;
  pe.image = request.image;
  pe.tag = request.tag;
  pe.estimated_cpu = request.estimated_cpu;
  pe.created_at = now;
  pe.ready_at = now + seconds_to_ms(options_.pe_startup_delay_s);
  pe.last_activity = now;
  if (pe.ready_at <= now) pe.state = EngineState::idle;
  auto& stored = engines_.emplace(pe.pe_id, std::move(pe)).first->second;
  result.status = StartResult::Status::started;
  result.reply = {endpoint_for(stored), wire_state(stored.state)};
  return result;
}

bool Worker::stop_pe(const std::string& pe_id, Millis now) {
  auto it = engines_.find(pe_id);
  if (it == engines_.end()) return false;
  if (!it->second.current_message.empty()) {
    events_.emit(now, "message_aborted",
                 {{"worker", worker_id_}, {"pe", pe_id}, {"message", it->second.current_message}});
  }
  backend_->terminate(pe_id);
  engines_.erase(it);
  return true;
}

Worker::ReceiveResult Worker::receive_stream(const protocol::StreamMessage& message, Millis now) {
  ReceiveResult result;
  ProcessingEngine* chosen = nullptr;
  bool image_known = false;
  for (auto& [id, pe] : engines_) {
    if (pe.image != message.image || pe.tag != message.tag) continue;
    image_known = true;
    if (pe.state == EngineState::idle) {
      chosen = &pe;
      break;
    }
  }
  if (!chosen) {
    result.reason = image_known ? "all_busy" : "no_pe";
    return result;
  }
  try {
    backend_->submit(chosen->pe_id, message, now);
  } catch (const std::invalid_argument& e) {
    result.reason = "bad_payload";
    return result;
  }
  chosen->state = EngineState::busy;
  chosen->current_message = message.message_id;
  chosen->last_activity = now;
  events_.emit(now, "message_received",
               {{"worker", worker_id_}, {"pe", chosen->pe_id}, {"message", message.message_id}});
  result.accepted = true;
  result.pe_id = chosen->pe_id;
  return result;
}

void Worker::advance(Millis now) {
  for (auto& [id, pe] : engines_) {
    if (pe.state == EngineState::starting && now >= pe.ready_at) {
      pe.state = EngineState::idle;
      pe.last_activity = pe.ready_at;
    }
  }
  for (const auto& done : backend_->poll(now)) {
    auto it = engines_.find(done.pe_id);
    if (it == engines_.end()) continue;
    auto& pe = it->second;
    events_.emit(done.at, "message_completed",
                 {{"worker", worker_id_}, {"pe", pe.pe_id},
                  {"message", done.message_id.empty() ? pe.current_message : done.message_id}});
    pe.state = EngineState::idle;
    pe.current_message.clear();
    pe.last_activity = done.at;
  }
}

bool Worker::report_due(Millis now) const { return !provisioning(now) && now >= next_report_; }

protocol::WorkerReport Worker::sample_and_report(Millis now) {
  protocol::WorkerReport report;
  report.worker_id = worker_id_;
  report.sent_at = now;
  for (auto& [id, pe] : engines_) {
    protocol::PeStat stat;
    stat.pe_id = pe.pe_id;
    stat.image = pe.image;
    stat.tag = pe.tag;
    stat.cpu_fraction = std::clamp(backend_->sample_cpu(pe.pe_id, now), 0.0, 1.0);
    stat.state = wire_state(pe.state);
    stat.last_activity = pe.last_activity;
    report.pe_stats.push_back(std::move(stat));
  }
  report.per_image_avg = protocol::WorkerReport::image_averages(report.pe_stats);
  const Millis step = std::max<Millis>(1, seconds_to_ms(options_.report_interval_s));
  while (next_report_ <= now) next_report_ += step;
  ++reports_sent_;
  return report;
}

double Worker::total_cpu(Millis now) {
  double sum = 0.0;
  for (const auto& [id, pe] : engines_) sum += backend_->sample_cpu(id, now);
  return std::clamp(sum, 0.0, 1.0);
}

}  // namespace streambin::worker
