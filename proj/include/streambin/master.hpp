#pragma once

#include <cstddef>
#include <deque>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "streambin/binpack.hpp"
#include "streambin/clock.hpp"
#include "streambin/events.hpp"
#include "streambin/irm.hpp"
#include "streambin/protocol.hpp"

namespace streambin::master {

enum class WorkerState { provisioning, active, draining, removed };
std::string_view to_string(WorkerState s);

/// Master-side view of a PE. `reserved` means the endpoint was handed to a
/// stream connector and the handoff has not been confirmed yet.
enum class PeStatus { starting, idle, reserved, busy };
std::string_view to_string(PeStatus s);

struct PeRecord {
  std::string pe_id;
  std::string image;
  std::string tag;
  PeStatus status = PeStatus::starting;
  double scheduled_cpu = 0.0;
  double measured_cpu = 0.0;
  Millis created_at = 0;
  Millis last_activity = 0;
  Millis reserved_at = 0;
  Millis reserved_until = 0;
};

struct WorkerRecord {
  std::string worker_id;
  std::size_t index = 0;  // registration order; stable bin identity
  std::string host;
  int port = 0;
  WorkerState state = WorkerState::provisioning;
  std::map<std::string, PeRecord> pes;
  /// PEs the master stopped, with the stop time. Reports sent before that
  /// time may still list them and must not bring them back.
  std::map<std::string, Millis> stopped_pes;
  Millis registered_at = 0;
  Millis last_report = 0;
  Millis draining_since = 0;

  double scheduled_cpu() const;
  /// Sum of last reported per-PE CPU, clamped to [0, 1].
  double measured_cpu() const;
  double residual() const { return 1.0 - scheduled_cpu(); }
  bool has_pes() const { return !pes.empty(); }
};

class UnknownWorker : public std::runtime_error {
 public:
  explicit UnknownWorker(const std::string& worker_id)
      : std::runtime_error("unknown worker '" + worker_id + "'") {}
};

/// How the master reaches workers. Implemented in-process for simulation and
/// over HTTP for real deployments.
class WorkerGateway {
 public:
  virtual ~WorkerGateway() = default;
  /// nullopt when the worker refused (503) or could not be reached.
  virtual std::optional<protocol::PeStartReply> start_pe(const WorkerRecord& worker,
                                                         const protocol::PeStartRequest& request) = 0;
  virtual bool stop_pe(const WorkerRecord& worker, const std::string& pe_id) = 0;

  struct Dispatch {
    enum class Status { accepted, rejected, unreachable } status = Status::rejected;
    std::string pe_id;  // PE that took the message when accepted
  };
  virtual Dispatch push_stream(const WorkerRecord& worker, const protocol::StreamMessage& message) = 0;
};

/// Launches and releases worker nodes on behalf of the autoscaler.
class Provisioner {
 public:
  virtual ~Provisioner() = default;
  virtual void provision(int count, Millis now) = 0;
  virtual void release(const WorkerRecord& worker, Millis now) = 0;
};

/// Provisioner for clusters whose workers are started by hand; scale-up
/// requests are only logged.
class ExternalProvisioner final : public Provisioner {
 public:
  void provision(int, Millis) override {}
  void release(const WorkerRecord&, Millis) override {}
};

struct SpillRecord {
  std::string request_id;
  std::size_t worker_index = 0;
  double item_size = 0.0;
  /// Smallest scheduled CPU over lower-index active workers at placement
  /// time; 1.0 when there is no lower worker.
  double min_lower_scheduled = 1.0;
};

struct PackingResult {
  std::vector<irm::ContainerRequest> allocations;  // target_worker set
  std::vector<irm::ContainerRequest> unplaced;     // landed in bins beyond the cluster
  int bins_needed = 0;
  std::vector<SpillRecord> placements;
};

/// One First-Fit run: active workers (index order) are the open bins, queued
/// requests the items. Requests that land beyond the available workers stay
/// queued and raise bins_needed.
PackingResult packing_run(std::vector<irm::ContainerRequest> queued,
                          std::span<const WorkerRecord* const> active_workers);

enum class AllocationOutcome { started, requeued, dropped };
std::string_view to_string(AllocationOutcome o);

struct BacklogStats {
  std::size_t high_water = 0;
  std::size_t accepted = 0;
  std::size_t dispatched = 0;
};

/// The system brain: registry, PE directory, backlog queue and the IRM loops.
/// Not internally synchronized; callers serialize access.
class Master {
 public:
  Master(irm::IrmConfig config, WorkerGateway& gateway, Provisioner& provisioner, EventLog& events);

  // registry
  std::string register_worker(const std::string& host, int port, Millis now);
  void ingest_report(const protocol::WorkerReport& report, Millis now);
  void check_liveness(Millis now);

  // stream path
  std::optional<protocol::PeEndpoint> find_available_pe(const std::string& image,
                                                        const std::string& tag, Millis now);
  std::size_t enqueue_backlog(protocol::StreamMessage message, Millis now);
  void drain_backlog(Millis now);

  // IRM
  void request_hosting(const protocol::HostingRequest& request, Millis now);
  void submit_request(irm::ContainerRequest request, Millis now);
  PackingResult run_packing(Millis now);
  AllocationOutcome allocate(irm::ContainerRequest request, Millis now);
  irm::ScalingDecision run_predictor(Millis now);
  std::vector<std::string> reap_idle(Millis now);
  int autoscale(int bins_needed, Millis now);

  /// Periodic loops that are due at `now`: profiler aggregation, predictor,
  /// packing with allocation and autoscaling.
  void control_step(Millis now);
  /// Liveness, reservation expiry, backlog drain, idle reaping, draining
  /// worker removal.
  void housekeeping_step(Millis now);
  void tick(Millis now) {
    control_step(now);
    housekeeping_step(now);
  }

  protocol::MetricsFrame snapshot(Millis now, Millis run_start = 0) const;

  const irm::IrmConfig& config() const { return config_; }
  const std::map<std::string, WorkerRecord>& workers() const { return workers_; }
  const WorkerRecord* worker(const std::string& worker_id) const;
  std::vector<const WorkerRecord*> workers_by_index() const;
  const std::deque<protocol::StreamMessage>& backlog() const { return backlog_; }
  const BacklogStats& backlog_stats() const { return backlog_stats_; }
  const irm::ContainerQueue& container_queue() const { return queue_; }
  irm::Profiler& profiler() { return profiler_; }
  const irm::Profiler& profiler() const { return profiler_; }
  int last_target_workers() const { return last_target_; }
  int last_bins_needed() const { return last_bins_needed_; }
  int count_workers(WorkerState state) const;
  const std::vector<SpillRecord>& placement_log() const { return placement_log_; }

 private:
  WorkerRecord* find_worker(const std::string& worker_id);
  std::vector<WorkerRecord*> active_by_index();
  /// Lowest-index idle PE on an active worker for image/tag.
  std::pair<WorkerRecord*, PeRecord*> idle_pe(const std::string& image, const std::string& tag);
  bool backlog_has(const std::string& image, const std::string& tag) const;
  bool image_has_capacity(const std::string& image, const std::string& tag) const;
  void queue_pes(const std::string& image, const std::string& tag, int count, Millis now,
                 std::string_view origin);
  void expire_reservations(Millis now);
  void remove_drained(Millis now);
  bool due(std::optional<Millis>& next, double interval_s, Millis now);

  irm::IrmConfig config_;
  WorkerGateway& gateway_;
  Provisioner& provisioner_;
  EventLog& events_;

  std::map<std::string, WorkerRecord> workers_;
  std::size_t next_worker_index_ = 0;
  std::deque<protocol::StreamMessage> backlog_;
  BacklogStats backlog_stats_;
  irm::ContainerQueue queue_;
  irm::Profiler profiler_;
  irm::QueueMonitor monitor_;
  irm::LoadPredictor predictor_;

  std::optional<Millis> next_packing_;
  std::optional<Millis> next_predictor_;
  std::optional<Millis> next_profiler_;
  std::size_t next_pe_ = 0;
  std::size_t next_request_ = 0;
  int last_target_ = 0;
  int last_bins_needed_ = 0;
  std::vector<SpillRecord> placement_log_;
};

}  // namespace streambin::master
