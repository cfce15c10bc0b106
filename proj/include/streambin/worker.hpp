#pragma once

#include <cstddef>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <sys/types.h>
#include <vector>

#include "streambin/clock.hpp"
#include "streambin/events.hpp"
#include "streambin/protocol.hpp"
#include "streambin/synthetic_job.hpp"

namespace streambin::worker {

enum class BackendKind { simulated, synthetic_process };
std::string_view to_string(BackendKind k);
BackendKind backend_from_string(std::string_view s);

struct Completion {
  std::string pe_id;
  std::string message_id;
  Millis at = 0;
};

/// Executes jobs for the PEs of one worker.
class PeBackend {
 public:
  virtual ~PeBackend() = default;
  virtual BackendKind kind() const = 0;
  virtual bool supports(const std::string& image) const = 0;
  /// False on resource exhaustion.
  virtual bool launch(const std::string& pe_id, Millis now) = 0;
  /// Throws std::invalid_argument when the payload is not a valid job.
  virtual void submit(const std::string& pe_id, const protocol::StreamMessage& message,
                      Millis now) = 0;
  virtual std::vector<Completion> poll(Millis now) = 0;
  /// CPU fraction used by the PE, in [0, 1].
  virtual double sample_cpu(const std::string& pe_id, Millis now) = 0;
  virtual void terminate(const std::string& pe_id) = 0;
};

/// Virtual jobs: a PE uses exactly target_cpu while its job runs and 0
/// otherwise; completion happens at submit time + duration on the caller's
/// clock.
class SimulatedBackend final : public PeBackend {
 public:
  /// Empty `images` means every image is accepted.
  explicit SimulatedBackend(std::set<std::string> images = {}) : images_(std::move(images)) {}

  BackendKind kind() const override { return BackendKind::simulated; }
  bool supports(const std::string& image) const override;
  bool launch(const std::string& pe_id, Millis now) override;
  void submit(const std::string& pe_id, const protocol::StreamMessage& message, Millis now) override;
  std::vector<Completion> poll(Millis now) override;
  double sample_cpu(const std::string& pe_id, Millis now) override;
  void terminate(const std::string& pe_id) override;

 private:
  struct Job {
    std::string message_id;
    Millis end = 0;
    double target_cpu = 0.0;
  };
  std::set<std::string> images_;
  std::map<std::string, std::optional<Job>> pes_;
};

/// One OS subprocess per PE running the bundled synthetic job runner. CPU is
/// read from /proc/<pid>/stat between consecutive samples.
class ProcessBackend final : public PeBackend {
 public:
  explicit ProcessBackend(std::string runner_path, std::set<std::string> images = {});
  ~ProcessBackend() override;
  ProcessBackend(const ProcessBackend&) = delete;
  ProcessBackend& operator=(const ProcessBackend&) = delete;

  BackendKind kind() const override { return BackendKind::synthetic_process; }
  bool supports(const std::string& image) const override;
  bool launch(const std::string& pe_id, Millis now) override;
  void submit(const std::string& pe_id, const protocol::StreamMessage& message, Millis now) override;
  std::vector<Completion> poll(Millis now) override;
  double sample_cpu(const std::string& pe_id, Millis now) override;
  void terminate(const std::string& pe_id) override;

  /// Total CPU seconds consumed so far by the PE's process.
  std::optional<double> cpu_seconds(const std::string& pe_id) const;

 private:
  struct Child {
    pid_t pid = -1;
    int to_child = -1;
    int from_child = -1;
    std::string buffer;
    std::string message_id;
    double last_cpu_s = 0.0;
    Millis last_sample = 0;
  };
  std::string runner_path_;
  std::set<std::string> images_;
  std::map<std::string, Child> children_;
};

/// Default location of the runner executable: next to the current binary.
std::string default_runner_path();

enum class EngineState { starting, idle, busy };
std::string_view to_string(EngineState s);

struct ProcessingEngine {
  std::string pe_id;
  std::string image;
  std::string tag;
  EngineState state = EngineState::starting;
  double estimated_cpu = 0.0;
  Millis created_at = 0;
  Millis ready_at = 0;
  Millis last_activity = 0;
  std::string current_message;
};

struct WorkerOptions {
  std::string host = "127.0.0.1";
  int port = 1;
  double startup_delay_s = 0.0;     // worker initialization window
  double pe_startup_delay_s = 2.0;  // container boot time
  double report_interval_s = 1.0;
  std::size_t max_pes = 64;
};

/// Worker node: hosts PEs, hands stream messages to them, samples their CPU
/// and builds reports. Not internally synchronized.
class Worker {
 public:
  Worker(WorkerOptions options, std::unique_ptr<PeBackend> backend, EventLog& events,
         Millis launched_at);

  void set_worker_id(std::string id) { worker_id_ = std::move(id); }
  const std::string& worker_id() const { return worker_id_; }
  const WorkerOptions& options() const { return options_; }
  bool provisioning(Millis now) const;

  struct StartResult {
    enum class Status { started, existing, unavailable } status = Status::unavailable;
    protocol::PeStartReply reply;
    std::string reason;
  };
  StartResult start_pe(const protocol::PeStartRequest& request, Millis now);
  bool stop_pe(const std::string& pe_id, Millis now);

  struct ReceiveResult {
    bool accepted = false;
    std::string pe_id;
    std::string reason;
  };
  ReceiveResult receive_stream(const protocol::StreamMessage& message, Millis now);

  /// Moves starting PEs to idle once booted and collects finished jobs.
  void advance(Millis now);
  bool report_due(Millis now) const;
  /// Samples every PE and builds a report; schedules the next one.
  protocol::WorkerReport sample_and_report(Millis now);
  /// Instantaneous total CPU of hosted PEs (simulated backend only; the
  /// process backend returns its windowed sample).
  double total_cpu(Millis now);

  const std::map<std::string, ProcessingEngine>& engines() const { return engines_; }
  PeBackend& backend() { return *backend_; }
  std::size_t reports_sent() const { return reports_sent_; }

 private:
  protocol::PeEndpoint endpoint_for(const ProcessingEngine& pe) const;

  WorkerOptions options_;
  std::unique_ptr<PeBackend> backend_;
  EventLog& events_;
  std::string worker_id_;
  Millis launched_at_;
  Millis next_report_;
  std::size_t reports_sent_ = 0;
  std::map<std::string, ProcessingEngine> engines_;
};

}  // namespace streambin::worker
