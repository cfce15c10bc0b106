#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "streambin/connector.hpp"
#include "streambin/events.hpp"
#include "streambin/irm.hpp"
#include "streambin/master.hpp"
#include "streambin/protocol.hpp"

namespace streambin::harness {

/// Scenario validation failure; what() lists every violated field.
class ScenarioError : public std::invalid_argument {
 public:
  explicit ScenarioError(const std::vector<std::string>& problems);
  const std::vector<std::string>& problems() const { return problems_; }

 private:
  std::vector<std::string> problems_;
};

struct WorkloadSpec {
  std::string image;
  double target_cpu = 1.0;
  double duration_s = 1.0;
};

struct ScheduleEntry {
  double at_s = 0.0;
  int batch_size = 1;
  std::optional<std::size_t> workload;  // nullopt = "mixed"
};

struct ClusterSpec {
  int max_workers = 5;
  int initial_workers = 1;
  double worker_startup_delay_s = 0.0;
  double pe_startup_delay_s = 2.0;
};

enum class Mode { simulated, process };

struct Scenario {
  std::string name;
  std::uint64_t seed = 1;
  std::vector<WorkloadSpec> workloads;
  std::vector<ScheduleEntry> schedule;
  ClusterSpec cluster;
  nlohmann::json irm_overrides = nlohmann::json::object();
  irm::IrmConfig irm;  // defaults + overrides, max_workers from cluster
  Mode mode = Mode::simulated;
  int tick_ms = 100;
  double quiescence_s = 5.0;
  double max_duration_s = 3600.0;
  std::map<std::string, double> pinned_profiles;
  int connector_concurrency = 8;

  /// Parses and validates; throws ScenarioError.
  static Scenario from_json(const nlohmann::json& j);
  static Scenario load(const std::filesystem::path& path);
  nlohmann::json to_json() const;

  std::size_t message_count() const;
};

/// One message of a run, before it is sent.
struct PlannedMessage {
  double at_s = 0.0;
  std::size_t workload = 0;
  protocol::StreamMessage message;
};

/// Expands the schedule into messages. `order_seed` permutes which workload
/// each slot carries (the timing of slots is kept); nullopt keeps the
/// schedule's order.
std::vector<PlannedMessage> plan_messages(const Scenario& s, std::optional<std::uint64_t> order_seed);

struct RunResult {
  std::vector<protocol::MetricsFrame> frames;
  std::vector<Event> events;
  std::vector<std::string> submitted;
  std::vector<connector::Delivery> deliveries;
  std::vector<master::SpillRecord> placements;
  std::optional<irm::Profiler> profiler;  // state at the end of the run
  std::size_t backlog_high_water = 0;
  double makespan_s = 0.0;  // first submission to last completion
  double duration_s = 0.0;  // virtual time simulated
  bool timed_out = false;
};

/// Deterministic in-process run on a virtual clock. `carried` seeds the
/// master's profiler (used by replay).
RunResult simulate(const Scenario& s, const std::vector<PlannedMessage>& plan,
                   const irm::Profiler* carried = nullptr);
RunResult simulate(const Scenario& s);

/// Real master and worker processes on localhost.
struct ProcessOptions {
  std::filesystem::path bin_dir;  // empty = locate automatically
  std::filesystem::path work_dir; // where node logs go; required
};
RunResult run_processes(const Scenario& s, const ProcessOptions& options);

/// Runs the scenario in its mode and writes metrics.csv and events.log.
RunResult run(const Scenario& s, const std::filesystem::path& out_dir);

inline constexpr const char* kCsvHeader =
    "t,worker_id,scheduled_cpu,measured_cpu,error_pp,queue_length,active_workers,target_workers,"
    "ideal_bins";

void write_metrics_csv(std::ostream& out, const std::vector<protocol::MetricsFrame>& frames);
std::vector<protocol::MetricsFrame> read_metrics_csv(std::istream& in);
void write_events_log(std::ostream& out, const std::vector<Event>& events);

/// Mean |error_pp| over rows where the worker has scheduled or measured load.
double mean_abs_error(const std::vector<protocol::MetricsFrame>& frames);

struct RunSummary {
  int run = 0;
  std::uint64_t seed = 0;
  double makespan_s = 0.0;
  double mean_abs_error_pp = 0.0;
  std::size_t messages = 0;
  std::size_t completed = 0;

  bool operator==(const RunSummary&) const = default;
};

struct ReplayOptions {
  int runs = 10;
  /// Run k uses seed + k for its submission order; false reuses the seed.
  bool vary_seed = true;
  std::optional<std::filesystem::path> out_dir;  // per-run subdirectories
};

/// Repeats a simulated scenario on fresh clusters while the master's
/// profiles carry over between runs.
std::vector<RunSummary> replay_runs(const Scenario& s, const ReplayOptions& options);

enum class PlotKind { cpu_per_worker, error, workers };
PlotKind plot_kind_from_string(std::string_view s);

/// Renders one chart from metrics.csv; the output format follows the file
/// extension (.png or .svg).
void plot(const std::filesystem::path& metrics_csv, PlotKind kind, const std::filesystem::path& out);

}  // namespace streambin::harness
