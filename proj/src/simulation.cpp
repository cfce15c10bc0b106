#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "streambin/harness.hpp"
#include "streambin/worker.hpp"

namespace streambin::harness {

namespace {

constexpr int kFirstSimPort = 20000;

// Workers, gateway, provisioner and connector transport for one simulated
// cluster. Everything runs on the caller's thread at the current virtual time.
class SimWorld final : public master::WorkerGateway,
                       public master::Provisioner,
                       public connector::Transport {
 public:
  SimWorld(const Scenario& s, EventLog& events) : scenario_(s), events_(events) {}

  void attach(master::Master& m) { master_ = &m; }
  void set_now(Millis now) { now_ = now; }

  // WorkerGateway
  std::optional<protocol::PeStartReply> start_pe(const master::WorkerRecord& w,
                                                 const protocol::PeStartRequest& request) override {
    Node* n = node(w.host, w.port);
    if (!n) return std::nullopt;
    auto r = n->worker->start_pe(request, now_);
    if (r.status == worker::Worker::StartResult::Status::unavailable) return std::nullopt;
    return r.reply;
  }
  bool stop_pe(const master::WorkerRecord& w, const std::string& pe_id) override {
    Node* n = node(w.host, w.port);
    return n && n->worker->stop_pe(pe_id, now_);
  }
  Dispatch push_stream(const master::WorkerRecord& w, const protocol::StreamMessage& message) override {
    Node* n = node(w.host, w.port);
    if (!n) return {Dispatch::Status::unreachable, {}};
    auto r = n->worker->receive_stream(message, now_);
    if (!r.accepted) return {Dispatch::Status::rejected, {}};
    return {Dispatch::Status::accepted, r.pe_id};
  }

  // Provisioner. Launches and releases are applied in step() so the master
  // is never re-entered from inside its own autoscaler.
  void provision(int count, Millis) override { pending_launches_ += count; }
  void release(const master::WorkerRecord& w, Millis) override {
    pending_releases_.emplace_back(w.host, w.port);
  }

  // Transport
  std::optional<protocol::PeEndpoint> query_pe(const std::string& image, const std::string& tag) override {
    return master_->find_available_pe(image, tag, now_);
  }
  bool send_to_worker(const protocol::PeEndpoint& endpoint, const protocol::StreamMessage& message) override {
    Node* n = node(endpoint.host, endpoint.port);
    return n && n->worker->receive_stream(message, now_).accepted;
  }
  void send_to_master(const protocol::StreamMessage& message) override {
    master_->enqueue_backlog(message, now_);
  }

  void launch_initial(int count) {
    pending_launches_ += count;
    apply_pending();
  }

  // Worker half of a tick: pending launches and releases, then every live
  // worker advances and reports when due.
  void step() {
    apply_pending();
    for (auto& n : nodes_) {
      if (!n.worker) continue;
      n.worker->advance(now_);
      if (!n.worker->report_due(now_)) continue;
      auto report = n.worker->sample_and_report(now_);
      try {
        master_->ingest_report(report, now_);
      } catch (const master::UnknownWorker&) {
        n.worker->set_worker_id(master_->register_worker(n.host, n.port, now_));
      }
    }
  }

  bool any_pes() const {
    for (const auto& n : nodes_)
      if (n.worker && !n.worker->engines().empty()) return true;
    return false;
  }

  /// Instantaneous CPU per registered worker id.
  std::map<std::string, double> measured(Millis now) {
    std::map<std::string, double> out;
    for (auto& n : nodes_)
      if (n.worker) out[n.worker->worker_id()] = n.worker->total_cpu(now);
    return out;
  }

 private:
  struct Node {
    std::string host;
    int port = 0;
    std::unique_ptr<worker::Worker> worker;  // null while released
  };

  Node* node(const std::string& host, int port) {
    for (auto& n : nodes_)
      if (n.worker && n.host == host && n.port == port) return &n;
    return nullptr;
  }

  void apply_pending() {
    for (const auto& [host, port] : pending_releases_) {
      for (auto& n : nodes_) {
        if (n.host == host && n.port == port && n.worker) {
          events_.emit(now_, "worker_released", {{"worker", n.worker->worker_id()}});
          n.worker.reset();
        }
      }
    }
    pending_releases_.clear();
    for (; pending_launches_ > 0; --pending_launches_) {
      // A released slot is reused first so the node rejoins under its old
      // registry entry and bin index.
      auto free = std::find_if(nodes_.begin(), nodes_.end(), [](const Node& n) { return !n.worker; });
      if (free == nodes_.end()) {
        nodes_.push_back(Node{"sim", kFirstSimPort + static_cast<int>(nodes_.size()), nullptr});
        free = std::prev(nodes_.end());
      }
      worker::WorkerOptions o;
      o.host = free->host;
      o.port = free->port;
      o.startup_delay_s = scenario_.cluster.worker_startup_delay_s;
      o.pe_startup_delay_s = scenario_.cluster.pe_startup_delay_s;
      o.report_interval_s = scenario_.irm.report_interval;
      free->worker = std::make_unique<worker::Worker>(o, std::make_unique<worker::SimulatedBackend>(),
                                                      events_, now_);
      free->worker->set_worker_id(master_->register_worker(free->host, free->port, now_));
    }
  }

  const Scenario& scenario_;
  EventLog& events_;
  master::Master* master_ = nullptr;
  Millis now_ = 0;
  int pending_launches_ = 0;
  std::vector<std::pair<std::string, int>> pending_releases_;
  std::vector<Node> nodes_;
};

double parse_double(const std::string& field) {
  std::size_t used = 0;
  const double v = std::stod(field, &used);
  if (used != field.size()) throw std::invalid_argument("bad number '" + field + "'");
  return v;
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(line);
  while (std::getline(is, cur, sep)) out.push_back(cur);
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

}  // namespace

RunResult simulate(const Scenario& s, const std::vector<PlannedMessage>& plan, const irm::Profiler* carried) {
  EventLog events;
  SimWorld world(s, events);
  master::Master m(s.irm, world, world, events);
  world.attach(m);
  if (carried) m.profiler() = *carried;
  for (const auto& [image, v] : s.pinned_profiles) m.profiler().pin(image, v);

  connector::Connector conn(world, {}, [](std::chrono::milliseconds) {});
  RunResult result;
  world.set_now(0);
  world.launch_initial(s.cluster.initial_workers);

  const Millis tick = s.tick_ms;
  const Millis limit = seconds_to_ms(s.max_duration_s);
  const Millis quiet = seconds_to_ms(s.quiescence_s);
  std::optional<Millis> settled_since;
  std::size_t next = 0;
  std::optional<Millis> first_submit;

  Millis now = 0;
  for (;; now += tick) {
    world.set_now(now);
    for (; next < plan.size() && seconds_to_ms(plan[next].at_s) <= now; ++next) {
      if (!first_submit) first_submit = now;
      result.submitted.push_back(plan[next].message.message_id);
      result.deliveries.push_back(conn.send(plan[next].message));
    }
    m.control_step(now);
    world.step();
    m.housekeeping_step(now);

    if (now % 1000 == 0) {
      auto frame = m.snapshot(now);
      const auto cpu = world.measured(now);
      for (auto& w : frame.per_worker) {
        auto it = cpu.find(w.worker_id);
        w.measured_cpu = it == cpu.end() ? 0.0 : it->second;
        w.error_pp = 100.0 * (w.scheduled_cpu - w.measured_cpu);
      }
      result.frames.push_back(std::move(frame));
    }
    result.backlog_high_water = std::max(result.backlog_high_water, m.backlog().size());

    const bool settled =
        next == plan.size() && m.backlog().empty() && m.container_queue().empty() && !world.any_pes();
    if (!settled) {
      settled_since.reset();
    } else if (!settled_since) {
      settled_since = now;
    }
    if (settled_since && now - *settled_since >= quiet && now % 1000 == 0) break;
    if (now >= limit) {
      result.timed_out = true;
      break;
    }
  }

  result.duration_s = ms_to_seconds(now);
  result.events = events.events();
  result.placements = m.placement_log();
  result.profiler = m.profiler();
  Millis last_done = first_submit.value_or(0);
  for (const auto& e : result.events)
    if (e.name == "message_completed") last_done = std::max(last_done, e.t);
  result.makespan_s = first_submit ? ms_to_seconds(last_done - *first_submit) : 0.0;
  return result;
}

RunResult simulate(const Scenario& s) { return simulate(s, plan_messages(s, std::nullopt)); }

RunResult run(const Scenario& s, const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  RunResult r = s.mode == Mode::simulated ? simulate(s) : run_processes(s, {{}, out_dir});
  std::ofstream csv(out_dir / "metrics.csv");
  write_metrics_csv(csv, r.frames);
  std::ofstream log(out_dir / "events.log");
  write_events_log(log, r.events);
  if (!csv || !log) throw std::runtime_error("cannot write results to " + out_dir.string());
  return r;
}

void write_metrics_csv(std::ostream& out, const std::vector<protocol::MetricsFrame>& frames) {
  out << kCsvHeader << '\n';
  for (const auto& f : frames) {
    const std::string tail = "," + std::to_string(f.queue_length) + "," + std::to_string(f.active_workers) +
                             "," + std::to_string(f.target_workers) + "," + std::to_string(f.ideal_bins);
    if (f.per_worker.empty()) {
      out << fixed(f.t, 1) << ",-," << fixed(0.0) << ',' << fixed(0.0) << ',' << fixed(0.0, 4) << tail
          << '\n';
      continue;
    }
    for (const auto& w : f.per_worker) {
      out << fixed(f.t, 1) << ',' << w.worker_id << ',' << fixed(w.scheduled_cpu) << ','
          << fixed(w.measured_cpu) << ',' << fixed(w.error_pp, 4) << tail << '\n';
    }
  }
}

std::vector<protocol::MetricsFrame> read_metrics_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != kCsvHeader)
    throw std::invalid_argument("metrics csv: unexpected header");
  std::vector<protocol::MetricsFrame> frames;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto f = split(line, ',');
    if (f.size() != 9)
      throw std::invalid_argument("metrics csv line " + std::to_string(lineno) + ": expected 9 fields");
    try {
      const double t = parse_double(f[0]);
      if (frames.empty() || frames.back().t != t) {
        protocol::MetricsFrame frame;
        frame.t = t;
        frame.queue_length = std::stol(f[5]);
        frame.active_workers = std::stoi(f[6]);
        frame.target_workers = std::stoi(f[7]);
        frame.ideal_bins = std::stoi(f[8]);
        frames.push_back(frame);
      }
      if (f[1] == "-") continue;
      frames.back().per_worker.push_back({f[1], parse_double(f[2]), parse_double(f[3]), parse_double(f[4])});
    } catch (const std::logic_error& e) {
      throw std::invalid_argument("metrics csv line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return frames;
}

void write_events_log(std::ostream& out, const std::vector<Event>& events) {
  for (const auto& e : events) out << e.format() << '\n';
}

double mean_abs_error(const std::vector<protocol::MetricsFrame>& frames) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& f : frames) {
    for (const auto& w : f.per_worker) {
      if (w.scheduled_cpu <= 0.0 && w.measured_cpu <= 0.0) continue;
      sum += std::abs(w.error_pp);
      ++n;
    }
  }
  return n == 0 ? 0.0 : sum / static_cast<double>(n);
}

std::vector<RunSummary> replay_runs(const Scenario& s, const ReplayOptions& options) {
  if (s.mode != Mode::simulated) throw std::invalid_argument("replay needs a simulated scenario");
  std::vector<RunSummary> out;
  std::optional<irm::Profiler> carried;
  for (int k = 0; k < options.runs; ++k) {
    const std::uint64_t order_seed = s.seed + (options.vary_seed ? static_cast<std::uint64_t>(k) : 0);
    const auto plan = plan_messages(s, order_seed);
    RunResult r = simulate(s, plan, carried ? &*carried : nullptr);
    carried = r.profiler;

    RunSummary sum;
    sum.run = k + 1;
    sum.seed = order_seed;
    sum.makespan_s = r.makespan_s;
    sum.mean_abs_error_pp = mean_abs_error(r.frames);
    sum.messages = plan.size();
    for (const auto& e : r.events)
      if (e.name == "message_completed") ++sum.completed;
    out.push_back(sum);

    if (options.out_dir) {
      const auto dir = *options.out_dir / ("run_" + std::to_string(k + 1));
      std::filesystem::create_directories(dir);
      std::ofstream csv(dir / "metrics.csv");
      write_metrics_csv(csv, r.frames);
      std::ofstream log(dir / "events.log");
      write_events_log(log, r.events);
    }
  }
  return out;
}

}  // namespace streambin::harness
