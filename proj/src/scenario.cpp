#include <fstream>
#include <random>
#include <sstream>

#include "streambin/harness.hpp"
#include "streambin/synthetic_job.hpp"

namespace streambin::harness {

using nlohmann::json;

namespace {

std::string join(const std::vector<std::string>& problems) {
  std::ostringstream os;
  os << "invalid scenario:";
  for (const auto& p : problems) os << "\n  " << p;
  return os.str();
}

// Reads an optional field, recording a problem instead of throwing.
template <class T>
void read(const json& j, const char* key, T& out, const std::string& path,
          std::vector<std::string>& problems) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    problems.push_back(path + key + ": wrong type");
  }
}

}  // namespace

ScenarioError::ScenarioError(const std::vector<std::string>& problems)
    : std::invalid_argument(join(problems)), problems_(problems) {}

Scenario Scenario::from_json(const json& j) {
  std::vector<std::string> problems;
  Scenario s;
  if (!j.is_object()) throw ScenarioError({"scenario: must be a JSON object"});

  read(j, "name", s.name, "", problems);
  read(j, "seed", s.seed, "", problems);
  read(j, "tick_ms", s.tick_ms, "", problems);
  read(j, "quiescence_s", s.quiescence_s, "", problems);
  read(j, "max_duration_s", s.max_duration_s, "", problems);
  read(j, "connector_concurrency", s.connector_concurrency, "", problems);

  if (j.contains("mode")) {
    const auto mode = j.at("mode").is_string() ? j.at("mode").get<std::string>() : "";
    if (mode == "simulated") {
      s.mode = Mode::simulated;
    } else if (mode == "process") {
      s.mode = Mode::process;
    } else {
      problems.push_back("mode: must be \"simulated\" or \"process\"");
    }
  }

  if (!j.contains("workloads") || !j.at("workloads").is_array() || j.at("workloads").empty()) {
    problems.push_back("workloads: must be a nonempty list");
  } else {
    const auto& ws = j.at("workloads");
    for (std::size_t i = 0; i < ws.size(); ++i) {
      const std::string path = "workloads[" + std::to_string(i) + "].";
      WorkloadSpec w;
      w.image = kSyntheticImage;
      if (!ws[i].is_object()) {
        problems.push_back(path + ": must be an object");
        continue;
      }
      read(ws[i], "image", w.image, path, problems);
      read(ws[i], "target_cpu", w.target_cpu, path, problems);
      read(ws[i], "duration_s", w.duration_s, path, problems);
      if (w.image.empty()) problems.push_back(path + "image: must be nonempty");
      if (!(w.target_cpu > 0.0 && w.target_cpu <= 1.0)) problems.push_back(path + "target_cpu: must be in (0, 1]");
      if (!(w.duration_s >= 0.0)) problems.push_back(path + "duration_s: must be >= 0");
      s.workloads.push_back(w);
    }
  }

  if (!j.contains("schedule") || !j.at("schedule").is_array() || j.at("schedule").empty()) {
    problems.push_back("schedule: must be a nonempty list");
  } else {
    const auto& es = j.at("schedule");
    double last = 0.0;
    for (std::size_t i = 0; i < es.size(); ++i) {
      const std::string path = "schedule[" + std::to_string(i) + "].";
      ScheduleEntry e;
      if (!es[i].is_object()) {
        problems.push_back(path + ": must be an object");
        continue;
      }
      read(es[i], "at_s", e.at_s, path, problems);
      read(es[i], "batch_size", e.batch_size, path, problems);
      if (!(e.at_s >= 0.0)) problems.push_back(path + "at_s: must be >= 0");
      if (i > 0 && e.at_s < last) problems.push_back(path + "at_s: schedule times must be nondecreasing");
      last = e.at_s;
      if (e.batch_size < 1) problems.push_back(path + "batch_size: must be >= 1");
      if (es[i].contains("workload")) {
        const auto& w = es[i].at("workload");
        if (w.is_string() && w.get<std::string>() == "mixed") {
          e.workload = std::nullopt;
        } else if (w.is_number_integer() && w.get<long>() >= 0 &&
                   static_cast<std::size_t>(w.get<long>()) < std::max<std::size_t>(s.workloads.size(), 1)) {
          e.workload = static_cast<std::size_t>(w.get<long>());
        } else {
          problems.push_back(path + "workload: must be a workload index or \"mixed\"");
        }
      } else {
        e.workload = 0;
      }
      s.schedule.push_back(e);
    }
  }

  if (j.contains("cluster")) {
    const auto& c = j.at("cluster");
    if (!c.is_object()) {
      problems.push_back("cluster: must be an object");
    } else {
      read(c, "max_workers", s.cluster.max_workers, "cluster.", problems);
      read(c, "initial_workers", s.cluster.initial_workers, "cluster.", problems);
      read(c, "worker_startup_delay_s", s.cluster.worker_startup_delay_s, "cluster.", problems);
      read(c, "pe_startup_delay_s", s.cluster.pe_startup_delay_s, "cluster.", problems);
    }
  }
  if (s.cluster.max_workers < 1) problems.push_back("cluster.max_workers: must be >= 1");
  if (s.cluster.initial_workers < 0 || s.cluster.initial_workers > s.cluster.max_workers)
    problems.push_back("cluster.initial_workers: must be in [0, max_workers]");
  if (!(s.cluster.worker_startup_delay_s >= 0.0))
    problems.push_back("cluster.worker_startup_delay_s: must be >= 0");
  if (!(s.cluster.pe_startup_delay_s >= 0.0)) problems.push_back("cluster.pe_startup_delay_s: must be >= 0");

  if (j.contains("irm")) {
    s.irm_overrides = j.at("irm");
    if (!s.irm_overrides.is_object()) {
      problems.push_back("irm: must be an object");
    } else {
      json merged = s.irm_overrides;
      merged["max_workers"] = std::max(1, s.cluster.max_workers);
      try {
        s.irm = irm::IrmConfig::merge(irm::IrmConfig{}, merged);
      } catch (const std::exception& e) {
        problems.push_back(std::string("irm: ") + e.what());
      }
    }
  } else {
    s.irm.max_workers = std::max(1, s.cluster.max_workers);
  }

  if (j.contains("pinned_profiles")) {
    const auto& p = j.at("pinned_profiles");
    if (!p.is_object()) {
      problems.push_back("pinned_profiles: must be an object");
    } else {
      for (const auto& [image, v] : p.items()) {
        if (!v.is_number() || v.get<double>() < 0.0 || v.get<double>() > 1.0) {
          problems.push_back("pinned_profiles." + image + ": must be a number in [0, 1]");
        } else {
          s.pinned_profiles[image] = v.get<double>();
        }
      }
    }
  }

  if (s.tick_ms <= 0 || 1000 % s.tick_ms != 0) problems.push_back("tick_ms: must be a positive divisor of 1000");
  if (!(s.quiescence_s >= 0.0)) problems.push_back("quiescence_s: must be >= 0");
  if (!(s.max_duration_s > 0.0)) problems.push_back("max_duration_s: must be > 0");
  if (s.connector_concurrency < 1) problems.push_back("connector_concurrency: must be >= 1");

  if (!problems.empty()) throw ScenarioError(problems);
  return s;
}

Scenario Scenario::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ScenarioError({"cannot open " + path.string()});
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ScenarioError({path.string() + ": " + e.what()});
  }
  auto s = from_json(j);
  if (s.name.empty()) s.name = path.stem().string();
  return s;
}

json Scenario::to_json() const {
  json ws = json::array();
  for (const auto& w : workloads)
    ws.push_back({{"image", w.image}, {"target_cpu", w.target_cpu}, {"duration_s", w.duration_s}});
  json sched = json::array();
  for (const auto& e : schedule) {
    json je{{"at_s", e.at_s}, {"batch_size", e.batch_size}};
    if (e.workload) {
      je["workload"] = *e.workload;
    } else {
      je["workload"] = "mixed";
    }
    sched.push_back(je);
  }
  return {{"name", name},
          {"seed", seed},
          {"workloads", ws},
          {"schedule", sched},
          {"cluster",
           {{"max_workers", cluster.max_workers},
            {"initial_workers", cluster.initial_workers},
            {"worker_startup_delay_s", cluster.worker_startup_delay_s},
            {"pe_startup_delay_s", cluster.pe_startup_delay_s}}},
          {"irm", irm_overrides},
          {"mode", mode == Mode::simulated ? "simulated" : "process"},
          {"tick_ms", tick_ms},
          {"quiescence_s", quiescence_s},
          {"max_duration_s", max_duration_s},
          {"pinned_profiles", pinned_profiles},
          {"connector_concurrency", connector_concurrency}};
}

std::size_t Scenario::message_count() const {
  std::size_t n = 0;
  for (const auto& e : schedule) n += static_cast<std::size_t>(e.batch_size);
  return n;
}

std::vector<PlannedMessage> plan_messages(const Scenario& s, std::optional<std::uint64_t> order_seed) {
  std::mt19937_64 rng(s.seed);
  std::vector<PlannedMessage> plan;
  plan.reserve(s.message_count());
  for (const auto& e : s.schedule) {
    for (int k = 0; k < e.batch_size; ++k) {
      PlannedMessage m;
      m.at_s = e.at_s;
      m.workload = e.workload ? *e.workload : static_cast<std::size_t>(rng() % s.workloads.size());
      plan.push_back(std::move(m));
    }
  }
  if (order_seed) {
    // Fisher-Yates over workload assignments; std::shuffle is not portable
    // across standard libraries.
    std::mt19937_64 order(*order_seed);
    for (std::size_t i = plan.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(order() % i);
      std::swap(plan[i - 1].workload, plan[j].workload);
    }
  }
  for (std::size_t i = 0; i < plan.size(); ++i) {
    const auto& w = s.workloads[plan[i].workload];
    auto& msg = plan[i].message;
    msg.image = w.image;
    msg.tag = "";
    msg.message_id = "m" + std::to_string(i);
    msg.payload = SyntheticJob{w.target_cpu, w.duration_s}.to_payload();
    msg.created_at = seconds_to_ms(plan[i].at_s);
  }
  return plan;
}

}  // namespace streambin::harness
