#include <doctest.h>

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "streambin/harness.hpp"
#include "streambin/synthetic_job.hpp"

using namespace streambin;
using namespace streambin::harness;
using nlohmann::json;

namespace {

json base_scenario() {
  return {{"name", "t"},
          {"seed", 7},
          {"workloads", {{{"image", "img-a"}, {"target_cpu", 0.5}, {"duration_s", 4}}}},
          {"schedule", {{{"at_s", 1}, {"batch_size", 1}}}},
          {"cluster", {{"max_workers", 5}, {"initial_workers", 1}, {"pe_startup_delay_s", 2}}}};
}

std::string csv_of(const RunResult& r) {
  std::ostringstream os;
  write_metrics_csv(os, r.frames);
  return os.str();
}

std::vector<Event> named(const RunResult& r, const std::string& name) {
  std::vector<Event> out;
  for (const auto& e : r.events)
    if (e.name == name) out.push_back(e);
  return out;
}

std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("streambin_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("scenario parsing fills defaults and resolves the irm config") {
  auto j = base_scenario();
  j["irm"] = {{"packing_interval", 1.0}};
  const auto s = Scenario::from_json(j);
  CHECK(s.irm.packing_interval == 1.0);
  CHECK(s.irm.max_workers == 5);
  CHECK(s.tick_ms == 100);
  CHECK(s.mode == Mode::simulated);
  CHECK(s.message_count() == 1);
  const auto again = Scenario::from_json(s.to_json());
  CHECK(again.to_json() == s.to_json());
}

TEST_CASE("scenario validation reports every problem at once") {
  auto j = base_scenario();
  j["workloads"][0]["target_cpu"] = 1.5;
  j["schedule"] = {{{"at_s", 5}, {"batch_size", 0}}, {{"at_s", 2}, {"workload", 9}}};
  j["cluster"]["initial_workers"] = 9;
  j["irm"] = {{"no_such_key", 1}};
  j["tick_ms"] = 300;
  try {
    Scenario::from_json(j);
    FAIL("expected ScenarioError");
  } catch (const ScenarioError& e) {
    const auto& p = e.problems();
    const auto has = [&](const std::string& prefix) {
      return std::any_of(p.begin(), p.end(), [&](const std::string& x) { return x.rfind(prefix, 0) == 0; });
    };
    CHECK(has("workloads[0].target_cpu"));
    CHECK(has("schedule[0].batch_size"));
    CHECK(has("schedule[1].at_s"));
    CHECK(has("schedule[1].workload"));
    CHECK(has("cluster.initial_workers"));
    CHECK(has("irm:"));
    CHECK(has("tick_ms"));
    CHECK(p.size() == 7);
  }
  CHECK_THROWS_AS(Scenario::from_json(json::array()), ScenarioError);
  CHECK_THROWS_AS(Scenario::from_json(json{{"workloads", json::array()}}), ScenarioError);
}

TEST_CASE("plan_messages: mixed draws are seeded, reordering keeps the multiset") {
  auto j = base_scenario();
  j["workloads"].push_back({{"image", "img-b"}, {"target_cpu", 0.2}, {"duration_s", 1}});
  j["schedule"] = {{{"at_s", 0}, {"batch_size", 30}, {"workload", "mixed"}},
                   {{"at_s", 3}, {"batch_size", 5}, {"workload", 1}}};
  const auto s = Scenario::from_json(j);
  const auto a = plan_messages(s, std::nullopt);
  const auto b = plan_messages(s, std::nullopt);
  REQUIRE(a.size() == 35);
  std::multiset<std::size_t> wa, wc;
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].workload == b[i].workload);
    CHECK(a[i].message.message_id == "m" + std::to_string(i));
    wa.insert(a[i].workload);
  }
  CHECK(wa.count(0) > 0);
  CHECK(wa.count(1) > 5);
  for (std::size_t i = 30; i < 35; ++i) CHECK(a[i].at_s == 3.0);

  const auto c = plan_messages(s, 99);
  bool differs = false;
  for (std::size_t i = 0; i < c.size(); ++i) {
    CHECK(c[i].at_s == a[i].at_s);
    wc.insert(c[i].workload);
    differs = differs || c[i].workload != a[i].workload;
    const auto job = SyntheticJob::parse(c[i].message.payload);
    CHECK(job.target_cpu == s.workloads[c[i].workload].target_cpu);
    CHECK(c[i].message.image == s.workloads[c[i].workload].image);
  }
  CHECK(wa == wc);
  CHECK(differs);
}

TEST_CASE("single job trace on the virtual clock") {
  const auto s = Scenario::from_json(base_scenario());
  const auto r = simulate(s);
  CHECK_FALSE(r.timed_out);
  REQUIRE(r.submitted.size() == 1);
  CHECK(r.deliveries[0].kind == connector::Delivery::Kind::queued);

  const auto queued = named(r, "message_queued");
  const auto started = named(r, "pe_started");
  const auto dispatched = named(r, "message_dispatched");
  const auto done = named(r, "message_completed");
  REQUIRE(queued.size() == 1);
  REQUIRE(started.size() == 1);
  REQUIRE(dispatched.size() == 1);
  REQUIRE(done.size() == 1);
  CHECK(queued[0].t == 1000);
  CHECK(started[0].t >= queued[0].t);
  // the PE boots for pe_startup_delay before it can take the message
  CHECK(dispatched[0].t >= started[0].t + 2000);
  CHECK(done[0].t == dispatched[0].t + 4000);
  CHECK(r.makespan_s == doctest::Approx(ms_to_seconds(done[0].t - 1000)));

  // while the job runs the worker measures exactly its target
  int running = 0;
  for (const auto& f : r.frames) {
    const Millis t = seconds_to_ms(f.t);
    if (t > dispatched[0].t && t < done[0].t) {
      REQUIRE(!f.per_worker.empty());
      CHECK(f.per_worker[0].measured_cpu == doctest::Approx(0.5));
      ++running;
    }
  }
  CHECK(running >= 3);
  CHECK(named(r, "pe_stopped").size() == 1);
}

TEST_CASE("ten half-CPU jobs: conservation and the worker cap") {
  auto j = base_scenario();
  j["schedule"] = {{{"at_s", 1}, {"batch_size", 10}}};
  j["irm"] = {{"worker_grace", 5}};
  const auto s = Scenario::from_json(j);
  const auto r = simulate(s);
  CHECK_FALSE(r.timed_out);
  std::multiset<std::string> done;
  for (const auto& e : named(r, "message_completed")) done.insert(*e.get("message"));
  CHECK(done.size() == 10);
  for (const auto& id : r.submitted) CHECK(done.count(id) == 1);
  for (const auto& f : r.frames) {
    CHECK(f.active_workers <= 5);
    double total = 0.0;
    for (const auto& w : f.per_worker) {
      CHECK(w.scheduled_cpu <= 1.0 + 1e-9);
      total += w.scheduled_cpu;
    }
    CHECK(f.ideal_bins == static_cast<int>(std::ceil(total - 1e-9)));
  }
  CHECK(r.frames.back().queue_length == 0);
}

TEST_CASE("simulation output is byte-identical across runs") {
  auto j = base_scenario();
  j["workloads"].push_back({{"image", "img-b"}, {"target_cpu", 0.3}, {"duration_s", 2}});
  j["schedule"] = {{{"at_s", 0}, {"batch_size", 8}, {"workload", "mixed"}},
                   {{"at_s", 6}, {"batch_size", 12}, {"workload", "mixed"}}};
  const auto s = Scenario::from_json(j);
  const auto a = simulate(s);
  const auto b = simulate(s);
  CHECK(csv_of(a) == csv_of(b));
  std::ostringstream la, lb;
  write_events_log(la, a.events);
  write_events_log(lb, b.events);
  CHECK(la.str() == lb.str());

  std::istringstream in(csv_of(a));
  const auto frames = read_metrics_csv(in);
  std::ostringstream again;
  write_metrics_csv(again, frames);
  CHECK(again.str() == csv_of(a));
}

TEST_CASE("metrics csv rejects malformed input") {
  std::istringstream bad_header("t,x\n");
  CHECK_THROWS(read_metrics_csv(bad_header));
  std::istringstream short_row(std::string(kCsvHeader) + "\n1.0,w0,0.5\n");
  CHECK_THROWS(read_metrics_csv(short_row));
  std::istringstream bad_number(std::string(kCsvHeader) + "\n1.0,w0,abc,0,0,0,1,1,0\n");
  CHECK_THROWS(read_metrics_csv(bad_number));
  std::istringstream empty_frame(std::string(kCsvHeader) + "\n3.0,-,0.000000,0.000000,0.0000,4,0,1,0\n");
  const auto f = read_metrics_csv(empty_frame);
  REQUIRE(f.size() == 1);
  CHECK(f[0].per_worker.empty());
  CHECK(f[0].queue_length == 4);
}

TEST_CASE("mean_abs_error skips rows with no load") {
  protocol::MetricsFrame a;
  a.per_worker = {{"w0", 0.5, 0.3, 20.0}, {"w1", 0.0, 0.0, 0.0}};
  protocol::MetricsFrame b;
  b.per_worker = {{"w0", 0.0, 0.1, -10.0}, {"w1", 0.4, 0.4, 0.0}};
  CHECK(mean_abs_error({a, b}) == doctest::Approx((20.0 + 10.0 + 0.0) / 3.0));
  CHECK(mean_abs_error({}) == 0.0);
}

TEST_CASE("replay with a fixed seed and pinned profiles repeats exactly") {
  auto j = base_scenario();
  j["schedule"] = {{{"at_s", 0}, {"batch_size", 6}}};
  j["pinned_profiles"] = {{"img-a", 0.5}};
  const auto s = Scenario::from_json(j);
  ReplayOptions o;
  o.runs = 3;
  o.vary_seed = false;
  const auto runs = replay_runs(s, o);
  REQUIRE(runs.size() == 3);
  for (const auto& r : runs) {
    CHECK(r.completed == 6);
    CHECK(r.makespan_s == runs[0].makespan_s);
    CHECK(r.mean_abs_error_pp == runs[0].mean_abs_error_pp);
    CHECK(r.seed == s.seed);
  }
}

TEST_CASE("run writes metrics and events; plot renders both formats") {
  const auto dir = temp_dir("plot");
  auto j = base_scenario();
  j["schedule"] = {{{"at_s", 0}, {"batch_size", 3}}};
  const auto s = Scenario::from_json(j);
  run(s, dir);
  REQUIRE(std::filesystem::exists(dir / "metrics.csv"));
  REQUIRE(std::filesystem::exists(dir / "events.log"));
  std::ifstream log(dir / "events.log");
  std::string first;
  std::getline(log, first);
  CHECK(parse_event_line(first).has_value());

  for (auto kind : {PlotKind::cpu_per_worker, PlotKind::error, PlotKind::workers}) {
    plot(dir / "metrics.csv", kind, dir / "chart.svg");
    std::ifstream svg(dir / "chart.svg");
    const std::string text((std::istreambuf_iterator<char>(svg)), {});
    CHECK(text.rfind("<svg", 0) == 0);
    CHECK(text.find("<polyline") != std::string::npos);

    plot(dir / "metrics.csv", kind, dir / "chart.png");
    std::ifstream png(dir / "chart.png", std::ios::binary);
    char magic[8] = {};
    png.read(magic, 8);
    CHECK(std::string(magic + 1, 3) == "PNG");
  }
  CHECK_THROWS(plot(dir / "metrics.csv", PlotKind::error, dir / "chart.bmp"));
  CHECK_THROWS(plot_kind_from_string("pie"));
  CHECK(plot_kind_from_string("workers") == PlotKind::workers);
}
