#include <doctest.h>

#include <set>

#include "streambin/master.hpp"

using namespace streambin;
using namespace streambin::master;
using protocol::PeState;
using protocol::PeStat;
using protocol::WorkerReport;

namespace {

struct FakeGateway : WorkerGateway {
  std::set<std::string> refuse_start;  // worker ids
  std::set<std::string> unreachable;
  std::vector<std::pair<std::string, std::string>> pushed;  // worker, message
  std::vector<std::string> stopped;
  PeState start_state = PeState::starting;

  std::optional<protocol::PeStartReply> start_pe(const WorkerRecord& w,
                                                 const protocol::PeStartRequest& r) override {
    if (refuse_start.count(w.worker_id)) return std::nullopt;
    return protocol::PeStartReply{{w.worker_id, w.host, w.port, r.pe_id, r.image, r.tag}, start_state};
  }
  bool stop_pe(const WorkerRecord&, const std::string& pe_id) override {
    stopped.push_back(pe_id);
    return true;
  }
  Dispatch push_stream(const WorkerRecord& w, const protocol::StreamMessage& m) override {
    if (unreachable.count(w.worker_id)) return {Dispatch::Status::unreachable, ""};
    pushed.emplace_back(w.worker_id, m.message_id);
    return {Dispatch::Status::accepted, ""};
  }
};

struct FakeProvisioner : Provisioner {
  int provisioned = 0;
  std::vector<std::string> released;
  void provision(int count, Millis) override { provisioned += count; }
  void release(const WorkerRecord& w, Millis) override { released.push_back(w.worker_id); }
};

struct Fixture {
  irm::IrmConfig config;
  FakeGateway gateway;
  FakeProvisioner provisioner;
  EventLog events;
  Master master{config, gateway, provisioner, events};

  std::string add_active(int port, Millis now = 0) {
    const auto id = master.register_worker("h", port, now);
    master.ingest_report({id, now, {}, {}}, now);
    return id;
  }
  // Puts an idle PE of `image` on worker `id` through the report path.
  void idle_pe(const std::string& id, const std::string& pe, const std::string& image, Millis now) {
    WorkerReport r{id, now, {}, {}};
    for (const auto& [pid, rec] : master.worker(id)->pes)
      r.pe_stats.push_back({pid, rec.image, rec.tag, 0.0, PeState::idle, now});
    r.pe_stats.push_back({pe, image, "", 0.0, PeState::idle, now});
    master.ingest_report(r, now);
  }
};

protocol::StreamMessage msg(const std::string& id, const std::string& image = "A") {
  return {"{}", image, "", id, 0};
}

}  // namespace

TEST_CASE("registration is idempotent per address") {
  Fixture f;
  const auto a = f.master.register_worker("h", 1, 0);
  const auto b = f.master.register_worker("h", 2, 0);
  CHECK(a != b);
  CHECK(f.master.register_worker("h", 1, 5) == a);
  CHECK(f.master.workers().size() == 2);
  CHECK(f.master.worker(a)->state == WorkerState::provisioning);
}

TEST_CASE("first report activates; silence deactivates") {
  Fixture f;
  const auto id = f.add_active(1, 0);
  CHECK(f.master.worker(id)->state == WorkerState::active);
  f.master.check_liveness(3000);
  CHECK(f.master.worker(id)->state == WorkerState::active);
  f.master.check_liveness(3001);
  CHECK(f.master.worker(id)->state == WorkerState::removed);
  CHECK_THROWS_AS(f.master.ingest_report({id, 3500, {}, {}}, 3500), UnknownWorker);
  CHECK(f.master.register_worker("h", 1, 4000) == id);
  CHECK(f.master.worker(id)->state == WorkerState::provisioning);
}

TEST_CASE("reports update measured CPU, adopt PEs and feed the profiler") {
  Fixture f;
  const auto id = f.add_active(1);
  WorkerReport r{id, 1000, {{"x", "A", "", 0.4, PeState::running, 900}}, {}};
  r.per_image_avg = WorkerReport::image_averages(r.pe_stats);
  f.master.ingest_report(r, 1000);
  const auto* w = f.master.worker(id);
  REQUIRE(w->pes.count("x"));
  CHECK(w->measured_cpu() == doctest::Approx(0.4));
  CHECK(f.events.count("pe_adopted") == 1);
  f.master.profiler().aggregate();
  CHECK(f.master.profiler().estimate("A") == doctest::Approx(0.4));
  CHECK_THROWS_AS(f.master.ingest_report({"nobody", 0, {}, {}}, 0), UnknownWorker);
}

TEST_CASE("two workers reporting one image average into one sample") {
  Fixture f;
  const auto a = f.add_active(1);
  const auto b = f.add_active(2);
  f.master.ingest_report({a, 1000, {{"p", "A", "", 0.3, PeState::running, 0}}, {{"A", 0.3}}}, 1000);
  f.master.ingest_report({b, 1000, {{"q", "A", "", 0.5, PeState::running, 0}}, {{"A", 0.5}}}, 1000);
  f.master.profiler().aggregate();
  CHECK(f.master.profiler().estimate("A") == doctest::Approx(0.4));
  CHECK(f.master.profiler().find("A")->sample_count() == 1);
}

TEST_CASE("find_available_pe reserves and matches image") {
  Fixture f;
  const auto id = f.add_active(1);
  CHECK_FALSE(f.master.find_available_pe("A", "", 0));
  f.idle_pe(id, "p0", "A", 100);
  CHECK_FALSE(f.master.find_available_pe("B", "", 200));
  const auto ep = f.master.find_available_pe("A", "", 200);
  REQUIRE(ep);
  CHECK(ep->pe_id == "p0");
  CHECK(ep->worker_id == id);
  CHECK_FALSE(f.master.find_available_pe("A", "", 300));

  // An unused reservation lapses after the window.
  auto heartbeat = [&](Millis t) {
    f.master.ingest_report({id, t, {{"p0", "A", "", 0.0, PeState::idle, 100}}, {}}, t);
  };
  heartbeat(2500);
  heartbeat(5000);
  CHECK(f.master.worker(id)->pes.at("p0").status == PeStatus::reserved);
  f.master.housekeeping_step(200 + 4999);
  CHECK_FALSE(f.master.find_available_pe("A", "", 5199));
  f.master.housekeeping_step(200 + 5000);
  CHECK(f.events.count("reservation_expired") == 1);
}

TEST_CASE("backlog has priority over connector queries") {
  Fixture f;
  const auto id = f.add_active(1);
  f.master.enqueue_backlog(msg("m1"), 0);
  f.master.enqueue_backlog(msg("m2"), 0);
  f.idle_pe(id, "p0", "A", 100);  // the report drains the backlog
  REQUIRE(f.gateway.pushed.size() == 1);
  CHECK(f.gateway.pushed[0].second == "m1");
  CHECK_FALSE(f.master.find_available_pe("A", "", 150));
  CHECK(f.master.backlog().size() == 1);
}

TEST_CASE("failed dispatch keeps the message at the front") {
  Fixture f;
  const auto a = f.add_active(1);
  const auto b = f.add_active(2);
  f.gateway.unreachable.insert(a);
  f.master.enqueue_backlog(msg("m1"), 0);
  f.master.enqueue_backlog(msg("m2"), 0);
  f.idle_pe(a, "pa", "A", 100);
  CHECK(f.gateway.pushed.empty());
  CHECK(f.master.backlog().front().message_id == "m1");
  CHECK(f.events.count("dispatch_failed") == 1);
  f.idle_pe(b, "pb", "A", 200);
  REQUIRE(f.gateway.pushed.size() == 1);
  CHECK(f.gateway.pushed[0] == std::pair<std::string, std::string>{b, "m1"});
}

TEST_CASE("packing_run examples") {
  WorkerRecord w0;
  w0.worker_id = "w0";
  std::vector<irm::ContainerRequest> q{{"r0", "A", "", 3, 0.6, {}, 0}, {"r1", "A", "", 3, 0.5, {}, 0}};
  std::vector<const WorkerRecord*> bins{&w0};
  auto res = packing_run(q, bins);
  REQUIRE(res.allocations.size() == 1);
  CHECK(res.allocations[0].request_id == "r0");
  CHECK(res.allocations[0].target_worker == "w0");
  REQUIRE(res.unplaced.size() == 1);
  CHECK_FALSE(res.unplaced[0].target_worker);
  CHECK(res.bins_needed == 2);

  WorkerRecord a, b;
  a.worker_id = "a";
  a.index = 0;
  a.pes["x"].scheduled_cpu = 0.8;
  b.worker_id = "b";
  b.index = 1;
  std::vector<const WorkerRecord*> two{&a, &b};
  res = packing_run({{"r", "A", "", 3, 0.5, {}, 0}}, two);
  CHECK(res.allocations[0].target_worker == "b");
  CHECK(res.placements[0].min_lower_scheduled == doctest::Approx(0.8));

  res = packing_run({}, two);
  CHECK(res.allocations.empty());
  CHECK(res.bins_needed == 1);
}

TEST_CASE("allocation success, requeue and drop") {
  Fixture f;
  const auto id = f.add_active(1);
  irm::ContainerRequest r{"r0", "A", "", 3, 0.4, id, 0};
  CHECK(f.master.allocate(r, 0) == AllocationOutcome::started);
  CHECK(f.master.worker(id)->scheduled_cpu() == doctest::Approx(0.4));

  f.gateway.refuse_start.insert(id);
  r.request_id = "r1";
  CHECK(f.master.allocate(r, 0) == AllocationOutcome::requeued);
  const auto& q = f.master.container_queue().entries();
  REQUIRE(q.size() == 1);
  CHECK(q[0].ttl == 2);
  CHECK_FALSE(q[0].target_worker);

  auto again = q[0];
  again.target_worker = id;
  CHECK(f.master.allocate(again, 0) == AllocationOutcome::requeued);
  auto third = f.master.container_queue().entries().back();
  third.target_worker = id;
  CHECK(third.ttl == 1);
  CHECK(f.master.allocate(third, 0) == AllocationOutcome::dropped);
  CHECK(f.events.count("request_dropped") == 1);
}

TEST_CASE("a provisioning worker refuses and the request is requeued") {
  Fixture f;
  const auto id = f.master.register_worker("h", 1, 0);  // no report yet
  f.gateway.refuse_start.insert(id);
  CHECK(f.master.allocate({"r", "A", "", 3, 0.5, id, 0}, 0) == AllocationOutcome::requeued);
  CHECK(f.master.container_queue().entries().front().ttl == 2);
}

TEST_CASE("property: requests never exceed ttl_initial failed allocations") {
  Fixture f;
  const auto id = f.add_active(1);
  f.gateway.refuse_start.insert(id);
  f.master.submit_request({"", "A", "", f.config.ttl_initial, 0.3, {}, 0}, 0);
  int failures = 0;
  for (Millis t = 0; t < 60000 && !f.master.container_queue().empty(); t += 2000) {
    const auto res = f.master.run_packing(t);
    failures += static_cast<int>(res.allocations.size());
  }
  CHECK(failures == f.config.ttl_initial);
  CHECK(f.events.count("request_dropped") == 1);
}

TEST_CASE("packing keeps every worker within capacity") {
  Fixture f;
  f.add_active(1);
  f.add_active(2);
  for (int i = 0; i < 12; ++i) f.master.submit_request({"", "A", "", 3, 0.3, {}, 0}, 0);
  const auto res = f.master.run_packing(0);
  CHECK(res.allocations.size() == 6);
  CHECK(res.bins_needed == 4);
  for (const auto& [id, w] : f.master.workers()) CHECK(w.scheduled_cpu() <= 1.0 + 1e-9);
  CHECK(f.master.container_queue().size() == 6);
  CHECK(f.provisioner.provisioned > 0);
}

TEST_CASE("idle reaper") {
  Fixture f;
  f.config.container_idle_timeout = 1.0;
  const auto id = f.add_active(1);
  f.master.allocate({"r0", "A", "", 3, 0.3, id, 0}, 0);
  f.master.allocate({"r1", "A", "", 3, 0.2, id, 0}, 0);
  f.master.allocate({"r2", "A", "", 3, 0.4, id, 0}, 0);
  WorkerReport r{id, 500, {}, {}};
  for (const auto& [pid, pe] : f.master.worker(id)->pes)
    r.pe_stats.push_back({pid, "A", "", 0.0, pid == "pe2" ? PeState::running : PeState::idle, 0});
  f.master.ingest_report(r, 500);
  const auto stopped = f.master.reap_idle(1500);
  CHECK(stopped == std::vector<std::string>{"pe0", "pe1"});
  CHECK(f.master.worker(id)->scheduled_cpu() == doctest::Approx(0.4));
  CHECK(f.master.reap_idle(100000).empty());  // running PE untouched
}

TEST_CASE("a report in flight during a stop does not bring the PE back") {
  Fixture f;
  f.config.container_idle_timeout = 1.0;
  const auto id = f.add_active(1);
  f.idle_pe(id, "x", "A", 100);
  REQUIRE(f.master.reap_idle(1200) == std::vector<std::string>{"x"});
  // built before the stop, delivered after it
  f.master.ingest_report({id, 1150, {{"x", "A", "", 0.0, PeState::idle, 100}}, {}}, 1300);
  CHECK(f.master.worker(id)->pes.empty());
  CHECK(f.events.count("pe_adopted") == 1);
  // still listed after the stop: the stop was lost, so the PE is real
  f.master.ingest_report({id, 1400, {{"x", "A", "", 0.0, PeState::idle, 100}}, {}}, 1400);
  CHECK(f.master.worker(id)->pes.count("x") == 1);
  CHECK(f.events.count("pe_adopted") == 2);
}

TEST_CASE("autoscaler scales up, drains highest index and removes after grace") {
  Fixture f;
  const auto w0 = f.add_active(1);
  f.add_active(2);
  f.add_active(3);
  CHECK(f.master.autoscale(8, 0) == 5);
  CHECK(f.provisioner.provisioned == 2);

  // Nothing hosted: target 1, so w2 and w1 drain in that order.
  f.master.allocate({"r", "A", "", 3, 0.5, w0, 0}, 0);
  CHECK(f.master.autoscale(1, 0) == 2);
  const auto drains = f.events.named("scale_down");
  REQUIRE(drains.size() == 1);
  CHECK(drains[0].get("worker") == "w2");
  auto heartbeat = [&](Millis t) {
    f.master.ingest_report({w0, t, {{"pe0", "A", "", 0.5, PeState::running, 0}}, {}}, t);
    f.master.ingest_report({"w1", t, {}, {}}, t);
    f.master.ingest_report({"w2", t, {}, {}}, t);
  };
  heartbeat(28500);
  f.master.housekeeping_step(29000);
  CHECK(f.master.worker("w2")->state == WorkerState::draining);
  heartbeat(29500);
  f.master.housekeeping_step(30000);
  CHECK(f.master.worker("w2")->state == WorkerState::removed);
  CHECK(f.provisioner.released == std::vector<std::string>{"w2"});
}

TEST_CASE("predictor asks for PEs of the oldest backlog image") {
  Fixture f;
  f.add_active(1);
  for (int i = 0; i < 60; ++i) f.master.enqueue_backlog(msg("m" + std::to_string(i), i == 0 ? "B" : "A"), 0);
  const auto d = f.master.run_predictor(0);
  CHECK(d.kind == irm::ScalingDecision::Kind::large);
  CHECK(f.master.container_queue().count_image("B") == 4);
}

TEST_CASE("starved backlog images get a PE even below thresholds") {
  Fixture f;
  f.add_active(1);
  f.master.enqueue_backlog(msg("m0"), 0);
  f.master.run_predictor(0);  // first sample, roc 0, length 1
  CHECK(f.master.container_queue().count_image("A") == 1);
  f.master.run_predictor(2000);
  CHECK(f.master.container_queue().count_image("A") == 1);
}

TEST_CASE("snapshot") {
  Fixture f;
  const auto id = f.add_active(1);
  f.master.allocate({"r", "A", "", 3, 0.6, id, 0}, 0);
  f.master.ingest_report({id, 1000, {{"pe0", "A", "", 0.5, PeState::running, 0}}, {}}, 1000);
  const auto fr = f.master.snapshot(3000, 1000);
  CHECK(fr.t == 2.0);
  REQUIRE(fr.per_worker.size() == 1);
  CHECK(fr.per_worker[0].error_pp == doctest::Approx(10.0));
  CHECK(fr.ideal_bins == 1);
  CHECK(fr.active_workers == 1);
}
