#include <doctest.h>

#include <chrono>
#include <filesystem>
#include <thread>

#include "streambin/worker.hpp"

using namespace streambin;
using namespace streambin::worker;

namespace {

protocol::StreamMessage job(const std::string& id, double cpu, double secs,
                            const std::string& image = kSyntheticImage) {
  return {SyntheticJob{cpu, secs}.to_payload(), image, "", id, 0};
}

Worker make(EventLog& log, double startup = 0.0, double pe_delay = 0.0) {
  WorkerOptions o;
  o.startup_delay_s = startup;
  o.pe_startup_delay_s = pe_delay;
  Worker w(o, std::make_unique<SimulatedBackend>(std::set<std::string>{kSyntheticImage}), log, 0);
  w.set_worker_id("w0");
  return w;
}

}  // namespace

TEST_CASE("synthetic payload parsing") {
  const auto j = SyntheticJob::parse(R"({"target_cpu": 0.5, "duration_s": 10})");
  CHECK(j.target_cpu == 0.5);
  CHECK(j.duration_s == 10);
  CHECK(SyntheticJob::parse(j.to_payload()).target_cpu == 0.5);
  CHECK_THROWS_AS(SyntheticJob::parse("nope"), std::invalid_argument);
  CHECK_THROWS_AS(SyntheticJob::parse(R"({"target_cpu": 0, "duration_s": 1})"), std::invalid_argument);
  CHECK_THROWS_AS(SyntheticJob::parse(R"({"target_cpu": 0.5, "duration_s": -1})"), std::invalid_argument);
}

TEST_CASE("start, first report, and idempotent start") {
  EventLog log;
  auto w = make(log, 0.0, 2.0);
  const auto r = w.start_pe({kSyntheticImage, "", "pe0", 0.5}, 0);
  CHECK(r.status == Worker::StartResult::Status::started);
  CHECK(r.reply.state == protocol::PeState::starting);
  CHECK(r.reply.endpoint.pe_id == "pe0");
  const auto rep = w.sample_and_report(0);
  REQUIRE(rep.pe_stats.size() == 1);
  CHECK(rep.pe_stats[0].cpu_fraction == 0.0);
  CHECK(w.start_pe({kSyntheticImage, "", "pe0", 0.5}, 10).status ==
        Worker::StartResult::Status::existing);
  w.advance(2000);
  CHECK(w.engines().at("pe0").state == EngineState::idle);
}

TEST_CASE("start refused while provisioning or for unknown images") {
  EventLog log;
  auto w = make(log, 5.0);
  auto r = w.start_pe({kSyntheticImage, "", "pe0", 0.5}, 1000);
  CHECK(r.status == Worker::StartResult::Status::unavailable);
  CHECK(r.reason == "initializing");
  CHECK(w.start_pe({"other", "", "pe1", 0.5}, 6000).reason == "unknown_image");
  CHECK(w.start_pe({kSyntheticImage, "", "pe2", 0.5}, 6000).status ==
        Worker::StartResult::Status::started);
}

TEST_CASE("receive_stream handoff and rejection") {
  EventLog log;
  auto w = make(log);
  w.start_pe({kSyntheticImage, "", "pe0", 0.7}, 0);
  CHECK(w.receive_stream(job("m0", 0.7, 3), 0).accepted);
  CHECK(w.engines().at("pe0").state == EngineState::busy);
  CHECK(w.receive_stream(job("m1", 0.7, 3), 0).reason == "all_busy");
  CHECK(w.receive_stream(job("m2", 0.7, 3, "other"), 0).reason == "no_pe");

  const auto rep = w.sample_and_report(1000);
  CHECK(rep.pe_stats[0].cpu_fraction == 0.7);
  CHECK(rep.pe_stats[0].state == protocol::PeState::running);
  CHECK(rep.per_image_avg.at(kSyntheticImage) == 0.7);

  w.advance(3000);
  CHECK(w.engines().at("pe0").state == EngineState::idle);
  CHECK(w.engines().at("pe0").last_activity == 3000);
  const auto done = log.named("message_completed");
  REQUIRE(done.size() == 1);
  CHECK(done[0].get("message") == "m0");
  CHECK(w.sample_and_report(4000).pe_stats[0].cpu_fraction == 0.0);
}

TEST_CASE("bad payloads are refused without changing state") {
  EventLog log;
  auto w = make(log);
  w.start_pe({kSyntheticImage, "", "pe0", 0.5}, 0);
  protocol::StreamMessage m{"garbage", kSyntheticImage, "", "m", 0};
  CHECK(w.receive_stream(m, 0).reason == "bad_payload");
  CHECK(w.engines().at("pe0").state == EngineState::idle);
}

TEST_CASE("two PEs of one image average in the report") {
  EventLog log;
  auto w = make(log);
  w.start_pe({kSyntheticImage, "", "a", 0.3}, 0);
  w.start_pe({kSyntheticImage, "", "b", 0.5}, 0);
  CHECK(w.receive_stream(job("m0", 0.3, 5), 0).pe_id == "a");
  CHECK(w.receive_stream(job("m1", 0.5, 5), 0).pe_id == "b");
  CHECK(w.sample_and_report(1000).per_image_avg.at(kSyntheticImage) == doctest::Approx(0.4));
}

TEST_CASE("empty reports are still produced on cadence") {
  EventLog log;
  auto w = make(log, 2.0);
  int reports = 0;
  const Millis horizon = 60'000;
  for (Millis t = 0; t <= horizon; t += 100) {
    if (w.report_due(t)) {
      CHECK(w.sample_and_report(t).pe_stats.empty());
      ++reports;
    }
  }
  // live from t=2 s through t=60 s at 1 s
  const int expect = static_cast<int>((horizon - 2000) / 1000);
  CHECK(reports >= expect - 1);
  CHECK(reports <= expect + 1);
}

TEST_CASE("stop_pe aborts an in-flight message") {
  EventLog log;
  auto w = make(log);
  w.start_pe({kSyntheticImage, "", "pe0", 0.5}, 0);
  w.receive_stream(job("m0", 0.5, 10), 0);
  CHECK(w.stop_pe("pe0", 100));
  CHECK(log.count("message_aborted") == 1);
  CHECK_FALSE(w.stop_pe("pe0", 100));
}

TEST_CASE("duration zero job completes immediately") {
  EventLog log;
  auto w = make(log);
  w.start_pe({kSyntheticImage, "", "pe0", 0.5}, 0);
  w.receive_stream(job("m0", 0.5, 0), 0);
  CHECK(w.total_cpu(0) == 0.0);
  w.advance(0);
  CHECK(log.count("message_completed") == 1);
}

TEST_CASE("duty cycle shapes in-process CPU time") {
  const double before = process_cpu_seconds();
  const auto wall0 = std::chrono::steady_clock::now();
  run_synthetic_job({0.5, 2.0});
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - wall0).count();
  const double cpu = process_cpu_seconds() - before;
  CHECK(wall == doctest::Approx(2.0).epsilon(0.1));
  CHECK(cpu / wall == doctest::Approx(0.5).epsilon(0.3));
}
