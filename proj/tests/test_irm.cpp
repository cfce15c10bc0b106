#include <doctest.h>

#include <cmath>
#include <random>

#include "streambin/irm.hpp"

using namespace streambin;
using namespace streambin::irm;

TEST_CASE("config defaults, merge and validation") {
  IrmConfig c;
  CHECK(c.report_interval == 1.0);
  CHECK(c.container_idle_timeout == 1.0);
  CHECK(c.default_cpu_estimate == 0.5);
  CHECK(c.ttl_initial == 3);
  CHECK_NOTHROW(c.validate());

  const auto merged = IrmConfig::merge(c, {{"len_low", 5}, {"packing_interval", 0.5}});
  CHECK(merged.len_low == 5);
  CHECK(merged.packing_interval == 0.5);
  CHECK(merged.len_high == 50);
  CHECK_THROWS_AS(IrmConfig::merge(c, {{"no_such_key", 1}}), std::invalid_argument);

  IrmConfig bad;
  bad.len_low = 60;
  bad.roc_low = 9.0;
  bad.scale_small = 5;
  try {
    bad.validate();
    FAIL("expected invalid_argument");
  } catch (const std::invalid_argument& e) {
    const std::string msg = e.what();
    CHECK(msg.find("len_low") != std::string::npos);
    CHECK(msg.find("roc_low") != std::string::npos);
    CHECK(msg.find("scale_small") != std::string::npos);
  }

  const auto back = IrmConfig::from_json(c.to_json());
  CHECK(back.to_json() == c.to_json());
}

TEST_CASE("container queue is FIFO and drops exhausted requests") {
  EventLog log;
  ContainerQueue q(&log);
  CHECK(q.push({"A", "img", "", 3, 0.5, std::nullopt, 0}, 0));
  CHECK(q.push({"B", "img", "", 3, 0.5, std::string("w1"), 0}, 0));
  CHECK_FALSE(q.entries().back().target_worker.has_value());
  CHECK(q.pop()->request_id == "A");
  CHECK(q.pop()->request_id == "B");
  CHECK_FALSE(q.pop());

  CHECK_FALSE(q.push({"C", "img", "", 0, 0.5, std::nullopt, 0}, 7));
  CHECK(q.empty());
  const auto dropped = log.named("request_dropped");
  REQUIRE(dropped.size() == 1);
  CHECK(dropped[0].get("request") == "C");
}

TEST_CASE("refresh overwrites estimates with profile averages") {
  Profiler p(10, 0.5);
  ContainerQueue q;
  q.push({"A", "img", "", 3, 0.5, std::nullopt, 0}, 0);
  q.push({"B", "other", "", 3, 0.5, std::nullopt, 0}, 0);
  q.refresh(p);
  CHECK(q.entries()[0].estimated_cpu == 0.5);
  p.add_sample("img", 0.3);
  q.refresh(p);
  CHECK(q.entries()[0].estimated_cpu == doctest::Approx(0.3));
  CHECK(q.entries()[1].estimated_cpu == 0.5);
  p.add_sample("other", 0.0);
  q.refresh(p);
  CHECK(q.entries()[1].estimated_cpu == kMinItemSize);
}

TEST_CASE("profiler moving average") {
  Profiler p(3, 0.5);
  CHECK(p.estimate("unseen") == 0.5);
  p.add_sample("a", 0.2);
  p.add_sample("a", 0.4);
  CHECK(p.add_sample("a", 0.6).estimate() == doctest::Approx(0.4));
  const auto& prof = p.add_sample("a", 0.8);
  CHECK(prof.estimate() == doctest::Approx(0.6));
  CHECK(std::vector<double>(prof.window().begin(), prof.window().end()) ==
        std::vector<double>{0.4, 0.6, 0.8});
  CHECK(prof.sample_count() == 4);
  CHECK_THROWS_AS(p.add_sample("a", 1.2), std::invalid_argument);
  CHECK_THROWS_AS(p.add_sample("a", -0.1), std::invalid_argument);
}

TEST_CASE("profiler aggregates observations across workers") {
  Profiler p(10, 0.5);
  p.observe("img", 0.3);
  p.observe("img", 0.5);
  CHECK(p.estimate("img") == 0.5);  // nothing folded yet
  const auto updated = p.aggregate();
  CHECK(updated == std::vector<std::string>{"img"});
  CHECK(p.estimate("img") == doctest::Approx(0.4));
  CHECK(p.find("img")->sample_count() == 1);
  CHECK(p.aggregate().empty());
}

TEST_CASE("pinned profiles ignore samples") {
  Profiler p(10, 0.5);
  p.pin("img", 0.25);
  p.add_sample("img", 0.9);
  CHECK(p.estimate("img") == 0.25);
}

TEST_CASE("property: profiler converges after a full window") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 1 + rng() % 20;
    const double truth = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    Profiler p(n, 0.5);
    for (int k = 0; k < static_cast<int>(rng() % 30); ++k)
      p.add_sample("x", std::uniform_real_distribution<double>(0.0, 1.0)(rng));
    for (std::size_t k = 0; k < n; ++k) p.add_sample("x", truth);
    CHECK(std::abs(p.estimate("x") - truth) <= 1e-9);
  }
}

TEST_CASE("queue monitor rate of change") {
  QueueMonitor m;
  CHECK(m.sample(0, 0).roc == 0.0);
  CHECK(m.sample(10, 2000).roc == doctest::Approx(5.0));
  CHECK(m.sample(4, 4000).roc == doctest::Approx(-3.0));
}

TEST_CASE("predictor four-case table") {
  IrmConfig c;
  LoadPredictor p(c);
  using K = ScalingDecision::Kind;
  CHECK(p.classify({60, 0.0, 0}) == ScalingDecision{K::large, 4});
  CHECK(p.classify({12, 0.2, 0}) == ScalingDecision{K::small, 1});
  CHECK(p.classify({2, 0.1, 0}) == ScalingDecision{});
  CHECK(p.classify({0, 6.0, 0}) == ScalingDecision{K::large, 4});
  CHECK(p.classify({12, 1.0, 0}) == ScalingDecision{K::large, 4});
  CHECK(p.classify({3, 1.5, 0}) == ScalingDecision{K::small, 1});
  CHECK(p.classify({9, -4.0, 0}) == ScalingDecision{});
}

TEST_CASE("property: at most one decision per timeout window") {
  IrmConfig c;
  LoadPredictor p(c);
  std::mt19937_64 rng(3);
  std::vector<Millis> decided;
  for (Millis t = 0; t < 600'000; t += 2000) {
    const QueueMetrics m{static_cast<long>(rng() % 80), static_cast<double>(rng() % 8), t};
    if (p.evaluate(m).kind != ScalingDecision::Kind::none) decided.push_back(t);
  }
  REQUIRE(decided.size() > 5);
  for (std::size_t i = 1; i < decided.size(); ++i)
    CHECK(decided[i] - decided[i - 1] >= seconds_to_ms(c.predictor_timeout));
}

TEST_CASE("autoscaler target formula") {
  CHECK(target_workers(3, 3, 10) == 5);
  CHECK(target_workers(0, 1, 5) == 1);
  CHECK(target_workers(8, 2, 5) == 5);
  CHECK(target_workers(0, 0, 5) == 1);
  for (int a = 0; a < 200; ++a) {
    const int expect = std::max(1, static_cast<int>(std::ceil(std::log2(a + 1.0))));
    CHECK(idle_buffer(a) == expect);
  }
}

TEST_CASE("item size floor") {
  CHECK(item_size(0.0) == kMinItemSize);
  CHECK(item_size(0.5) == 0.5);
  CHECK(item_size(1.5) == 1.0);
}
