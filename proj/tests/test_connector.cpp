#include <doctest.h>

#include <mutex>
#include <set>

#include "streambin/connector.hpp"

using namespace streambin;
using namespace streambin::connector;

namespace {

struct FakeTransport : Transport {
  std::mutex mu;
  int idle_pes = 0;        // endpoints the master hands out
  bool steal = false;      // PE taken between query and send
  int master_down_for = 0; // failing master calls before it comes back
  std::vector<std::string> p2p, queued, order;
  int queries = 0;

  std::optional<protocol::PeEndpoint> query_pe(const std::string& image, const std::string&) override {
    std::lock_guard lk(mu);
    ++queries;
    if (master_down_for > 0) {
      --master_down_for;
      throw TransportError("connection refused");
    }
    if (idle_pes == 0) return std::nullopt;
    --idle_pes;
    return protocol::PeEndpoint{"w0", "h", 9, "pe", image, ""};
  }
  bool send_to_worker(const protocol::PeEndpoint&, const protocol::StreamMessage& m) override {
    std::lock_guard lk(mu);
    order.push_back(m.message_id);
    if (steal) return false;
    p2p.push_back(m.message_id);
    return true;
  }
  void send_to_master(const protocol::StreamMessage& m) override {
    std::lock_guard lk(mu);
    if (std::find(order.begin(), order.end(), m.message_id) == order.end()) order.push_back(m.message_id);
    queued.push_back(m.message_id);
  }
};

std::vector<std::chrono::milliseconds> slept;
Connector make(FakeTransport& t) {
  slept.clear();
  return Connector(t, {}, [](std::chrono::milliseconds d) { slept.push_back(d); });
}

}  // namespace

TEST_CASE("p2p when an idle PE exists, queued otherwise") {
  FakeTransport t;
  auto c = make(t);
  t.idle_pes = 1;
  const auto m1 = c.make_message("img", "", "{}", 0);
  const auto m2 = c.make_message("img", "", "{}", 0);
  CHECK(m1.message_id != m2.message_id);
  auto d = c.send(m1);
  CHECK(d.kind == Delivery::Kind::p2p);
  CHECK(d.worker_id == "w0");
  d = c.send(m2);
  CHECK(d.kind == Delivery::Kind::queued);
  CHECK(t.queued == std::vector<std::string>{m2.message_id});
}

TEST_CASE("a PE taken between query and send falls back to the master") {
  FakeTransport t;
  auto c = make(t);
  t.idle_pes = 5;
  t.steal = true;
  const auto m = c.make_message("img", "", "{}", 0);
  CHECK(c.send(m).kind == Delivery::Kind::queued);
  CHECK(t.queued == std::vector<std::string>{m.message_id});
  CHECK(t.p2p.empty());
}

TEST_CASE("retries with exponential backoff, then gives up") {
  FakeTransport t;
  auto c = make(t);
  t.master_down_for = 2;
  CHECK(c.send(c.make_message("img", "", "", 0)).kind == Delivery::Kind::queued);
  CHECK(slept == std::vector<std::chrono::milliseconds>{std::chrono::milliseconds(200),
                                                        std::chrono::milliseconds(400)});
  t.master_down_for = 100;
  t.queries = 0;
  CHECK_THROWS_AS(c.send(c.make_message("img", "", "", 0)), TransportError);
  CHECK(t.queries == 4);
  CHECK(slept.back() == std::chrono::milliseconds(800));
}

TEST_CASE("send_batch keeps input order and accounts for every message") {
  FakeTransport t;
  auto c = make(t);
  t.idle_pes = 300;
  std::vector<protocol::StreamMessage> batch;
  for (int i = 0; i < 767; ++i) batch.push_back(c.make_message("img", "", "{}", 0));
  const auto results = c.send_batch(batch, 8);
  REQUIRE(results.size() == batch.size());
  std::set<std::string> ids;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    CHECK(results[i].message_id == batch[i].message_id);
    CHECK(results[i].kind != Delivery::Kind::failed);
    ids.insert(results[i].message_id);
  }
  CHECK(ids.size() == 767);
  CHECK(t.p2p.size() == 300);
  CHECK(t.p2p.size() + t.queued.size() == 767);
  std::set<std::string> seen(t.p2p.begin(), t.p2p.end());
  seen.insert(t.queued.begin(), t.queued.end());
  CHECK(seen == ids);
}

TEST_CASE("send_batch edge cases") {
  FakeTransport t;
  auto c = make(t);
  CHECK(c.send_batch({}, 8).empty());
  std::vector<protocol::StreamMessage> batch;
  for (int i = 0; i < 20; ++i) batch.push_back(c.make_message("img", "", "{}", 0));
  c.send_batch(batch, 1);
  REQUIRE(t.order.size() == 20);
  for (int i = 0; i < 20; ++i) CHECK(t.order[i] == batch[i].message_id);

  t.master_down_for = 1000;
  const auto failed = c.send_batch(std::span(batch).subspan(0, 2), 2);
  CHECK(failed[0].kind == Delivery::Kind::failed);
  CHECK_FALSE(failed[1].error.empty());
}
