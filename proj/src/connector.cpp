#include "streambin/connector.hpp"

#include <algorithm>
#include <random>
#include <thread>

namespace streambin::connector {

std::string_view to_string(Delivery::Kind k) {
  switch (k) {
    case Delivery::Kind::p2p:
      return "p2p";
    case Delivery::Kind::queued:
      return "queued";
    case Delivery::Kind::failed:
      return "failed";
  }
  return "failed";
}

namespace {

std::string random_session() {
  static constexpr char kHex[] = "0123456789abcdef";
  std::random_device rd;
  std::string s(8, '0');
  for (auto& c : s) c = kHex[rd() % 16];
  return s;
}

}  // namespace

Connector::Connector(Transport& transport, RetryPolicy retry, Sleeper sleeper)
    : transport_(transport),
      retry_(retry),
      sleeper_(sleeper ? std::move(sleeper)
                       : Sleeper([](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); })),
      session_(random_session()) {}

template <class F>
auto Connector::with_retry(F&& call) -> decltype(call()) {
  for (int attempt = 0;; ++attempt) {
    try {
      return call();
    } catch (const TransportError&) {
      if (attempt >= retry_.retries) throw;
      sleeper_(retry_.backoff_base * (1 << attempt));
    }
  }
}

Delivery Connector::send(const protocol::StreamMessage& message) {
  Delivery d;
  d.message_id = message.message_id;
  const auto endpoint = with_retry([&] { return transport_.query_pe(message.image, message.tag); });
  if (endpoint && transport_.send_to_worker(*endpoint, message)) {
    d.kind = Delivery::Kind::p2p;
    d.worker_id = endpoint->worker_id;
    return d;
  }
  with_retry([&] {
    transport_.send_to_master(message);
    return 0;
  });
  d.kind = Delivery::Kind::queued;
  return d;
}

std::vector<Delivery> Connector::send_batch(std::span<const protocol::StreamMessage> messages,
                                            int concurrency) {
  std::vector<Delivery> results(messages.size());
  auto one = [&](std::size_t i) {
    try {
      results[i] = send(messages[i]);
    } catch (const TransportError& e) {
      results[i] = {Delivery::Kind::failed, messages[i].message_id, "", e.what()};
    }
  };
  if (concurrency <= 1 || messages.size() <= 1) {
    for (std::size_t i = 0; i < messages.size(); ++i) one(i);
    return results;
  }
  std::atomic<std::size_t> next{0};
  const auto n_threads = std::min<std::size_t>(static_cast<std::size_t>(concurrency), messages.size());
  std::vector<std::jthread> pool;
  pool.reserve(n_threads);
  for (std::size_t t = 0; t < n_threads; ++t) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < messages.size(); i = next++) one(i);
    });
  }
  pool.clear();  // joins
  return results;
}

protocol::StreamMessage Connector::make_message(std::string image, std::string tag,
                                                std::string payload, Millis created_at) {
  protocol::StreamMessage m;
  m.image = std::move(image);
  m.tag = std::move(tag);
  m.payload = std::move(payload);
  m.created_at = created_at;
  m.message_id = session_ + "-" + std::to_string(next_id_++);
  return m;
}

}  // namespace streambin::connector
