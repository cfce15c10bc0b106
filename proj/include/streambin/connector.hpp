#pragma once

#include <atomic>
#include <chrono>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "streambin/protocol.hpp"

namespace streambin::connector {

class TransportError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// The three calls a stream connector makes. Implementations must be safe to
/// call from several threads at once when used with send_batch concurrency > 1.
class Transport {
 public:
  virtual ~Transport() = default;
  /// GET /api/pe on the master; nullopt on 204. Throws TransportError.
  virtual std::optional<protocol::PeEndpoint> query_pe(const std::string& image,
                                                       const std::string& tag) = 0;
  /// POST /api/stream on the worker; false on 503 or when the worker cannot
  /// be reached (the caller falls back to the master).
  virtual bool send_to_worker(const protocol::PeEndpoint& endpoint,
                              const protocol::StreamMessage& message) = 0;
  /// POST /api/stream on the master. Throws TransportError.
  virtual void send_to_master(const protocol::StreamMessage& message) = 0;
};

struct RetryPolicy {
  int retries = 3;
  std::chrono::milliseconds backoff_base{200};
};

struct Delivery {
  enum class Kind { p2p, queued, failed };
  Kind kind = Kind::failed;
  std::string message_id;
  std::string worker_id;  // set for p2p
  std::string error;      // set for failed

  bool operator==(const Delivery&) const = default;
};

std::string_view to_string(Delivery::Kind k);

class Connector {
 public:
  using Sleeper = std::function<void(std::chrono::milliseconds)>;

  explicit Connector(Transport& transport, RetryPolicy retry = {}, Sleeper sleeper = {});

  /// P2P when the master hands out an idle PE, otherwise the master backlog.
  /// Throws TransportError once the master stays unreachable through all
  /// retries.
  Delivery send(const protocol::StreamMessage& message);

  /// At most `concurrency` messages in flight; results follow input order.
  /// Transport failures become Kind::failed entries instead of exceptions.
  std::vector<Delivery> send_batch(std::span<const protocol::StreamMessage> messages,
                                   int concurrency);

  /// Builds a message with a session-unique id.
  protocol::StreamMessage make_message(std::string image, std::string tag, std::string payload,
                                       Millis created_at);

 private:
  template <class F>
  auto with_retry(F&& call) -> decltype(call());

  Transport& transport_;
  RetryPolicy retry_;
  Sleeper sleeper_;
  std::string session_;
  std::atomic<std::uint64_t> next_id_{0};
};

}  // namespace streambin::connector
