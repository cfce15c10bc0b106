#pragma once

#include <atomic>
#include <memory>
#include <mutex>
#include <string>
#include <string_view>
#include <thread>

#include "streambin/connector.hpp"
#include "streambin/events.hpp"
#include "streambin/irm.hpp"
#include "streambin/master.hpp"
#include "streambin/worker.hpp"

namespace httplib {
class Server;
}

namespace streambin::net {

struct HostPort {
  std::string host;
  int port = 0;

  /// Parses "host:port"; throws std::invalid_argument.
  static HostPort parse(std::string_view text);
  std::string str() const { return host + ":" + std::to_string(port); }
};

struct Timeouts {
  std::chrono::milliseconds connect{1000};
  std::chrono::milliseconds read{3000};
};

/// Master -> worker calls over the worker REST endpoints.
class HttpWorkerGateway final : public master::WorkerGateway {
 public:
  explicit HttpWorkerGateway(Timeouts t = {}) : timeouts_(t) {}
  std::optional<protocol::PeStartReply> start_pe(const master::WorkerRecord& worker,
                                                 const protocol::PeStartRequest& request) override;
  bool stop_pe(const master::WorkerRecord& worker, const std::string& pe_id) override;
  Dispatch push_stream(const master::WorkerRecord& worker,
                       const protocol::StreamMessage& message) override;

 private:
  Timeouts timeouts_;
};

/// Connector transport against a live master.
class HttpTransport final : public connector::Transport {
 public:
  explicit HttpTransport(HostPort master, Timeouts t = {}) : master_(std::move(master)), timeouts_(t) {}
  std::optional<protocol::PeEndpoint> query_pe(const std::string& image, const std::string& tag) override;
  bool send_to_worker(const protocol::PeEndpoint& endpoint,
                      const protocol::StreamMessage& message) override;
  void send_to_master(const protocol::StreamMessage& message) override;

  /// Manual hosting request (POST /api/pe/request).
  void request_hosting(const protocol::HostingRequest& request);
  /// GET /api/status.
  protocol::MetricsFrame status();

 private:
  HostPort master_;
  Timeouts timeouts_;
};

/// Master node: REST front door plus a thread driving the IRM loops on the
/// wall clock. All master state sits behind one mutex.
class MasterService {
 public:
  MasterService(irm::IrmConfig config, EventLog& events,
                std::chrono::milliseconds tick = std::chrono::milliseconds(100));
  ~MasterService();
  MasterService(const MasterService&) = delete;
  MasterService& operator=(const MasterService&) = delete;

  /// Binds and starts serving; port 0 picks a free port. Returns the port.
  int start(const std::string& host, int port);
  void stop();

  template <class F>
  auto with_master(F&& f) {
    std::lock_guard lk(mu_);
    return f(*master_);
  }
  Millis run_start() const { return run_start_; }

 private:
  void install_routes();
  void tick_loop();

  EventLog& events_;
  std::chrono::milliseconds tick_;
  WallClock clock_;
  HttpWorkerGateway gateway_;
  master::ExternalProvisioner provisioner_;
  std::unique_ptr<master::Master> master_;
  std::unique_ptr<httplib::Server> server_;
  std::mutex mu_;
  std::atomic<bool> running_{false};
  std::thread server_thread_;
  std::thread tick_thread_;
  Millis run_start_ = 0;
  std::uint64_t anonymous_ids_ = 0;
};

/// Worker node: registers with the master, serves the worker endpoints and
/// reports on its own thread.
class WorkerService {
 public:
  WorkerService(worker::WorkerOptions options, std::unique_ptr<worker::PeBackend> backend,
                HostPort master, EventLog& events);
  ~WorkerService();
  WorkerService(const WorkerService&) = delete;
  WorkerService& operator=(const WorkerService&) = delete;

  int start(const std::string& host, int port);
  void stop();

  std::string worker_id();
  template <class F>
  auto with_worker(F&& f) {
    std::lock_guard lk(mu_);
    return f(*worker_);
  }

 private:
  void install_routes();
  void report_loop();
  bool register_once();

  worker::WorkerOptions options_;
  std::unique_ptr<worker::PeBackend> backend_;
  HostPort master_;
  EventLog& events_;
  WallClock clock_;
  std::unique_ptr<worker::Worker> worker_;
  std::unique_ptr<httplib::Server> server_;
  std::mutex mu_;
  std::atomic<bool> running_{false};
  std::thread server_thread_;
  std::thread report_thread_;
};

}  // namespace streambin::net
