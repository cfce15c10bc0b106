#include "streambin/net.hpp"

#include <httplib.h>

#include <charconv>

namespace streambin::net {

using protocol::json;

HostPort HostPort::parse(std::string_view text) {
  const auto colon = text.rfind(':');
  if (colon == std::string_view::npos || colon == 0 || colon + 1 == text.size()) {
    throw std::invalid_argument("expected host:port, got '" + std::string(text) + "'");
  }
  HostPort hp;
  hp.host = std::string(text.substr(0, colon));
  const auto digits = text.substr(colon + 1);
  const auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), hp.port);
  if (ec != std::errc() || ptr != digits.data() + digits.size() || hp.port < 0 || hp.port > 65535) {
    throw std::invalid_argument("bad port in '" + std::string(text) + "'");
  }
  return hp;
}

namespace {

constexpr const char* kJson = "application/json";
constexpr const char* kBinary = "application/octet-stream";

httplib::Client client(const std::string& host, int port, const Timeouts& t) {
  httplib::Client c(host, port);
  c.set_connection_timeout(t.connect);
  c.set_read_timeout(t.read);
  c.set_write_timeout(t.read);
  return c;
}

httplib::Headers stream_headers(const protocol::StreamMessage& m) {
  return {{protocol::kImageHeader, m.image},
          {protocol::kTagHeader, m.tag},
          {protocol::kMessageIdHeader, m.message_id},
          {protocol::kCreatedAtHeader, std::to_string(m.created_at)}};
}

/// Rebuilds a stream message from a raw-body request. Empty optional when
/// the image header is missing.
std::optional<protocol::StreamMessage> stream_from(const httplib::Request& req) {
  protocol::StreamMessage m;
  m.image = req.get_header_value(protocol::kImageHeader);
  if (m.image.empty()) return std::nullopt;
  m.tag = req.get_header_value(protocol::kTagHeader);
  m.message_id = req.get_header_value(protocol::kMessageIdHeader);
  const auto created = req.get_header_value(protocol::kCreatedAtHeader);
  if (!created.empty()) {
    std::from_chars(created.data(), created.data() + created.size(), m.created_at);
  }
  m.payload = req.body;
  return m;
}

void reply_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), kJson);
}

void reply_error(httplib::Response& res, int status, const std::string& what) {
  reply_json(res, status, {{"error", what}});
}

}  // namespace

// ---- gateway ------------------------------------------------------------------

std::optional<protocol::PeStartReply> HttpWorkerGateway::start_pe(
    const master::WorkerRecord& worker, const protocol::PeStartRequest& request) {
  auto c = client(worker.host, worker.port, timeouts_);
  auto res = c.Post("/api/pe/start", protocol::encode(request), kJson);
  if (!res || res->status != 201) return std::nullopt;
  try {
    return protocol::decode<protocol::PeStartReply>(res->body);
  } catch (const protocol::MalformedFrame&) {
    return std::nullopt;
  }
}

bool HttpWorkerGateway::stop_pe(const master::WorkerRecord& worker, const std::string& pe_id) {
  auto c = client(worker.host, worker.port, timeouts_);
  auto res = c.Post("/api/pe/stop", protocol::encode(protocol::PeStopRequest{pe_id}), kJson);
  return res && res->status == 200;
}

master::WorkerGateway::Dispatch HttpWorkerGateway::push_stream(const master::WorkerRecord& worker,
                                                               const protocol::StreamMessage& m) {
  auto c = client(worker.host, worker.port, timeouts_);
  auto res = c.Post("/api/stream", stream_headers(m), m.payload, kBinary);
  if (!res) return {Dispatch::Status::unreachable, ""};
  if (res->status != 200) return {Dispatch::Status::rejected, ""};
  std::string pe_id;
  try {
    pe_id = json::parse(res->body).value("pe_id", "");
  } catch (const json::exception&) {
  }
  return {Dispatch::Status::accepted, pe_id};
}

// ---- connector transport ------------------------------------------------------

std::optional<protocol::PeEndpoint> HttpTransport::query_pe(const std::string& image,
                                                            const std::string& tag) {
  auto c = client(master_.host, master_.port, timeouts_);
  httplib::Params params{{"image", image}, {"tag", tag}};
  auto res = c.Get("/api/pe", params, httplib::Headers{});
  if (!res) throw connector::TransportError("master unreachable: " + httplib::to_string(res.error()));
  if (res->status == 204) return std::nullopt;
  if (res->status != 200) {
    throw connector::TransportError("GET /api/pe returned " + std::to_string(res->status));
  }
  try {
    return protocol::decode<protocol::PeEndpoint>(res->body);
  } catch (const protocol::MalformedFrame& e) {
    throw connector::TransportError(e.what());
  }
}

bool HttpTransport::send_to_worker(const protocol::PeEndpoint& ep,
                                   const protocol::StreamMessage& m) {
  auto c = client(ep.host, ep.port, timeouts_);
  auto res = c.Post("/api/stream", stream_headers(m), m.payload, kBinary);
  return res && res->status == 200;
}

void HttpTransport::send_to_master(const protocol::StreamMessage& m) {
  auto c = client(master_.host, master_.port, timeouts_);
  auto res = c.Post("/api/stream", stream_headers(m), m.payload, kBinary);
  if (!res) throw connector::TransportError("master unreachable: " + httplib::to_string(res.error()));
  if (res->status != 202) {
    throw connector::TransportError("POST /api/stream returned " + std::to_string(res->status));
  }
}

void HttpTransport::request_hosting(const protocol::HostingRequest& request) {
  auto c = client(master_.host, master_.port, timeouts_);
  auto res = c.Post("/api/pe/request", protocol::encode(request), kJson);
  if (!res || res->status != 202) throw connector::TransportError("POST /api/pe/request failed");
}

protocol::MetricsFrame HttpTransport::status() {
  auto c = client(master_.host, master_.port, timeouts_);
  auto res = c.Get("/api/status");
  if (!res || res->status != 200) throw connector::TransportError("GET /api/status failed");
  return protocol::decode<protocol::MetricsFrame>(res->body);
}

// ---- master service -------------------------------------------------------------

MasterService::MasterService(irm::IrmConfig config, EventLog& events,
                             std::chrono::milliseconds tick)
    : events_(events),
      tick_(tick),
      master_(std::make_unique<master::Master>(std::move(config), gateway_, provisioner_, events)),
      server_(std::make_unique<httplib::Server>()) {
  install_routes();
}

MasterService::~MasterService() { stop(); }

void MasterService::install_routes() {
  auto& s = *server_;

  s.Post("/api/worker/register", [this](const httplib::Request& req, httplib::Response& res) {
    try {
      const auto reg = protocol::decode<protocol::WorkerRegistration>(req.body);
      std::lock_guard lk(mu_);
      const auto id = master_->register_worker(reg.host, reg.port, clock_.now());
      reply_json(res, 200, protocol::RegistrationAck{id});
    } catch (const protocol::MalformedFrame& e) {
      reply_error(res, 400, e.what());
    }
  });

  s.Post("/api/worker/report", [this](const httplib::Request& req, httplib::Response& res) {
    try {
      const auto report = protocol::decode<protocol::WorkerReport>(req.body);
      std::lock_guard lk(mu_);
      master_->ingest_report(report, clock_.now());
      reply_json(res, 200, {{"ok", true}});
    } catch (const protocol::MalformedFrame& e) {
      reply_error(res, 400, e.what());
    } catch (const master::UnknownWorker& e) {
      reply_error(res, 404, e.what());
    }
  });

  s.Get("/api/pe", [this](const httplib::Request& req, httplib::Response& res) {
    const auto image = req.get_param_value("image");
    if (image.empty()) return reply_error(res, 400, "missing image parameter");
    std::lock_guard lk(mu_);
    const auto ep = master_->find_available_pe(image, req.get_param_value("tag"), clock_.now());
    if (!ep) {
      res.status = 204;
      return;
    }
    reply_json(res, 200, *ep);
  });

  s.Post("/api/stream", [this](const httplib::Request& req, httplib::Response& res) {
    auto m = stream_from(req);
    if (!m) return reply_error(res, 400, std::string("missing ") + protocol::kImageHeader);
    std::lock_guard lk(mu_);
    if (m->message_id.empty()) m->message_id = "anon-" + std::to_string(anonymous_ids_++);
    const auto id = m->message_id;
    const auto length = master_->enqueue_backlog(std::move(*m), clock_.now());
    reply_json(res, 202, {{"message_id", id}, {"queue_length", length}});
  });

  s.Post("/api/pe/request", [this](const httplib::Request& req, httplib::Response& res) {
    try {
      const auto hr = protocol::decode<protocol::HostingRequest>(req.body);
      std::lock_guard lk(mu_);
      master_->request_hosting(hr, clock_.now());
      reply_json(res, 202, {{"queued", hr.count}});
    } catch (const protocol::MalformedFrame& e) {
      reply_error(res, 400, e.what());
    }
  });

  s.Get("/api/status", [this](const httplib::Request&, httplib::Response& res) {
    std::lock_guard lk(mu_);
    json j = master_->snapshot(clock_.now(), run_start_);
    j["container_queue"] = master_->container_queue().size();
    j["backlog_accepted"] = master_->backlog_stats().accepted;
    j["backlog_dispatched"] = master_->backlog_stats().dispatched;
    std::size_t pes = 0;
    for (const auto& [id, w] : master_->workers()) pes += w.pes.size();
    j["pes"] = pes;
    reply_json(res, 200, j);
  });
}

int MasterService::start(const std::string& host, int port) {
  int bound = port;
  if (port == 0) {
    bound = server_->bind_to_any_port(host);
  } else if (!server_->bind_to_port(host, port)) {
    bound = -1;
  }
  if (bound <= 0) throw std::runtime_error("cannot listen on " + host + ":" + std::to_string(port));
  run_start_ = clock_.now();
  running_ = true;
  server_thread_ = std::thread([this] { server_->listen_after_bind(); });
  tick_thread_ = std::thread([this] { tick_loop(); });
  return bound;
}

void MasterService::tick_loop() {
  while (running_) {
    {
      std::lock_guard lk(mu_);
      master_->tick(clock_.now());
    }
    std::this_thread::sleep_for(tick_);
  }
}

void MasterService::stop() {
  if (!running_.exchange(false)) return;
  server_->stop();
  if (server_thread_.joinable()) server_thread_.join();
  if (tick_thread_.joinable()) tick_thread_.join();
}

// ---- worker service -------------------------------------------------------------

WorkerService::WorkerService(worker::WorkerOptions options,
                             std::unique_ptr<worker::PeBackend> backend, HostPort master,
                             EventLog& events)
    : options_(std::move(options)),
      backend_(std::move(backend)),
      master_(std::move(master)),
      events_(events),
      server_(std::make_unique<httplib::Server>()) {
  install_routes();
}

WorkerService::~WorkerService() { stop(); }

std::string WorkerService::worker_id() {
  std::lock_guard lk(mu_);
  return worker_ ? worker_->worker_id() : std::string();
}

void WorkerService::install_routes() {
  auto& s = *server_;

  s.Post("/api/stream", [this](const httplib::Request& req, httplib::Response& res) {
    const auto m = stream_from(req);
    if (!m) return reply_error(res, 400, std::string("missing ") + protocol::kImageHeader);
    std::lock_guard lk(mu_);
    const auto r = worker_->receive_stream(*m, clock_.now());
    if (r.accepted) return reply_json(res, 200, {{"pe_id", r.pe_id}});
    if (r.reason == "bad_payload") return reply_error(res, 400, r.reason);
    reply_json(res, 503, {{"reason", r.reason}});
  });

  s.Post("/api/pe/start", [this](const httplib::Request& req, httplib::Response& res) {
    try {
      const auto request = protocol::decode<protocol::PeStartRequest>(req.body);
      std::lock_guard lk(mu_);
      const auto r = worker_->start_pe(request, clock_.now());
      if (r.status == worker::Worker::StartResult::Status::unavailable) {
        return reply_json(res, 503, {{"reason", r.reason}});
      }
      reply_json(res, 201, r.reply);
    } catch (const protocol::MalformedFrame& e) {
      reply_error(res, 400, e.what());
    }
  });

  s.Post("/api/pe/stop", [this](const httplib::Request& req, httplib::Response& res) {
    try {
      const auto request = protocol::decode<protocol::PeStopRequest>(req.body);
      std::lock_guard lk(mu_);
      const bool stopped = worker_->stop_pe(request.pe_id, clock_.now());
      reply_json(res, 200, {{"stopped", stopped}});
    } catch (const protocol::MalformedFrame& e) {
      reply_error(res, 400, e.what());
    }
  });
}

int WorkerService::start(const std::string& host, int port) {
  int bound = port;
  if (port == 0) {
    bound = server_->bind_to_any_port(host);
  } else if (!server_->bind_to_port(host, port)) {
    bound = -1;
  }
  if (bound <= 0) throw std::runtime_error("cannot listen on " + host + ":" + std::to_string(port));
  options_.host = (host == "0.0.0.0" || host.empty()) ? "127.0.0.1" : host;
  options_.port = bound;
  worker_ = std::make_unique<worker::Worker>(options_, std::move(backend_), events_, clock_.now());
  running_ = true;
  server_thread_ = std::thread([this] { server_->listen_after_bind(); });
  report_thread_ = std::thread([this] { report_loop(); });
  return bound;
}

bool WorkerService::register_once() {
  auto c = client(master_.host, master_.port, {});
  auto res = c.Post("/api/worker/register",
                    protocol::encode(protocol::WorkerRegistration{options_.host, options_.port}), kJson);
  if (!res || res->status != 200) return false;
  try {
    const auto ack = protocol::decode<protocol::RegistrationAck>(res->body);
    std::lock_guard lk(mu_);
    worker_->set_worker_id(ack.worker_id);
    return true;
  } catch (const protocol::MalformedFrame&) {
    return false;
  }
}

void WorkerService::report_loop() {
  bool registered = false;
  while (running_) {
    if (!registered) {
      registered = register_once();
      if (!registered) {
        std::this_thread::sleep_for(std::chrono::milliseconds(200));
        continue;
      }
    }
    std::optional<protocol::WorkerReport> report;
    {
      std::lock_guard lk(mu_);
      const Millis now = clock_.now();
      worker_->advance(now);
      if (worker_->report_due(now)) report = worker_->sample_and_report(now);
    }
    if (report) {
      auto c = client(master_.host, master_.port, {});
      auto res = c.Post("/api/worker/report", protocol::encode(*report), kJson);
      if (res && res->status == 404) registered = false;
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(20));
  }
}

void WorkerService::stop() {
  if (!running_.exchange(false)) return;
  server_->stop();
  if (server_thread_.joinable()) server_thread_.join();
  if (report_thread_.joinable()) report_thread_.join();
  std::lock_guard lk(mu_);
  if (worker_) {
    std::vector<std::string> ids;
    for (const auto& [id, pe] : worker_->engines()) ids.push_back(id);
    for (const auto& id : ids) worker_->stop_pe(id, clock_.now());
  }
}

}  // namespace streambin::net
