#include <algorithm>
#include <csignal>
#include <cstdlib>
#include <fcntl.h>
#include <fstream>
#include <netinet/in.h>
#include <spawn.h>
#include <sys/socket.h>
#include <sys/wait.h>
#include <thread>
#include <unistd.h>

#include <httplib.h>

#include "streambin/harness.hpp"
#include "streambin/net.hpp"
#include "streambin/worker.hpp"

extern char** environ;

namespace streambin::harness {

namespace {

using namespace std::chrono_literals;

int free_port() {
  const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  if (fd < 0) throw std::runtime_error("socket() failed");
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  addr.sin_port = 0;
  socklen_t len = sizeof addr;
  if (::bind(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0 ||
      ::getsockname(fd, reinterpret_cast<sockaddr*>(&addr), &len) != 0) {
    ::close(fd);
    throw std::runtime_error("cannot find a free port");
  }
  const int port = ntohs(addr.sin_port);
  ::close(fd);
  return port;
}

std::filesystem::path locate_bin_dir(const std::filesystem::path& given) {
  if (!given.empty()) return given;
  if (const char* env = std::getenv("STREAMBIN_BIN_DIR")) return env;
  const auto runner = std::filesystem::path(worker::default_runner_path());
  if (std::filesystem::exists(runner)) return runner.parent_path();
#ifdef STREAMBIN_DEFAULT_BIN_DIR
  return STREAMBIN_DEFAULT_BIN_DIR;
#else
  return runner.parent_path();
#endif
}

class Child {
 public:
  Child(const std::filesystem::path& exe, std::vector<std::string> args, const std::filesystem::path& log) {
    posix_spawn_file_actions_t actions;
    posix_spawn_file_actions_init(&actions);
    posix_spawn_file_actions_addopen(&actions, STDOUT_FILENO, log.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
    posix_spawn_file_actions_adddup2(&actions, STDOUT_FILENO, STDERR_FILENO);
    args.insert(args.begin(), exe.string());
    std::vector<char*> argv;
    for (auto& a : args) argv.push_back(a.data());
    argv.push_back(nullptr);
    const int rc = posix_spawn(&pid_, exe.c_str(), &actions, nullptr, argv.data(), environ);
    posix_spawn_file_actions_destroy(&actions);
    if (rc != 0) throw std::runtime_error("cannot launch " + exe.string());
  }
  ~Child() { stop(); }
  Child(const Child&) = delete;
  Child& operator=(const Child&) = delete;

  void stop() {
    if (pid_ <= 0) return;
    ::kill(pid_, SIGTERM);
    for (int i = 0; i < 100; ++i) {
      if (::waitpid(pid_, nullptr, WNOHANG) == pid_) {
        pid_ = -1;
        return;
      }
      std::this_thread::sleep_for(50ms);
    }
    ::kill(pid_, SIGKILL);
    ::waitpid(pid_, nullptr, 0);
    pid_ = -1;
  }

 private:
  pid_t pid_ = -1;
};

std::vector<Event> read_events(const std::filesystem::path& path, Millis origin) {
  std::vector<Event> out;
  std::ifstream in(path);
  std::string line;
  while (std::getline(in, line)) {
    if (auto e = parse_event_line(line)) {
      e->t -= origin;
      out.push_back(std::move(*e));
    }
  }
  return out;
}

}  // namespace

RunResult run_processes(const Scenario& s, const ProcessOptions& options) {
  if (options.work_dir.empty()) throw std::invalid_argument("process mode needs a work directory");
  const auto bin = locate_bin_dir(options.bin_dir);
  const auto dir = options.work_dir / "nodes";
  std::filesystem::create_directories(dir);

  // Worker nodes are started up front; with no cloud to provision from, the
  // autoscaler's scale-down drains the surplus and scale-up reactivates it.
  nlohmann::json config = s.irm.to_json();
  {
    std::ofstream out(dir / "irm.json");
    out << config.dump(2);
  }
  const int mport = free_port();
  const net::HostPort master_addr{"127.0.0.1", mport};
  std::vector<std::unique_ptr<Child>> nodes;
  nodes.push_back(std::make_unique<Child>(
      bin / "streambin-master",
      std::vector<std::string>{"--config", (dir / "irm.json").string(), "--listen", master_addr.str(),
                               "--events", (dir / "master.events").string(),
                               "--tick-ms", std::to_string(s.tick_ms)},
      dir / "master.out"));

  net::HttpTransport transport(master_addr, {500ms, 3000ms});
  const auto wait_for = [](auto pred, std::chrono::milliseconds limit) {
    const auto end = std::chrono::steady_clock::now() + limit;
    while (std::chrono::steady_clock::now() < end) {
      try {
        if (pred()) return true;
      } catch (const std::exception&) {
      }
      std::this_thread::sleep_for(100ms);
    }
    return false;
  };
  if (!wait_for([&] { transport.status(); return true; }, 10s))
    throw std::runtime_error("master did not come up; see " + (dir / "master.out").string());

  const int n_workers = s.cluster.max_workers;
  for (int i = 0; i < n_workers; ++i) {
    const std::string name = "worker" + std::to_string(i);
    nodes.push_back(std::make_unique<Child>(
        bin / "streambin-worker",
        std::vector<std::string>{"--master", master_addr.str(), "--listen",
                                 "127.0.0.1:" + std::to_string(free_port()), "--backend", "synthetic",
                                 "--pe-startup-delay", fixed(s.cluster.pe_startup_delay_s, 3),
                                 "--report-interval", fixed(s.irm.report_interval, 3), "--events",
                                 (dir / (name + ".events")).string(), "--runner",
                                 (bin / "streambin-pe").string()},
        dir / (name + ".out")));
  }
  if (!wait_for([&] { return static_cast<int>(transport.status().per_worker.size()) == n_workers; }, 15s))
    throw std::runtime_error("workers did not register; see " + dir.string());

  RunResult result;
  const auto plan = plan_messages(s, std::nullopt);
  const auto t0 = std::chrono::steady_clock::now();
  const Millis origin = WallClock().now();
  const auto elapsed_ms = [&] {
    return std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - t0).count();
  };

  std::atomic<bool> all_sent{false};
  std::thread sender([&] {
    connector::Connector conn(transport);
    std::size_t i = 0;
    while (i < plan.size()) {
      const Millis at = seconds_to_ms(plan[i].at_s);
      while (elapsed_ms() < at) std::this_thread::sleep_for(10ms);
      std::vector<protocol::StreamMessage> batch;
      for (; i < plan.size() && seconds_to_ms(plan[i].at_s) == at; ++i) {
        auto m = plan[i].message;
        m.created_at = origin + at;
        batch.push_back(std::move(m));
      }
      const auto results = conn.send_batch(batch, s.connector_concurrency);
      result.deliveries.insert(result.deliveries.end(), results.begin(), results.end());
      for (const auto& m : batch) result.submitted.push_back(m.message_id);
    }
    all_sent = true;
  });

  std::optional<Millis> settled_since;
  httplib::Client client(master_addr.host, master_addr.port);
  client.set_read_timeout(3, 0);
  for (long second = 0;; ++second) {
    while (elapsed_ms() < second * 1000) std::this_thread::sleep_for(5ms);
    auto res = client.Get("/api/status");
    if (!res || res->status != 200) continue;
    const auto j = nlohmann::json::parse(res->body);
    auto frame = j.get<protocol::MetricsFrame>();
    frame.t = static_cast<double>(second);
    result.backlog_high_water = std::max(result.backlog_high_water, static_cast<std::size_t>(frame.queue_length));
    result.frames.push_back(std::move(frame));

    const bool settled = all_sent && j.value("pes", 1) == 0 && j.value("container_queue", 1) == 0 &&
                         result.frames.back().queue_length == 0;
    const Millis now = second * 1000;
    if (!settled) {
      settled_since.reset();
    } else if (!settled_since) {
      settled_since = now;
    }
    if (settled_since && now - *settled_since >= seconds_to_ms(s.quiescence_s)) break;
    if (now >= seconds_to_ms(s.max_duration_s)) {
      result.timed_out = true;
      break;
    }
  }
  sender.join();
  result.duration_s = ms_to_seconds(elapsed_ms());
  for (auto it = nodes.rbegin(); it != nodes.rend(); ++it) (*it)->stop();

  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.path().extension() != ".events") continue;
    auto ev = read_events(entry.path(), origin);
    result.events.insert(result.events.end(), ev.begin(), ev.end());
  }
  std::stable_sort(result.events.begin(), result.events.end(),
                   [](const Event& a, const Event& b) { return a.t < b.t; });
  Millis first = 0;
  Millis last = 0;
  if (!plan.empty()) first = seconds_to_ms(plan.front().at_s);
  for (const auto& e : result.events)
    if (e.name == "message_completed") last = std::max(last, e.t);
  result.makespan_s = last > first ? ms_to_seconds(last - first) : 0.0;
  return result;
}

}  // namespace streambin::harness
