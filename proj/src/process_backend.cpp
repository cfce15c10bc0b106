#include <fcntl.h>
#include <signal.h>
#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <climits>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "streambin/worker.hpp"

extern char** environ;

namespace streambin::worker {

namespace {

void write_all(int fd, const std::string& data) {
  std::size_t off = 0;
  while (off < data.size()) {
    const ssize_t n = ::write(fd, data.data() + off, data.size() - off);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw std::runtime_error(std::string("write to PE failed: ") + std::strerror(errno));
    }
    off += static_cast<std::size_t>(n);
  }
}

std::optional<double> read_proc_cpu(pid_t pid) {
  std::ifstream in("/proc/" + std::to_string(pid) + "/stat");
  if (!in) return std::nullopt;
  std::string line;
  std::getline(in, line);
  const auto close = line.rfind(')');
  if (close == std::string::npos) return std::nullopt;
  std::istringstream fields(line.substr(close + 2));
  // Fields after the command name start at field 3 (state).
  std::string tok;
  unsigned long long utime = 0, stime = 0;
  for (int field = 3; field <= 15 && fields >> tok; ++field) {
    if (field == 14) utime = std::stoull(tok);
    if (field == 15) stime = std::stoull(tok);
  }
  static const long ticks = sysconf(_SC_CLK_TCK);
  return static_cast<double>(utime + stime) / static_cast<double>(ticks);
}

}  // namespace

std::string default_runner_path() {
  char buf[PATH_MAX];
  const ssize_t n = ::readlink("/proc/self/exe", buf, sizeof buf - 1);
  if (n <= 0) return "streambin-pe";
  buf[n] = '\0';
  return (std::filesystem::path(buf).parent_path() / "streambin-pe").string();
}

ProcessBackend::ProcessBackend(std::string runner_path, std::set<std::string> images)
    : runner_path_(std::move(runner_path)), images_(std::move(images)) {}

ProcessBackend::~ProcessBackend() {
  std::vector<std::string> ids;
  for (const auto& [id, c] : children_) ids.push_back(id);
  for (const auto& id : ids) terminate(id);
}

bool ProcessBackend::supports(const std::string& image) const {
  return images_.empty() || images_.count(image) > 0;
}

bool ProcessBackend::launch(const std::string& pe_id, Millis now) {
  int in_pipe[2];
  int out_pipe[2];
  if (::pipe(in_pipe) != 0) return false;
  if (::pipe(out_pipe) != 0) {
    ::close(in_pipe[0]);
    ::close(in_pipe[1]);
    return false;
  }
  posix_spawn_file_actions_t actions;
  posix_spawn_file_actions_init(&actions);
  posix_spawn_file_actions_adddup2(&actions, in_pipe[0], STDIN_FILENO);
  posix_spawn_file_actions_adddup2(&actions, out_pipe[1], STDOUT_FILENO);
  posix_spawn_file_actions_addclose(&actions, in_pipe[1]);
  posix_spawn_file_actions_addclose(&actions, out_pipe[0]);

  std::string arg0 = runner_path_;
  std::string arg1 = "--pe-id=" + pe_id;
  char* argv[] = {arg0.data(), arg1.data(), nullptr};
  pid_t pid = -1;
  const int rc = posix_spawn(&pid, runner_path_.c_str(), &actions, nullptr, argv, environ);
  posix_spawn_file_actions_destroy(&actions);
  ::close(in_pipe[0]);
  ::close(out_pipe[1]);
  if (rc != 0) {
    ::close(in_pipe[1]);
    ::close(out_pipe[0]);
    return false;
  }
  ::fcntl(out_pipe[0], F_SETFL, ::fcntl(out_pipe[0], F_GETFL) | O_NONBLOCK);
  ::fcntl(in_pipe[1], F_SETFD, FD_CLOEXEC);
  ::fcntl(out_pipe[0], F_SETFD, FD_CLOEXEC);
  Child child;
  child.pid = pid;
  child.to_child = in_pipe[1];
  child.from_child = out_pipe[0];
  child.last_sample = now;
  children_[pe_id] = std::move(child);
  return true;
}

void ProcessBackend::submit(const std::string& pe_id, const protocol::StreamMessage& message,
                            Millis) {
  auto it = children_.find(pe_id);
  if (it == children_.end()) throw std::invalid_argument("unknown PE " + pe_id);
  const auto job = SyntheticJob::parse(message.payload);
  nlohmann::json line{{"message_id", message.message_id},
                      {"target_cpu", job.target_cpu},
                      {"duration_s", job.duration_s}};
  write_all(it->second.to_child, line.dump() + "\n");
  it->second.message_id = message.message_id;
}

std::vector<Completion> ProcessBackend::poll(Millis now) {
  std::vector<Completion> done;
  for (auto& [pe_id, child] : children_) {
    char buf[4096];
    for (;;) {
      const ssize_t n = ::read(child.from_child, buf, sizeof buf);
      if (n > 0) {
        child.buffer.append(buf, static_cast<std::size_t>(n));
        continue;
      }
      if (n < 0 && errno == EINTR) continue;
      break;
    }
    std::size_t nl;
    while ((nl = child.buffer.find('\n')) != std::string::npos) {
      const std::string line = child.buffer.substr(0, nl);
      child.buffer.erase(0, nl + 1);
      if (line.rfind("done ", 0) == 0) {
        done.push_back({pe_id, line.substr(5), now});
        child.message_id.clear();
      }
    }
  }
  return done;
}

double ProcessBackend::sample_cpu(const std::string& pe_id, Millis now) {
  auto it = children_.find(pe_id);
  if (it == children_.end()) return 0.0;
  Child& c = it->second;
  const auto cpu = read_proc_cpu(c.pid);
  if (!cpu) return 0.0;
  const double wall = ms_to_seconds(now - c.last_sample);
  double fraction = 0.0;
  if (wall > 0.0) fraction = (*cpu - c.last_cpu_s) / wall;
  c.last_cpu_s = *cpu;
  c.last_sample = now;
  return std::clamp(fraction, 0.0, 1.0);
}

std::optional<double> ProcessBackend::cpu_seconds(const std::string& pe_id) const {
  auto it = children_.find(pe_id);
  if (it == children_.end()) return std::nullopt;
  return read_proc_cpu(it->second.pid);
}

void ProcessBackend::terminate(const std::string& pe_id) {
  auto it = children_.find(pe_id);
  if (it == children_.end()) return;
  Child& c = it->second;
  ::close(c.to_child);
  ::close(c.from_child);
  ::kill(c.pid, SIGTERM);
  int status = 0;
  while (::waitpid(c.pid, &status, 0) < 0 && errno == EINTR) {
  }
  children_.erase(it);
}

}  // namespace streambin::worker
