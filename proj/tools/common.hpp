#pragma once

#include <atomic>
#include <chrono>
#include <csignal>
#include <thread>

namespace streambin::tools {

inline std::atomic<bool> g_stop{false};

inline void on_signal(int) { g_stop = true; }

/// SIGINT/SIGTERM set the stop flag; SIGPIPE is ignored so a vanished peer
/// shows up as a failed write.
inline void install_signal_handlers() {
  std::signal(SIGPIPE, SIG_IGN);
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
}

template <class F>
void wait_for_stop(F&& every_second) {
  while (!g_stop) {
    std::this_thread::sleep_for(std::chrono::milliseconds(100));
    static int n = 0;
    if (++n % 10 == 0) every_second();
  }
}

}  // namespace streambin::tools
