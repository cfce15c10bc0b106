// PE runner: reads one JSON job per line on stdin, runs it, answers
// "done <message_id>". Exits when stdin closes.
#include <csignal>
#include <iostream>
#include <string>

#include <json.hpp>

#include "streambin/synthetic_job.hpp"

int main() {
  std::signal(SIGPIPE, SIG_IGN);
  std::string line;
  while (std::getline(std::cin, line)) {
    if (line.empty()) continue;
    std::string id;
    try {
      const auto j = nlohmann::json::parse(line);
      id = j.value("message_id", "");
      streambin::run_synthetic_job({j.at("target_cpu").get<double>(), j.at("duration_s").get<double>()});
    } catch (const std::exception& e) {
      std::cerr << "streambin-pe: " << e.what() << '\n';
    }
    std::cout << "done " << id << '\n' << std::flush;
    if (!std::cout) return 1;
  }
  return 0;
}
