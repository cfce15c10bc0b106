#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "common.hpp"
#include "streambin/net.hpp"

using namespace streambin;

int main(int argc, char** argv) {
  CLI::App app{"streambin master node"};
  std::string config_path;
  std::string listen = "0.0.0.0:8080";
  std::string events_path;
  int tick_ms = 100;
  app.add_option("--config", config_path, "IRM configuration (JSON)")->check(CLI::ExistingFile);
  app.add_option("--listen", listen, "host:port to serve on");
  app.add_option("--events", events_path, "append structured events to this file");
  app.add_option("--tick-ms", tick_ms, "control loop period")->check(CLI::Range(1, 10000));
  CLI11_PARSE(app, argc, argv);

  irm::IrmConfig config;
  try {
    if (!config_path.empty()) {
      std::ifstream in(config_path);
      config = irm::IrmConfig::from_json(nlohmann::json::parse(in));
    }
    const auto addr = net::HostPort::parse(listen);

    std::ofstream events_file;
    EventLog events(&std::cout);
    if (!events_path.empty()) {
      events_file.open(events_path, std::ios::app);
      if (!events_file) throw std::runtime_error("cannot open " + events_path);
      events.set_mirror(&events_file);
    }
    tools::install_signal_handlers();
    net::MasterService service(config, events, std::chrono::milliseconds(tick_ms));
    const int port = service.start(addr.host, addr.port);
    std::cerr << "streambin-master listening on " << addr.host << ':' << port << '\n';
    tools::wait_for_stop([&] { events.clear(); });
    service.stop();
  } catch (const std::exception& e) {
    std::cerr << "streambin-master: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
