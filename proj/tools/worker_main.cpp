#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "common.hpp"
#include "streambin/net.hpp"

using namespace streambin;

int main(int argc, char** argv) {
  CLI::App app{"streambin worker node"};
  std::string master = "127.0.0.1:8080";
  std::string listen = "127.0.0.1:0";
  std::string backend = "synthetic";
  std::string events_path;
  std::string runner = worker::default_runner_path();
  worker::WorkerOptions options;
  app.add_option("--master", master, "master host:port");
  app.add_option("--listen", listen, "host:port to serve on; port 0 picks one");
  app.add_option("--backend", backend, "synthetic (one process per PE) or simulated")
      ->check(CLI::IsMember({"synthetic", "simulated"}));
  app.add_option("--runner", runner, "PE runner executable for the synthetic backend");
  app.add_option("--events", events_path, "append structured events to this file");
  app.add_option("--pe-startup-delay", options.pe_startup_delay_s, "seconds before a new PE is ready")
      ->check(CLI::NonNegativeNumber);
  app.add_option("--startup-delay", options.startup_delay_s, "seconds before the node reports")
      ->check(CLI::NonNegativeNumber);
  app.add_option("--report-interval", options.report_interval_s, "seconds between reports")
      ->check(CLI::PositiveNumber);
  app.add_option("--max-pes", options.max_pes, "PE limit on this node")->check(CLI::PositiveNumber);
  CLI11_PARSE(app, argc, argv);

  try {
    const auto master_addr = net::HostPort::parse(master);
    const auto addr = net::HostPort::parse(listen);
    std::unique_ptr<worker::PeBackend> pe_backend;
    if (backend == "synthetic") {
      pe_backend = std::make_unique<worker::ProcessBackend>(runner);
    } else {
      pe_backend = std::make_unique<worker::SimulatedBackend>();
    }
    std::ofstream events_file;
    EventLog events(&std::cout);
    if (!events_path.empty()) {
      events_file.open(events_path, std::ios::app);
      if (!events_file) throw std::runtime_error("cannot open " + events_path);
      events.set_mirror(&events_file);
    }
    tools::install_signal_handlers();
    net::WorkerService service(options, std::move(pe_backend), master_addr, events);
    const int port = service.start(addr.host, addr.port);
    std::cerr << "streambin-worker listening on " << addr.host << ':' << port << '\n';
    tools::wait_for_stop([&] { events.clear(); });
    service.stop();
  } catch (const std::exception& e) {
    std::cerr << "streambin-worker: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
