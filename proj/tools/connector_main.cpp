#include <fstream>
#include <iostream>
#include <iterator>
#include <thread>

#include <CLI11.hpp>

#include "common.hpp"
#include "streambin/harness.hpp"
#include "streambin/net.hpp"

using namespace streambin;

int main(int argc, char** argv) {
  CLI::App app{"stream connector: pushes messages into a streambin cluster"};
  app.require_subcommand(1);
  std::string master = "127.0.0.1:8080";
  app.add_option("--master", master, "master host:port");

  auto* send = app.add_subcommand("send", "send one payload, optionally several times");
  std::string image = kSyntheticImage;
  std::string tag;
  std::string file;
  int count = 1;
  int concurrency = 1;
  send->add_option("--image", image, "container image the message is for");
  send->add_option("--tag", tag, "image tag");
  send->add_option("--file", file, "payload file (default: stdin)");
  send->add_option("--count", count, "copies to send")->check(CLI::PositiveNumber);
  send->add_option("--concurrency", concurrency, "messages in flight")->check(CLI::PositiveNumber);

  auto* bench = app.add_subcommand("bench", "replay a scenario's schedule against a live master");
  std::string scenario_path;
  bench->add_option("--scenario", scenario_path, "scenario file")->required()->check(CLI::ExistingFile);

  auto* status = app.add_subcommand("status", "print the master's current metrics frame");
  CLI11_PARSE(app, argc, argv);
  tools::install_signal_handlers();

  try {
    net::HttpTransport transport(net::HostPort::parse(master));
    connector::Connector conn(transport);
    if (*status) {
      std::cout << nlohmann::json(transport.status()).dump(2) << '\n';
      return 0;
    }
    std::vector<protocol::StreamMessage> batch;
    if (*send) {
      std::string payload;
      if (file.empty()) {
        payload.assign(std::istreambuf_iterator<char>(std::cin), {});
      } else {
        std::ifstream in(file, std::ios::binary);
        if (!in) throw std::runtime_error("cannot open " + file);
        payload.assign(std::istreambuf_iterator<char>(in), {});
      }
      for (int i = 0; i < count; ++i)
        batch.push_back(conn.make_message(image, tag, payload, WallClock().now()));
      const auto results = conn.send_batch(batch, concurrency);
      int failed = 0;
      for (const auto& r : results) {
        std::cout << r.message_id << ' ' << connector::to_string(r.kind);
        if (!r.worker_id.empty()) std::cout << ' ' << r.worker_id;
        if (!r.error.empty()) std::cout << ' ' << r.error;
        std::cout << '\n';
        if (r.kind == connector::Delivery::Kind::failed) ++failed;
      }
      return failed == 0 ? 0 : 2;
    }

    const auto scenario = harness::Scenario::load(scenario_path);
    const auto plan = harness::plan_messages(scenario, std::nullopt);
    const auto t0 = std::chrono::steady_clock::now();
    std::size_t p2p = 0, queued = 0, failed = 0;
    for (std::size_t i = 0; i < plan.size() && !tools::g_stop;) {
      const auto at = std::chrono::milliseconds(seconds_to_ms(plan[i].at_s));
      std::this_thread::sleep_until(t0 + at);
      batch.clear();
      for (; i < plan.size() && std::chrono::milliseconds(seconds_to_ms(plan[i].at_s)) == at; ++i) {
        auto m = plan[i].message;
        m.message_id = conn.make_message(m.image, m.tag, "", 0).message_id;
        m.created_at = WallClock().now();
        batch.push_back(std::move(m));
      }
      for (const auto& r : conn.send_batch(batch, scenario.connector_concurrency)) {
        if (r.kind == connector::Delivery::Kind::p2p) ++p2p;
        if (r.kind == connector::Delivery::Kind::queued) ++queued;
        if (r.kind == connector::Delivery::Kind::failed) ++failed;
      }
    }
    std::cout << "sent=" << plan.size() << " p2p=" << p2p << " queued=" << queued << " failed=" << failed << '\n';
    return failed == 0 ? 0 : 2;
  } catch (const std::exception& e) {
    std::cerr << "streambin-connector: " << e.what() << '\n';
    return 1;
  }
}
