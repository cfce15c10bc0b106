#include <iostream>

#include <CLI11.hpp>

#include "common.hpp"
#include "streambin/harness.hpp"

using namespace streambin;

int main(int argc, char** argv) {
  CLI::App app{"streambin benchmark harness"};
  app.require_subcommand(1);

  auto* run = app.add_subcommand("run", "run a scenario and write metrics.csv and events.log");
  std::string scenario_path;
  std::string out = "out";
  run->add_option("--scenario", scenario_path, "scenario file")->required()->check(CLI::ExistingFile);
  run->add_option("--out", out, "output directory");

  auto* replay = app.add_subcommand("replay", "repeat a simulated scenario, carrying profiles over");
  int runs = 10;
  bool fixed_seed = false;
  replay->add_option("--scenario", scenario_path, "scenario file")->required()->check(CLI::ExistingFile);
  replay->add_option("--runs", runs, "number of runs")->check(CLI::PositiveNumber);
  replay->add_option("--out", out, "output directory (one subdirectory per run)");
  replay->add_flag("--fixed-seed", fixed_seed, "reuse the scenario seed for every run");

  auto* plot = app.add_subcommand("plot", "chart a metrics.csv");
  std::string metrics;
  std::string kind = "cpu_per_worker";
  plot->add_option("--metrics", metrics, "metrics.csv")->required()->check(CLI::ExistingFile);
  plot->add_option("--kind", kind, "cpu_per_worker, error or workers");
  plot->add_option("--out", out, "output file (.png or .svg)")->required();

  CLI11_PARSE(app, argc, argv);
  tools::install_signal_handlers();

  try {
    if (*run) {
      const auto s = harness::Scenario::load(scenario_path);
      const auto r = harness::run(s, out);
      std::size_t completed = 0;
      for (const auto& e : r.events)
        if (e.name == "message_completed") ++completed;
      std::cout << "scenario=" << s.name << " messages=" << r.submitted.size() << " completed=" << completed
                << " makespan_s=" << fixed(r.makespan_s, 1) << " mean_abs_error_pp="
                << fixed(harness::mean_abs_error(r.frames), 2) << (r.timed_out ? " TIMED_OUT" : "") << '\n';
      return r.timed_out ? 3 : 0;
    }
    if (*replay) {
      const auto s = harness::Scenario::load(scenario_path);
      harness::ReplayOptions o;
      o.runs = runs;
      o.vary_seed = !fixed_seed;
      if (replay->count("--out")) o.out_dir = out;
      std::cout << "run,seed,makespan_s,mean_abs_error_pp,messages,completed\n";
      for (const auto& r : harness::replay_runs(s, o))
        std::cout << r.run << ',' << r.seed << ',' << fixed(r.makespan_s, 1) << ',' << fixed(r.mean_abs_error_pp, 3)
                  << ',' << r.messages << ',' << r.completed << '\n';
      return 0;
    }
    harness::plot(metrics, harness::plot_kind_from_string(kind), out);
    std::cout << out << '\n';
  } catch (const harness::ScenarioError& e) {
    std::cerr << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "streambin-bench: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
