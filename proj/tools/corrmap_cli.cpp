#include <iostream>

#include <CLI11.hpp>

#include "corrmap/experiment.hpp"

namespace {

enum Exit { kOk = 0, kRunFailed = 1, kBadInput = 2 };

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Correction maps between detailed and reduced kinetic models"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
  unsigned threads = 1;
  bool coarse = false;

  auto* run = app.add_subcommand("run", "Build the training set, fit every configured scheme and write the outputs");
  run->add_option("config", config_path, "Experiment file")->required();
  run->add_option("--seed", seed, "Override [experiment] seed");
  run->add_option("--out-dir", out_dir, "Override [experiment] output_dir");
  run->add_option("--threads", threads, "Worker threads (results do not depend on it)")->check(CLI::Range(1u, 1024u));
  run->add_flag("--paper-faithful", coarse, "Use loose ODE tolerances (1e-2) instead of 1e-6");

  app.add_subcommand("list-builtins", "List built-in models and statistics");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kBadInput;
  }

  if (app.got_subcommand("list-builtins")) {
    std::cout << corrmap::list_builtins();
    return kOk;
  }

  corrmap::ExperimentConfig cfg;
  try {
    cfg = corrmap::load_experiment(config_path);
  } catch (const corrmap::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kBadInput;
  } catch (const corrmap::InputError& e) {
    std::cerr << "config error: " << config_path << ": " << e.what() << '\n';
    return kBadInput;
  }

  try {
    const auto summary = corrmap::run_experiment(
        std::move(cfg), {.seed = seed, .output_dir = out_dir, .threads = threads, .coarse_tolerances = coarse});
    for (const auto& f : summary.files) std::cout << (summary.output_dir / f).string() << '\n';
  } catch (const corrmap::SimulationError& e) {
    std::cerr << "simulation failed: " << e.what() << '\n';
    return kRunFailed;
  } catch (const std::exception& e) {
    std::cerr << "run failed: " << e.what() << '\n';
    return kRunFailed;
  }
  return kOk;
}
