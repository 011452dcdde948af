// oed-dopt: command-line driver for the D-optimal design experiments.
#include "oed/experiments.hpp"

#include <CLI11.hpp>

#include <iostream>

int main(int argc, char **argv) {
  CLI::App app{"D-optimal sensor placement for advection-diffusion inverse problems"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir = "out";
  std::uint64_t seed = 0;
  std::string weights;
  bool no_timing = false;

  auto add_common = [&](CLI::App *sub) {
    sub->add_option("--config", config_path, "experiment configuration (JSON)")->required();
    sub->add_option("--out", out_dir, "output directory");
    sub->add_option("--seed", seed, "override the configuration seed");
  };
  auto *synth = app.add_subcommand("synthesize", "synthesize observations from the true state");
  auto *oed_cmd = app.add_subcommand("oed", "compute an optimal design");
  auto *eval = app.add_subcommand("evaluate", "criterion, information gain and KL of a design");
  auto *cmp = app.add_subcommand("compare-random", "optimal design against random designs");
  auto *bench = app.add_subcommand("bench", "error-vs-rank and mesh-refinement sweeps");
  for (auto *sub : {synth, oed_cmd, eval, cmp, bench})
    add_common(sub);
  oed_cmd->add_flag("--no-timing", no_timing, "write zero wall times for reproducible logs");
  for (auto *sub : {eval, cmp})
    sub->add_option("--weights", weights, "weights CSV (sensor_id,...,weight[,active])");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError &e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    oed::ExperimentConfig cfg = oed::load_config(config_path);
    for (auto *sub : {synth, oed_cmd, eval, cmp, bench})
      if (*sub && sub->count("--seed"))
        cfg.seed = seed;
    oed::RunOptions run;
    run.out_dir = out_dir;
    run.timing = !no_timing;
    run.weights = weights;

    if (*synth) {
      oed::cmd_synthesize(cfg, run);
    } else if (*oed_cmd) {
      const auto res = oed::cmd_oed(cfg, run);
      std::cout << "status: " << res.status << ", active sensors: " << res.active_count() << '\n';
    } else if (*eval) {
      std::cout << oed::cmd_evaluate(cfg, run).dump(2) << '\n';
    } else if (*cmp) {
      std::cout << oed::cmd_compare_random(cfg, run).dump(2) << '\n';
    } else if (*bench) {
      std::cout << oed::cmd_bench(cfg, run).dump(2) << '\n';
    }
  } catch (const oed::ValidationError &e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const oed::NumericalError &e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return 1;
  } catch (const std::exception &e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
