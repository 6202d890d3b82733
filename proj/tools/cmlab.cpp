#include <CLI11.hpp>
#include <cstdio>
#include <string>

#include "cmlab/lab.hpp"

int main(int argc, char** argv) {
  CLI::App app{"numerical lab for consistency-model training and rate studies"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  std::string out_dir = ".";
  uint64_t seed = 0;
  bool seed_set = false;
  int threads = 1;
  app.add_option("--config", config_path, "JSON experiment config")->required();
  app.add_option("--out", out_dir, "output directory for report.json/cells.csv/plot.csv");
  app.add_option("--seed", seed, "override the config seed")->each([&](const std::string&) {
    seed_set = true;
  });
  app.add_option("--threads", threads, "worker thread cap");

  std::string sweep, check_name, train_kind;
  auto* rates = app.add_subcommand("rates", "rate study over a swept variable");
  rates->add_option("--sweep", sweep, "one of n, M, T, eps")->required();
  auto* check = app.add_subcommand("check", "property checks");
  check->add_option("what", check_name, "identities | contraction | tails")->required();
  auto* train = app.add_subcommand("train", "train a consistency model");
  train->add_option("kind", train_kind, "cd | ct")->required();
  auto* sample = app.add_subcommand("sample", "generate one-step samples");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    cmlab::ExperimentConfig cfg = cmlab::load_config(config_path);
    cmlab::RunOptions opts;
    opts.out_dir = out_dir;
    opts.threads = threads;
    if (seed_set) opts.seed_override = seed;

    std::string command, arg;
    if (rates->parsed()) {
      command = "rates";
      arg = sweep;
    } else if (check->parsed()) {
      command = "check";
      arg = check_name;
    } else if (train->parsed()) {
      command = "train";
      arg = train_kind;
    } else if (sample->parsed()) {
      command = "sample";
    }
    const int code = cmlab::run_command(command, arg, cfg, opts);
    if (code == 1) std::fprintf(stderr, "FAIL: asserted band/property did not hold\n");
    if (code == 2) std::fprintf(stderr, "error: invalid configuration or usage\n");
    if (code == 3) std::fprintf(stderr, "error: numerical divergence\n");
    return code;
  } catch (const cmlab::DivergenceError& e) {
    std::fprintf(stderr, "error: divergence at step %d: %s\n", e.step_index, e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
}
