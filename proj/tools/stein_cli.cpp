#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "stein/stein.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Stein variational samplers: SVGD, amortized samplers, adversarial MLE"};
  app.require_subcommand(1);

  // --- run <config> ---
  auto* run_cmd = app.add_subcommand("run", "run an experiment described by a config file");
  std::string config_path;
  std::string out_dir;
  std::uint64_t seed = 0;
  bool seed_set = false, overwrite = false;
  run_cmd->add_option("config", config_path, "path to the experiment config")->required();
  run_cmd->add_option("--out", out_dir, "override the output directory");
  run_cmd->add_option("--seed", seed, "override the root seed")->each([&](const std::string&) {
    seed_set = true;
  });
  run_cmd->add_flag("--overwrite", overwrite, "allow re-running into a non-empty directory");

  // --- check ---
  auto* check_cmd = app.add_subcommand("check", "run the built-in self tests");

  // --- sample <checkpoint> ---
  auto* sample_cmd = app.add_subcommand("sample", "draw samples from a checkpointed sampler");
  std::string ckpt_path, sample_out = "samples.csv";
  std::size_t n = 64;
  std::uint64_t sample_seed = 0;
  int label = -1;
  sample_cmd->add_option("checkpoint", ckpt_path, "checkpoint file")->required();
  sample_cmd->add_option("--n", n, "number of samples");
  sample_cmd->add_option("--seed", sample_seed, "noise seed");
  sample_cmd->add_option("--label", label, "class label for conditional samplers");
  sample_cmd->add_option("--out", sample_out, "output path (.csv or .pgm by shape)");

  CLI11_PARSE(app, argc, argv);

  if (run_cmd->parsed()) {
    stein::RunOverrides ov;
    if (!out_dir.empty()) ov.out_dir = out_dir;
    if (seed_set) ov.seed = seed;
    if (overwrite) ov.overwrite = true;
    return stein::run(config_path, ov);
  }

  if (check_cmd->parsed()) {
    return stein::run_self_checks(std::cout) ? 0 : 1;
  }

  if (sample_cmd->parsed()) {
    try {
      std::optional<int> lbl;
      if (label >= 0) lbl = label;
      stein::sample_from_checkpoint(ckpt_path, n, sample_seed, lbl, sample_out);
      return 0;
    } catch (const std::exception& e) {
      std::cerr << "error: " << e.what() << "\n";
      return 1;
    }
  }
  return 1;
}
