#include <iostream>

#include <CLI11.hpp>

#include "fforge/cli.hpp"
#include "fforge/error.hpp"

namespace fs = std::filesystem;

int main(int argc, char** argv) {
  CLI::App app{"fforge: autoencoder-fingerprint augmentation for deepfake detectors"};
  app.require_subcommand(1);

  std::string config_path;
  int workers = 0;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("-c,--config", config_path, "run config (JSON)")->required()->check(CLI::ExistingFile);
    sub->add_option("--workers", workers, "cap on parallel jobs")->check(CLI::PositiveNumber);
  };

  auto* synth = app.add_subcommand("synth", "generate the synthetic dataset");
  add_common(synth);

  int pool_size = 0;
  auto* pool = app.add_subcommand("build-pool", "train the autoencoder pool");
  add_common(pool);
  pool->add_option("--pool-size", pool_size, "members to accept")->check(CLI::PositiveNumber);

  std::string regime;
  std::string pool_dir;
  auto* train = app.add_subcommand("train", "train one detector regime");
  add_common(train);
  train->add_option("--regime", regime, "BL, CA, EA or EA+CA (or 'surrogate')")->required();
  train->add_option("--pool", pool_dir, "pool directory for EA regimes");

  fforge::EvaluateOptions eval_opt;
  std::vector<std::string> checkpoints;
  std::string conditions, surrogate, out_dir;
  auto* evaluate = app.add_subcommand("evaluate", "run the robustness grid");
  add_common(evaluate);
  evaluate->add_option("--checkpoints", checkpoints, "detector checkpoints (default: all under output_dir)");
  evaluate->add_option("--conditions", conditions, "all, perturbations, jpeg or attacks");
  evaluate->add_option("--surrogate-checkpoint", surrogate, "surrogate for the black-box condition");
  evaluate->add_option("--out", out_dir, "report directory");

  fforge::AttackOptions attack_opt;
  std::string attack_ckpt, save_dir;
  double epsilon = -1, alpha = -1;
  int steps = 0;
  auto* attack = app.add_subcommand("attack", "attack one detector on the test split");
  add_common(attack);
  attack->add_option("--checkpoint", attack_ckpt, "target detector")->required();
  attack->add_option("--mode", attack_opt.mode, "whitebox or blackbox")->check(CLI::IsMember({"whitebox", "blackbox"}));
  attack->add_option("--surrogate-checkpoint", surrogate, "surrogate for blackbox mode");
  attack->add_option("--epsilon", epsilon, "L-inf budget");
  attack->add_option("--alpha", alpha, "step size");
  attack->add_option("--steps", steps, "iterations")->check(CLI::PositiveNumber);
  attack->add_option("--save", save_dir, "write adversarial PNGs here");

  std::vector<std::string> csvs;
  auto* report = app.add_subcommand("report", "average report CSVs (e.g. across seeds) and render Markdown");
  report->add_option("csv", csvs, "report CSV files")->required()->check(CLI::ExistingFile);
  report->add_option("--out", out_dir, "write the merged report here");

  std::string target;
  auto* checksum = app.add_subcommand("checksum", "digest of a file or directory");
  checksum->add_option("path", target, "file or directory")->required();

  CLI11_PARSE(app, argc, argv);

  if (report->parsed()) {
    std::vector<fs::path> paths(csvs.begin(), csvs.end());
    return fforge::cmd_report(paths, out_dir.empty() ? std::nullopt : std::optional<fs::path>(out_dir), std::cout,
                              std::cerr);
  }
  if (checksum->parsed()) return fforge::cmd_checksum(target, std::cout, std::cerr);

  fforge::RunConfig config;
  try {
    config = fforge::load_run_config(config_path);
    if (workers > 0) config.workers = workers;
    if (pool_size > 0) config.pool_size = pool_size;
    if (!pool_dir.empty()) config.pool_dir = fs::path(pool_dir);
    if (!conditions.empty()) config.conditions = conditions;
    if (epsilon >= 0) config.attack.epsilon = epsilon;
    if (alpha >= 0) config.attack.alpha = alpha;
    if (steps > 0) config.attack.steps = steps;
    fforge::validate(config);
  } catch (const fforge::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.code() == fforge::ErrorCode::IOFailure ? 1 : 2;
  }

  if (synth->parsed()) return fforge::cmd_synth(config, std::cout, std::cerr);
  if (pool->parsed()) return fforge::cmd_build_pool(config, std::cout, std::cerr);
  if (train->parsed()) {
    if (regime == "surrogate") return fforge::cmd_train_surrogate(config, std::cout, std::cerr);
    return fforge::cmd_train(config, regime, std::cout, std::cerr);
  }
  if (evaluate->parsed()) {
    for (const auto& c : checkpoints) eval_opt.checkpoints.emplace_back(c);
    if (!surrogate.empty()) eval_opt.surrogate = fs::path(surrogate);
    if (!out_dir.empty()) eval_opt.out_dir = fs::path(out_dir);
    return fforge::cmd_evaluate(config, eval_opt, std::cout, std::cerr);
  }
  attack_opt.checkpoint = attack_ckpt;
  if (!surrogate.empty()) attack_opt.surrogate = fs::path(surrogate);
  if (!save_dir.empty()) attack_opt.save_dir = fs::path(save_dir);
  return fforge::cmd_attack(config, attack_opt, std::cout, std::cerr);
}
