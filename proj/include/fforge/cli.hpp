#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "fforge/ae_pool.hpp"
#include "fforge/attacks.hpp"
#include "fforge/dataprep.hpp"
#include "fforge/detector.hpp"
#include "fforge/synthdata.hpp"

namespace fforge {

/// One experiment, read from a JSON file (schema in docs/run_config.md).
/// Relative paths resolve against the config file's directory.
struct RunConfig {
  std::uint64_t seed = 0;
  std::filesystem::path output_dir = "fforge-run";
  std::string dataset_name = "synth";
  std::optional<std::filesystem::path> dataset_root;  // unset: synthesize into output_dir/data
  SynthConfig synth;
  int crop_size = 64;
  SplitConfig split;
  int pool_size = 8;
  AeTrainOptions pool_train;
  std::optional<std::filesystem::path> pool_dir;
  TrainConfig train;
  std::map<Regime, TrainConfig> regime_train;  // per-regime overrides applied on top of `train`
  TrainConfig surrogate;
  AttackConfig attack;
  std::string conditions = "all";
  int span = 16;
  int workers = 1;

  TrainConfig train_config(Regime regime) const;
  std::filesystem::path data_dir() const;
  std::filesystem::path pool_path() const;
  std::filesystem::path model_path(Regime regime) const;
  std::filesystem::path surrogate_path() const;
  std::filesystem::path report_dir() const;
};

/// `FFORGE_SEED`, when set, replaces the seed field. Throws InvalidConfig on
/// unknown keys, a missing seed or out-of-range values.
RunConfig parse_run_config(const std::string& json_text, const std::filesystem::path& base_dir = {});
RunConfig load_run_config(const std::filesystem::path& path);
void validate(const RunConfig& config);

/// File or directory digest: FNV-1a over relative paths and bytes in sorted order.
std::uint64_t path_checksum(const std::filesystem::path& path);

struct EvaluateOptions {
  std::vector<std::filesystem::path> checkpoints;  // empty: every regime checkpoint under output_dir
  std::optional<std::filesystem::path> surrogate;
  std::optional<std::filesystem::path> out_dir;
};

struct AttackOptions {
  std::filesystem::path checkpoint;
  std::string mode = "whitebox";
  std::optional<std::filesystem::path> surrogate;
  std::optional<std::filesystem::path> save_dir;  // adversarial PNGs
};

// Commands print to `out`, report failures on `err` and return the exit
// status: 0 on success, 1 on a runtime failure, 2 on invalid input.
int cmd_synth(const RunConfig& config, std::ostream& out, std::ostream& err);
int cmd_build_pool(const RunConfig& config, std::ostream& out, std::ostream& err);
int cmd_train(const RunConfig& config, const std::string& regime, std::ostream& out, std::ostream& err);
int cmd_train_surrogate(const RunConfig& config, std::ostream& out, std::ostream& err);
int cmd_evaluate(const RunConfig& config, const EvaluateOptions& options, std::ostream& out, std::ostream& err);
int cmd_attack(const RunConfig& config, const AttackOptions& options, std::ostream& out, std::ostream& err);
/// Averages AUCs of several report CSVs (e.g. one per seed) into one report.
int cmd_report(const std::vector<std::filesystem::path>& csvs, const std::optional<std::filesystem::path>& out_dir,
               std::ostream& out, std::ostream& err);
int cmd_checksum(const std::filesystem::path& path, std::ostream& out, std::ostream& err);

}  // namespace fforge
