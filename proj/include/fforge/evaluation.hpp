#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fforge/attacks.hpp"
#include "fforge/dataprep.hpp"
#include "fforge/detector.hpp"
#include "fforge/perturbations.hpp"

namespace fforge {

/// Mann-Whitney AUC: P(fake score > real score) with ties counted 1/2.
/// Throws SingleClassInput unless both labels occur, NonFiniteInput on NaN.
double roc_auc(std::span<const double> scores, std::span<const Label> labels);

struct ScoredFrame {
  std::string video_id;
  int frame_idx = 0;
  double score = 0.0;
  Label label = Label::Real;
};

struct VideoScore {
  std::string video_id;
  double score = 0.0;
  Label label = Label::Real;
};

/// Mean score over the first `span` frames (by frame_idx) of each video, in
/// first-appearance order. Throws EmptyVideo for an empty input or span < 1.
std::vector<VideoScore> video_scores(std::span<const ScoredFrame> frames, int span = 16);
double video_auc(std::span<const VideoScore> videos);

struct Condition {
  enum class Kind { Perturbation, Jpeg, Whitebox, Blackbox };
  Kind kind = Kind::Perturbation;
  PerturbationKind perturbation = PerturbationKind::Identity;
  int quality = 0;

  /// Report row name: the perturbation name, "JPEG 10", "Black-box", "White-box".
  std::string name() const;
  /// "perturbations", "jpeg" or "attacks".
  std::string_view group() const;
};

/// "all", "perturbations", "jpeg" or "attacks"; throws InvalidConfig otherwise.
std::vector<Condition> conditions_for(std::string_view selection);
Condition parse_condition(std::string_view name);

struct ReportRow {
  std::string dataset;
  std::string condition;
  std::string group;
  std::string regime;
  double auc = 0.0;
  bool average = false;
};

struct EvalReport {
  std::vector<ReportRow> rows;
  std::string metadata_json;  // seeds, checksums, condition parameters

  /// dataset,condition,regime,auc with six decimals; no timestamps.
  std::string to_csv() const;
  /// One table per dataset and group, regimes as columns.
  std::string to_markdown() const;
  /// Writes <stem>.csv, <stem>.md and <stem>.json.
  void write(const std::filesystem::path& dir, const std::string& stem = "report") const;
};

EvalReport read_report_csv(const std::filesystem::path& csv_path);

struct GridModel {
  std::string regime;  // column label
  const Scorer* scorer = nullptr;
};

struct GridOptions {
  std::string dataset = "synth";
  std::uint64_t seed = 0;
  int span = 16;
  AttackConfig attack;
  const Scorer* surrogate = nullptr;  // required for Black-box
  int workers = 1;
};

/// Applies each condition to every frame (one pinned draw per frame), scores
/// with every model, averages to video level and computes AUC. Attack
/// conditions attack frames of both classes toward the opposite label.
EvalReport robustness_grid(std::span<const GridModel> models, const FrameSet& frames,
                           std::span<const Condition> conditions, const GridOptions& options);

}  // namespace fforge
