#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fforge/ae_pool.hpp"
#include "fforge/dataprep.hpp"
#include "fforge/image.hpp"
#include "fforge/nn/layers.hpp"
#include "fforge/perturbations.hpp"

namespace fforge {

enum class Regime { BL, CA, EA, EA_CA };
enum class LabelPolicy { RelabelFake, Preserve };

/// "BL", "CA", "EA", "EA+CA".
std::string_view to_string(Regime regime);
Regime parse_regime(std::string_view s);
std::string_view to_string(LabelPolicy policy);
LabelPolicy parse_label_policy(std::string_view s);
bool uses_pool(Regime regime);
bool uses_classic(Regime regime);

struct TrainConfig {
  double lr = 1e-4;
  double dropout = 0.25;
  double weight_decay = 3e-4;
  int max_epochs = 60;
  int batch_size = 8;
  std::uint64_t seed = 0;
  double ca_probability = 0.5;
  double jpeg_probability = 0.25;  // independent of the perturbation draw
  double ea_fraction = 0.5;
  LabelPolicy ea_label_policy = LabelPolicy::RelabelFake;
  ChainSelection chain;
  int patience = 5;
  std::string backbone = "compact_cnn";
  double width_mult = 1.0;
  int input_size = 64;
};

void validate(const TrainConfig& config);

/// Differentiable network producing one logit per sample.
class Backbone {
 public:
  virtual ~Backbone() = default;
  /// x is N x 3 x H x W; returns N x 1 x 1 x 1. A null rng disables dropout.
  virtual nn::NodeId forward(nn::Tape& tape, nn::NodeId x, Rng* dropout_rng) const = 0;
  virtual std::vector<nn::Parameter*> parameters() = 0;
};

using BackboneFactory = std::function<std::unique_ptr<Backbone>(const TrainConfig& config, Rng& init_rng)>;

/// Makes a backbone available to `TrainConfig::backbone`. "compact_cnn" is
/// built in: four stride-2 3x3 conv stages of 16/32/64/64 channels (times
/// width_mult) with ReLU, global average pooling, dropout and a linear head.
void register_backbone(const std::string& name, BackboneFactory factory);
std::unique_ptr<Backbone> make_backbone(const TrainConfig& config, Rng& init_rng);

/// Anything that maps an image to a fake-high real score.
class Scorer {
 public:
  Scorer() = default;
  Scorer(const Scorer&) = delete;
  Scorer& operator=(const Scorer&) = delete;
  virtual ~Scorer() = default;

  /// Required square side, or 0 when any size is accepted.
  virtual int input_size() const { return 0; }
  virtual std::vector<double> score_batch(std::span<const Image> images) const = 0;
  double score(const Image& image) const;

  virtual bool has_gradient() const { return false; }
  /// Gradient of the binary cross-entropy of the score against `label` with
  /// respect to the pixels (HWC order). Throws NoGradientCapability when the
  /// scorer is not differentiable. Every call is counted.
  std::vector<float> loss_gradient(const Image& image, Label label, double* loss = nullptr) const;
  long gradient_queries() const noexcept { return gradient_queries_.load(); }

 protected:
  virtual std::vector<float> compute_loss_gradient(const Image& image, Label label, double* loss) const;

 private:
  mutable std::atomic<long> gradient_queries_{0};
};

/// s(x) = w . x + b over the HWC pixel vector.
class LinearScorer : public Scorer {
 public:
  LinearScorer(int height, int width, std::vector<float> weights, double bias);
  std::vector<double> score_batch(std::span<const Image> images) const override;
  bool has_gradient() const override { return true; }
  const std::vector<float>& weights() const noexcept { return weights_; }

 protected:
  std::vector<float> compute_loss_gradient(const Image& image, Label label, double* loss) const override;

 private:
  int height_;
  int width_;
  std::vector<float> weights_;
  double bias_;
};

/// Trained binary scorer with its regime and configuration.
class DetectorModel : public Scorer {
 public:
  DetectorModel(const TrainConfig& config, Regime regime);

  Regime regime() const noexcept { return regime_; }
  const TrainConfig& config() const noexcept { return config_; }
  int input_size() const override { return config_.input_size; }
  std::vector<double> score_batch(std::span<const Image> images) const override;
  bool has_gradient() const override { return true; }

  Backbone& backbone() { return *backbone_; }
  const Backbone& backbone() const { return *backbone_; }
  std::vector<nn::Parameter*> parameters() { return backbone_->parameters(); }
  std::vector<const nn::Parameter*> parameters() const;
  std::uint64_t checksum() const;

  /// Writes `path` (parameter blob) and `path` + ".json" (sidecar).
  void save(const std::filesystem::path& path) const;
  static std::shared_ptr<DetectorModel> load(const std::filesystem::path& path);

  /// Free-form provenance carried into the sidecar, e.g. the pool checksum.
  std::string pool_checksum;

 protected:
  std::vector<float> compute_loss_gradient(const Image& image, Label label, double* loss) const override;

 private:
  void require_input(const Image& image) const;

  TrainConfig config_;
  Regime regime_;
  std::unique_ptr<Backbone> backbone_;
};

/// Logit of a single image. Throws ShapeMismatch unless the image is
/// input_size x input_size.
double predict_score(const DetectorModel& model, const Image& image);
double to_probability(double score);

struct Sample {
  Image image;
  Label label = Label::Real;
};

/// In-memory frames with their provenance.
struct FrameSet {
  std::vector<Sample> samples;
  std::vector<std::string> video_ids;
  std::vector<int> frame_idx;

  std::size_t size() const noexcept { return samples.size(); }
};

/// Loads the leading `span` frames of every video (span <= 0 loads all).
FrameSet load_frames(const DatasetIndex& index, int crop_size, int span = 0);

/// The classic-augmentation draw for one sample of a batch.
struct ClassicDraw {
  std::optional<PerturbationSpec> perturbation;  // uniform over the ten non-identity entries
  std::optional<int> jpeg_quality;               // uniform over the canonical factors
};

ClassicDraw draw_classic(const TrainConfig& config, std::uint64_t stream_seed, std::size_t sample);
Image apply_classic(const Image& image, const ClassicDraw& draw);
/// Samples chosen for the EA step (ascending) and the chain drawn for each.
std::vector<std::size_t> draw_ea_selection(std::span<const Sample> batch, const TrainConfig& config,
                                           std::uint64_t stream_seed);
ChainSpec draw_ea_chain(const TrainConfig& config, int pool_size, std::uint64_t stream_seed, std::size_t sample);

/// One training batch after the regime's on-the-fly augmentation. Random
/// draws come from substreams of `stream_seed`, so distinct batches or
/// epochs see distinct draws. EA picks round(ea_fraction * n) candidates:
/// real samples under RelabelFake, whose chained copies are appended as
/// fake, or any samples under Preserve, which are replaced in place. EA+CA
/// runs the CA step after EA on every resulting sample.
std::vector<Sample> augment_batch(std::span<const Sample> batch, const TrainConfig& config, Regime regime,
                                  const AutoencoderPool* pool, std::uint64_t stream_seed);

struct EpochLog {
  int epoch = 0;
  double train_loss = 0.0;
  double val_auc = 0.0;
  double val_loss = 0.0;
};

struct TrainingResult {
  std::shared_ptr<DetectorModel> model;
  std::vector<EpochLog> log;
  int best_epoch = 0;
};

void write_training_log(const std::vector<EpochLog>& log, const std::filesystem::path& csv_path);

/// Binary cross-entropy training on augmented batches with early stopping on
/// the best validation AUC (ties broken by lower validation loss).
TrainingResult train_detector(const FrameSet& train, const FrameSet& val, const TrainConfig& config, Regime regime,
                              const AutoencoderPool* pool = nullptr,
                              const std::function<void(const EpochLog&)>& on_epoch = {});

/// Convenience overload: splits the index by video and loads the crops.
TrainingResult train_detector(const DatasetIndex& index, const TrainConfig& config, Regime regime,
                              const AutoencoderPool* pool = nullptr, const SplitConfig& split = {});

}  // namespace fforge
