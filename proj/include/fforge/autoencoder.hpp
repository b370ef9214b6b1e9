#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include "fforge/image.hpp"
#include "fforge/nn/layers.hpp"

namespace fforge {

enum class AeFamily { ConvAE, UNet };
enum class Upsampling { Nearest, Bilinear, Bicubic, ConvTranspose };
enum class ReconLoss { MAE, MSE };

std::string_view to_string(AeFamily family);
std::string_view to_string(Upsampling mode);
std::string_view to_string(ReconLoss loss);
AeFamily parse_family(std::string_view s);
Upsampling parse_upsampling(std::string_view s);
ReconLoss parse_loss(std::string_view s);

/// One point of the architecture grammar.
struct AutoencoderConfig {
  AeFamily family = AeFamily::ConvAE;
  int depth = 6;  // total conv layers, split evenly between encoder and decoder
  int kernel = 3;
  Upsampling upsampling = Upsampling::Nearest;
  ReconLoss loss = ReconLoss::MAE;
  double threshold = 0.25;  // early-stop MAE threshold T
  std::uint64_t seed = 0;

  friend bool operator==(const AutoencoderConfig&, const AutoencoderConfig&) = default;
};

inline constexpr int kMinDepth = 6;
inline constexpr int kMaxDepth = 12;
inline constexpr double kMinThreshold = 0.03;
inline constexpr double kMaxThreshold = 0.25;

void validate(const AutoencoderConfig& config);
/// e.g. "UNet-d8-k5-Bicubic-MSE".
std::string describe(const AutoencoderConfig& config);

/// Complexity order: depth, kernel, upsampling cost, loss, family.
using ComplexityKey = std::tuple<int, int, int, int, int>;
ComplexityKey complexity_key(const AutoencoderConfig& config);

/// Convolutional autoencoder or U-Net built from a grammar point.
///
/// The encoder has depth/2 convolutions; the first min(depth/2, 3) use
/// stride 2, widths are 16 * 2^i capped at 128. The decoder mirrors it,
/// upsampling where the encoder downsampled (a stride-2 transposed
/// convolution in ConvTranspose mode) and ends in a sigmoid. U-Nets
/// concatenate the encoder feature map of matching resolution into every
/// decoder layer but the first.
class Autoencoder {
 public:
  explicit Autoencoder(const AutoencoderConfig& config);

  const AutoencoderConfig& config() const noexcept { return config_; }
  /// Input sides must be multiples of this factor for `forward`.
  int size_multiple() const noexcept { return 1 << downsamples_; }

  nn::NodeId forward(nn::Tape& tape, nn::NodeId x) const;

  /// Reflect-pads to a valid size, reconstructs, crops back and clamps.
  Image reconstruct(const Image& image) const;
  std::vector<Image> reconstruct(std::span<const Image> images) const;

  std::vector<nn::Parameter*> parameters();
  std::vector<const nn::Parameter*> parameters() const;
  std::uint64_t checksum() const;

  void save(std::ostream& out) const;
  void load(std::istream& in);

 private:
  struct DecoderLayer {
    bool upsample = false;  // x2 before the convolution
    bool transposed = false;
    int skip = -1;          // encoder output concatenated into the input
    nn::Conv2d conv;
    nn::ConvTranspose2d deconv;
  };

  AutoencoderConfig config_;
  int downsamples_ = 0;
  std::vector<nn::Conv2d> encoder_;
  std::vector<DecoderLayer> decoder_;
};

struct AeTrainOptions {
  int max_epochs = 50;
  int batch_size = 32;
  double lr = 1e-3;
  double min_heldout_mae = 0.001;  // acceptance band, exclusive
  double max_heldout_mae = 0.30;
};

struct TrainedAutoencoder {
  AutoencoderConfig config;
  std::shared_ptr<const Autoencoder> model;
  int epochs_run = 0;
  double heldout_mae = 0.0;
  bool accepted = false;
  std::uint64_t checksum = 0;
};

/// Mean absolute reconstruction error over a set of images.
double reconstruction_mae(const Autoencoder& model, std::span<const Image> images);

/// Trains under the config's loss until validation MAE drops below the
/// threshold or `max_epochs` is reached. Deterministic given the config seed.
TrainedAutoencoder train_autoencoder(const AutoencoderConfig& config, std::span<const Image> train_images,
                                     std::span<const Image> val_images, const AeTrainOptions& options = {});

}  // namespace fforge
