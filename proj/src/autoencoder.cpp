#include "fforge/autoencoder.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <istream>
#include <numeric>
#include <ostream>

#include "fforge/error.hpp"
#include "fforge/nn/optim.hpp"

namespace fforge {

namespace {

constexpr std::array<std::string_view, 2> kFamilyNames{"ConvAE", "UNet"};
constexpr std::array<std::string_view, 4> kUpsamplingNames{"Nearest", "Bilinear", "Bicubic", "ConvTranspose"};
constexpr std::array<std::string_view, 2> kLossNames{"MAE", "MSE"};
constexpr int kMaxDownsamples = 3;
constexpr int kMaxWidth = 128;

template <typename E, std::size_t N>
E parse_enum(std::string_view s, const std::array<std::string_view, N>& names, const char* what) {
  for (std::size_t i = 0; i < N; ++i) {
    if (names[i] == s) return static_cast<E>(i);
  }
  throw Error(ErrorCode::InvalidConfig, std::string("unknown ") + what + " '" + std::string(s) + "'");
}

int width_at(int stage) { return std::min(16 << stage, kMaxWidth); }

nn::Resample resample_mode(Upsampling u) {
  switch (u) {
    case Upsampling::Nearest: return nn::Resample::Nearest;
    case Upsampling::Bilinear: return nn::Resample::Bilinear;
    default: return nn::Resample::Bicubic;
  }
}

}  // namespace

std::string_view to_string(AeFamily family) { return kFamilyNames.at(static_cast<int>(family)); }
std::string_view to_string(Upsampling mode) { return kUpsamplingNames.at(static_cast<int>(mode)); }
std::string_view to_string(ReconLoss loss) { return kLossNames.at(static_cast<int>(loss)); }
AeFamily parse_family(std::string_view s) { return parse_enum<AeFamily>(s, kFamilyNames, "family"); }
Upsampling parse_upsampling(std::string_view s) { return parse_enum<Upsampling>(s, kUpsamplingNames, "upsampling"); }
ReconLoss parse_loss(std::string_view s) { return parse_enum<ReconLoss>(s, kLossNames, "loss"); }

void validate(const AutoencoderConfig& c) {
  if (c.depth < kMinDepth || c.depth > kMaxDepth || c.depth % 2 != 0) {
    throw Error(ErrorCode::InvalidConfig, "depth must be one of 6, 8, 10, 12, got " + std::to_string(c.depth));
  }
  if (c.kernel != 3 && c.kernel != 5 && c.kernel != 7) {
    throw Error(ErrorCode::InvalidConfig, "kernel must be 3, 5 or 7, got " + std::to_string(c.kernel));
  }
  if (!(c.threshold >= kMinThreshold && c.threshold <= kMaxThreshold)) {
    throw Error(ErrorCode::InvalidConfig, "threshold outside [0.03, 0.25]: " + std::to_string(c.threshold));
  }
  if (static_cast<unsigned>(c.family) > 1 || static_cast<unsigned>(c.upsampling) > 3 ||
      static_cast<unsigned>(c.loss) > 1) {
    throw Error(ErrorCode::InvalidConfig, "enum field out of range");
  }
}

std::string describe(const AutoencoderConfig& c) {
  return std::string(to_string(c.family)) + "-d" + std::to_string(c.depth) + "-k" + std::to_string(c.kernel) + "-" +
         std::string(to_string(c.upsampling)) + "-" + std::string(to_string(c.loss));
}

ComplexityKey complexity_key(const AutoencoderConfig& c) {
  return {c.depth, c.kernel, static_cast<int>(c.upsampling), static_cast<int>(c.loss), static_cast<int>(c.family)};
}

Autoencoder::Autoencoder(const AutoencoderConfig& config) : config_(config) {
  validate(config);
  Rng rng = Rng::stream(config.seed, {"ae-init"});
  const int e = config.depth / 2;
  downsamples_ = std::min(e, kMaxDownsamples);
  const int k = config.kernel;
  const bool unet = config.family == AeFamily::UNet;
  const bool transposed = config.upsampling == Upsampling::ConvTranspose;

  std::vector<int> enc_out(e);
  int channels = Image::kChannels;
  for (int i = 0; i < e; ++i) {
    enc_out[i] = width_at(i);
    encoder_.emplace_back(channels, enc_out[i], k, i < downsamples_ ? 2 : 1, "enc" + std::to_string(i), rng);
    channels = enc_out[i];
  }

  for (int j = 0; j < e; ++j) {
    const int i = e - 1 - j;  // mirrored encoder layer
    DecoderLayer layer;
    const bool up = i < downsamples_;
    layer.transposed = up && transposed;
    layer.upsample = up && !transposed;
    if (unet && j > 0) {
      // Transposed layers concatenate before upsampling, the others after,
      // so the skip source differs by one stage.
      const int src = layer.transposed ? i : i - 1;
      if (src >= 0) layer.skip = src;
    }
    const int in = channels + (layer.skip >= 0 ? enc_out[layer.skip] : 0);
    const int out = i > 0 ? enc_out[i - 1] : Image::kChannels;
    const std::string name = "dec" + std::to_string(j);
    if (layer.transposed) {
      layer.deconv = nn::ConvTranspose2d(in, out, k, 2, k / 2, name, rng, 1);
    } else {
      layer.conv = nn::Conv2d(in, out, k, 1, name, rng);
    }
    decoder_.push_back(std::move(layer));
    channels = out;
  }
}

nn::NodeId Autoencoder::forward(nn::Tape& tape, nn::NodeId x) const {
  const nn::Shape& s = tape.value(x).shape();
  if (s.c != Image::kChannels || s.h % size_multiple() != 0 || s.w % size_multiple() != 0) {
    throw Error(ErrorCode::ShapeMismatch, "autoencoder input " + nn::to_string(s) + " needs sides divisible by " +
                                              std::to_string(size_multiple()));
  }
  std::vector<nn::NodeId> features;
  nn::NodeId h = x;
  for (const auto& conv : encoder_) {
    h = nn::relu(tape, nn::conv2d(tape, h, conv));
    features.push_back(h);
  }
  const nn::Resample mode = resample_mode(config_.upsampling);
  for (std::size_t j = 0; j < decoder_.size(); ++j) {
    const DecoderLayer& layer = decoder_[j];
    if (layer.upsample) h = nn::upsample2x(tape, h, mode);
    if (layer.skip >= 0) h = nn::concat_channels(tape, h, features[layer.skip]);
    h = layer.transposed ? nn::conv_transpose2d(tape, h, layer.deconv) : nn::conv2d(tape, h, layer.conv);
    h = j + 1 < decoder_.size() ? nn::relu(tape, h) : nn::sigmoid(tape, h);
  }
  return h;
}

std::vector<Image> Autoencoder::reconstruct(std::span<const Image> images) const {
  std::vector<Image> out;
  if (images.empty()) return out;
  const int h = images.front().height();
  const int w = images.front().width();
  std::vector<Image> padded;
  padded.reserve(images.size());
  for (const Image& img : images) {
    if (img.height() != h || img.width() != w) {
      throw Error(ErrorCode::ShapeMismatch, "reconstruct needs images of one shape");
    }
    require_finite(img);
    padded.push_back(pad_reflect(img, size_multiple(), size_multiple(), size_multiple()));
  }
  nn::Tape tape(false);
  const nn::NodeId y = forward(tape, tape.input(nn::to_batch(padded)));
  out.reserve(images.size());
  for (std::size_t n = 0; n < images.size(); ++n) {
    out.push_back(clamp(crop(nn::to_image(tape.value(y), static_cast<int>(n)), 0, 0, h, w)));
  }
  return out;
}

Image Autoencoder::reconstruct(const Image& image) const {
  return std::move(reconstruct(std::span<const Image>(&image, 1)).front());
}

std::vector<nn::Parameter*> Autoencoder::parameters() {
  std::vector<nn::Parameter*> ps;
  for (auto& c : encoder_) {
    ps.push_back(&c.weight);
    ps.push_back(&c.bias);
  }
  for (auto& d : decoder_) {
    if (d.transposed) {
      ps.push_back(&d.deconv.weight);
      ps.push_back(&d.deconv.bias);
    } else {
      ps.push_back(&d.conv.weight);
      ps.push_back(&d.conv.bias);
    }
  }
  return ps;
}

std::vector<const nn::Parameter*> Autoencoder::parameters() const {
  auto ps = const_cast<Autoencoder*>(this)->parameters();
  return {ps.begin(), ps.end()};
}

std::uint64_t Autoencoder::checksum() const { return nn::parameter_checksum(parameters()); }

void Autoencoder::save(std::ostream& out) const { nn::write_parameters(out, parameters()); }

void Autoencoder::load(std::istream& in) { nn::read_parameters(in, parameters()); }

double reconstruction_mae(const Autoencoder& model, std::span<const Image> images) {
  if (images.empty()) throw Error(ErrorCode::EmptyDataset, "no images to evaluate");
  constexpr std::size_t kChunk = 32;
  double total = 0.0;
  for (std::size_t i = 0; i < images.size(); i += kChunk) {
    auto chunk = images.subspan(i, std::min(kChunk, images.size() - i));
    auto recon = model.reconstruct(chunk);
    for (std::size_t n = 0; n < chunk.size(); ++n) total += mae(chunk[n], recon[n]);
  }
  return total / static_cast<double>(images.size());
}

TrainedAutoencoder train_autoencoder(const AutoencoderConfig& config, std::span<const Image> train_images,
                                     std::span<const Image> val_images, const AeTrainOptions& options) {
  validate(config);
  if (train_images.size() < 8 || val_images.size() < 4) {
    throw Error(ErrorCode::EmptyDataset, "autoencoder training needs >= 8 train and >= 4 val images");
  }
  for (const Image& img : train_images) {
    if (!img.same_shape(train_images.front())) throw Error(ErrorCode::ShapeMismatch, "train images differ in shape");
  }
  for (const Image& img : val_images) {
    if (!img.same_shape(train_images.front())) throw Error(ErrorCode::ShapeMismatch, "val images differ in shape");
  }
  if (options.max_epochs < 1 || options.max_epochs > 50 || options.batch_size < 1) {
    throw Error(ErrorCode::InvalidConfig, "max_epochs must be in [1, 50] and batch_size >= 1");
  }

  auto model = std::make_shared<Autoencoder>(config);
  const int m = model->size_multiple();
  std::vector<Image> train;
  train.reserve(train_images.size());
  for (const Image& img : train_images) train.push_back(pad_reflect(img, m, m, m));

  nn::Adam adam(model->parameters(), nn::AdamOptions{.lr = options.lr});
  std::vector<std::size_t> order(train.size());
  TrainedAutoencoder result;
  result.config = config;
  double val_mae = 0.0;
  int epoch = 0;
  while (epoch < options.max_epochs) {
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle = Rng::stream(config.seed, {"ae-epoch", epoch});
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[static_cast<std::size_t>(shuffle.uniform_int(0, static_cast<std::int64_t>(i) - 1))]);
    }
    for (std::size_t start = 0; start < order.size(); start += options.batch_size) {
      std::vector<Image> batch;
      for (std::size_t i = start; i < std::min(order.size(), start + options.batch_size); ++i) {
        batch.push_back(train[order[i]]);
      }
      const nn::Tensor target = nn::to_batch(batch);
      nn::Tape tape;
      const nn::NodeId y = model->forward(tape, tape.input(target));
      nn::LossResult loss = config.loss == ReconLoss::MAE ? nn::l1_loss(tape.value(y), target)
                                                           : nn::mse_loss(tape.value(y), target);
      if (!std::isfinite(loss.value)) {
        throw Error(ErrorCode::DivergedTraining, describe(config) + " produced a non-finite loss at epoch " +
                                                     std::to_string(epoch + 1));
      }
      tape.backward(y, loss.grad);
      adam.step(tape.param_grads());
    }
    ++epoch;
    val_mae = reconstruction_mae(*model, val_images);
    if (val_mae < config.threshold) break;
  }
  result.epochs_run = epoch;
  result.heldout_mae = val_mae;
  result.accepted = val_mae > options.min_heldout_mae && val_mae < options.max_heldout_mae;
  result.checksum = model->checksum();
  result.model = std::move(model);
  return result;
}

}  // namespace fforge
