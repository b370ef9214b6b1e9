#include "fforge/detector.hpp"

#include <algorithm>
#include <array>
#include <climits>
#include <cmath>
#include <fstream>
#include <map>
#include <mutex>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "fforge/error.hpp"
#include "fforge/evaluation.hpp"
#include "fforge/jpeg.hpp"
#include "fforge/nn/optim.hpp"

namespace fforge {

namespace {

using nlohmann::json;

constexpr std::array<std::string_view, 4> kRegimeNames{"BL", "CA", "EA", "EA+CA"};
constexpr std::array<std::string_view, 2> kPolicyNames{"RelabelFake", "Preserve"};
constexpr const char* kSidecarFormat = "fforge-detector/1";
constexpr std::size_t kScoreChunk = 64;

class CompactCnn : public Backbone {
 public:
  CompactCnn(const TrainConfig& config, Rng& rng) : dropout_(static_cast<float>(config.dropout)) {
    const int widths[] = {16, 32, 64, 64};
    int in = Image::kChannels;
    for (int i = 0; i < 4; ++i) {
      const int out = std::max(1, static_cast<int>(std::lround(widths[i] * config.width_mult)));
      convs_[i] = nn::Conv2d(in, out, 3, 2, "conv" + std::to_string(i), rng);
      in = out;
    }
    head_ = nn::Linear(in, 1, "head", rng);
  }

  nn::NodeId forward(nn::Tape& tape, nn::NodeId x, Rng* dropout_rng) const override {
    nn::NodeId h = x;
    for (const auto& conv : convs_) h = nn::relu(tape, nn::conv2d(tape, h, conv));
    h = nn::global_avg_pool(tape, h);
    h = nn::dropout(tape, h, dropout_, dropout_rng);
    return nn::linear(tape, h, head_);
  }

  std::vector<nn::Parameter*> parameters() override {
    std::vector<nn::Parameter*> ps;
    for (auto& c : convs_) {
      ps.push_back(&c.weight);
      ps.push_back(&c.bias);
    }
    ps.push_back(&head_.weight);
    ps.push_back(&head_.bias);
    return ps;
  }

 private:
  std::array<nn::Conv2d, 4> convs_;
  nn::Linear head_;
  float dropout_;
};

std::mutex& registry_mutex() {
  static std::mutex m;
  return m;
}

std::map<std::string, BackboneFactory>& registry() {
  static std::map<std::string, BackboneFactory> r{
      {"compact_cnn", [](const TrainConfig& c, Rng& rng) { return std::make_unique<CompactCnn>(c, rng); }}};
  return r;
}

template <std::size_t N>
std::size_t parse_name(std::string_view s, const std::array<std::string_view, N>& names, const char* what) {
  for (std::size_t i = 0; i < N; ++i) {
    if (names[i] == s) return i;
  }
  throw Error(ErrorCode::InvalidConfig, std::string("unknown ") + what + " '" + std::string(s) + "'");
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

json config_json(const TrainConfig& c) {
  return {{"lr", c.lr},
          {"dropout", c.dropout},
          {"weight_decay", c.weight_decay},
          {"max_epochs", c.max_epochs},
          {"batch_size", c.batch_size},
          {"seed", c.seed},
          {"ca_probability", c.ca_probability},
          {"jpeg_probability", c.jpeg_probability},
          {"ea_fraction", c.ea_fraction},
          {"ea_label_policy", to_string(c.ea_label_policy)},
          {"chain_selection", c.chain.mode == ChainSelection::Mode::FullSet ? "FullSet" : "RandomSubset"},
          {"chain_max_len", c.chain.max_len},
          {"patience", c.patience},
          {"backbone", c.backbone},
          {"width_mult", c.width_mult},
          {"input_size", c.input_size}};
}

TrainConfig config_from_json(const json& j) {
  TrainConfig c;
  c.lr = j.at("lr").get<double>();
  c.dropout = j.at("dropout").get<double>();
  c.weight_decay = j.at("weight_decay").get<double>();
  c.max_epochs = j.at("max_epochs").get<int>();
  c.batch_size = j.at("batch_size").get<int>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.ca_probability = j.at("ca_probability").get<double>();
  c.jpeg_probability = j.at("jpeg_probability").get<double>();
  c.ea_fraction = j.at("ea_fraction").get<double>();
  c.ea_label_policy = parse_label_policy(j.at("ea_label_policy").get<std::string>());
  c.chain.mode = j.at("chain_selection").get<std::string>() == "FullSet" ? ChainSelection::Mode::FullSet
                                                                         : ChainSelection::Mode::RandomSubset;
  c.chain.max_len = j.at("chain_max_len").get<int>();
  c.patience = j.at("patience").get<int>();
  c.backbone = j.at("backbone").get<std::string>();
  c.width_mult = j.at("width_mult").get<double>();
  c.input_size = j.at("input_size").get<int>();
  return c;
}

void require_prob(double p, const char* what) {
  if (!(p >= 0.0 && p <= 1.0)) throw Error(ErrorCode::InvalidConfig, std::string(what) + " must lie in [0, 1]");
}

std::vector<float> hwc_from_nchw(const nn::Tensor& t) {
  const nn::Shape& s = t.shape();
  std::vector<float> out(static_cast<std::size_t>(s.h) * s.w * s.c);
  for (int c = 0; c < s.c; ++c)
    for (int y = 0; y < s.h; ++y)
      for (int x = 0; x < s.w; ++x) out[(static_cast<std::size_t>(y) * s.w + x) * s.c + c] = t.at(0, c, y, x);
  return out;
}

double mean_bce(std::span<const double> logits, std::span<const Label> labels) {
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const double z = logits[i];
    const double y = labels[i] == Label::Fake ? 1.0 : 0.0;
    total += std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
  }
  return total / static_cast<double>(logits.size());
}

void require_both_classes(const FrameSet& set, const char* what) {
  if (set.samples.empty()) throw Error(ErrorCode::EmptyDataset, std::string(what) + " set is empty");
  bool real = false, fake = false;
  for (const auto& s : set.samples) (s.label == Label::Fake ? fake : real) = true;
  if (!real || !fake) throw Error(ErrorCode::SingleClassInput, std::string(what) + " set needs both classes");
}

}  // namespace

std::string_view to_string(Regime regime) { return kRegimeNames.at(static_cast<std::size_t>(regime)); }
Regime parse_regime(std::string_view s) {
  if (s == "EA_CA") return Regime::EA_CA;
  return static_cast<Regime>(parse_name(s, kRegimeNames, "regime"));
}
std::string_view to_string(LabelPolicy policy) { return kPolicyNames.at(static_cast<std::size_t>(policy)); }
LabelPolicy parse_label_policy(std::string_view s) {
  return static_cast<LabelPolicy>(parse_name(s, kPolicyNames, "label policy"));
}
bool uses_pool(Regime regime) { return regime == Regime::EA || regime == Regime::EA_CA; }
bool uses_classic(Regime regime) { return regime == Regime::CA || regime == Regime::EA_CA; }

void validate(const TrainConfig& c) {
  if (!(c.lr > 0.0) || !std::isfinite(c.lr)) throw Error(ErrorCode::InvalidConfig, "lr must be positive");
  if (!(c.dropout >= 0.0 && c.dropout < 1.0)) throw Error(ErrorCode::InvalidConfig, "dropout must lie in [0, 1)");
  if (!(c.weight_decay >= 0.0)) throw Error(ErrorCode::InvalidConfig, "weight_decay must be >= 0");
  if (c.max_epochs < 1 || c.batch_size < 1 || c.patience < 1) {
    throw Error(ErrorCode::InvalidConfig, "max_epochs, batch_size and patience must be >= 1");
  }
  require_prob(c.ca_probability, "ca_probability");
  require_prob(c.jpeg_probability, "jpeg_probability");
  require_prob(c.ea_fraction, "ea_fraction");
  if (c.chain.max_len < 1) throw Error(ErrorCode::InvalidConfig, "chain max_len must be >= 1");
  if (!(c.width_mult > 0.0)) throw Error(ErrorCode::InvalidConfig, "width_mult must be positive");
  if (c.input_size < 16) throw Error(ErrorCode::InvalidConfig, "input_size must be >= 16");
  std::lock_guard lock(registry_mutex());
  if (!registry().count(c.backbone)) throw Error(ErrorCode::InvalidConfig, "unknown backbone '" + c.backbone + "'");
}

void register_backbone(const std::string& name, BackboneFactory factory) {
  std::lock_guard lock(registry_mutex());
  registry()[name] = std::move(factory);
}

std::unique_ptr<Backbone> make_backbone(const TrainConfig& config, Rng& init_rng) {
  BackboneFactory factory;
  {
    std::lock_guard lock(registry_mutex());
    auto it = registry().find(config.backbone);
    if (it == registry().end()) throw Error(ErrorCode::InvalidConfig, "unknown backbone '" + config.backbone + "'");
    factory = it->second;
  }
  return factory(config, init_rng);
}

double Scorer::score(const Image& image) const { return score_batch(std::span(&image, 1)).front(); }

std::vector<float> Scorer::loss_gradient(const Image& image, Label label, double* loss) const {
  ++gradient_queries_;
  return compute_loss_gradient(image, label, loss);
}

std::vector<float> Scorer::compute_loss_gradient(const Image&, Label, double*) const {
  throw Error(ErrorCode::NoGradientCapability, "scorer does not expose input gradients");
}

LinearScorer::LinearScorer(int height, int width, std::vector<float> weights, double bias)
    : height_(height), width_(width), weights_(std::move(weights)), bias_(bias) {
  if (weights_.size() != static_cast<std::size_t>(height) * width * Image::kChannels) {
    throw Error(ErrorCode::ShapeMismatch, "linear scorer weights do not match the image shape");
  }
}

std::vector<double> LinearScorer::score_batch(std::span<const Image> images) const {
  std::vector<double> out;
  for (const Image& img : images) {
    if (img.height() != height_ || img.width() != width_) {
      throw Error(ErrorCode::ShapeMismatch, "linear scorer input has the wrong shape");
    }
    double s = bias_;
    for (std::size_t i = 0; i < weights_.size(); ++i) s += static_cast<double>(weights_[i]) * img.data()[i];
    out.push_back(s);
  }
  return out;
}

std::vector<float> LinearScorer::compute_loss_gradient(const Image& image, Label label, double* loss) const {
  const double z = score(image);
  const double y = label == Label::Fake ? 1.0 : 0.0;
  if (loss) *loss = mean_bce(std::span(&z, 1), std::span(&label, 1));
  const double dz = 1.0 / (1.0 + std::exp(-z)) - y;
  std::vector<float> g(weights_.size());
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = static_cast<float>(dz * weights_[i]);
  return g;
}

DetectorModel::DetectorModel(const TrainConfig& config, Regime regime) : config_(config), regime_(regime) {
  validate(config);
  Rng rng = Rng::stream(config.seed, {"detector-init"});
  backbone_ = make_backbone(config, rng);
}

std::vector<const nn::Parameter*> DetectorModel::parameters() const {
  auto ps = backbone_->parameters();
  return {ps.begin(), ps.end()};
}

std::uint64_t DetectorModel::checksum() const { return nn::parameter_checksum(parameters()); }

void DetectorModel::require_input(const Image& image) const {
  if (image.height() != config_.input_size || image.width() != config_.input_size) {
    throw Error(ErrorCode::ShapeMismatch, "detector expects " + std::to_string(config_.input_size) + "x" +
                                              std::to_string(config_.input_size) + " input, got " +
                                              std::to_string(image.height()) + "x" + std::to_string(image.width()));
  }
  require_finite(image);
}

std::vector<double> DetectorModel::score_batch(std::span<const Image> images) const {
  std::vector<double> out;
  out.reserve(images.size());
  for (const Image& img : images) require_input(img);
  for (std::size_t i = 0; i < images.size(); i += kScoreChunk) {
    auto chunk = images.subspan(i, std::min(kScoreChunk, images.size() - i));
    nn::Tape tape(false);
    const nn::NodeId y = backbone_->forward(tape, tape.input(nn::to_batch(chunk)), nullptr);
    for (float v : tape.value(y).values()) out.push_back(v);
  }
  return out;
}

std::vector<float> DetectorModel::compute_loss_gradient(const Image& image, Label label, double* loss) const {
  require_input(image);
  nn::Tape tape(true);
  const nn::NodeId x = tape.input(nn::to_batch(image), true);
  const nn::NodeId y = backbone_->forward(tape, x, nullptr);
  const nn::LossResult l = nn::bce_with_logits(tape.value(y), {label == Label::Fake ? 1.0f : 0.0f});
  if (loss) *loss = l.value;
  tape.backward(y, l.grad);
  return hwc_from_nchw(tape.grad(x));
}

void DetectorModel::save(const std::filesystem::path& path) const {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path, std::ios::binary);
  nn::write_parameters(out, parameters());
  out.flush();
  if (!out) throw Error(ErrorCode::IOFailure, "cannot write checkpoint " + path.string());
  const json sidecar{{"format", kSidecarFormat},      {"regime", to_string(regime_)},
                     {"backbone", config_.backbone},  {"input_size", config_.input_size},
                     {"checksum", hex64(checksum())}, {"pool_checksum", pool_checksum},
                     {"config", config_json(config_)}};
  std::ofstream side(path.string() + ".json");
  side << sidecar.dump(2) << "\n";
  side.flush();
  if (!side) throw Error(ErrorCode::IOFailure, "cannot write sidecar for " + path.string());
}

std::shared_ptr<DetectorModel> DetectorModel::load(const std::filesystem::path& path) {
  std::ifstream side(path.string() + ".json");
  if (!side) throw Error(ErrorCode::IOFailure, "cannot read sidecar " + path.string() + ".json");
  json j;
  TrainConfig config;
  Regime regime;
  try {
    j = json::parse(side);
    if (j.at("format").get<std::string>() != kSidecarFormat) throw std::runtime_error("unsupported format");
    config = config_from_json(j.at("config"));
    regime = parse_regime(j.at("regime").get<std::string>());
  } catch (const Error&) {
    throw;
  } catch (const std::exception& e) {
    throw Error(ErrorCode::IOFailure, "malformed sidecar " + path.string() + ".json: " + e.what());
  }
  auto model = std::make_shared<DetectorModel>(config, regime);
  std::ifstream blob(path, std::ios::binary);
  if (!blob) throw Error(ErrorCode::IOFailure, "cannot read checkpoint " + path.string());
  nn::read_parameters(blob, model->parameters());
  if (hex64(model->checksum()) != j.at("checksum").get<std::string>()) {
    throw Error(ErrorCode::IOFailure, "checksum mismatch for " + path.string());
  }
  model->pool_checksum = j.value("pool_checksum", "");
  return model;
}

double predict_score(const DetectorModel& model, const Image& image) { return model.score(image); }

double to_probability(double score) { return 1.0 / (1.0 + std::exp(-score)); }

FrameSet load_frames(const DatasetIndex& index, int crop_size, int span) {
  FrameSet set;
  for (const auto& id : index.video_ids()) {
    FrameSpan frames = sample_frames(index, id, span > 0 ? span : INT_MAX / 2, crop_size);
    for (auto& f : frames.frames) {
      set.samples.push_back({std::move(f.image), f.label});
      set.video_ids.push_back(f.video_id);
      set.frame_idx.push_back(f.frame_idx);
    }
  }
  return set;
}

ClassicDraw draw_classic(const TrainConfig& config, std::uint64_t stream_seed, std::size_t sample) {
  Rng rng = Rng::stream(stream_seed, {"ca", static_cast<std::uint64_t>(sample)});
  ClassicDraw draw;
  if (rng.bernoulli(config.ca_probability)) {
    const auto kind = static_cast<PerturbationKind>(rng.uniform_int(1, 10));
    draw.perturbation = default_perturbation(kind, rng.next_u64());
  }
  if (rng.bernoulli(config.jpeg_probability)) {
    draw.jpeg_quality = kCanonicalJpegQualities[rng.uniform_int(0, std::size(kCanonicalJpegQualities) - 1)];
  }
  return draw;
}

Image apply_classic(const Image& image, const ClassicDraw& draw) {
  Image out = draw.perturbation ? apply_perturbation(image, *draw.perturbation) : image;
  if (draw.jpeg_quality) out = jpeg_roundtrip(out, JpegSpec{*draw.jpeg_quality});
  return out;
}

std::vector<std::size_t> draw_ea_selection(std::span<const Sample> batch, const TrainConfig& config,
                                           std::uint64_t stream_seed) {
  std::vector<std::size_t> candidates;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    if (config.ea_label_policy == LabelPolicy::Preserve || batch[i].label == Label::Real) candidates.push_back(i);
  }
  const auto k = static_cast<std::size_t>(std::lround(config.ea_fraction * static_cast<double>(candidates.size())));
  Rng rng = Rng::stream(stream_seed, {"ea-select"});
  for (std::size_t i = 0; i < k; ++i) {
    const auto j = static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(i),
                                                            static_cast<std::int64_t>(candidates.size()) - 1));
    std::swap(candidates[i], candidates[j]);
  }
  candidates.resize(k);
  std::sort(candidates.begin(), candidates.end());
  return candidates;
}

ChainSpec draw_ea_chain(const TrainConfig& config, int pool_size, std::uint64_t stream_seed, std::size_t sample) {
  Rng rng = Rng::stream(stream_seed, {"ea-chain", static_cast<std::uint64_t>(sample)});
  return draw_chain(config.chain, pool_size, rng);
}

std::vector<Sample> augment_batch(std::span<const Sample> batch, const TrainConfig& config, Regime regime,
                                  const AutoencoderPool* pool, std::uint64_t stream_seed) {
  if (batch.empty()) throw Error(ErrorCode::EmptyDataset, "empty batch");
  if (uses_pool(regime) && (pool == nullptr || pool->size() == 0)) {
    throw Error(ErrorCode::MissingPool, std::string("regime ") + std::string(to_string(regime)) +
                                            " needs an autoencoder pool");
  }
  std::vector<Sample> out(batch.begin(), batch.end());
  if (uses_pool(regime)) {
    for (std::size_t i : draw_ea_selection(batch, config, stream_seed)) {
      Image chained = chain_apply(batch[i].image, *pool, draw_ea_chain(config, pool->size(), stream_seed, i));
      if (config.ea_label_policy == LabelPolicy::RelabelFake) {
        out.push_back({std::move(chained), Label::Fake});
      } else {
        out[i].image = std::move(chained);
      }
    }
  }
  if (uses_classic(regime)) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i].image = apply_classic(out[i].image, draw_classic(config, stream_seed, i));
  }
  return out;
}

void write_training_log(const std::vector<EpochLog>& log, const std::filesystem::path& csv_path) {
  std::ofstream out(csv_path);
  out << "epoch,train_loss,val_auc,val_loss\n";
  char line[128];
  for (const auto& e : log) {
    std::snprintf(line, sizeof line, "%d,%.6f,%.6f,%.6f\n", e.epoch, e.train_loss, e.val_auc, e.val_loss);
    out << line;
  }
  out.flush();
  if (!out) throw Error(ErrorCode::IOFailure, "cannot write training log " + csv_path.string());
}

TrainingResult train_detector(const FrameSet& train, const FrameSet& val, const TrainConfig& config, Regime regime,
                              const AutoencoderPool* pool, const std::function<void(const EpochLog&)>& on_epoch) {
  validate(config);
  if (uses_pool(regime) && (pool == nullptr || pool->size() == 0)) {
    throw Error(ErrorCode::MissingPool, std::string("regime ") + std::string(to_string(regime)) +
                                            " needs an autoencoder pool");
  }
  require_both_classes(train, "training");
  require_both_classes(val, "validation");

  TrainingResult result;
  result.model = std::make_shared<DetectorModel>(config, regime);
  if (pool) result.model->pool_checksum = hex64(manifest_checksum(pool->manifest()));
  DetectorModel& model = *result.model;
  for (const auto& s : train.samples) {
    if (s.image.height() != config.input_size || s.image.width() != config.input_size) {
      throw Error(ErrorCode::ShapeMismatch, "training frames must be input_size x input_size");
    }
  }

  nn::Adam adam(model.parameters(), nn::AdamOptions{.lr = config.lr, .weight_decay = config.weight_decay});
  std::vector<Image> val_images;
  std::vector<Label> val_labels;
  for (const auto& s : val.samples) {
    val_images.push_back(s.image);
    val_labels.push_back(s.label);
  }

  std::vector<std::vector<float>> best;
  double best_auc = -1.0;
  double best_loss = 0.0;
  int stale = 0;
  std::vector<std::size_t> order(train.size());
  for (int epoch = 0; epoch < config.max_epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle = Rng::stream(config.seed, {"detector-order", epoch});
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[static_cast<std::size_t>(shuffle.uniform_int(0, static_cast<std::int64_t>(i) - 1))]);
    }
    double loss_sum = 0.0;
    std::size_t seen = 0;
    int batch_no = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size, ++batch_no) {
      std::vector<Sample> batch;
      for (std::size_t i = start; i < std::min(order.size(), start + config.batch_size); ++i) {
        batch.push_back(train.samples[order[i]]);
      }
      const std::uint64_t stream = mix_keys(config.seed, {"augment", epoch, batch_no});
      const std::vector<Sample> augmented = augment_batch(batch, config, regime, pool, stream);
      std::vector<Image> images;
      std::vector<float> labels;
      for (const auto& s : augmented) {
        images.push_back(s.image);
        labels.push_back(s.label == Label::Fake ? 1.0f : 0.0f);
      }
      nn::Tape tape;
      Rng drop = Rng::stream(config.seed, {"dropout", epoch, batch_no});
      const nn::NodeId y = model.backbone().forward(tape, tape.input(nn::to_batch(images)), &drop);
      const nn::LossResult loss = nn::bce_with_logits(tape.value(y), labels);
      if (!std::isfinite(loss.value)) {
        throw Error(ErrorCode::DivergedTraining, "non-finite detector loss at epoch " + std::to_string(epoch + 1));
      }
      tape.backward(y, loss.grad);
      adam.step(tape.param_grads());
      loss_sum += loss.value * static_cast<double>(augmented.size());
      seen += augmented.size();
    }

    const std::vector<double> scores = model.score_batch(val_images);
    EpochLog entry{epoch + 1, loss_sum / static_cast<double>(seen), roc_auc(scores, val_labels),
                   mean_bce(scores, val_labels)};
    result.log.push_back(entry);
    if (on_epoch) on_epoch(entry);

    if (entry.val_auc > best_auc || (entry.val_auc == best_auc && entry.val_loss < best_loss)) {
      best_auc = entry.val_auc;
      best_loss = entry.val_loss;
      result.best_epoch = entry.epoch;
      best.clear();
      for (const auto* p : model.parameters()) best.push_back(p->value);
      stale = 0;
    } else if (++stale >= config.patience) {
      break;
    }
  }
  auto params = model.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = best[i];
  return result;
}

TrainingResult train_detector(const DatasetIndex& index, const TrainConfig& config, Regime regime,
                              const AutoencoderPool* pool, const SplitConfig& split) {
  validate(config);
  if (uses_pool(regime) && (pool == nullptr || pool->size() == 0)) {
    throw Error(ErrorCode::MissingPool, std::string("regime ") + std::string(to_string(regime)) +
                                            " needs an autoencoder pool");
  }
  const DatasetSplit parts = split_by_video(index, split);
  return train_detector(load_frames(parts.train, config.input_size), load_frames(parts.val, config.input_size),
                        config, regime, pool);
}

}  // namespace fforge
