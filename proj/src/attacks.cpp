#include "fforge/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "fforge/detector.hpp"
#include "fforge/error.hpp"

namespace fforge {

namespace {

// Float bounds of the eps-ball around v that never exceed eps when measured
// in double, so the projection introduces no slack.
float ball_lo(float v, double eps) {
  float lo = static_cast<float>(static_cast<double>(v) - eps);
  if (static_cast<double>(v) - static_cast<double>(lo) > eps) lo = std::nextafter(lo, std::numeric_limits<float>::infinity());
  return lo;
}

float ball_hi(float v, double eps) {
  float hi = static_cast<float>(static_cast<double>(v) + eps);
  if (static_cast<double>(hi) - static_cast<double>(v) > eps) hi = std::nextafter(hi, -std::numeric_limits<float>::infinity());
  return hi;
}

}  // namespace

void validate(const AttackConfig& c) {
  if (!(c.epsilon >= 0.0) || !std::isfinite(c.epsilon)) throw Error(ErrorCode::InvalidParams, "epsilon must be >= 0");
  if (c.epsilon > 0.0 && !(c.alpha > 0.0 && c.alpha <= c.epsilon)) {
    throw Error(ErrorCode::InvalidParams, "alpha must lie in (0, epsilon]");
  }
  if (c.steps < 1) throw Error(ErrorCode::InvalidParams, "steps must be >= 1");
}

Image pgd_whitebox(const Scorer& model, const Image& image, Label label, const AttackConfig& config,
                   std::uint64_t stream) {
  validate(config);
  require_finite(image);
  if (!model.has_gradient()) throw Error(ErrorCode::NoGradientCapability, "white-box attack needs input gradients");
  if (config.epsilon == 0.0) return image;

  Image x = clamp(image);
  const std::size_t n = x.data().size();
  std::vector<float> lo(n), hi(n);
  for (std::size_t i = 0; i < n; ++i) {
    lo[i] = std::max(0.0f, ball_lo(x.data()[i], config.epsilon));
    hi[i] = std::min(1.0f, ball_hi(x.data()[i], config.epsilon));
  }
  auto px = x.data();
  if (config.random_start) {
    Rng rng = Rng::stream(config.seed, {"pgd-start", stream});
    for (std::size_t i = 0; i < n; ++i) {
      const float v = static_cast<float>(px[i] + rng.uniform(-config.epsilon, config.epsilon));
      px[i] = std::clamp(v, lo[i], hi[i]);
    }
  }
  const auto step = static_cast<float>(config.alpha);
  for (int t = 0; t < config.steps; ++t) {
    const std::vector<float> g = model.loss_gradient(x, label);
    for (std::size_t i = 0; i < n; ++i) {
      const float s = g[i] > 0.0f ? step : (g[i] < 0.0f ? -step : 0.0f);
      px[i] = std::clamp(px[i] + s, lo[i], hi[i]);
    }
  }
  return x;
}

TransferResult blackbox_transfer(const Scorer& surrogate, const Scorer& target, std::span<const Image> images,
                                 std::span<const Label> labels, const AttackConfig& config) {
  if (images.size() != labels.size()) throw Error(ErrorCode::ShapeMismatch, "images and labels differ in length");
  const long before = target.gradient_queries();
  TransferResult result;
  result.images.reserve(images.size());
  for (std::size_t i = 0; i < images.size(); ++i) {
    result.images.push_back(pgd_whitebox(surrogate, images[i], labels[i], config, i));
  }
  result.target_gradient_queries = target.gradient_queries() - before;
  return result;
}

}  // namespace fforge
