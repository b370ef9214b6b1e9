#pragma once

#include <cstdint>
#include <iosfwd>
#include <vector>

#include "fforge/nn/tape.hpp"

namespace fforge::nn {

struct LossResult {
  double value = 0.0;
  Tensor grad;  // d(loss)/d(prediction), loss averaged over all elements
};

LossResult l1_loss(const Tensor& prediction, const Tensor& target);
LossResult mse_loss(const Tensor& prediction, const Tensor& target);
/// Mean binary cross-entropy on logits (one logit per sample).
LossResult bce_with_logits(const Tensor& logits, const std::vector<float>& labels);

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;  // L2 term added to the gradient
};

class Adam {
 public:
  Adam(std::vector<Parameter*> params, AdamOptions options);

  /// Parameters without a gradient entry are left untouched.
  void step(const Gradients& grads);
  long steps() const noexcept { return t_; }

 private:
  std::vector<Parameter*> params_;
  AdamOptions options_;
  std::vector<std::vector<float>> m_;
  std::vector<std::vector<float>> v_;
  long t_ = 0;
};

/// Binary parameter blob: "FFNN", version, then name/dims/float32 data per
/// parameter, all little-endian.
void write_parameters(std::ostream& out, const std::vector<const Parameter*>& params);
/// Loads values into parameters with matching names and dims; throws
/// IOFailure on any structural mismatch.
void read_parameters(std::istream& in, const std::vector<Parameter*>& params);
std::uint64_t parameter_checksum(const std::vector<const Parameter*>& params);

}  // namespace fforge::nn
