#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "fforge/dataprep.hpp"
#include "fforge/image.hpp"

namespace fforge {

class Scorer;

struct AttackConfig {
  double epsilon = 8.0 / 255.0;
  double alpha = 2.0 / 255.0;
  int steps = 10;
  bool random_start = true;
  std::uint64_t seed = 0;  // random start substream
};

/// Throws InvalidParams unless 0 <= epsilon, 0 < alpha <= epsilon (alpha is
/// free when epsilon is 0) and steps >= 1.
void validate(const AttackConfig& config);

/// Untargeted L-infinity PGD on the binary cross-entropy of `label`. The
/// result satisfies |out - image| <= epsilon elementwise and lies in [0, 1].
/// `stream` selects the random-start draw.
Image pgd_whitebox(const Scorer& model, const Image& image, Label label, const AttackConfig& config,
                   std::uint64_t stream = 0);

struct TransferResult {
  std::vector<Image> images;
  long target_gradient_queries = 0;
};

/// PGD against the surrogate only; the target's gradient counter is read
/// before and after to confirm it was never queried.
TransferResult blackbox_transfer(const Scorer& surrogate, const Scorer& target, std::span<const Image> images,
                                 std::span<const Label> labels, const AttackConfig& config);

}  // namespace fforge
