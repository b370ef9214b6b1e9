#pragma once

#include <string>
#include <vector>

#include "fforge/nn/tape.hpp"
#include "fforge/rng.hpp"

namespace fforge::nn {

/// Zero-padded 2-D convolution; weight is [out, in * k * k].
struct Conv2d {
  Conv2d() = default;
  Conv2d(int in, int out, int kernel, int stride, const std::string& name, Rng& rng);

  int in = 0;
  int out = 0;
  int kernel = 0;
  int stride = 1;
  int pad = 0;
  Parameter weight;
  Parameter bias;
};

/// Transposed convolution; weight is [in, out * k * k]. The default
/// geometry (k=4, s=2, p=1) doubles the spatial size, as does an odd
/// kernel with pad k/2 and output_padding 1.
struct ConvTranspose2d {
  ConvTranspose2d() = default;
  ConvTranspose2d(int in, int out, int kernel, int stride, int pad, const std::string& name, Rng& rng,
                  int output_padding = 0);

  int in = 0;
  int out = 0;
  int kernel = 4;
  int stride = 2;
  int pad = 1;
  int output_padding = 0;
  Parameter weight;
  Parameter bias;
};

struct Linear {
  Linear() = default;
  Linear(int in, int out, const std::string& name, Rng& rng);

  int in = 0;
  int out = 0;
  Parameter weight;  // [out, in]
  Parameter bias;
};

enum class Resample { Nearest, Bilinear, Bicubic };

NodeId conv2d(Tape& tape, NodeId x, const Conv2d& layer);
NodeId conv_transpose2d(Tape& tape, NodeId x, const ConvTranspose2d& layer);
/// Fixed x2 upsampling with half-pixel centers (bicubic uses a = -0.75).
NodeId upsample2x(Tape& tape, NodeId x, Resample mode);
NodeId relu(Tape& tape, NodeId x);
NodeId sigmoid(Tape& tape, NodeId x);
NodeId concat_channels(Tape& tape, NodeId a, NodeId b);
/// N x C x H x W -> N x C x 1 x 1.
NodeId global_avg_pool(Tape& tape, NodeId x);
/// Inverted dropout. With `rng == nullptr` (evaluation) it is the identity.
NodeId dropout(Tape& tape, NodeId x, float p, Rng* rng);
/// Flattens each sample and applies the affine map; output N x out x 1 x 1.
NodeId linear(Tape& tape, NodeId x, const Linear& layer);

}  // namespace fforge::nn
