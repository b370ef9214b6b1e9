#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "fforge/image.hpp"
#include "fforge/jpeg.hpp"

namespace fforge {

// Declaration order is the canonical report row order.
enum class PerturbationKind {
  Identity,
  AdjustSharpness,
  Autocontrast,
  RandomPerspective,
  ColorJitter,
  RandomResizedCrop,
  GaussianBlur,
  RandomNoise,
  RandomRotation,
  RandomAffineA,
  RandomAffineB,
};

struct Range {
  double lo = 0.0;
  double hi = 0.0;
};

struct IdentityParams {};
struct SharpnessParams {
  Range factor{0.5, 2.0};
};
struct AutocontrastParams {
  double cutoff = 0.01;  // fraction clipped at each end, per channel
};
struct PerspectiveParams {
  double distortion = 0.12;  // max corner displacement as a fraction of the side
};
struct ColorJitterParams {
  Range brightness{0.8, 1.2};
  Range contrast{0.8, 1.2};
  Range saturation{0.8, 1.2};
  double hue = 0.05;  // max hue shift in turns
};
struct ResizedCropParams {
  Range area{0.6, 1.0};
  Range aspect{3.0 / 4.0, 4.0 / 3.0};
};
struct BlurParams {
  Range sigma{0.5, 2.0};
};
struct NoiseParams {
  Range sigma{0.01, 0.05};
};
struct RotationParams {
  Range degrees{-15.0, 15.0};
};
struct AffineParams {
  double degrees = 10.0;
  double translate = 0.05;  // fraction of the side
  Range scale{0.9, 1.1};
  double shear = 0.0;  // degrees
};

using PerturbationParams =
    std::variant<IdentityParams, SharpnessParams, AutocontrastParams, PerspectiveParams, ColorJitterParams,
                 ResizedCropParams, BlurParams, NoiseParams, RotationParams, AffineParams>;

struct PerturbationSpec {
  PerturbationKind kind = PerturbationKind::Identity;
  PerturbationParams params;
  std::uint64_t seed_stream = 0;
};

/// Report name, e.g. "Random Affine (A)"; Identity is "No distortion".
std::string_view perturbation_name(PerturbationKind kind);
/// Accepts report names and enum-style identifiers ("RandomAffineA").
PerturbationKind parse_perturbation_kind(std::string_view name);

PerturbationSpec default_perturbation(PerturbationKind kind, std::uint64_t seed_stream = 0);
/// Identity plus the ten perturbations with default parameters, in report order.
std::vector<PerturbationSpec> perturbation_menu();

/// Throws InvalidParams when the parameters do not belong to the kind or are
/// out of range.
void validate(const PerturbationSpec& spec);

/// Deterministic in (image, spec); never mutates the input.
Image apply_perturbation(const Image& image, const PerturbationSpec& spec);

}  // namespace fforge
