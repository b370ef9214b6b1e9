#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "fforge/dataprep.hpp"
#include "fforge/image.hpp"

namespace fforge {

struct SynthConfig {
  int n_videos_per_class = 8;
  int frames_per_video = 16;
  int image_size = 64;
  std::uint64_t seed = 0;
  double fingerprint_strength = 0.5;
};

/// Throws InvalidConfig unless counts >= 1, image_size >= 16 and even, and
/// strength in (0, 1].
void validate(const SynthConfig& config);

/// Procedural face-like frame determined by (seed, video_id, frame_idx).
Image gen_real(const SynthConfig& config, int video_id, int frame_idx);

/// Generator-style upsampling fingerprint: 2x2 area downsample, fixed
/// stride-2 transposed-convolution upsample (checkerboard kernel), then a
/// 0.1 * strength blend plus a small chroma shift.
Image inject_fingerprint(const Image& image, double strength);

/// Fake video `video_id` shows its own identity (distinct from real video
/// `video_id`) with the fingerprint applied.
Image gen_fake(const SynthConfig& config, int video_id, int frame_idx);

std::string synth_video_id(Label label, int video_id);

/// Writes PNG frames and `index.csv` under out_dir.
DatasetIndex build_synth_dataset(const SynthConfig& config, const std::filesystem::path& out_dir);

}  // namespace fforge
