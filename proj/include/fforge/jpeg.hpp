#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "fforge/image.hpp"

namespace fforge {

struct JpegSpec {
  int quality = 80;  // 1..100; {10, 20, 30, 50, 80} are the canonical factors
};

inline constexpr int kCanonicalJpegQualities[] = {10, 20, 30, 50, 80};

/// IJG-style scaled quantization table (natural order) for a quality factor.
std::vector<std::uint16_t> jpeg_quant_table(int quality, bool chroma);

/// Baseline sequential JFIF: 8x8 DCT, 4:2:0 chroma, standard Huffman tables.
std::vector<std::uint8_t> jpeg_encode(const Image& image, int quality);
/// Decodes baseline (SOF0) JPEG with 1 or 3 components and any sampling
/// factors up to 2x2.
Image jpeg_decode(std::span<const std::uint8_t> bytes);

/// Encode then decode. Odd or tiny inputs are reflect-padded to even sides of
/// at least 16 pixels and cropped back afterwards.
Image jpeg_roundtrip(const Image& image, const JpegSpec& spec);

}  // namespace fforge
