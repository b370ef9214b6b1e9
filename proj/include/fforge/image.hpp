#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace fforge {

/// RGB image with real intensities, stored row-major as H x W x 3.
///
/// Public operations return images whose elements are finite and lie in
/// [0, 1]; intermediate buffers built through `data()` may temporarily leave
/// that range and must be passed through `clamp` before being handed out.
class Image {
 public:
  static constexpr int kChannels = 3;

  Image() = default;
  Image(int height, int width, float fill = 0.0f);
  Image(int height, int width, std::vector<float> data);

  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }
  int channels() const noexcept { return kChannels; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }
  bool same_shape(const Image& other) const noexcept {
    return height_ == other.height_ && width_ == other.width_;
  }

  float& at(int y, int x, int c) { return data_[index(y, x, c)]; }
  float at(int y, int x, int c) const { return data_[index(y, x, c)]; }

  std::span<float> data() noexcept { return data_; }
  std::span<const float> data() const noexcept { return data_; }
  const std::vector<float>& values() const noexcept { return data_; }

  friend bool operator==(const Image&, const Image&) = default;

 private:
  std::size_t index(int y, int x, int c) const noexcept {
    return (static_cast<std::size_t>(y) * width_ + x) * kChannels + c;
  }

  int height_ = 0;
  int width_ = 0;
  std::vector<float> data_;
};

struct QualityStats {
  double mae = 0.0;
  double mse = 0.0;
  double psnr = 0.0;  // decibels, +infinity for identical images
};

/// Clamps every element to [0, 1]. Throws NonFiniteInput on NaN or infinity.
Image clamp(const Image& image);

/// Throws NonFiniteInput if any element is NaN or infinite.
void require_finite(const Image& image);

double mae(const Image& a, const Image& b);
double mse(const Image& a, const Image& b);
/// Peak signal-to-noise ratio with peak 1.0.
double psnr(const Image& a, const Image& b);
QualityStats quality_stats(const Image& a, const Image& b);

/// Bilinear resize (half-pixel centers, edge clamp). Same-size input is
/// returned unchanged.
Image resize_bilinear(const Image& image, int height, int width);

/// Reflect-pads on the bottom/right edges so the result is at least
/// `min_height` x `min_width` and both sides are multiples of `multiple`.
Image pad_reflect(const Image& image, int min_height, int min_width, int multiple);
Image crop(const Image& image, int top, int left, int height, int width);

/// 8-bit quantization used for PNG files: round(v * 255).
std::uint8_t to_byte(float v);

Image read_png(const std::filesystem::path& path);
void write_png(const Image& image, const std::filesystem::path& path);

/// FNV-1a 64 over raw bytes.
std::uint64_t fnv1a64(std::span<const std::byte> bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::uint64_t checksum(const Image& image);
std::uint64_t checksum(std::span<const float> values);

}  // namespace fforge
