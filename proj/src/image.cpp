#include "fforge/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <string>

#include "fforge/error.hpp"

namespace fforge {
namespace {

void require_same_shape(const Image& a, const Image& b) {
  if (!a.same_shape(b)) {
    throw Error(ErrorCode::ShapeMismatch,
                std::to_string(a.height()) + "x" + std::to_string(a.width()) + " vs " +
                    std::to_string(b.height()) + "x" + std::to_string(b.width()));
  }
}

int reflect_index(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

}  // namespace

Image::Image(int height, int width, float fill)
    : height_(height), width_(width),
      data_(static_cast<std::size_t>(height) * width * kChannels, fill) {
  if (height < 0 || width < 0) throw Error(ErrorCode::ShapeMismatch, "negative image dimensions");
}

Image::Image(int height, int width, std::vector<float> data)
    : height_(height), width_(width), data_(std::move(data)) {
  if (height < 0 || width < 0 ||
      data_.size() != static_cast<std::size_t>(height) * width * kChannels) {
    throw Error(ErrorCode::ShapeMismatch, "data length does not match H x W x 3");
  }
}

void require_finite(const Image& image) {
  for (float v : image.data()) {
    if (!std::isfinite(v)) throw Error(ErrorCode::NonFiniteInput, "image contains NaN or infinity");
  }
}

Image clamp(const Image& image) {
  require_finite(image);
  Image out = image;
  for (float& v : out.data()) v = std::min(1.0f, std::max(0.0f, v));
  return out;
}

double mae(const Image& a, const Image& b) {
  require_same_shape(a, b);
  if (a.empty()) return 0.0;
  double sum = 0.0;
  auto da = a.data();
  auto db = b.data();
  for (std::size_t i = 0; i < da.size(); ++i) sum += std::abs(static_cast<double>(da[i]) - db[i]);
  return sum / static_cast<double>(da.size());
}

double mse(const Image& a, const Image& b) {
  require_same_shape(a, b);
  if (a.empty()) return 0.0;
  double sum = 0.0;
  auto da = a.data();
  auto db = b.data();
  for (std::size_t i = 0; i < da.size(); ++i) {
    const double d = static_cast<double>(da[i]) - db[i];
    sum += d * d;
  }
  return sum / static_cast<double>(da.size());
}

double psnr(const Image& a, const Image& b) {
  const double err = mse(a, b);
  if (err == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / err);
}

QualityStats quality_stats(const Image& a, const Image& b) {
  QualityStats stats;
  stats.mae = mae(a, b);
  stats.mse = mse(a, b);
  stats.psnr = stats.mse == 0.0 ? std::numeric_limits<double>::infinity()
                                : 10.0 * std::log10(1.0 / stats.mse);
  return stats;
}

Image resize_bilinear(const Image& image, int height, int width) {
  if (height <= 0 || width <= 0) throw Error(ErrorCode::InvalidParams, "resize target must be positive");
  if (image.height() == height && image.width() == width) return image;
  Image out(height, width);
  const double sy = static_cast<double>(image.height()) / height;
  const double sx = static_cast<double>(image.width()) / width;
  for (int y = 0; y < height; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, image.height() - 1.0);
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, image.height() - 1);
    const double wy = fy - y0;
    for (int x = 0; x < width; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, image.width() - 1.0);
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, image.width() - 1);
      const double wx = fx - x0;
      for (int c = 0; c < Image::kChannels; ++c) {
        const double top = image.at(y0, x0, c) * (1.0 - wx) + image.at(y0, x1, c) * wx;
        const double bottom = image.at(y1, x0, c) * (1.0 - wx) + image.at(y1, x1, c) * wx;
        out.at(y, x, c) = static_cast<float>(top * (1.0 - wy) + bottom * wy);
      }
    }
  }
  return out;
}

Image pad_reflect(const Image& image, int min_height, int min_width, int multiple) {
  auto target = [multiple](int n, int min_n) {
    n = std::max(n, min_n);
    if (multiple > 1) n = (n + multiple - 1) / multiple * multiple;
    return n;
  };
  const int h = target(image.height(), min_height);
  const int w = target(image.width(), min_width);
  if (h == image.height() && w == image.width()) return image;
  Image out(h, w);
  for (int y = 0; y < h; ++y) {
    const int sy = reflect_index(y, image.height());
    for (int x = 0; x < w; ++x) {
      const int sx = reflect_index(x, image.width());
      for (int c = 0; c < Image::kChannels; ++c) out.at(y, x, c) = image.at(sy, sx, c);
    }
  }
  return out;
}

Image crop(const Image& image, int top, int left, int height, int width) {
  if (top < 0 || left < 0 || top + height > image.height() || left + width > image.width()) {
    throw Error(ErrorCode::ShapeMismatch, "crop window outside image");
  }
  Image out(height, width);
  for (int y = 0; y < height; ++y) {
    const float* src = &image.data()[(static_cast<std::size_t>(top + y) * image.width() + left) * 3];
    std::copy(src, src + static_cast<std::size_t>(width) * 3, &out.data()[static_cast<std::size_t>(y) * width * 3]);
  }
  return out;
}

std::uint8_t to_byte(float v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

Image read_png(const std::filesystem::path& path) {
  png_image png;
  std::memset(&png, 0, sizeof(png));
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&png, path.string().c_str())) {
    throw Error(ErrorCode::IOFailure, "cannot read PNG " + path.string() + ": " + png.message);
  }
  png.format = PNG_FORMAT_RGB;
  std::vector<std::uint8_t> buffer(PNG_IMAGE_SIZE(png));
  if (!png_image_finish_read(&png, nullptr, buffer.data(), 0, nullptr)) {
    png_image_free(&png);
    throw Error(ErrorCode::IOFailure, "cannot decode PNG " + path.string() + ": " + png.message);
  }
  Image out(static_cast<int>(png.height), static_cast<int>(png.width));
  auto dst = out.data();
  for (std::size_t i = 0; i < buffer.size(); ++i) dst[i] = static_cast<float>(buffer[i]) / 255.0f;
  return out;
}

void write_png(const Image& image, const std::filesystem::path& path) {
  std::vector<std::uint8_t> buffer(image.size());
  auto src = image.data();
  for (std::size_t i = 0; i < buffer.size(); ++i) buffer[i] = to_byte(src[i]);
  png_image png;
  std::memset(&png, 0, sizeof(png));
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(image.width());
  png.height = static_cast<png_uint_32>(image.height());
  png.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&png, path.string().c_str(), 0, buffer.data(), 0, nullptr)) {
    throw Error(ErrorCode::IOFailure, "cannot write PNG " + path.string() + ": " + png.message);
  }
}

std::uint64_t fnv1a64(std::span<const std::byte> bytes, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (std::byte b : bytes) {
    h ^= static_cast<std::uint64_t>(b);
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t checksum(std::span<const float> values) {
  return fnv1a64(std::as_bytes(values));
}

std::uint64_t checksum(const Image& image) {
  std::int32_t dims[2] = {image.height(), image.width()};
  const auto h = fnv1a64(std::as_bytes(std::span<const std::int32_t>(dims)));
  return fnv1a64(std::as_bytes(image.data()), h);
}

}  // namespace fforge
