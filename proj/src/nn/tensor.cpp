#include "fforge/nn/tensor.hpp"

#include "fforge/error.hpp"
#include "fforge/image.hpp"

namespace fforge::nn {

std::string to_string(const Shape& s) {
  return std::to_string(s.n) + "x" + std::to_string(s.c) + "x" + std::to_string(s.h) + "x" +
         std::to_string(s.w);
}

Tensor::Tensor(Shape shape, std::vector<float> data) : shape_(shape), data_(std::move(data)) {
  if (data_.size() != shape_.numel()) {
    throw Error(ErrorCode::ShapeMismatch, "tensor data does not match shape " + to_string(shape_));
  }
}

void Tensor::fill(float v) { std::fill(data_.begin(), data_.end(), v); }

void Tensor::add(const Tensor& other) {
  if (other.shape_ != shape_) {
    throw Error(ErrorCode::ShapeMismatch, to_string(shape_) + " + " + to_string(other.shape_));
  }
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
}

Tensor to_batch(std::span<const Image> images) {
  if (images.empty()) return {};
  const int h = images.front().height();
  const int w = images.front().width();
  Tensor out(Shape{static_cast<int>(images.size()), 3, h, w});
  for (std::size_t n = 0; n < images.size(); ++n) {
    const Image& img = images[n];
    if (img.height() != h || img.width() != w) {
      throw Error(ErrorCode::ShapeMismatch, "batch images must share a shape");
    }
    float* dst = out.sample(static_cast<int>(n));
    const auto src = img.data();
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    for (std::size_t p = 0; p < plane; ++p) {
      dst[p] = src[p * 3];
      dst[plane + p] = src[p * 3 + 1];
      dst[2 * plane + p] = src[p * 3 + 2];
    }
  }
  return out;
}

Tensor to_batch(const Image& image) { return to_batch(std::span<const Image>(&image, 1)); }

Image to_image(const Tensor& batch, int n) {
  const Shape& s = batch.shape();
  if (s.c != 3) throw Error(ErrorCode::ShapeMismatch, "expected 3 channels, got " + to_string(s));
  Image out(s.h, s.w);
  auto dst = out.data();
  const float* src = batch.sample(n);
  const std::size_t plane = s.plane();
  for (std::size_t p = 0; p < plane; ++p) {
    dst[p * 3] = src[p];
    dst[p * 3 + 1] = src[plane + p];
    dst[p * 3 + 2] = src[2 * plane + p];
  }
  return out;
}

}  // namespace fforge::nn
