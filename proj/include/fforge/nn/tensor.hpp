#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace fforge {
class Image;
}

namespace fforge::nn {

struct Shape {
  int n = 0;
  int c = 0;
  int h = 0;
  int w = 0;

  std::size_t numel() const noexcept {
    return static_cast<std::size_t>(n) * c * h * w;
  }
  std::size_t sample_size() const noexcept { return static_cast<std::size_t>(c) * h * w; }
  std::size_t plane() const noexcept { return static_cast<std::size_t>(h) * w; }
  friend bool operator==(const Shape&, const Shape&) = default;
};

std::string to_string(const Shape& shape);

/// Dense NCHW float tensor.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, float fill = 0.0f) : shape_(shape), data_(shape.numel(), fill) {}
  Tensor(Shape shape, std::vector<float> data);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t numel() const noexcept { return data_.size(); }

  float* data() noexcept { return data_.data(); }
  const float* data() const noexcept { return data_.data(); }
  std::span<float> values() noexcept { return data_; }
  std::span<const float> values() const noexcept { return data_; }

  float* sample(int n) noexcept { return data_.data() + n * shape_.sample_size(); }
  const float* sample(int n) const noexcept { return data_.data() + n * shape_.sample_size(); }

  float& at(int n, int c, int y, int x) noexcept {
    return data_[((static_cast<std::size_t>(n) * shape_.c + c) * shape_.h + y) * shape_.w + x];
  }
  float at(int n, int c, int y, int x) const noexcept {
    return data_[((static_cast<std::size_t>(n) * shape_.c + c) * shape_.h + y) * shape_.w + x];
  }

  void fill(float v);
  void add(const Tensor& other);

 private:
  Shape shape_;
  std::vector<float> data_;
};

/// Packs HWC images into an NCHW batch. All images must share a shape.
Tensor to_batch(std::span<const Image> images);
Tensor to_batch(const Image& image);
/// Unpacks sample `n` of an NCHW tensor with 3 channels into an image
/// without clamping.
Image to_image(const Tensor& batch, int n);

/// Learnable parameter: flat values plus logical dimensions.
struct Parameter {
  std::string name;
  std::vector<int> dims;
  std::vector<float> value;
};

}  // namespace fforge::nn
