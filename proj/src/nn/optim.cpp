#include "fforge/nn/optim.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <istream>
#include <ostream>

#include "fforge/error.hpp"
#include "fforge/image.hpp"

namespace fforge::nn {
namespace {

void require_same(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw Error(ErrorCode::ShapeMismatch, to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
}

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes little-endian hosts");

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) {
    throw Error(ErrorCode::IOFailure, "truncated parameter blob");
  }
  return v;
}

constexpr char kMagic[4] = {'F', 'F', 'N', 'N'};
constexpr std::uint32_t kVersion = 1;

}  // namespace

LossResult l1_loss(const Tensor& prediction, const Tensor& target) {
  require_same(prediction, target);
  LossResult r{0.0, Tensor(prediction.shape())};
  const auto p = prediction.values();
  const auto t = target.values();
  auto g = r.grad.values();
  const float inv = 1.0f / static_cast<float>(p.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const float d = p[i] - t[i];
    sum += std::abs(d);
    g[i] = d > 0.0f ? inv : (d < 0.0f ? -inv : 0.0f);
  }
  r.value = sum / static_cast<double>(p.size());
  return r;
}

LossResult mse_loss(const Tensor& prediction, const Tensor& target) {
  require_same(prediction, target);
  LossResult r{0.0, Tensor(prediction.shape())};
  const auto p = prediction.values();
  const auto t = target.values();
  auto g = r.grad.values();
  const float scale = 2.0f / static_cast<float>(p.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const float d = p[i] - t[i];
    sum += static_cast<double>(d) * d;
    g[i] = scale * d;
  }
  r.value = sum / static_cast<double>(p.size());
  return r;
}

LossResult bce_with_logits(const Tensor& logits, const std::vector<float>& labels) {
  if (logits.numel() != labels.size()) {
    throw Error(ErrorCode::ShapeMismatch, "one label per logit required");
  }
  LossResult r{0.0, Tensor(logits.shape())};
  const auto z = logits.values();
  auto g = r.grad.values();
  const double inv = 1.0 / static_cast<double>(z.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double zi = z[i];
    const double y = labels[i];
    // log(1 + exp(z)) - y z, evaluated stably.
    sum += std::max(zi, 0.0) - zi * y + std::log1p(std::exp(-std::abs(zi)));
    const double prob = 1.0 / (1.0 + std::exp(-zi));
    g[i] = static_cast<float>((prob - y) * inv);
  }
  r.value = sum * inv;
  return r;
}

Adam::Adam(std::vector<Parameter*> params, AdamOptions options)
    : params_(std::move(params)), options_(options) {
  for (const Parameter* p : params_) {
    m_.emplace_back(p->value.size(), 0.0f);
    v_.emplace_back(p->value.size(), 0.0f);
  }
}

void Adam::step(const Gradients& grads) {
  ++t_;
  const double bc1 = 1.0 - std::pow(options_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(options_.beta2, static_cast<double>(t_));
  const double step_size = options_.lr / bc1;
  const double sqrt_bc2 = std::sqrt(bc2);
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Parameter& p = *params_[k];
    auto it = grads.find(&p);
    if (it == grads.end()) continue;
    const auto& g = it->second;
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double gi = g[i] + options_.weight_decay * p.value[i];
      if (!std::isfinite(gi)) throw Error(ErrorCode::DivergedTraining, "non-finite gradient in " + p.name);
      m[i] = static_cast<float>(options_.beta1 * m[i] + (1.0 - options_.beta1) * gi);
      v[i] = static_cast<float>(options_.beta2 * v[i] + (1.0 - options_.beta2) * gi * gi);
      const double denom = std::sqrt(static_cast<double>(v[i])) / sqrt_bc2 + options_.eps;
      p.value[i] = static_cast<float>(p.value[i] - step_size * m[i] / denom);
    }
  }
}

void write_parameters(std::ostream& out, const std::vector<const Parameter*>& params) {
  out.write(kMagic, 4);
  put<std::uint32_t>(out, kVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
  for (const Parameter* p : params) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(p->name.size()));
    out.write(p->name.data(), static_cast<std::streamsize>(p->name.size()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(p->dims.size()));
    for (int d : p->dims) put<std::int32_t>(out, d);
    put<std::uint64_t>(out, p->value.size());
    out.write(reinterpret_cast<const char*>(p->value.data()),
              static_cast<std::streamsize>(p->value.size() * sizeof(float)));
  }
  if (!out) throw Error(ErrorCode::IOFailure, "failed writing parameter blob");
}

void read_parameters(std::istream& in, const std::vector<Parameter*>& params) {
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) {
    throw Error(ErrorCode::IOFailure, "not a parameter blob");
  }
  if (get<std::uint32_t>(in) != kVersion) throw Error(ErrorCode::IOFailure, "unsupported blob version");
  if (get<std::uint32_t>(in) != params.size()) throw Error(ErrorCode::IOFailure, "parameter count mismatch");
  for (Parameter* p : params) {
    std::string name(get<std::uint32_t>(in), '\0');
    in.read(name.data(), static_cast<std::streamsize>(name.size()));
    if (name != p->name) throw Error(ErrorCode::IOFailure, "expected parameter " + p->name + ", found " + name);
    std::vector<int> dims(get<std::uint32_t>(in));
    for (int& d : dims) d = get<std::int32_t>(in);
    if (dims != p->dims) throw Error(ErrorCode::IOFailure, "dimension mismatch for " + p->name);
    if (get<std::uint64_t>(in) != p->value.size()) throw Error(ErrorCode::IOFailure, "size mismatch for " + p->name);
    if (!in.read(reinterpret_cast<char*>(p->value.data()),
                 static_cast<std::streamsize>(p->value.size() * sizeof(float)))) {
      throw Error(ErrorCode::IOFailure, "truncated data for " + p->name);
    }
  }
}

std::uint64_t parameter_checksum(const std::vector<const Parameter*>& params) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const Parameter* p : params) {
    h = fnv1a64(std::as_bytes(std::span<const char>(p->name.data(), p->name.size())), h);
    h = fnv1a64(std::as_bytes(std::span<const float>(p->value)), h);
  }
  return h;
}

}  // namespace fforge::nn
