#include "fforge/nn/layers.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>

#include "fforge/error.hpp"

namespace fforge::nn {
namespace {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

void init_uniform(Parameter& p, int fan_in, Rng& rng) {
  const double bound = std::sqrt(6.0 / fan_in);
  for (float& v : p.value) v = static_cast<float>(rng.uniform(-bound, bound));
}

Parameter make_param(const std::string& name, std::vector<int> dims) {
  std::size_t n = 1;
  for (int d : dims) n *= static_cast<std::size_t>(d);
  return Parameter{name, std::move(dims), std::vector<float>(n, 0.0f)};
}

struct Geometry {
  int channels, height, width, kernel, stride, pad, out_h, out_w;
  int rows() const { return channels * kernel * kernel; }
  int cols() const { return out_h * out_w; }
};

void im2col(const float* x, const Geometry& g, float* col) {
  for (int c = 0; c < g.channels; ++c) {
    for (int ky = 0; ky < g.kernel; ++ky) {
      for (int kx = 0; kx < g.kernel; ++kx) {
        float* row = col + static_cast<std::size_t>((c * g.kernel + ky) * g.kernel + kx) * g.cols();
        for (int oy = 0; oy < g.out_h; ++oy) {
          const int iy = oy * g.stride - g.pad + ky;
          float* dst = row + static_cast<std::size_t>(oy) * g.out_w;
          if (iy < 0 || iy >= g.height) {
            std::fill(dst, dst + g.out_w, 0.0f);
            continue;
          }
          const float* src = x + (static_cast<std::size_t>(c) * g.height + iy) * g.width;
          for (int ox = 0; ox < g.out_w; ++ox) {
            const int ix = ox * g.stride - g.pad + kx;
            dst[ox] = (ix >= 0 && ix < g.width) ? src[ix] : 0.0f;
          }
        }
      }
    }
  }
}

void col2im(const float* col, const Geometry& g, float* x) {
  for (int c = 0; c < g.channels; ++c) {
    for (int ky = 0; ky < g.kernel; ++ky) {
      for (int kx = 0; kx < g.kernel; ++kx) {
        const float* row = col + static_cast<std::size_t>((c * g.kernel + ky) * g.kernel + kx) * g.cols();
        for (int oy = 0; oy < g.out_h; ++oy) {
          const int iy = oy * g.stride - g.pad + ky;
          if (iy < 0 || iy >= g.height) continue;
          const float* src = row + static_cast<std::size_t>(oy) * g.out_w;
          float* dst = x + (static_cast<std::size_t>(c) * g.height + iy) * g.width;
          for (int ox = 0; ox < g.out_w; ++ox) {
            const int ix = ox * g.stride - g.pad + kx;
            if (ix >= 0 && ix < g.width) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

// Separable x2 resampling as a sparse (index, weight) table per output
// coordinate.
struct AxisTable {
  int taps = 0;
  std::vector<int> index;
  std::vector<float> weight;
};

double cubic_weight(double t) {
  constexpr double a = -0.75;
  t = std::abs(t);
  if (t <= 1.0) return ((a + 2.0) * t - (a + 3.0)) * t * t + 1.0;
  if (t < 2.0) return ((a * t - 5.0 * a) * t + 8.0 * a) * t - 4.0 * a;
  return 0.0;
}

AxisTable make_axis_table(int n, Resample mode) {
  AxisTable table;
  const int out = 2 * n;
  table.taps = mode == Resample::Nearest ? 1 : mode == Resample::Bilinear ? 2 : 4;
  table.index.resize(static_cast<std::size_t>(out) * table.taps);
  table.weight.resize(table.index.size());
  for (int o = 0; o < out; ++o) {
    int* idx = &table.index[static_cast<std::size_t>(o) * table.taps];
    float* w = &table.weight[static_cast<std::size_t>(o) * table.taps];
    switch (mode) {
      case Resample::Nearest:
        idx[0] = o / 2;
        w[0] = 1.0f;
        break;
      case Resample::Bilinear: {
        const double src = std::max(0.0, (o + 0.5) / 2.0 - 0.5);
        const int i0 = std::min(static_cast<int>(src), n - 1);
        const int i1 = std::min(i0 + 1, n - 1);
        const double frac = src - i0;
        idx[0] = i0;
        idx[1] = i1;
        w[0] = static_cast<float>(1.0 - frac);
        w[1] = static_cast<float>(frac);
        break;
      }
      case Resample::Bicubic: {
        const double src = (o + 0.5) / 2.0 - 0.5;
        const int base = static_cast<int>(std::floor(src));
        const double frac = src - base;
        for (int t = 0; t < 4; ++t) {
          idx[t] = std::clamp(base - 1 + t, 0, n - 1);
          w[t] = static_cast<float>(cubic_weight(frac - (t - 1)));
        }
        break;
      }
    }
  }
  return table;
}

void check_rank(const Tensor& x, int channels, const char* op) {
  if (x.shape().c != channels) {
    throw Error(ErrorCode::ShapeMismatch, std::string(op) + ": expected " + std::to_string(channels) +
                                              " channels, got " + to_string(x.shape()));
  }
}

}  // namespace

Conv2d::Conv2d(int in_, int out_, int kernel_, int stride_, const std::string& name, Rng& rng)
    : in(in_), out(out_), kernel(kernel_), stride(stride_), pad(kernel_ / 2),
      weight(make_param(name + ".weight", {out_, in_ * kernel_ * kernel_})),
      bias(make_param(name + ".bias", {out_})) {
  init_uniform(weight, in_ * kernel_ * kernel_, rng);
}

ConvTranspose2d::ConvTranspose2d(int in_, int out_, int kernel_, int stride_, int pad_,
                                 const std::string& name, Rng& rng, int output_padding_)
    : in(in_), out(out_), kernel(kernel_), stride(stride_), pad(pad_), output_padding(output_padding_),
      weight(make_param(name + ".weight", {in_, out_ * kernel_ * kernel_})),
      bias(make_param(name + ".bias", {out_})) {
  // Each output pixel receives in * (k/s)^2 contributions.
  const int fan_in = std::max(1, in_ * (kernel_ / stride_) * (kernel_ / stride_));
  init_uniform(weight, fan_in, rng);
}

Linear::Linear(int in_, int out_, const std::string& name, Rng& rng)
    : in(in_), out(out_), weight(make_param(name + ".weight", {out_, in_})),
      bias(make_param(name + ".bias", {out_})) {
  init_uniform(weight, in_, rng);
}

NodeId conv2d(Tape& tape, NodeId xid, const Conv2d& layer) {
  const Tensor& x = tape.value(xid);
  check_rank(x, layer.in, "conv2d");
  const Shape& s = x.shape();
  const Geometry g{s.c, s.h, s.w, layer.kernel, layer.stride, layer.pad,
                   (s.h + 2 * layer.pad - layer.kernel) / layer.stride + 1,
                   (s.w + 2 * layer.pad - layer.kernel) / layer.stride + 1};
  Tensor y(Shape{s.n, layer.out, g.out_h, g.out_w});
  std::vector<float> col(static_cast<std::size_t>(g.rows()) * g.cols());
  ConstMapMat w(layer.weight.value.data(), layer.out, g.rows());
  Eigen::Map<const Eigen::VectorXf> b(layer.bias.value.data(), layer.out);
  for (int n = 0; n < s.n; ++n) {
    im2col(x.sample(n), g, col.data());
    MapMat out(y.sample(n), layer.out, g.cols());
    out.noalias() = w * ConstMapMat(col.data(), g.rows(), g.cols());
    out.colwise() += b;
  }
  return tape.push(std::move(y), [xid, g, &layer](Tape& t, NodeId self) {
    const Tensor& x = t.value(xid);
    const Tensor& gy = t.grad(self);
    const int batch = x.shape().n;
    auto& gw = t.param_grad(layer.weight);
    auto& gb = t.param_grad(layer.bias);
    MapMat gw_m(gw.data(), layer.out, g.rows());
    Eigen::Map<Eigen::VectorXf> gb_v(gb.data(), layer.out);
    ConstMapMat w(layer.weight.value.data(), layer.out, g.rows());
    const bool need_dx = t.requires_grad(xid);
    Tensor* gx = need_dx ? &t.grad(xid) : nullptr;
    std::vector<float> col(static_cast<std::size_t>(g.rows()) * g.cols());
    std::vector<float> dcol(need_dx ? col.size() : 0);
    for (int n = 0; n < batch; ++n) {
      ConstMapMat dy(gy.sample(n), layer.out, g.cols());
      im2col(x.sample(n), g, col.data());
      gw_m.noalias() += dy * ConstMapMat(col.data(), g.rows(), g.cols()).transpose();
      gb_v += dy.rowwise().sum();
      if (need_dx) {
        MapMat(dcol.data(), g.rows(), g.cols()).noalias() = w.transpose() * dy;
        col2im(dcol.data(), g, gx->sample(n));
      }
    }
  });
}

NodeId conv_transpose2d(Tape& tape, NodeId xid, const ConvTranspose2d& layer) {
  const Tensor& x = tape.value(xid);
  check_rank(x, layer.in, "conv_transpose2d");
  const Shape& s = x.shape();
  const int out_h = (s.h - 1) * layer.stride - 2 * layer.pad + layer.kernel + layer.output_padding;
  const int out_w = (s.w - 1) * layer.stride - 2 * layer.pad + layer.kernel + layer.output_padding;
  // The adjoint convolution maps the output grid back onto the input grid.
  const Geometry g{layer.out, out_h, out_w, layer.kernel, layer.stride, layer.pad, s.h, s.w};
  Tensor y(Shape{s.n, layer.out, out_h, out_w});
  std::vector<float> col(static_cast<std::size_t>(g.rows()) * g.cols());
  ConstMapMat w(layer.weight.value.data(), layer.in, g.rows());
  const std::size_t plane = static_cast<std::size_t>(out_h) * out_w;
  for (int n = 0; n < s.n; ++n) {
    MapMat(col.data(), g.rows(), g.cols()).noalias() = w.transpose() * ConstMapMat(x.sample(n), layer.in, g.cols());
    float* yn = y.sample(n);
    col2im(col.data(), g, yn);
    for (int c = 0; c < layer.out; ++c) {
      const float bc = layer.bias.value[c];
      for (std::size_t p = 0; p < plane; ++p) yn[c * plane + p] += bc;
    }
  }
  return tape.push(std::move(y), [xid, g, plane, &layer](Tape& t, NodeId self) {
    const Tensor& x = t.value(xid);
    const Tensor& gy = t.grad(self);
    auto& gw = t.param_grad(layer.weight);
    auto& gb = t.param_grad(layer.bias);
    MapMat gw_m(gw.data(), layer.in, g.rows());
    ConstMapMat w(layer.weight.value.data(), layer.in, g.rows());
    const bool need_dx = t.requires_grad(xid);
    Tensor* gx = need_dx ? &t.grad(xid) : nullptr;
    std::vector<float> col(static_cast<std::size_t>(g.rows()) * g.cols());
    for (int n = 0; n < x.shape().n; ++n) {
      const float* gyn = gy.sample(n);
      for (int c = 0; c < layer.out; ++c) {
        double acc = 0.0;
        for (std::size_t p = 0; p < plane; ++p) acc += gyn[c * plane + p];
        gb[c] += static_cast<float>(acc);
      }
      im2col(gyn, g, col.data());
      ConstMapMat dcol(col.data(), g.rows(), g.cols());
      gw_m.noalias() += ConstMapMat(x.sample(n), layer.in, g.cols()) * dcol.transpose();
      if (need_dx) MapMat(gx->sample(n), layer.in, g.cols()).noalias() += w * dcol;
    }
  });
}

NodeId upsample2x(Tape& tape, NodeId xid, Resample mode) {
  const Tensor& x = tape.value(xid);
  const Shape s = x.shape();
  const AxisTable rows = make_axis_table(s.h, mode);
  const AxisTable cols = make_axis_table(s.w, mode);
  const int oh = 2 * s.h;
  const int ow = 2 * s.w;
  Tensor y(Shape{s.n, s.c, oh, ow});
  std::vector<float> tmp(static_cast<std::size_t>(s.h) * ow);
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      const float* src = x.sample(n) + static_cast<std::size_t>(c) * s.plane();
      float* dst = y.sample(n) + static_cast<std::size_t>(c) * oh * ow;
      for (int r = 0; r < s.h; ++r) {
        for (int o = 0; o < ow; ++o) {
          float acc = 0.0f;
          for (int t = 0; t < cols.taps; ++t) {
            const std::size_t k = static_cast<std::size_t>(o) * cols.taps + t;
            acc += cols.weight[k] * src[static_cast<std::size_t>(r) * s.w + cols.index[k]];
          }
          tmp[static_cast<std::size_t>(r) * ow + o] = acc;
        }
      }
      for (int o = 0; o < oh; ++o) {
        float* drow = dst + static_cast<std::size_t>(o) * ow;
        std::fill(drow, drow + ow, 0.0f);
        for (int t = 0; t < rows.taps; ++t) {
          const std::size_t k = static_cast<std::size_t>(o) * rows.taps + t;
          const float wgt = rows.weight[k];
          const float* srow = &tmp[static_cast<std::size_t>(rows.index[k]) * ow];
          for (int i = 0; i < ow; ++i) drow[i] += wgt * srow[i];
        }
      }
    }
  }
  return tape.push(std::move(y), [xid, s, rows, cols, oh, ow](Tape& t, NodeId self) {
    if (!t.requires_grad(xid)) return;
    const Tensor& gy = t.grad(self);
    Tensor& gx = t.grad(xid);
    std::vector<float> tmp(static_cast<std::size_t>(s.h) * ow);
    for (int n = 0; n < s.n; ++n) {
      for (int c = 0; c < s.c; ++c) {
        const float* gsrc = gy.sample(n) + static_cast<std::size_t>(c) * oh * ow;
        float* gdst = gx.sample(n) + static_cast<std::size_t>(c) * s.plane();
        std::fill(tmp.begin(), tmp.end(), 0.0f);
        for (int o = 0; o < oh; ++o) {
          const float* grow = gsrc + static_cast<std::size_t>(o) * ow;
          for (int k = 0; k < rows.taps; ++k) {
            const std::size_t idx = static_cast<std::size_t>(o) * rows.taps + k;
            const float wgt = rows.weight[idx];
            float* trow = &tmp[static_cast<std::size_t>(rows.index[idx]) * ow];
            for (int i = 0; i < ow; ++i) trow[i] += wgt * grow[i];
          }
        }
        for (int r = 0; r < s.h; ++r) {
          for (int o = 0; o < ow; ++o) {
            const float g = tmp[static_cast<std::size_t>(r) * ow + o];
            for (int k = 0; k < cols.taps; ++k) {
              const std::size_t idx = static_cast<std::size_t>(o) * cols.taps + k;
              gdst[static_cast<std::size_t>(r) * s.w + cols.index[idx]] += cols.weight[idx] * g;
            }
          }
        }
      }
    }
  });
}

NodeId relu(Tape& tape, NodeId xid) {
  Tensor y = tape.value(xid);
  for (float& v : y.values()) v = v > 0.0f ? v : 0.0f;
  return tape.push(std::move(y), [xid](Tape& t, NodeId self) {
    if (!t.requires_grad(xid)) return;
    const auto y = t.value(self).values();
    const auto gy = t.grad(self).values();
    auto gx = t.grad(xid).values();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += y[i] > 0.0f ? gy[i] : 0.0f;
  });
}

NodeId sigmoid(Tape& tape, NodeId xid) {
  Tensor y = tape.value(xid);
  for (float& v : y.values()) v = static_cast<float>(1.0 / (1.0 + std::exp(-static_cast<double>(v))));
  return tape.push(std::move(y), [xid](Tape& t, NodeId self) {
    if (!t.requires_grad(xid)) return;
    const auto y = t.value(self).values();
    const auto gy = t.grad(self).values();
    auto gx = t.grad(xid).values();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i] * y[i] * (1.0f - y[i]);
  });
}

NodeId concat_channels(Tape& tape, NodeId aid, NodeId bid) {
  const Tensor& a = tape.value(aid);
  const Tensor& b = tape.value(bid);
  const Shape sa = a.shape();
  const Shape sb = b.shape();
  if (sa.n != sb.n || sa.h != sb.h || sa.w != sb.w) {
    throw Error(ErrorCode::ShapeMismatch, "concat " + to_string(sa) + " with " + to_string(sb));
  }
  Tensor y(Shape{sa.n, sa.c + sb.c, sa.h, sa.w});
  for (int n = 0; n < sa.n; ++n) {
    std::copy(a.sample(n), a.sample(n) + sa.sample_size(), y.sample(n));
    std::copy(b.sample(n), b.sample(n) + sb.sample_size(), y.sample(n) + sa.sample_size());
  }
  return tape.push(std::move(y), [aid, bid, sa, sb](Tape& t, NodeId self) {
    const Tensor& gy = t.grad(self);
    for (const auto& [id, offset, size] :
         {std::tuple{aid, std::size_t{0}, sa.sample_size()}, std::tuple{bid, sa.sample_size(), sb.sample_size()}}) {
      if (!t.requires_grad(id)) continue;
      Tensor& g = t.grad(id);
      for (int n = 0; n < sa.n; ++n) {
        const float* src = gy.sample(n) + offset;
        float* dst = g.sample(n);
        for (std::size_t i = 0; i < size; ++i) dst[i] += src[i];
      }
    }
  });
}

NodeId global_avg_pool(Tape& tape, NodeId xid) {
  const Tensor& x = tape.value(xid);
  const Shape s = x.shape();
  Tensor y(Shape{s.n, s.c, 1, 1});
  const std::size_t plane = s.plane();
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      const float* src = x.sample(n) + c * plane;
      double acc = 0.0;
      for (std::size_t p = 0; p < plane; ++p) acc += src[p];
      y.at(n, c, 0, 0) = static_cast<float>(acc / static_cast<double>(plane));
    }
  }
  return tape.push(std::move(y), [xid, s, plane](Tape& t, NodeId self) {
    if (!t.requires_grad(xid)) return;
    const Tensor& gy = t.grad(self);
    Tensor& gx = t.grad(xid);
    const float scale = 1.0f / static_cast<float>(plane);
    for (int n = 0; n < s.n; ++n) {
      for (int c = 0; c < s.c; ++c) {
        const float g = gy.at(n, c, 0, 0) * scale;
        float* dst = gx.sample(n) + c * plane;
        for (std::size_t p = 0; p < plane; ++p) dst[p] += g;
      }
    }
  });
}

NodeId dropout(Tape& tape, NodeId xid, float p, Rng* rng) {
  if (rng == nullptr || p <= 0.0f) return xid;
  Tensor y = tape.value(xid);
  std::vector<float> mask(y.numel());
  const float keep_scale = 1.0f / (1.0f - p);
  for (std::size_t i = 0; i < mask.size(); ++i) {
    mask[i] = rng->uniform() < p ? 0.0f : keep_scale;
    y.values()[i] *= mask[i];
  }
  return tape.push(std::move(y), [xid, mask = std::move(mask)](Tape& t, NodeId self) {
    if (!t.requires_grad(xid)) return;
    const auto gy = t.grad(self).values();
    auto gx = t.grad(xid).values();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i] * mask[i];
  });
}

NodeId linear(Tape& tape, NodeId xid, const Linear& layer) {
  const Tensor& x = tape.value(xid);
  const int batch = x.shape().n;
  if (static_cast<int>(x.shape().sample_size()) != layer.in) {
    throw Error(ErrorCode::ShapeMismatch, "linear expects " + std::to_string(layer.in) + " features, got " +
                                              to_string(x.shape()));
  }
  Tensor y(Shape{batch, layer.out, 1, 1});
  ConstMapMat w(layer.weight.value.data(), layer.out, layer.in);
  ConstMapMat xm(x.data(), batch, layer.in);
  MapMat ym(y.data(), batch, layer.out);
  ym.noalias() = xm * w.transpose();
  ym.rowwise() += Eigen::Map<const Eigen::RowVectorXf>(layer.bias.value.data(), layer.out);
  return tape.push(std::move(y), [xid, batch, &layer](Tape& t, NodeId self) {
    ConstMapMat gy(t.grad(self).data(), batch, layer.out);
    ConstMapMat xm(t.value(xid).data(), batch, layer.in);
    auto& gw = t.param_grad(layer.weight);
    auto& gb = t.param_grad(layer.bias);
    MapMat(gw.data(), layer.out, layer.in).noalias() += gy.transpose() * xm;
    Eigen::Map<Eigen::RowVectorXf>(gb.data(), layer.out) += gy.colwise().sum();
    if (t.requires_grad(xid)) {
      ConstMapMat w(layer.weight.value.data(), layer.out, layer.in);
      MapMat(t.grad(xid).data(), batch, layer.in).noalias() += gy * w;
    }
  });
}

}  // namespace fforge::nn
