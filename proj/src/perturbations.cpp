#include "fforge/perturbations.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <numbers>

#include "fforge/error.hpp"
#include "fforge/rng.hpp"

namespace fforge {
namespace {

constexpr std::array<std::string_view, 11> kNames = {
    "No distortion", "Adjust Sharpness",   "Autocontrast",  "Random Perspective", "Color Jitter",
    "Random Resized Crop", "Gaussian Blur", "Random Noise", "Random Rotation",    "Random Affine (A)",
    "Random Affine (B)"};

constexpr std::array<std::string_view, 11> kIdentifiers = {
    "Identity",          "AdjustSharpness", "Autocontrast", "RandomPerspective", "ColorJitter", "RandomResizedCrop",
    "GaussianBlur",      "RandomNoise",     "RandomRotation", "RandomAffineA",   "RandomAffineB"};

double deg2rad(double d) { return d * std::numbers::pi / 180.0; }

double reflect_coord(double v, int n) {
  if (n == 1) return 0.0;
  const double period = 2.0 * (n - 1);
  v = std::fmod(v, period);
  if (v < 0) v += period;
  return v <= n - 1 ? v : period - v;
}

int reflect_index(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

// Inverse-mapped bilinear warp with reflection at the borders.
Image warp(const Image& src, const std::function<std::array<double, 2>(double, double)>& inverse) {
  const int h = src.height();
  const int w = src.width();
  Image out(h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const auto [sx_raw, sy_raw] = inverse(static_cast<double>(x), static_cast<double>(y));
      const double sx = reflect_coord(sx_raw, w);
      const double sy = reflect_coord(sy_raw, h);
      const int x0 = std::min(static_cast<int>(std::floor(sx)), w - 1);
      const int y0 = std::min(static_cast<int>(std::floor(sy)), h - 1);
      const int x1 = std::min(x0 + 1, w - 1);
      const int y1 = std::min(y0 + 1, h - 1);
      const double fx = sx - x0;
      const double fy = sy - y0;
      for (int c = 0; c < 3; ++c) {
        const double top = src.at(y0, x0, c) * (1.0 - fx) + src.at(y0, x1, c) * fx;
        const double bottom = src.at(y1, x0, c) * (1.0 - fx) + src.at(y1, x1, c) * fx;
        out.at(y, x, c) = static_cast<float>(top * (1.0 - fy) + bottom * fy);
      }
    }
  }
  return out;
}

// out = center + sum_k w_k (x_k - center) keeps constant regions bit-exact.
Image blur_axis(const Image& src, const std::vector<double>& kernel, bool vertical) {
  const int radius = static_cast<int>(kernel.size() / 2);
  const int h = src.height();
  const int w = src.width();
  Image out(h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) {
        const float center = src.at(y, x, c);
        double acc = 0.0;
        for (int k = -radius; k <= radius; ++k) {
          const float v = vertical ? src.at(reflect_index(y + k, h), x, c) : src.at(y, reflect_index(x + k, w), c);
          acc += kernel[k + radius] * (static_cast<double>(v) - center);
        }
        out.at(y, x, c) = static_cast<float>(center + acc);
      }
    }
  }
  return out;
}

Image gaussian_blur(const Image& img, double sigma) {
  if (sigma <= 0.0) return img;
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> kernel(2 * radius + 1);
  double total = 0.0;
  for (int k = -radius; k <= radius; ++k) total += kernel[k + radius] = std::exp(-0.5 * k * k / (sigma * sigma));
  for (double& v : kernel) v /= total;
  return blur_axis(blur_axis(img, kernel, false), kernel, true);
}

Image adjust_sharpness(const Image& img, double factor) {
  // Smoothing kernel [[1,1,1],[1,5,1],[1,1,1]] / 13 on the interior; border
  // pixels keep their values.
  Image blurred = img;
  for (int y = 1; y + 1 < img.height(); ++y)
    for (int x = 1; x + 1 < img.width(); ++x)
      for (int c = 0; c < 3; ++c) {
        double acc = 4.0 * img.at(y, x, c);
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) acc += img.at(y + dy, x + dx, c);
        blurred.at(y, x, c) = static_cast<float>(acc / 13.0);
      }
  Image out(img.height(), img.width());
  auto o = out.data();
  const auto a = img.data();
  const auto b = blurred.data();
  for (std::size_t i = 0; i < o.size(); ++i) {
    const double bi = b[i];
    o[i] = static_cast<float>(bi + factor * (a[i] - bi));
  }
  return out;
}

Image autocontrast(const Image& img, double cutoff) {
  Image out = img;
  const std::size_t n = static_cast<std::size_t>(img.height()) * img.width();
  if (n == 0) return out;
  std::vector<float> channel(n);
  for (int c = 0; c < 3; ++c) {
    for (std::size_t i = 0; i < n; ++i) channel[i] = img.data()[i * 3 + c];
    std::sort(channel.begin(), channel.end());
    const auto clip = static_cast<std::size_t>(std::floor(cutoff * static_cast<double>(n)));
    const float lo = channel[std::min(clip, n - 1)];
    const float hi = channel[n - 1 - std::min(clip, n - 1)];
    if (hi <= lo) continue;
    const double scale = 1.0 / (hi - lo);
    for (std::size_t i = 0; i < n; ++i) {
      float& v = out.data()[i * 3 + c];
      v = static_cast<float>(std::clamp((v - lo) * scale, 0.0, 1.0));
    }
  }
  return out;
}

float luma(const Image& img, int y, int x) {
  return static_cast<float>(0.299 * img.at(y, x, 0) + 0.587 * img.at(y, x, 1) + 0.114 * img.at(y, x, 2));
}

void clamp_in_place(Image& img) {
  for (float& v : img.data()) v = std::clamp(v, 0.0f, 1.0f);
}

Image shift_hue(const Image& img, double shift) {
  Image out = img;
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) {
      const double r = img.at(y, x, 0), g = img.at(y, x, 1), b = img.at(y, x, 2);
      const double mx = std::max({r, g, b});
      const double mn = std::min({r, g, b});
      const double delta = mx - mn;
      if (delta <= 0.0) continue;
      double hue;
      if (mx == r) {
        hue = std::fmod((g - b) / delta, 6.0);
      } else if (mx == g) {
        hue = (b - r) / delta + 2.0;
      } else {
        hue = (r - g) / delta + 4.0;
      }
      hue = hue / 6.0 + shift;
      hue -= std::floor(hue);
      const double s = delta / mx;
      const double v = mx;
      const double h6 = hue * 6.0;
      const int sector = static_cast<int>(h6) % 6;
      const double f = h6 - std::floor(h6);
      const double p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
      double rgb[3];
      switch (sector) {
        case 0: rgb[0] = v; rgb[1] = t; rgb[2] = p; break;
        case 1: rgb[0] = q; rgb[1] = v; rgb[2] = p; break;
        case 2: rgb[0] = p; rgb[1] = v; rgb[2] = t; break;
        case 3: rgb[0] = p; rgb[1] = q; rgb[2] = v; break;
        case 4: rgb[0] = t; rgb[1] = p; rgb[2] = v; break;
        default: rgb[0] = v; rgb[1] = p; rgb[2] = q; break;
      }
      for (int c = 0; c < 3; ++c) out.at(y, x, c) = static_cast<float>(rgb[c]);
    }
  }
  return out;
}

Image color_jitter(const Image& img, const ColorJitterParams& p, Rng& rng) {
  const double brightness = rng.uniform(p.brightness.lo, p.brightness.hi);
  const double contrast = rng.uniform(p.contrast.lo, p.contrast.hi);
  const double saturation = rng.uniform(p.saturation.lo, p.saturation.hi);
  const double hue = rng.uniform(-p.hue, p.hue);

  Image out = img;
  for (float& v : out.data()) v = static_cast<float>(v * brightness);
  clamp_in_place(out);

  double mean = 0.0;
  for (int y = 0; y < out.height(); ++y)
    for (int x = 0; x < out.width(); ++x) mean += luma(out, y, x);
  mean /= static_cast<double>(out.height()) * out.width();
  for (float& v : out.data()) v = static_cast<float>((v - mean) * contrast + mean);
  clamp_in_place(out);

  for (int y = 0; y < out.height(); ++y)
    for (int x = 0; x < out.width(); ++x) {
      const double gray = luma(out, y, x);
      for (int c = 0; c < 3; ++c) out.at(y, x, c) = static_cast<float>((out.at(y, x, c) - gray) * saturation + gray);
    }
  clamp_in_place(out);
  return hue != 0.0 ? shift_hue(out, hue) : out;
}

Image perspective(const Image& img, double distortion, Rng& rng) {
  const double w = img.width() - 1.0;
  const double h = img.height() - 1.0;
  const double dx = distortion * img.width();
  const double dy = distortion * img.height();
  const std::array<std::array<double, 2>, 4> src = {{{0, 0}, {w, 0}, {w, h}, {0, h}}};
  std::array<std::array<double, 2>, 4> dst{};
  const std::array<std::array<int, 2>, 4> inward = {{{1, 1}, {-1, 1}, {-1, -1}, {1, -1}}};
  for (int i = 0; i < 4; ++i) {
    dst[i][0] = src[i][0] + inward[i][0] * rng.uniform(0.0, dx);
    dst[i][1] = src[i][1] + inward[i][1] * rng.uniform(0.0, dy);
  }
  // Homography mapping output (dst) coordinates back onto source coordinates.
  Eigen::Matrix<double, 8, 8> a;
  Eigen::Matrix<double, 8, 1> b;
  for (int i = 0; i < 4; ++i) {
    const double x = dst[i][0], y = dst[i][1], u = src[i][0], v = src[i][1];
    a.row(2 * i) << x, y, 1, 0, 0, 0, -u * x, -u * y;
    a.row(2 * i + 1) << 0, 0, 0, x, y, 1, -v * x, -v * y;
    b(2 * i) = u;
    b(2 * i + 1) = v;
  }
  const Eigen::Matrix<double, 8, 1> hm = a.fullPivLu().solve(b);
  return warp(img, [&hm](double x, double y) {
    const double den = hm(6) * x + hm(7) * y + 1.0;
    return std::array<double, 2>{(hm(0) * x + hm(1) * y + hm(2)) / den, (hm(3) * x + hm(4) * y + hm(5)) / den};
  });
}

// Inverse of p' = c + t + M (p - c).
Image affine(const Image& img, const Eigen::Matrix2d& m, double tx, double ty) {
  const double cx = (img.width() - 1) / 2.0;
  const double cy = (img.height() - 1) / 2.0;
  const Eigen::Matrix2d inv = m.inverse();
  return warp(img, [&](double x, double y) {
    const Eigen::Vector2d d(x - cx - tx, y - cy - ty);
    const Eigen::Vector2d s = inv * d;
    return std::array<double, 2>{s(0) + cx, s(1) + cy};
  });
}

Image rotate(const Image& img, double degrees) {
  const double cx = (img.width() - 1) / 2.0;
  const double cy = (img.height() - 1) / 2.0;
  const double cs = std::cos(deg2rad(degrees));
  const double sn = std::sin(deg2rad(degrees));
  return warp(img, [=](double x, double y) {
    const double dx = x - cx;
    const double dy = y - cy;
    return std::array<double, 2>{cs * dx + sn * dy + cx, -sn * dx + cs * dy + cy};
  });
}

Image random_affine(const Image& img, const AffineParams& p, Rng& rng) {
  const double angle = deg2rad(rng.uniform(-p.degrees, p.degrees));
  const double tx = rng.uniform(-p.translate, p.translate) * img.width();
  const double ty = rng.uniform(-p.translate, p.translate) * img.height();
  const double scale = rng.uniform(p.scale.lo, p.scale.hi);
  const double shear = deg2rad(rng.uniform(-p.shear, p.shear));
  Eigen::Matrix2d rot;
  rot << std::cos(angle), -std::sin(angle), std::sin(angle), std::cos(angle);
  Eigen::Matrix2d sh;
  sh << 1.0, std::tan(shear), 0.0, 1.0;
  return affine(img, rot * sh * scale, tx, ty);
}

Image resized_crop(const Image& img, const ResizedCropParams& p, Rng& rng) {
  const int h = img.height();
  const int w = img.width();
  const double area = static_cast<double>(h) * w;
  for (int attempt = 0; attempt < 10; ++attempt) {
    const double target = area * rng.uniform(p.area.lo, p.area.hi);
    const double aspect = std::exp(rng.uniform(std::log(p.aspect.lo), std::log(p.aspect.hi)));
    const int cw = static_cast<int>(std::lround(std::sqrt(target * aspect)));
    const int ch = static_cast<int>(std::lround(std::sqrt(target / aspect)));
    if (cw < 1 || ch < 1 || cw > w || ch > h) continue;
    const int top = static_cast<int>(rng.uniform_int(0, h - ch));
    const int left = static_cast<int>(rng.uniform_int(0, w - cw));
    return resize_bilinear(crop(img, top, left, ch, cw), h, w);
  }
  return img;
}

Image add_noise(const Image& img, double sigma, Rng& rng) {
  Image out = img;
  for (float& v : out.data()) v = static_cast<float>(v + sigma * rng.normal());
  return out;
}

void require(bool ok, const char* what) {
  if (!ok) throw Error(ErrorCode::InvalidParams, what);
}

void require_range(const Range& r, double lo, double hi, const char* what) {
  require(std::isfinite(r.lo) && std::isfinite(r.hi) && r.lo <= r.hi && r.lo >= lo && r.hi <= hi, what);
}

}  // namespace

std::string_view perturbation_name(PerturbationKind kind) { return kNames[static_cast<std::size_t>(kind)]; }

PerturbationKind parse_perturbation_kind(std::string_view name) {
  for (std::size_t i = 0; i < kNames.size(); ++i) {
    if (name == kNames[i] || name == kIdentifiers[i]) return static_cast<PerturbationKind>(i);
  }
  throw Error(ErrorCode::InvalidParams, "unknown perturbation '" + std::string(name) + "'");
}

PerturbationSpec default_perturbation(PerturbationKind kind, std::uint64_t seed_stream) {
  PerturbationSpec spec{kind, IdentityParams{}, seed_stream};
  switch (kind) {
    case PerturbationKind::Identity: break;
    case PerturbationKind::AdjustSharpness: spec.params = SharpnessParams{}; break;
    case PerturbationKind::Autocontrast: spec.params = AutocontrastParams{}; break;
    case PerturbationKind::RandomPerspective: spec.params = PerspectiveParams{}; break;
    case PerturbationKind::ColorJitter: spec.params = ColorJitterParams{}; break;
    case PerturbationKind::RandomResizedCrop: spec.params = ResizedCropParams{}; break;
    case PerturbationKind::GaussianBlur: spec.params = BlurParams{}; break;
    case PerturbationKind::RandomNoise: spec.params = NoiseParams{}; break;
    case PerturbationKind::RandomRotation: spec.params = RotationParams{}; break;
    case PerturbationKind::RandomAffineA: spec.params = AffineParams{25.0, 0.10, {0.8, 1.2}, 10.0}; break;
    case PerturbationKind::RandomAffineB: spec.params = AffineParams{10.0, 0.05, {0.9, 1.1}, 0.0}; break;
  }
  return spec;
}

std::vector<PerturbationSpec> perturbation_menu() {
  std::vector<PerturbationSpec> menu;
  for (std::size_t i = 0; i < kNames.size(); ++i) menu.push_back(default_perturbation(static_cast<PerturbationKind>(i)));
  return menu;
}

void validate(const PerturbationSpec& spec) {
  const auto mismatch = "parameters do not match the perturbation kind";
  switch (spec.kind) {
    case PerturbationKind::Identity:
      require(std::holds_alternative<IdentityParams>(spec.params), mismatch);
      break;
    case PerturbationKind::AdjustSharpness: {
      const auto* p = std::get_if<SharpnessParams>(&spec.params);
      require(p != nullptr, mismatch);
      require_range(p->factor, 0.0, 16.0, "sharpness factor must lie in [0, 16]");
      break;
    }
    case PerturbationKind::Autocontrast: {
      const auto* p = std::get_if<AutocontrastParams>(&spec.params);
      require(p != nullptr, mismatch);
      require(p->cutoff >= 0.0 && p->cutoff < 0.5, "autocontrast cutoff must lie in [0, 0.5)");
      break;
    }
    case PerturbationKind::RandomPerspective: {
      const auto* p = std::get_if<PerspectiveParams>(&spec.params);
      require(p != nullptr, mismatch);
      require(p->distortion >= 0.0 && p->distortion <= 0.5, "perspective distortion must lie in [0, 0.5]");
      break;
    }
    case PerturbationKind::ColorJitter: {
      const auto* p = std::get_if<ColorJitterParams>(&spec.params);
      require(p != nullptr, mismatch);
      require_range(p->brightness, 0.0, 10.0, "brightness factors must lie in [0, 10]");
      require_range(p->contrast, 0.0, 10.0, "contrast factors must lie in [0, 10]");
      require_range(p->saturation, 0.0, 10.0, "saturation factors must lie in [0, 10]");
      require(p->hue >= 0.0 && p->hue <= 0.5, "hue shift must lie in [0, 0.5]");
      break;
    }
    case PerturbationKind::RandomResizedCrop: {
      const auto* p = std::get_if<ResizedCropParams>(&spec.params);
      require(p != nullptr, mismatch);
      require_range(p->area, 1e-6, 1.0, "crop area fraction must lie in (0, 1]");
      require_range(p->aspect, 1e-3, 1e3, "crop aspect must be positive");
      break;
    }
    case PerturbationKind::GaussianBlur: {
      const auto* p = std::get_if<BlurParams>(&spec.params);
      require(p != nullptr, mismatch);
      require_range(p->sigma, 0.0, 50.0, "blur sigma must lie in [0, 50]");
      break;
    }
    case PerturbationKind::RandomNoise: {
      const auto* p = std::get_if<NoiseParams>(&spec.params);
      require(p != nullptr, mismatch);
      require_range(p->sigma, 0.0, 1.0, "noise sigma must lie in [0, 1]");
      break;
    }
    case PerturbationKind::RandomRotation: {
      const auto* p = std::get_if<RotationParams>(&spec.params);
      require(p != nullptr, mismatch);
      require_range(p->degrees, -180.0, 180.0, "rotation must lie in [-180, 180] degrees");
      break;
    }
    case PerturbationKind::RandomAffineA:
    case PerturbationKind::RandomAffineB: {
      const auto* p = std::get_if<AffineParams>(&spec.params);
      require(p != nullptr, mismatch);
      require(p->degrees >= 0.0 && p->degrees <= 180.0, "affine rotation must lie in [0, 180]");
      require(p->translate >= 0.0 && p->translate <= 1.0, "affine translation must lie in [0, 1]");
      require_range(p->scale, 1e-3, 10.0, "affine scale must be positive");
      require(p->shear >= 0.0 && p->shear <= 45.0, "affine shear must lie in [0, 45]");
      break;
    }
  }
}

Image apply_perturbation(const Image& image, const PerturbationSpec& spec) {
  validate(spec);
  require_finite(image);
  Rng rng(spec.seed_stream);
  Image out;
  switch (spec.kind) {
    case PerturbationKind::Identity:
      out = image;
      break;
    case PerturbationKind::AdjustSharpness: {
      const auto& p = std::get<SharpnessParams>(spec.params);
      out = adjust_sharpness(image, rng.uniform(p.factor.lo, p.factor.hi));
      break;
    }
    case PerturbationKind::Autocontrast:
      out = autocontrast(image, std::get<AutocontrastParams>(spec.params).cutoff);
      break;
    case PerturbationKind::RandomPerspective:
      out = perspective(image, std::get<PerspectiveParams>(spec.params).distortion, rng);
      break;
    case PerturbationKind::ColorJitter:
      out = color_jitter(image, std::get<ColorJitterParams>(spec.params), rng);
      break;
    case PerturbationKind::RandomResizedCrop:
      out = resized_crop(image, std::get<ResizedCropParams>(spec.params), rng);
      break;
    case PerturbationKind::GaussianBlur: {
      const auto& p = std::get<BlurParams>(spec.params);
      out = gaussian_blur(image, rng.uniform(p.sigma.lo, p.sigma.hi));
      break;
    }
    case PerturbationKind::RandomNoise: {
      const auto& p = std::get<NoiseParams>(spec.params);
      out = add_noise(image, rng.uniform(p.sigma.lo, p.sigma.hi), rng);
      break;
    }
    case PerturbationKind::RandomRotation: {
      const auto& p = std::get<RotationParams>(spec.params);
      out = rotate(image, rng.uniform(p.degrees.lo, p.degrees.hi));
      break;
    }
    case PerturbationKind::RandomAffineA:
    case PerturbationKind::RandomAffineB:
      out = random_affine(image, std::get<AffineParams>(spec.params), rng);
      break;
  }
  return clamp(out);
}

}  // namespace fforge
