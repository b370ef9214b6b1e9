#include "fforge/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "fforge/error.hpp"
#include "fforge/rng.hpp"

namespace fforge {
namespace fs = std::filesystem;
namespace {

// Stride-2 transposed-convolution kernel: block mean preserved, alternating
// +/- kCheckerAmplitude around it.
constexpr double kCheckerAmplitude = 0.75;
constexpr double kBlendScale = 0.1;
constexpr double kChromaShift[3] = {0.01, 0.0, -0.01};

constexpr int kTextureGrid = 9;

struct VideoStyle {
  double base[3];
  double amp[3][3], fx[3][3], fy[3][3], phase[3][3];
  double texture[3][kTextureGrid * kTextureGrid];
  double face_cx, face_cy, face_a, face_b;
  double skin[3];
  double light;
  double wobble_phase[2];
};

VideoStyle make_style(const SynthConfig& config, int video_id) {
  Rng rng = Rng::stream(config.seed, {"synth-video", video_id});
  VideoStyle s{};
  const double size = config.image_size;
  for (int c = 0; c < 3; ++c) {
    s.base[c] = rng.uniform(0.25, 0.75);
    for (int k = 0; k < 3; ++k) {
      s.amp[c][k] = rng.uniform(0.02, 0.08);
      s.fx[c][k] = rng.uniform(-2.0, 2.0);
      s.fy[c][k] = rng.uniform(-2.0, 2.0);
      s.phase[c][k] = rng.uniform(0.0, 2.0 * std::numbers::pi);
    }
    for (double& t : s.texture[c]) t = 0.03 * rng.normal();
  }
  s.face_cx = (0.5 + rng.uniform(-0.08, 0.08)) * size;
  s.face_cy = (0.52 + rng.uniform(-0.06, 0.06)) * size;
  s.face_a = rng.uniform(0.2, 0.27) * size;
  s.face_b = s.face_a * rng.uniform(1.15, 1.35);
  s.skin[0] = rng.uniform(0.55, 0.85);
  s.skin[1] = s.skin[0] * rng.uniform(0.68, 0.82);
  s.skin[2] = s.skin[0] * rng.uniform(0.5, 0.7);
  s.light = rng.uniform(-0.15, 0.15);
  s.wobble_phase[0] = rng.uniform(0.0, 2.0 * std::numbers::pi);
  s.wobble_phase[1] = rng.uniform(0.0, 2.0 * std::numbers::pi);
  return s;
}

// Coverage of an ellipse at (x, y), anti-aliased over about one pixel.
double ellipse_alpha(double x, double y, double cx, double cy, double a, double b) {
  const double r = std::hypot((x - cx) / a, (y - cy) / b);
  const double dist = (r - 1.0) * std::min(a, b);
  return std::clamp(0.5 - dist, 0.0, 1.0);
}

double texture_at(const double* grid, double u, double v) {
  const double gx = u * (kTextureGrid - 1);
  const double gy = v * (kTextureGrid - 1);
  const int x0 = std::min(static_cast<int>(gx), kTextureGrid - 2);
  const int y0 = std::min(static_cast<int>(gy), kTextureGrid - 2);
  const double fx = gx - x0;
  const double fy = gy - y0;
  const double top = grid[y0 * kTextureGrid + x0] * (1 - fx) + grid[y0 * kTextureGrid + x0 + 1] * fx;
  const double bottom = grid[(y0 + 1) * kTextureGrid + x0] * (1 - fx) + grid[(y0 + 1) * kTextureGrid + x0 + 1] * fx;
  return top * (1 - fy) + bottom * fy;
}

}  // namespace

void validate(const SynthConfig& config) {
  if (config.n_videos_per_class < 1 || config.frames_per_video < 1) {
    throw Error(ErrorCode::InvalidConfig, "synth counts must be at least 1");
  }
  if (config.image_size < 16 || config.image_size % 2 != 0) {
    throw Error(ErrorCode::InvalidConfig, "synth image_size must be even and at least 16");
  }
  if (!(config.fingerprint_strength > 0.0 && config.fingerprint_strength <= 1.0)) {
    throw Error(ErrorCode::InvalidConfig, "fingerprint_strength must lie in (0, 1]");
  }
}

Image gen_real(const SynthConfig& config, int video_id, int frame_idx) {
  validate(config);
  if (video_id < 0 || frame_idx < 0) throw Error(ErrorCode::InvalidParams, "negative video or frame index");
  const VideoStyle s = make_style(config, video_id);
  Rng frame_rng = Rng::stream(config.seed, {"synth-frame", video_id, frame_idx});
  const int size = config.image_size;
  const double t = frame_idx;
  const double drift = 0.04 * t;
  const double dx = 1.2 * std::sin(0.4 * t + s.wobble_phase[0]) * size / 64.0;
  const double dy = 0.8 * std::sin(0.3 * t + s.wobble_phase[1]) * size / 64.0;
  const double brightness = frame_rng.uniform(-0.01, 0.01);
  const double cx = s.face_cx + dx;
  const double cy = s.face_cy + dy;
  const double a = s.face_a;
  const double b = s.face_b;

  Image img(size, size);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const double px = x + 0.5;
      const double py = y + 0.5;
      const double u = px / size;
      const double v = py / size;
      double bg[3];
      for (int c = 0; c < 3; ++c) {
        double val = s.base[c] + texture_at(s.texture[c], u, v);
        for (int k = 0; k < 3; ++k) {
          val += s.amp[c][k] * std::cos(2.0 * std::numbers::pi * (s.fx[c][k] * u + s.fy[c][k] * v) + s.phase[c][k] + drift);
        }
        bg[c] = val;
      }
      const double face = ellipse_alpha(px, py, cx, cy, a, b);
      const double shade = 1.0 + s.light * (px - cx) / a - 0.08 * (py - cy) / b;
      const double eyes = std::max(ellipse_alpha(px, py, cx - 0.38 * a, cy - 0.25 * b, 0.12 * a, 0.09 * b),
                                   ellipse_alpha(px, py, cx + 0.38 * a, cy - 0.25 * b, 0.12 * a, 0.09 * b));
      const double mouth = ellipse_alpha(px, py, cx, cy + 0.45 * b, 0.35 * a, 0.07 * b);
      for (int c = 0; c < 3; ++c) {
        double skin = s.skin[c] * shade;
        skin = skin * (1 - eyes) + 0.12 * eyes;
        skin = skin * (1 - mouth) + (c == 0 ? 0.45 : 0.2) * s.skin[0] * mouth;
        const double val = bg[c] * (1 - face) + skin * face + brightness + 0.01 * frame_rng.normal();
        img.at(y, x, c) = static_cast<float>(val);
      }
    }
  }
  return clamp(img);
}

Image inject_fingerprint(const Image& image, double strength) {
  if (!(strength > 0.0 && strength <= 1.0)) {
    throw Error(ErrorCode::InvalidParams, "fingerprint strength must lie in (0, 1]");
  }
  require_finite(image);
  const double blend = kBlendScale * strength;
  Image out = image;
  const int h2 = image.height() / 2;
  const int w2 = image.width() / 2;
  for (int by = 0; by < h2; ++by) {
    for (int bx = 0; bx < w2; ++bx) {
      for (int c = 0; c < 3; ++c) {
        const double down = 0.25 * (static_cast<double>(image.at(2 * by, 2 * bx, c)) + image.at(2 * by, 2 * bx + 1, c) +
                                    image.at(2 * by + 1, 2 * bx, c) + image.at(2 * by + 1, 2 * bx + 1, c));
        for (int dy = 0; dy < 2; ++dy) {
          for (int dx = 0; dx < 2; ++dx) {
            const double kernel = 1.0 + ((dx + dy) % 2 == 0 ? kCheckerAmplitude : -kCheckerAmplitude);
            const int y = 2 * by + dy;
            const int x = 2 * bx + dx;
            const double artifact = down * kernel;
            out.at(y, x, c) = static_cast<float>((1.0 - blend) * image.at(y, x, c) + blend * artifact +
                                                 strength * kChromaShift[c]);
          }
        }
      }
    }
  }
  return clamp(out);
}

Image gen_fake(const SynthConfig& config, int video_id, int frame_idx) {
  return inject_fingerprint(gen_real(config, config.n_videos_per_class + video_id, frame_idx),
                            config.fingerprint_strength);
}

std::string synth_video_id(Label label, int video_id) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s_%03d", label == Label::Real ? "real" : "fake", video_id);
  return buf;
}

DatasetIndex build_synth_dataset(const SynthConfig& config, const fs::path& out_dir) {
  validate(config);
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw Error(ErrorCode::IOFailure, "cannot create " + out_dir.string() + ": " + ec.message());
  DatasetIndex index;
  index.root = out_dir;
  for (Label label : {Label::Real, Label::Fake}) {
    for (int v = 0; v < config.n_videos_per_class; ++v) {
      const std::string vid = synth_video_id(label, v);
      const fs::path rel_dir = fs::path(label == Label::Real ? "real" : "fake") / vid;
      fs::create_directories(out_dir / rel_dir, ec);
      if (ec) throw Error(ErrorCode::IOFailure, "cannot create " + (out_dir / rel_dir).string() + ": " + ec.message());
      for (int f = 0; f < config.frames_per_video; ++f) {
        char name[32];
        std::snprintf(name, sizeof(name), "%04d.png", f);
        const fs::path rel = rel_dir / name;
        const Image img = label == Label::Real ? gen_real(config, v, f) : gen_fake(config, v, f);
        write_png(img, out_dir / rel);
        index.entries.push_back(IndexEntry{vid, f, rel.generic_string(), label, {}});
      }
    }
  }
  write_index_csv(index, out_dir / "index.csv");
  return index;
}

}  // namespace fforge
