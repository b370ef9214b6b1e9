#include "fforge/jpeg.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <string>

#include "fforge/error.hpp"

namespace fforge {
namespace {

constexpr std::array<int, 64> kZigzag = {
    0,  1,  8,  16, 9,  2,  3,  10, 17, 24, 32, 25, 18, 11, 4,  5,  12, 19, 26, 33, 40, 48,
    41, 34, 27, 20, 13, 6,  7,  14, 21, 28, 35, 42, 49, 56, 57, 50, 43, 36, 29, 22, 15, 23,
    30, 37, 44, 51, 58, 59, 52, 45, 38, 31, 39, 46, 53, 60, 61, 54, 47, 55, 62, 63};

constexpr std::array<int, 64> kLumaBase = {
    16, 11, 10, 16, 24,  40,  51,  61,  12, 12, 14, 19, 26,  58,  60,  55,
    14, 13, 16, 24, 40,  57,  69,  56,  14, 17, 22, 29, 51,  87,  80,  62,
    18, 22, 37, 56, 68,  109, 103, 77,  24, 35, 55, 64, 81,  104, 113, 92,
    49, 64, 78, 87, 103, 121, 120, 101, 72, 92, 95, 98, 112, 100, 103, 99};

constexpr std::array<int, 64> kChromaBase = {
    17, 18, 24, 47, 99, 99, 99, 99, 18, 21, 26, 66, 99, 99, 99, 99, 24, 26, 56, 99, 99, 99,
    99, 99, 47, 66, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99};

struct HuffmanSpec {
  std::array<std::uint8_t, 16> counts;
  std::vector<std::uint8_t> symbols;
};

const HuffmanSpec kDcLuma{{0, 1, 5, 1, 1, 1, 1, 1, 1, 0, 0, 0, 0, 0, 0, 0},
                          {0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11}};
const HuffmanSpec kDcChroma{{0, 3, 1, 1, 1, 1, 1, 1, 1, 1, 1, 0, 0, 0, 0, 0},
                            {0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11}};
const HuffmanSpec kAcLuma{
    {0, 2, 1, 3, 3, 2, 4, 3, 5, 5, 4, 4, 0, 0, 1, 0x7d},
    {0x01, 0x02, 0x03, 0x00, 0x04, 0x11, 0x05, 0x12, 0x21, 0x31, 0x41, 0x06, 0x13, 0x51, 0x61, 0x07, 0x22, 0x71,
     0x14, 0x32, 0x81, 0x91, 0xa1, 0x08, 0x23, 0x42, 0xb1, 0xc1, 0x15, 0x52, 0xd1, 0xf0, 0x24, 0x33, 0x62, 0x72,
     0x82, 0x09, 0x0a, 0x16, 0x17, 0x18, 0x19, 0x1a, 0x25, 0x26, 0x27, 0x28, 0x29, 0x2a, 0x34, 0x35, 0x36, 0x37,
     0x38, 0x39, 0x3a, 0x43, 0x44, 0x45, 0x46, 0x47, 0x48, 0x49, 0x4a, 0x53, 0x54, 0x55, 0x56, 0x57, 0x58, 0x59,
     0x5a, 0x63, 0x64, 0x65, 0x66, 0x67, 0x68, 0x69, 0x6a, 0x73, 0x74, 0x75, 0x76, 0x77, 0x78, 0x79, 0x7a, 0x83,
     0x84, 0x85, 0x86, 0x87, 0x88, 0x89, 0x8a, 0x92, 0x93, 0x94, 0x95, 0x96, 0x97, 0x98, 0x99, 0x9a, 0xa2, 0xa3,
     0xa4, 0xa5, 0xa6, 0xa7, 0xa8, 0xa9, 0xaa, 0xb2, 0xb3, 0xb4, 0xb5, 0xb6, 0xb7, 0xb8, 0xb9, 0xba, 0xc2, 0xc3,
     0xc4, 0xc5, 0xc6, 0xc7, 0xc8, 0xc9, 0xca, 0xd2, 0xd3, 0xd4, 0xd5, 0xd6, 0xd7, 0xd8, 0xd9, 0xda, 0xe1, 0xe2,
     0xe3, 0xe4, 0xe5, 0xe6, 0xe7, 0xe8, 0xe9, 0xea, 0xf1, 0xf2, 0xf3, 0xf4, 0xf5, 0xf6, 0xf7, 0xf8, 0xf9, 0xfa}};
const HuffmanSpec kAcChroma{
    {0, 2, 1, 2, 4, 4, 3, 4, 7, 5, 4, 4, 0, 1, 2, 0x77},
    {0x00, 0x01, 0x02, 0x03, 0x11, 0x04, 0x05, 0x21, 0x31, 0x06, 0x12, 0x41, 0x51, 0x07, 0x61, 0x71, 0x13, 0x22,
     0x32, 0x81, 0x08, 0x14, 0x42, 0x91, 0xa1, 0xb1, 0xc1, 0x09, 0x23, 0x33, 0x52, 0xf0, 0x15, 0x62, 0x72, 0xd1,
     0x0a, 0x16, 0x24, 0x34, 0xe1, 0x25, 0xf1, 0x17, 0x18, 0x19, 0x1a, 0x26, 0x27, 0x28, 0x29, 0x2a, 0x35, 0x36,
     0x37, 0x38, 0x39, 0x3a, 0x43, 0x44, 0x45, 0x46, 0x47, 0x48, 0x49, 0x4a, 0x53, 0x54, 0x55, 0x56, 0x57, 0x58,
     0x59, 0x5a, 0x63, 0x64, 0x65, 0x66, 0x67, 0x68, 0x69, 0x6a, 0x73, 0x74, 0x75, 0x76, 0x77, 0x78, 0x79, 0x7a,
     0x82, 0x83, 0x84, 0x85, 0x86, 0x87, 0x88, 0x89, 0x8a, 0x92, 0x93, 0x94, 0x95, 0x96, 0x97, 0x98, 0x99, 0x9a,
     0xa2, 0xa3, 0xa4, 0xa5, 0xa6, 0xa7, 0xa8, 0xa9, 0xaa, 0xb2, 0xb3, 0xb4, 0xb5, 0xb6, 0xb7, 0xb8, 0xb9, 0xba,
     0xc2, 0xc3, 0xc4, 0xc5, 0xc6, 0xc7, 0xc8, 0xc9, 0xca, 0xd2, 0xd3, 0xd4, 0xd5, 0xd6, 0xd7, 0xd8, 0xd9, 0xda,
     0xe2, 0xe3, 0xe4, 0xe5, 0xe6, 0xe7, 0xe8, 0xe9, 0xea, 0xf2, 0xf3, 0xf4, 0xf5, 0xf6, 0xf7, 0xf8, 0xf9, 0xfa}};

// cos_table[u][x] = C(u)/2 * cos((2x+1) u pi / 16)
const std::array<std::array<double, 8>, 8>& cos_table() {
  static const auto table = [] {
    std::array<std::array<double, 8>, 8> t{};
    for (int u = 0; u < 8; ++u) {
      const double cu = u == 0 ? std::numbers::sqrt2 / 2.0 : 1.0;
      for (int x = 0; x < 8; ++x) t[u][x] = 0.5 * cu * std::cos((2 * x + 1) * u * std::numbers::pi / 16.0);
    }
    return t;
  }();
  return table;
}

void fdct8x8(const double* in, double* out) {
  const auto& c = cos_table();
  double tmp[64];
  for (int y = 0; y < 8; ++y)
    for (int u = 0; u < 8; ++u) {
      double acc = 0.0;
      for (int x = 0; x < 8; ++x) acc += c[u][x] * in[y * 8 + x];
      tmp[y * 8 + u] = acc;
    }
  for (int v = 0; v < 8; ++v)
    for (int u = 0; u < 8; ++u) {
      double acc = 0.0;
      for (int y = 0; y < 8; ++y) acc += c[v][y] * tmp[y * 8 + u];
      out[v * 8 + u] = acc;
    }
}

void idct8x8(const double* in, double* out) {
  const auto& c = cos_table();
  double tmp[64];
  for (int v = 0; v < 8; ++v)
    for (int x = 0; x < 8; ++x) {
      double acc = 0.0;
      for (int u = 0; u < 8; ++u) acc += c[u][x] * in[v * 8 + u];
      tmp[v * 8 + x] = acc;
    }
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) {
      double acc = 0.0;
      for (int v = 0; v < 8; ++v) acc += c[v][y] * tmp[v * 8 + x];
      out[y * 8 + x] = acc;
    }
}

// ---------------------------------------------------------------- encoder

struct HuffmanCode {
  std::array<std::uint16_t, 256> code{};
  std::array<std::uint8_t, 256> length{};
};

HuffmanCode build_encoder_table(const HuffmanSpec& spec) {
  HuffmanCode table;
  std::uint16_t code = 0;
  std::size_t k = 0;
  for (int len = 1; len <= 16; ++len) {
    for (int i = 0; i < spec.counts[len - 1]; ++i, ++k) {
      table.code[spec.symbols[k]] = code++;
      table.length[spec.symbols[k]] = static_cast<std::uint8_t>(len);
    }
    code <<= 1;
  }
  return table;
}

class BitWriter {
 public:
  explicit BitWriter(std::vector<std::uint8_t>& out) : out_(out) {}

  void write(std::uint32_t bits, int count) {
    for (int i = count - 1; i >= 0; --i) {
      acc_ = static_cast<std::uint8_t>((acc_ << 1) | ((bits >> i) & 1U));
      if (++filled_ == 8) emit();
    }
  }

  void flush() {
    while (filled_ != 0) write(1, 1);
  }

 private:
  void emit() {
    out_.push_back(acc_);
    if (acc_ == 0xFF) out_.push_back(0x00);
    acc_ = 0;
    filled_ = 0;
  }

  std::vector<std::uint8_t>& out_;
  std::uint8_t acc_ = 0;
  int filled_ = 0;
};

int magnitude_category(int v) {
  int a = std::abs(v);
  int n = 0;
  while (a) {
    ++n;
    a >>= 1;
  }
  return n;
}

std::uint32_t magnitude_bits(int v, int category) {
  return static_cast<std::uint32_t>(v >= 0 ? v : v + (1 << category) - 1);
}

void put_u16(std::vector<std::uint8_t>& out, int v) {
  out.push_back(static_cast<std::uint8_t>((v >> 8) & 0xFF));
  out.push_back(static_cast<std::uint8_t>(v & 0xFF));
}

void put_huffman_table(std::vector<std::uint8_t>& out, int table_class, int id, const HuffmanSpec& spec) {
  out.push_back(0xFF);
  out.push_back(0xC4);
  put_u16(out, 2 + 1 + 16 + static_cast<int>(spec.symbols.size()));
  out.push_back(static_cast<std::uint8_t>((table_class << 4) | id));
  out.insert(out.end(), spec.counts.begin(), spec.counts.end());
  out.insert(out.end(), spec.symbols.begin(), spec.symbols.end());
}

struct Plane {
  int height = 0;
  int width = 0;
  std::vector<double> v;
  double at(int y, int x) const { return v[static_cast<std::size_t>(y) * width + x]; }
  double& at(int y, int x) { return v[static_cast<std::size_t>(y) * width + x]; }
};

void encode_block(const Plane& plane, int by, int bx, const std::vector<std::uint16_t>& quant, int& prev_dc,
                  const HuffmanCode& dc, const HuffmanCode& ac, BitWriter& bits) {
  double block[64];
  double coef[64];
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) block[y * 8 + x] = plane.at(by + y, bx + x) - 128.0;
  fdct8x8(block, coef);
  int q[64];
  for (int k = 0; k < 64; ++k) {
    const int natural = kZigzag[k];
    q[k] = static_cast<int>(std::lround(coef[natural] / quant[natural]));
  }
  const int diff = q[0] - prev_dc;
  prev_dc = q[0];
  const int dcat = magnitude_category(diff);
  bits.write(dc.code[dcat], dc.length[dcat]);
  if (dcat) bits.write(magnitude_bits(diff, dcat), dcat);
  int run = 0;
  for (int k = 1; k < 64; ++k) {
    if (q[k] == 0) {
      ++run;
      continue;
    }
    while (run > 15) {
      bits.write(ac.code[0xF0], ac.length[0xF0]);
      run -= 16;
    }
    const int cat = std::min(magnitude_category(q[k]), 10);
    const int symbol = (run << 4) | cat;
    bits.write(ac.code[symbol], ac.length[symbol]);
    bits.write(magnitude_bits(q[k], cat), cat);
    run = 0;
  }
  if (run > 0) bits.write(ac.code[0x00], ac.length[0x00]);
}

// ---------------------------------------------------------------- decoder

struct HuffmanDecoder {
  std::array<int, 18> maxcode{};
  std::array<int, 17> valptr{};
  std::array<int, 17> mincode{};
  std::vector<std::uint8_t> symbols;
  bool defined = false;
};

HuffmanDecoder build_decoder_table(const std::array<std::uint8_t, 16>& counts, std::vector<std::uint8_t> symbols) {
  HuffmanDecoder d;
  d.symbols = std::move(symbols);
  int code = 0;
  int k = 0;
  for (int len = 1; len <= 16; ++len) {
    d.valptr[len] = k;
    d.mincode[len] = code;
    code += counts[len - 1];
    k += counts[len - 1];
    d.maxcode[len] = counts[len - 1] ? code - 1 : -1;
    code <<= 1;
  }
  d.maxcode[17] = 0x7fffffff;
  d.defined = true;
  return d;
}

class BitReader {
 public:
  BitReader(std::span<const std::uint8_t> data, std::size_t pos) : data_(data), pos_(pos) {}

  int bit() {
    if (count_ == 0) fill();
    --count_;
    return (acc_ >> count_) & 1;
  }

  int bits(int n) {
    int v = 0;
    for (int i = 0; i < n; ++i) v = (v << 1) | bit();
    return v;
  }

  int decode(const HuffmanDecoder& table) {
    if (!table.defined) throw Error(ErrorCode::IOFailure, "JPEG references an undefined Huffman table");
    int code = bit();
    for (int len = 1; len <= 16; ++len) {
      if (table.maxcode[len] >= 0 && code <= table.maxcode[len] && code >= table.mincode[len]) {
        return table.symbols[table.valptr[len] + code - table.mincode[len]];
      }
      code = (code << 1) | bit();
    }
    throw Error(ErrorCode::IOFailure, "corrupt Huffman code in JPEG");
  }

  // Discards buffered bits and consumes an RSTn marker.
  void restart() {
    count_ = 0;
    acc_ = 0;
    marker_hit_ = false;
    while (pos_ + 1 < data_.size() && !(data_[pos_] == 0xFF && data_[pos_ + 1] >= 0xD0 && data_[pos_ + 1] <= 0xD7)) {
      ++pos_;
    }
    if (pos_ + 1 < data_.size()) pos_ += 2;
  }

  std::size_t position() const { return pos_; }

 private:
  void fill() {
    std::uint8_t byte = 0;
    if (!marker_hit_ && pos_ < data_.size()) {
      byte = data_[pos_];
      if (byte == 0xFF) {
        const std::uint8_t next = pos_ + 1 < data_.size() ? data_[pos_ + 1] : 0;
        if (next == 0x00) {
          pos_ += 2;
        } else {
          marker_hit_ = true;  // pad with zeros until the caller handles the marker
          byte = 0;
        }
      } else {
        ++pos_;
      }
    }
    acc_ = byte;
    count_ = 8;
  }

  std::span<const std::uint8_t> data_;
  std::size_t pos_;
  int acc_ = 0;
  int count_ = 0;
  bool marker_hit_ = false;
};

int extend(int v, int category) {
  return v < (1 << (category - 1)) ? v - (1 << category) + 1 : v;
}

struct Component {
  int id = 0;
  int h = 1;
  int v = 1;
  int quant = 0;
  int dc_table = 0;
  int ac_table = 0;
  int prev_dc = 0;
  Plane plane;
};

// Doubles one axis with the triangle filter used by libjpeg's fancy upsampling.
Plane upsample_axis(const Plane& in, bool vertical) {
  Plane out;
  out.height = vertical ? in.height * 2 : in.height;
  out.width = vertical ? in.width : in.width * 2;
  out.v.resize(static_cast<std::size_t>(out.height) * out.width);
  if (vertical) {
    for (int y = 0; y < in.height; ++y) {
      const int up = std::max(y - 1, 0);
      const int down = std::min(y + 1, in.height - 1);
      for (int x = 0; x < in.width; ++x) {
        out.at(2 * y, x) = 0.75 * in.at(y, x) + 0.25 * in.at(up, x);
        out.at(2 * y + 1, x) = 0.75 * in.at(y, x) + 0.25 * in.at(down, x);
      }
    }
  } else {
    for (int y = 0; y < in.height; ++y) {
      for (int x = 0; x < in.width; ++x) {
        const int left = std::max(x - 1, 0);
        const int right = std::min(x + 1, in.width - 1);
        out.at(y, 2 * x) = 0.75 * in.at(y, x) + 0.25 * in.at(y, left);
        out.at(y, 2 * x + 1) = 0.75 * in.at(y, x) + 0.25 * in.at(y, right);
      }
    }
  }
  return out;
}

Plane replicate(const Plane& in, int fy, int fx) {
  Plane out;
  out.height = in.height * fy;
  out.width = in.width * fx;
  out.v.resize(static_cast<std::size_t>(out.height) * out.width);
  for (int y = 0; y < out.height; ++y)
    for (int x = 0; x < out.width; ++x) out.at(y, x) = in.at(y / fy, x / fx);
  return out;
}

double to_sample(double v) { return std::clamp(std::round(v), 0.0, 255.0); }

}  // namespace

std::vector<std::uint16_t> jpeg_quant_table(int quality, bool chroma) {
  if (quality < 1 || quality > 100) {
    throw Error(ErrorCode::InvalidQuality, "JPEG quality must be in [1, 100], got " + std::to_string(quality));
  }
  const int scale = quality < 50 ? 5000 / quality : 200 - 2 * quality;
  const auto& base = chroma ? kChromaBase : kLumaBase;
  std::vector<std::uint16_t> table(64);
  for (int i = 0; i < 64; ++i) {
    table[i] = static_cast<std::uint16_t>(std::clamp((base[i] * scale + 50) / 100, 1, 255));
  }
  return table;
}

std::vector<std::uint8_t> jpeg_encode(const Image& image, int quality) {
  const auto luma_q = jpeg_quant_table(quality, false);
  const auto chroma_q = jpeg_quant_table(quality, true);
  if (image.empty()) throw Error(ErrorCode::ShapeMismatch, "cannot encode an empty image");
  require_finite(image);

  const int h = image.height();
  const int w = image.width();
  const int mcu_rows = (h + 15) / 16;
  const int mcu_cols = (w + 15) / 16;
  Plane y{mcu_rows * 16, mcu_cols * 16, {}};
  y.v.resize(static_cast<std::size_t>(y.height) * y.width);
  Plane cb = y;
  Plane cr = y;
  for (int r = 0; r < y.height; ++r) {
    const int sr = std::min(r, h - 1);
    for (int c = 0; c < y.width; ++c) {
      const int sc = std::min(c, w - 1);
      const double R = to_byte(image.at(sr, sc, 0));
      const double G = to_byte(image.at(sr, sc, 1));
      const double B = to_byte(image.at(sr, sc, 2));
      y.at(r, c) = 0.299 * R + 0.587 * G + 0.114 * B;
      cb.at(r, c) = -0.168735892 * R - 0.331264108 * G + 0.5 * B + 128.0;
      cr.at(r, c) = 0.5 * R - 0.418687589 * G - 0.081312411 * B + 128.0;
    }
  }
  auto subsample = [](const Plane& full) {
    Plane half{full.height / 2, full.width / 2, {}};
    half.v.resize(static_cast<std::size_t>(half.height) * half.width);
    for (int r = 0; r < half.height; ++r)
      for (int c = 0; c < half.width; ++c)
        half.at(r, c) = 0.25 * (full.at(2 * r, 2 * c) + full.at(2 * r, 2 * c + 1) + full.at(2 * r + 1, 2 * c) +
                                full.at(2 * r + 1, 2 * c + 1));
    return half;
  };
  const Plane cb2 = subsample(cb);
  const Plane cr2 = subsample(cr);

  std::vector<std::uint8_t> out = {0xFF, 0xD8, 0xFF, 0xE0};
  put_u16(out, 16);
  for (char ch : std::string("JFIF")) out.push_back(static_cast<std::uint8_t>(ch));
  out.insert(out.end(), {0x00, 0x01, 0x01, 0x00});
  put_u16(out, 1);
  put_u16(out, 1);
  out.insert(out.end(), {0x00, 0x00});

  for (int t = 0; t < 2; ++t) {
    const auto& table = t == 0 ? luma_q : chroma_q;
    out.insert(out.end(), {0xFF, 0xDB});
    put_u16(out, 67);
    out.push_back(static_cast<std::uint8_t>(t));
    for (int k = 0; k < 64; ++k) out.push_back(static_cast<std::uint8_t>(table[kZigzag[k]]));
  }

  out.insert(out.end(), {0xFF, 0xC0});
  put_u16(out, 17);
  out.push_back(8);
  put_u16(out, h);
  put_u16(out, w);
  out.push_back(3);
  out.insert(out.end(), {1, 0x22, 0, 2, 0x11, 1, 3, 0x11, 1});

  put_huffman_table(out, 0, 0, kDcLuma);
  put_huffman_table(out, 1, 0, kAcLuma);
  put_huffman_table(out, 0, 1, kDcChroma);
  put_huffman_table(out, 1, 1, kAcChroma);

  out.insert(out.end(), {0xFF, 0xDA});
  put_u16(out, 12);
  out.insert(out.end(), {3, 1, 0x00, 2, 0x11, 3, 0x11, 0, 63, 0});

  static const HuffmanCode dc_luma = build_encoder_table(kDcLuma);
  static const HuffmanCode ac_luma = build_encoder_table(kAcLuma);
  static const HuffmanCode dc_chroma = build_encoder_table(kDcChroma);
  static const HuffmanCode ac_chroma = build_encoder_table(kAcChroma);

  BitWriter bits(out);
  int dc_y = 0, dc_cb = 0, dc_cr = 0;
  for (int mr = 0; mr < mcu_rows; ++mr) {
    for (int mc = 0; mc < mcu_cols; ++mc) {
      for (int by = 0; by < 2; ++by)
        for (int bx = 0; bx < 2; ++bx)
          encode_block(y, mr * 16 + by * 8, mc * 16 + bx * 8, luma_q, dc_y, dc_luma, ac_luma, bits);
      encode_block(cb2, mr * 8, mc * 8, chroma_q, dc_cb, dc_chroma, ac_chroma, bits);
      encode_block(cr2, mr * 8, mc * 8, chroma_q, dc_cr, dc_chroma, ac_chroma, bits);
    }
  }
  bits.flush();
  out.insert(out.end(), {0xFF, 0xD9});
  return out;
}

Image jpeg_decode(std::span<const std::uint8_t> data) {
  auto fail = [](const std::string& what) { return Error(ErrorCode::IOFailure, "JPEG decode: " + what); };
  if (data.size() < 4 || data[0] != 0xFF || data[1] != 0xD8) throw fail("missing SOI marker");

  std::array<std::array<std::uint16_t, 64>, 4> quant{};
  std::array<HuffmanDecoder, 4> dc_tables;
  std::array<HuffmanDecoder, 4> ac_tables;
  std::vector<Component> comps;
  int height = 0, width = 0, restart_interval = 0;
  bool frame_seen = false;
  bool scan_done = false;

  std::size_t pos = 2;
  auto u16 = [&](std::size_t at) {
    if (at + 1 >= data.size()) throw fail("truncated segment");
    return (data[at] << 8) | data[at + 1];
  };

  while (pos + 4 <= data.size() && !scan_done) {
    if (data[pos] != 0xFF) throw fail("expected marker");
    const int marker = data[pos + 1];
    if (marker == 0xFF) {
      ++pos;
      continue;
    }
    if (marker == 0xD9) break;
    const int length = u16(pos + 2);
    const std::size_t seg = pos + 4;
    const std::size_t seg_end = pos + 2 + length;
    if (seg_end > data.size()) throw fail("segment overruns buffer");
    switch (marker) {
      case 0xDB: {
        std::size_t p = seg;
        while (p < seg_end) {
          const int precision = data[p] >> 4;
          const int id = data[p] & 0x0F;
          if (id > 3) throw fail("bad quantization table id");
          ++p;
          for (int k = 0; k < 64; ++k) {
            quant[id][kZigzag[k]] = precision ? static_cast<std::uint16_t>(u16(p)) : data[p];
            p += precision ? 2 : 1;
          }
        }
        break;
      }
      case 0xC4: {
        std::size_t p = seg;
        while (p < seg_end) {
          const int table_class = data[p] >> 4;
          const int id = data[p] & 0x0F;
          if (id > 3) throw fail("bad Huffman table id");
          std::array<std::uint8_t, 16> counts{};
          int total = 0;
          for (int i = 0; i < 16; ++i) total += counts[i] = data[p + 1 + i];
          p += 17;
          if (p + total > seg_end) throw fail("Huffman table overruns segment");
          std::vector<std::uint8_t> symbols(data.begin() + static_cast<std::ptrdiff_t>(p),
                                            data.begin() + static_cast<std::ptrdiff_t>(p + total));
          p += total;
          (table_class == 0 ? dc_tables : ac_tables)[id] = build_decoder_table(counts, std::move(symbols));
        }
        break;
      }
      case 0xC0:
      case 0xC1: {
        if (data[seg] != 8) throw fail("only 8-bit precision is supported");
        height = u16(seg + 1);
        width = u16(seg + 3);
        const int n = data[seg + 5];
        if (n != 1 && n != 3) throw fail("unsupported component count");
        for (int i = 0; i < n; ++i) {
          Component c;
          c.id = data[seg + 6 + 3 * i];
          c.h = data[seg + 7 + 3 * i] >> 4;
          c.v = data[seg + 7 + 3 * i] & 0x0F;
          c.quant = data[seg + 8 + 3 * i] & 0x03;
          if (c.h < 1 || c.h > 2 || c.v < 1 || c.v > 2) throw fail("unsupported sampling factors");
          comps.push_back(c);
        }
        frame_seen = true;
        break;
      }
      case 0xC2:
      case 0xC3:
      case 0xC9:
      case 0xCA:
      case 0xCB:
        throw fail("only baseline sequential JPEG is supported");
      case 0xDD:
        restart_interval = u16(seg);
        break;
      case 0xDA: {
        if (!frame_seen || height <= 0 || width <= 0) throw fail("scan before frame header");
        const int ns = data[seg];
        if (ns != static_cast<int>(comps.size())) throw fail("non-interleaved scans are not supported");
        for (int i = 0; i < ns; ++i) {
          const int id = data[seg + 1 + 2 * i];
          const int tables = data[seg + 2 + 2 * i];
          auto it = std::find_if(comps.begin(), comps.end(), [id](const Component& c) { return c.id == id; });
          if (it == comps.end()) throw fail("scan references unknown component");
          it->dc_table = (tables >> 4) & 0x03;
          it->ac_table = tables & 0x03;
        }
        int hmax = 1, vmax = 1;
        for (const auto& c : comps) {
          hmax = std::max(hmax, c.h);
          vmax = std::max(vmax, c.v);
        }
        const int mcu_w = 8 * hmax;
        const int mcu_h = 8 * vmax;
        const int mcus_x = (width + mcu_w - 1) / mcu_w;
        const int mcus_y = (height + mcu_h - 1) / mcu_h;
        for (auto& c : comps) {
          c.plane.width = mcus_x * c.h * 8;
          c.plane.height = mcus_y * c.v * 8;
          c.plane.v.assign(static_cast<std::size_t>(c.plane.width) * c.plane.height, 0.0);
        }
        BitReader reader(data, seg_end);
        int mcu_count = 0;
        double coef[64];
        double pixels[64];
        for (int my = 0; my < mcus_y; ++my) {
          for (int mx = 0; mx < mcus_x; ++mx) {
            if (restart_interval && mcu_count > 0 && mcu_count % restart_interval == 0) {
              reader.restart();
              for (auto& c : comps) c.prev_dc = 0;
            }
            ++mcu_count;
            for (auto& c : comps) {
              const auto& q = quant[c.quant];
              for (int by = 0; by < c.v; ++by) {
                for (int bx = 0; bx < c.h; ++bx) {
                  std::fill(coef, coef + 64, 0.0);
                  const int cat = reader.decode(dc_tables[c.dc_table]);
                  const int diff = cat ? extend(reader.bits(cat), cat) : 0;
                  c.prev_dc += diff;
                  coef[0] = static_cast<double>(c.prev_dc) * q[0];
                  for (int k = 1; k < 64;) {
                    const int symbol = reader.decode(ac_tables[c.ac_table]);
                    const int run = symbol >> 4;
                    const int size = symbol & 0x0F;
                    if (size == 0) {
                      if (run == 15) {
                        k += 16;
                        continue;
                      }
                      break;
                    }
                    k += run;
                    if (k > 63) throw fail("coefficient index overflow");
                    const int natural = kZigzag[k];
                    coef[natural] = static_cast<double>(extend(reader.bits(size), size)) * q[natural];
                    ++k;
                  }
                  idct8x8(coef, pixels);
                  const int oy = (my * c.v + by) * 8;
                  const int ox = (mx * c.h + bx) * 8;
                  for (int y = 0; y < 8; ++y)
                    for (int x = 0; x < 8; ++x) c.plane.at(oy + y, ox + x) = to_sample(pixels[y * 8 + x] + 128.0);
                }
              }
            }
          }
        }
        pos = reader.position();
        scan_done = true;
        continue;
      }
      default:
        break;  // APPn, COM and other segments are skipped
    }
    pos = seg_end;
  }
  if (!scan_done) throw fail("no image data");

  int hmax = 1, vmax = 1;
  for (const auto& c : comps) {
    hmax = std::max(hmax, c.h);
    vmax = std::max(vmax, c.v);
  }
  std::vector<Plane> full;
  for (const auto& c : comps) {
    Plane p = c.plane;
    const int fy = vmax / c.v;
    const int fx = hmax / c.h;
    if (fx == 2) p = upsample_axis(p, false);
    if (fy == 2) p = upsample_axis(p, true);
    if ((fx != 1 && fx != 2) || (fy != 1 && fy != 2)) p = replicate(c.plane, fy, fx);
    full.push_back(std::move(p));
  }

  Image out(height, width);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      if (full.size() == 1) {
        const float g = static_cast<float>(full[0].at(y, x) / 255.0);
        out.at(y, x, 0) = out.at(y, x, 1) = out.at(y, x, 2) = g;
        continue;
      }
      const double Y = full[0].at(y, x);
      const double Cb = full[1].at(y, x) - 128.0;
      const double Cr = full[2].at(y, x) - 128.0;
      out.at(y, x, 0) = static_cast<float>(to_sample(Y + 1.402 * Cr) / 255.0);
      out.at(y, x, 1) = static_cast<float>(to_sample(Y - 0.344136286 * Cb - 0.714136286 * Cr) / 255.0);
      out.at(y, x, 2) = static_cast<float>(to_sample(Y + 1.772 * Cb) / 255.0);
    }
  }
  return out;
}

Image jpeg_roundtrip(const Image& image, const JpegSpec& spec) {
  if (spec.quality < 1 || spec.quality > 100) {
    throw Error(ErrorCode::InvalidQuality, "JPEG quality must be in [1, 100], got " + std::to_string(spec.quality));
  }
  const Image padded = pad_reflect(image, 16, 16, 2);
  const Image decoded = jpeg_decode(jpeg_encode(padded, spec.quality));
  if (padded.same_shape(image)) return decoded;
  return crop(decoded, 0, 0, image.height(), image.width());
}

}  // namespace fforge
