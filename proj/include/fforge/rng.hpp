#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <string_view>

namespace fforge {

/// Key component for deriving independent random substreams.
class StreamKey {
 public:
  StreamKey(std::uint64_t v) : value_(v) {}  // NOLINT(google-explicit-constructor)
  StreamKey(int v) : value_(static_cast<std::uint64_t>(static_cast<std::int64_t>(v))) {}  // NOLINT
  StreamKey(std::string_view s);  // NOLINT(google-explicit-constructor)
  StreamKey(const char* s) : StreamKey(std::string_view(s)) {}  // NOLINT

  std::uint64_t value() const noexcept { return value_; }

 private:
  std::uint64_t value_;
};

std::uint64_t mix_keys(std::uint64_t seed, std::initializer_list<StreamKey> keys);

/// Deterministic random source. Distribution sampling is implemented here
/// rather than through <random> distributions so streams are identical
/// across standard library implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  /// Substream fully determined by (seed, keys...).
  static Rng stream(std::uint64_t seed, std::initializer_list<StreamKey> keys) {
    return Rng(mix_keys(seed, keys));
  }

  std::uint64_t next_u64() { return engine_(); }
  /// Uniform in [0, 1).
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [lo, hi].
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);
  double normal();
  bool bernoulli(double p) { return uniform() < p; }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace fforge
