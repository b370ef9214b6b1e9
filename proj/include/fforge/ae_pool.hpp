#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "fforge/autoencoder.hpp"
#include "fforge/image.hpp"
#include "fforge/rng.hpp"

namespace fforge {

/// Number of distinct points in the grammar: 2 families x 4 depths x
/// 3 kernels x 4 upsamplings x 2 losses.
inline constexpr int kGrammarSize = 192;

/// The first `limit` grammar points in increasing complexity, each with its
/// own threshold T ~ U[0.03, 0.25] and init seed derived from `seed`.
std::vector<AutoencoderConfig> enumerate_configs(int limit, std::uint64_t seed);

struct MemberRecord {
  AutoencoderConfig config;
  int epochs_run = 0;
  double heldout_mae = 0.0;
  bool accepted = false;
  std::string checkpoint;  // file name relative to the manifest
  std::uint64_t checksum = 0;
};

struct PoolManifest {
  int pool_size = 0;
  std::uint64_t global_seed = 0;
  std::string created_at;  // UTC, ISO 8601
  std::vector<MemberRecord> members;
  std::vector<MemberRecord> rejected;
};

std::string manifest_to_json(const PoolManifest& manifest, bool with_timestamp = true);
PoolManifest manifest_from_json(const std::string& text);
/// Checksum of the manifest content without the build timestamp.
std::uint64_t manifest_checksum(const PoolManifest& manifest);

/// Trained, accepted autoencoders in manifest order. Read-only after
/// construction, so one pool can serve concurrent callers.
class AutoencoderPool {
 public:
  AutoencoderPool() = default;
  AutoencoderPool(PoolManifest manifest, std::vector<std::shared_ptr<const Autoencoder>> models);

  /// Accepts the manifest file or the directory holding manifest.json.
  static AutoencoderPool load(const std::filesystem::path& path);
  /// Writes member_NNN.ffnn checkpoints and manifest.json into `dir`.
  void save(const std::filesystem::path& dir);

  const PoolManifest& manifest() const noexcept { return manifest_; }
  int size() const noexcept { return static_cast<int>(models_.size()); }
  const Autoencoder& member(int index) const;

 private:
  PoolManifest manifest_;
  std::vector<std::shared_ptr<const Autoencoder>> models_;
};

struct PoolBuildOptions {
  AeTrainOptions train;
  int workers = 1;  // candidates trained concurrently; results do not depend on it
  std::function<void(const std::string&)> log;
};

/// Walks the grammar in complexity order, training candidates until
/// `pool_size` are accepted. Families are capped at ceil(pool_size / 2)
/// each, which keeps them within one of each other.
AutoencoderPool build_pool(int pool_size, std::span<const Image> train_images, std::span<const Image> val_images,
                           std::uint64_t seed, const PoolBuildOptions& options = {});

struct ChainSpec {
  std::vector<int> member_indices;  // applied in order
};

struct ChainSelection {
  enum class Mode { FullSet, RandomSubset };
  Mode mode = Mode::RandomSubset;
  int max_len = 3;
};

/// FullSet: every member in pool order. RandomSubset: length uniform in
/// [1, min(max_len, pool_size)], distinct members drawn uniformly.
ChainSpec draw_chain(const ChainSelection& selection, int pool_size, Rng& rng);

/// Throws UnknownMember for out-of-range indices, InvalidParams for repeats.
void validate_chain(const ChainSpec& chain, int pool_size);

/// x_k = f_k(... f_1(x)), each step clamped to [0, 1].
Image chain_apply(const Image& image, const AutoencoderPool& pool, const ChainSpec& chain);
QualityStats fingerprint_residual(const Image& image, const AutoencoderPool& pool, const ChainSpec& chain);

}  // namespace fforge
