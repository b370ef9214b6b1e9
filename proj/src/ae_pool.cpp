#include "fforge/ae_pool.hpp"

#include <algorithm>
#include <chrono>
#include <ctime>
#include <fstream>
#include <future>
#include <set>
#include <sstream>

#include <json.hpp>

#include "fforge/error.hpp"

namespace fforge {

namespace {

using nlohmann::json;

constexpr const char* kManifestFormat = "fforge-pool/1";
constexpr const char* kManifestName = "manifest.json";

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::uint64_t parse_hex64(const std::string& s) {
  std::size_t used = 0;
  const std::uint64_t v = std::stoull(s, &used, 16);
  if (used != s.size()) throw std::invalid_argument("bad hex");
  return v;
}

json config_json(const AutoencoderConfig& c) {
  return {{"family", to_string(c.family)}, {"depth", c.depth},     {"kernel", c.kernel},
          {"upsampling", to_string(c.upsampling)}, {"loss", to_string(c.loss)}, {"threshold", c.threshold},
          {"seed", c.seed}};
}

AutoencoderConfig config_from_json(const json& j) {
  AutoencoderConfig c;
  c.family = parse_family(j.at("family").get<std::string>());
  c.depth = j.at("depth").get<int>();
  c.kernel = j.at("kernel").get<int>();
  c.upsampling = parse_upsampling(j.at("upsampling").get<std::string>());
  c.loss = parse_loss(j.at("loss").get<std::string>());
  c.threshold = j.at("threshold").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  validate(c);
  return c;
}

json record_json(const MemberRecord& r) {
  json j{{"name", describe(r.config)},     {"config", config_json(r.config)}, {"epochs_run", r.epochs_run},
         {"heldout_mae", r.heldout_mae}, {"accepted", r.accepted}};
  if (!r.checkpoint.empty()) {
    j["checkpoint"] = r.checkpoint;
    j["checksum"] = hex64(r.checksum);
  }
  return j;
}

MemberRecord record_from_json(const json& j) {
  MemberRecord r;
  r.config = config_from_json(j.at("config"));
  r.epochs_run = j.at("epochs_run").get<int>();
  r.heldout_mae = j.at("heldout_mae").get<double>();
  r.accepted = j.at("accepted").get<bool>();
  if (j.contains("checkpoint")) {
    r.checkpoint = j.at("checkpoint").get<std::string>();
    r.checksum = parse_hex64(j.at("checksum").get<std::string>());
  }
  return r;
}

MemberRecord make_record(const TrainedAutoencoder& t) {
  return MemberRecord{t.config, t.epochs_run, t.heldout_mae, t.accepted, {}, t.checksum};
}

}  // namespace

std::vector<AutoencoderConfig> enumerate_configs(int limit, std::uint64_t seed) {
  if (limit < 1) throw Error(ErrorCode::InvalidParams, "enumerate_configs needs limit >= 1");
  std::vector<AutoencoderConfig> grammar;
  for (int depth = kMinDepth; depth <= kMaxDepth; depth += 2)
    for (int kernel : {3, 5, 7})
      for (auto up : {Upsampling::Nearest, Upsampling::Bilinear, Upsampling::Bicubic, Upsampling::ConvTranspose})
        for (auto loss : {ReconLoss::MAE, ReconLoss::MSE})
          for (auto family : {AeFamily::ConvAE, AeFamily::UNet})
            grammar.push_back(AutoencoderConfig{family, depth, kernel, up, loss, 0.0, 0});
  // Already in key order; the sort documents and enforces it.
  std::stable_sort(grammar.begin(), grammar.end(),
                   [](const auto& a, const auto& b) { return complexity_key(a) < complexity_key(b); });
  grammar.resize(std::min<std::size_t>(grammar.size(), static_cast<std::size_t>(limit)));
  for (std::size_t i = 0; i < grammar.size(); ++i) {
    const int idx = static_cast<int>(i);
    grammar[i].threshold = Rng::stream(seed, {"ae-threshold", idx}).uniform(kMinThreshold, kMaxThreshold);
    grammar[i].seed = mix_keys(seed, {"ae-seed", idx});
  }
  return grammar;
}

std::string manifest_to_json(const PoolManifest& m, bool with_timestamp) {
  json j{{"format", kManifestFormat}, {"pool_size", m.pool_size}, {"global_seed", m.global_seed}};
  if (with_timestamp) j["created_at"] = m.created_at;
  j["members"] = json::array();
  for (const auto& r : m.members) j["members"].push_back(record_json(r));
  j["rejected"] = json::array();
  for (const auto& r : m.rejected) j["rejected"].push_back(record_json(r));
  return j.dump(2) + "\n";
}

PoolManifest manifest_from_json(const std::string& text) {
  try {
    const json j = json::parse(text);
    if (j.at("format").get<std::string>() != kManifestFormat) {
      throw Error(ErrorCode::IOFailure, "unsupported pool manifest format");
    }
    PoolManifest m;
    m.pool_size = j.at("pool_size").get<int>();
    m.global_seed = j.at("global_seed").get<std::uint64_t>();
    m.created_at = j.value("created_at", "");
    for (const auto& r : j.at("members")) m.members.push_back(record_from_json(r));
    for (const auto& r : j.at("rejected")) m.rejected.push_back(record_from_json(r));
    if (m.pool_size != static_cast<int>(m.members.size())) {
      throw Error(ErrorCode::IOFailure, "manifest pool_size does not match its member list");
    }
    for (const auto& r : m.members) {
      if (!r.accepted || r.checkpoint.empty()) throw Error(ErrorCode::IOFailure, "manifest lists an unusable member");
    }
    return m;
  } catch (const Error&) {
    throw;
  } catch (const std::exception& e) {
    throw Error(ErrorCode::IOFailure, std::string("malformed pool manifest: ") + e.what());
  }
}

std::uint64_t manifest_checksum(const PoolManifest& m) {
  const std::string text = manifest_to_json(m, false);
  return fnv1a64(std::as_bytes(std::span(text.data(), text.size())));
}

AutoencoderPool::AutoencoderPool(PoolManifest manifest, std::vector<std::shared_ptr<const Autoencoder>> models)
    : manifest_(std::move(manifest)), models_(std::move(models)) {
  if (manifest_.members.size() != models_.size()) {
    throw Error(ErrorCode::InvalidParams, "pool manifest and model list differ in length");
  }
  manifest_.pool_size = static_cast<int>(models_.size());
}

const Autoencoder& AutoencoderPool::member(int index) const {
  if (index < 0 || index >= size()) {
    throw Error(ErrorCode::UnknownMember,
                "member " + std::to_string(index) + " not in pool of size " + std::to_string(size()));
  }
  return *models_[index];
}

void AutoencoderPool::save(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::IOFailure, "cannot create " + dir.string() + ": " + ec.message());
  for (int i = 0; i < size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "member_%03d.ffnn", i);
    std::ofstream out(dir / name, std::ios::binary);
    models_[i]->save(out);
    out.flush();
    if (!out) throw Error(ErrorCode::IOFailure, "cannot write " + (dir / name).string());
    manifest_.members[i].checkpoint = name;
    manifest_.members[i].checksum = models_[i]->checksum();
  }
  std::ofstream out(dir / kManifestName);
  out << manifest_to_json(manifest_);
  out.flush();
  if (!out) throw Error(ErrorCode::IOFailure, "cannot write " + (dir / kManifestName).string());
}

AutoencoderPool AutoencoderPool::load(const std::filesystem::path& path) {
  const auto manifest_path = std::filesystem::is_directory(path) ? path / kManifestName : path;
  std::ifstream in(manifest_path);
  if (!in) throw Error(ErrorCode::IOFailure, "cannot read pool manifest " + manifest_path.string());
  std::stringstream text;
  text << in.rdbuf();
  PoolManifest manifest = manifest_from_json(text.str());
  std::vector<std::shared_ptr<const Autoencoder>> models;
  for (const auto& r : manifest.members) {
    auto model = std::make_shared<Autoencoder>(r.config);
    const auto file = manifest_path.parent_path() / r.checkpoint;
    std::ifstream blob(file, std::ios::binary);
    if (!blob) throw Error(ErrorCode::IOFailure, "cannot read checkpoint " + file.string());
    model->load(blob);
    if (model->checksum() != r.checksum) {
      throw Error(ErrorCode::IOFailure, "checksum mismatch for " + file.string());
    }
    models.push_back(std::move(model));
  }
  return AutoencoderPool(std::move(manifest), std::move(models));
}

AutoencoderPool build_pool(int pool_size, std::span<const Image> train_images, std::span<const Image> val_images,
                           std::uint64_t seed, const PoolBuildOptions& options) {
  if (pool_size < 1) throw Error(ErrorCode::InvalidParams, "pool_size must be >= 1");
  const int workers = std::max(1, options.workers);
  const auto log = [&](const std::string& msg) {
    if (options.log) options.log(msg);
  };
  const std::vector<AutoencoderConfig> grammar = enumerate_configs(kGrammarSize, seed);
  const int family_cap = (pool_size + 1) / 2;

  PoolManifest manifest;
  manifest.global_seed = seed;
  std::vector<std::shared_ptr<const Autoencoder>> models;
  int per_family[2] = {0, 0};
  const auto family_full = [&](const AutoencoderConfig& c) { return per_family[static_cast<int>(c.family)] >= family_cap; };

  // Candidates are trained in waves and then replayed in grammar order, so
  // the outcome is the sequential one whatever the worker count.
  std::size_t next = 0;
  while (static_cast<int>(models.size()) < pool_size) {
    std::vector<std::size_t> wave;
    for (; next < grammar.size() && static_cast<int>(wave.size()) < workers; ++next) {
      if (!family_full(grammar[next])) wave.push_back(next);
    }
    if (wave.empty()) {
      throw Error(ErrorCode::PoolExhausted, "grammar exhausted with " + std::to_string(models.size()) + " of " +
                                                std::to_string(pool_size) + " members accepted");
    }
    std::vector<std::future<TrainedAutoencoder>> jobs;
    for (std::size_t idx : wave) {
      jobs.push_back(std::async(workers > 1 ? std::launch::async : std::launch::deferred,
                                [&, idx] { return train_autoencoder(grammar[idx], train_images, val_images, options.train); }));
    }
    for (std::size_t w = 0; w < wave.size(); ++w) {
      TrainedAutoencoder t = jobs[w].get();
      if (static_cast<int>(models.size()) >= pool_size || family_full(t.config)) continue;
      const std::string line = describe(t.config) + " T=" + std::to_string(t.config.threshold) +
                               " epochs=" + std::to_string(t.epochs_run) + " heldout_mae=" +
                               std::to_string(t.heldout_mae);
      if (t.accepted) {
        log("accepted " + line);
        ++per_family[static_cast<int>(t.config.family)];
        manifest.members.push_back(make_record(t));
        models.push_back(std::move(t.model));
      } else {
        log("rejected " + line);
        manifest.rejected.push_back(make_record(t));
      }
    }
  }
  manifest.created_at = utc_now();
  return AutoencoderPool(std::move(manifest), std::move(models));
}

ChainSpec draw_chain(const ChainSelection& selection, int pool_size, Rng& rng) {
  if (pool_size < 0) throw Error(ErrorCode::InvalidParams, "negative pool size");
  ChainSpec chain;
  if (selection.mode == ChainSelection::Mode::FullSet) {
    for (int i = 0; i < pool_size; ++i) chain.member_indices.push_back(i);
    return chain;
  }
  if (selection.max_len < 1) throw Error(ErrorCode::InvalidParams, "chain max_len must be >= 1");
  if (pool_size == 0) return chain;
  const int len = static_cast<int>(rng.uniform_int(1, std::min(selection.max_len, pool_size)));
  std::vector<int> ids(pool_size);
  for (int i = 0; i < pool_size; ++i) ids[i] = i;
  for (int i = 0; i < len; ++i) {
    std::swap(ids[i], ids[static_cast<std::size_t>(rng.uniform_int(i, pool_size - 1))]);
    chain.member_indices.push_back(ids[i]);
  }
  return chain;
}

void validate_chain(const ChainSpec& chain, int pool_size) {
  std::set<int> seen;
  for (int i : chain.member_indices) {
    if (i < 0 || i >= pool_size) {
      throw Error(ErrorCode::UnknownMember,
                  "chain index " + std::to_string(i) + " outside pool of size " + std::to_string(pool_size));
    }
    if (!seen.insert(i).second) throw Error(ErrorCode::InvalidParams, "chain repeats member " + std::to_string(i));
  }
}

Image chain_apply(const Image& image, const AutoencoderPool& pool, const ChainSpec& chain) {
  validate_chain(chain, pool.size());
  require_finite(image);
  Image x = image;
  for (int i : chain.member_indices) x = pool.member(i).reconstruct(x);
  return x;
}

QualityStats fingerprint_residual(const Image& image, const AutoencoderPool& pool, const ChainSpec& chain) {
  return quality_stats(image, chain_apply(image, pool, chain));
}

}  // namespace fforge
