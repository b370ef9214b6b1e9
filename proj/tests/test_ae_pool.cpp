#include <doctest.h>

#include <fstream>
#include <map>
#include <set>

#include "fforge/ae_pool.hpp"
#include "fforge/error.hpp"
#include "fforge/synthdata.hpp"
#include "test_util.hpp"

using namespace fforge;

namespace {

struct Frames {
  std::vector<Image> train, val, heldout;
};

// Real synthetic frames, downsized for speed.
Frames frames(int size, int n_train, int n_val) {
  SynthConfig cfg;
  cfg.seed = 21;
  cfg.image_size = size;
  Frames f;
  for (int i = 0; i < n_train; ++i) f.train.push_back(gen_real(cfg, i / 8, i % 8));
  for (int i = 0; i < n_val; ++i) f.val.push_back(gen_real(cfg, 100 + i / 8, i % 8));
  for (int i = 0; i < 8; ++i) f.heldout.push_back(gen_real(cfg, 200 + i, 3));
  return f;
}

const Frames& small_frames() {
  static const Frames f = frames(32, 32, 8);
  return f;
}

const AutoencoderPool& small_pool() {
  static const AutoencoderPool pool = [] {
    const Frames& f = small_frames();
    return build_pool(4, f.train, f.val, 5);
  }();
  return pool;
}

}  // namespace

TEST_CASE("grammar enumeration") {
  const auto all = enumerate_configs(1000, 1);
  REQUIRE(all.size() == kGrammarSize);
  REQUIRE(kGrammarSize == 2 * 4 * 3 * 4 * 2);
  const AutoencoderConfig& first = all.front();
  CHECK(first.family == AeFamily::ConvAE);
  CHECK(first.depth == 6);
  CHECK(first.kernel == 3);
  CHECK(first.upsampling == Upsampling::Nearest);
  CHECK(first.loss == ReconLoss::MAE);
  CHECK(all[1].family == AeFamily::UNet);

  std::set<std::string> names;
  for (std::size_t i = 0; i < all.size(); ++i) {
    names.insert(describe(all[i]));
    CHECK(all[i].threshold >= 0.03);
    CHECK(all[i].threshold <= 0.25);
    CHECK_NOTHROW(validate(all[i]));
    if (i + 1 < all.size()) CHECK(complexity_key(all[i]) <= complexity_key(all[i + 1]));
  }
  CHECK(names.size() == 192);
  CHECK(all.back().depth == 12);
  CHECK(all.back().upsampling == Upsampling::ConvTranspose);

  const auto head = enumerate_configs(5, 1);
  REQUIRE(head.size() == 5);
  for (int i = 0; i < 5; ++i) CHECK(head[i] == all[i]);
  CHECK(enumerate_configs(5, 2)[0].threshold != head[0].threshold);
  CHECK(testing::error_code([] { enumerate_configs(0, 1); }) == ErrorCode::InvalidParams);
}

TEST_CASE("config validation") {
  AutoencoderConfig c;
  c.depth = 7;
  CHECK(testing::error_code([&] { validate(c); }) == ErrorCode::InvalidConfig);
  c.depth = 8;
  c.kernel = 4;
  CHECK(testing::error_code([&] { validate(c); }) == ErrorCode::InvalidConfig);
  c.kernel = 5;
  c.threshold = 0.3;
  CHECK(testing::error_code([&] { validate(c); }) == ErrorCode::InvalidConfig);
  c.threshold = 0.1;
  CHECK_NOTHROW(validate(c));
  CHECK(describe(c) == "ConvAE-d8-k5-Nearest-MAE");
  CHECK(parse_upsampling("ConvTranspose") == Upsampling::ConvTranspose);
}

TEST_CASE("every grammar point builds and preserves shape") {
  const Image img = small_frames().train.front();
  const Image odd = crop(img, 0, 0, 27, 30);
  for (const auto& config : enumerate_configs(kGrammarSize, 3)) {
    if (config.kernel != 3 && config.depth != 12) continue;
    const Autoencoder ae(config);
    CAPTURE(describe(config));
    const Image out = ae.reconstruct(odd);
    CHECK(out.same_shape(odd));
    for (float v : out.data()) {
      REQUIRE(v >= 0.0f);
      REQUIRE(v <= 1.0f);
    }
  }
  nn::Tape tape(false);
  const Autoencoder ae(AutoencoderConfig{});
  CHECK(testing::error_code([&] { ae.forward(tape, tape.input(nn::Tensor({1, 3, 12, 12}))); }) == ErrorCode::ShapeMismatch);
}

TEST_CASE("U-Nets carry more parameters than plain autoencoders") {
  AutoencoderConfig c;
  const Autoencoder plain(c);
  c.family = AeFamily::UNet;
  const Autoencoder unet(c);
  auto count = [](const Autoencoder& ae) {
    std::size_t n = 0;
    for (const auto* p : ae.parameters()) n += p->value.size();
    return n;
  };
  CHECK(count(unet) > count(plain));
}

TEST_CASE("a shallow model with a loose threshold stops early") {
  const Frames& f = small_frames();
  AutoencoderConfig c = enumerate_configs(1, 0).front();
  c.threshold = 0.25;
  const TrainedAutoencoder t = train_autoencoder(c, f.train, f.val);
  MESSAGE("epochs " << t.epochs_run << " heldout_mae " << t.heldout_mae);
  CHECK(t.epochs_run <= 10);
  CHECK(t.heldout_mae < 0.25);
  CHECK(t.accepted);
  CHECK(t.epochs_run == 1);  // regression fixture

  const TrainedAutoencoder again = train_autoencoder(c, f.train, f.val);
  CHECK(again.checksum == t.checksum);
  CHECK(again.epochs_run == t.epochs_run);
  CHECK(again.heldout_mae == t.heldout_mae);
}

TEST_CASE("a tight threshold runs to the epoch cap") {
  const Frames& f = small_frames();
  AutoencoderConfig c = enumerate_configs(1, 0).front();
  c.threshold = 0.03;
  AeTrainOptions opt;
  opt.max_epochs = 3;
  const TrainedAutoencoder t = train_autoencoder(c, f.train, f.val, opt);
  CHECK(t.epochs_run == 3);
  opt.max_epochs = 51;
  CHECK(testing::error_code([&] { train_autoencoder(c, f.train, f.val, opt); }) == ErrorCode::InvalidConfig);
  CHECK(testing::error_code([&] { train_autoencoder(c, std::span(f.train).first(4), f.val); }) == ErrorCode::EmptyDataset);
}

TEST_CASE("pool build balances families and accepts only the band") {
  const AutoencoderPool& pool = small_pool();
  REQUIRE(pool.size() == 4);
  const PoolManifest& m = pool.manifest();
  CHECK(m.pool_size == 4);
  int unet = 0;
  for (const auto& r : m.members) {
    CHECK(r.accepted);
    CHECK(r.heldout_mae > 0.001);
    CHECK(r.heldout_mae < 0.30);
    CHECK(r.epochs_run <= 50);
    unet += r.config.family == AeFamily::UNet;
  }
  CHECK(unet == 2);
  CHECK(testing::error_code([&] { pool.member(4); }) == ErrorCode::UnknownMember);
  CHECK(testing::error_code([&] { build_pool(0, small_frames().train, small_frames().val, 1); }) == ErrorCode::InvalidParams);
}

TEST_CASE("pool build is reproducible and independent of the worker count") {
  const Frames f = frames(16, 16, 4);
  PoolBuildOptions opt;
  opt.train.max_epochs = 2;
  const AutoencoderPool a = build_pool(3, f.train, f.val, 8, opt);
  opt.workers = 3;
  const AutoencoderPool b = build_pool(3, f.train, f.val, 8, opt);
  CHECK(manifest_checksum(a.manifest()) == manifest_checksum(b.manifest()));
  CHECK(manifest_to_json(a.manifest(), false) == manifest_to_json(b.manifest(), false));
  int unet = 0;
  for (const auto& r : a.manifest().members) unet += r.config.family == AeFamily::UNet;
  CHECK((unet == 1 || unet == 2));
}

TEST_CASE("rejected candidates are logged and can exhaust the grammar") {
  Frames f = frames(16, 8, 4);
  for (auto* set : {&f.train, &f.val})
    for (Image& img : *set) img = resize_bilinear(img, 8, 8);
  PoolBuildOptions opt;
  opt.train.max_epochs = 1;
  opt.train.min_heldout_mae = 0.99;  // nothing qualifies
  std::vector<std::string> lines;
  opt.log = [&](const std::string& s) { lines.push_back(s); };
  CHECK(testing::error_code([&] { build_pool(1, f.train, f.val, 2, opt); }) == ErrorCode::PoolExhausted);
  CHECK(lines.size() == kGrammarSize);
  CHECK(lines.front().rfind("rejected", 0) == 0);
}

TEST_CASE("pool persistence round trips bit-exactly") {
  testing::TempDir dir;
  AutoencoderPool pool = small_pool();
  pool.save(dir.path() / "pool");
  const AutoencoderPool loaded = AutoencoderPool::load(dir.path() / "pool");
  REQUIRE(loaded.size() == pool.size());
  CHECK(manifest_checksum(loaded.manifest()) == manifest_checksum(pool.manifest()));
  CHECK(loaded.manifest().created_at == pool.manifest().created_at);
  const Image& img = small_frames().heldout.front();
  for (int i = 0; i < pool.size(); ++i) {
    CHECK(loaded.member(i).checksum() == pool.member(i).checksum());
    CHECK(loaded.member(i).reconstruct(img) == pool.member(i).reconstruct(img));
  }
  CHECK(AutoencoderPool::load(dir.path() / "pool" / "manifest.json").size() == pool.size());

  // A tampered checkpoint is caught by its checksum.
  {
    std::fstream blob(dir.path() / "pool" / "member_001.ffnn", std::ios::in | std::ios::out | std::ios::binary);
    blob.seekp(-2, std::ios::end);
    blob.put('\x7f');
  }
  CHECK(testing::error_code([&] { AutoencoderPool::load(dir.path() / "pool"); }) == ErrorCode::IOFailure);
  CHECK(testing::error_code([&] { AutoencoderPool::load(dir.path() / "absent"); }) == ErrorCode::IOFailure);
}

TEST_CASE("chain composition") {
  const AutoencoderPool& pool = small_pool();
  const Image& x = small_frames().heldout[1];
  CHECK(chain_apply(x, pool, ChainSpec{}) == x);
  CHECK(chain_apply(x, pool, ChainSpec{{2}}) == pool.member(2).reconstruct(x));
  CHECK(chain_apply(x, pool, ChainSpec{{0, 3}}) == pool.member(3).reconstruct(pool.member(0).reconstruct(x)));
  CHECK(chain_apply(x, pool, ChainSpec{{1, 0, 2}}) ==
        chain_apply(chain_apply(x, pool, ChainSpec{{1, 0}}), pool, ChainSpec{{2}}));
  CHECK(testing::error_code([&] { chain_apply(x, pool, ChainSpec{{0, 4}}); }) == ErrorCode::UnknownMember);
  CHECK(testing::error_code([&] { chain_apply(x, pool, ChainSpec{{-1}}); }) == ErrorCode::UnknownMember);
  CHECK(testing::error_code([&] { chain_apply(x, pool, ChainSpec{{1, 1}}); }) == ErrorCode::InvalidParams);
}

TEST_CASE("fingerprint residuals") {
  const AutoencoderPool& pool = small_pool();
  CHECK(fingerprint_residual(small_frames().heldout[0], pool, ChainSpec{}).mae == 0.0);
  for (int i = 0; i < pool.size(); ++i) {
    double total = 0.0;
    for (const Image& img : small_frames().heldout) total += fingerprint_residual(img, pool, ChainSpec{{i}}).mae;
    const double mean = total / small_frames().heldout.size();
    CAPTURE(i);
    CHECK(mean > 0.001);
    CHECK(mean < 0.45);
  }
  CHECK(fingerprint_residual(small_frames().heldout[0], pool, ChainSpec{{0, 1}}).mae >= 0.0);
}

TEST_CASE("chain selection") {
  Rng rng(4);
  const ChainSpec full = draw_chain({ChainSelection::Mode::FullSet, 3}, 5, rng);
  CHECK(full.member_indices == std::vector<int>{0, 1, 2, 3, 4});
  std::map<int, int> lengths;
  std::map<int, int> members;
  for (int i = 0; i < 3000; ++i) {
    const ChainSpec c = draw_chain({}, 8, rng);
    CHECK_NOTHROW(validate_chain(c, 8));
    ++lengths[static_cast<int>(c.member_indices.size())];
    for (int m : c.member_indices) ++members[m];
  }
  CHECK(lengths.size() == 3);
  for (const auto& [len, n] : lengths) {
    CHECK(len >= 1);
    CHECK(len <= 3);
    CHECK(n == doctest::Approx(1000).epsilon(0.1));
  }
  CHECK(members.size() == 8);
  for (const auto& [m, n] : members) CHECK(n == doctest::Approx(6000.0 / 8).epsilon(0.15));
  CHECK(draw_chain({ChainSelection::Mode::RandomSubset, 5}, 2, rng).member_indices.size() <= 2);
  CHECK(draw_chain({}, 0, rng).member_indices.empty());
}
