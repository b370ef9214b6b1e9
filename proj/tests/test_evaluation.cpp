#include <doctest.h>

#include <cmath>
#include <fstream>
#include <set>

#include "fforge/evaluation.hpp"
#include "test_util.hpp"

using namespace fforge;

namespace {

double auc_of(const std::vector<double>& real, const std::vector<double>& fake) {
  std::vector<double> s(real);
  s.insert(s.end(), fake.begin(), fake.end());
  std::vector<Label> l(real.size(), Label::Real);
  l.insert(l.end(), fake.size(), Label::Fake);
  return roc_auc(s, l);
}

// Four videos per class, 6 frames each. Class means differ by `gap`.
FrameSet toy_frames(double gap, std::uint64_t seed) {
  FrameSet set;
  Rng rng(seed);
  for (int c = 0; c < 2; ++c) {
    for (int v = 0; v < 4; ++v) {
      for (int f = 5; f >= 0; --f) {  // deliberately out of order
        Image img(16, 16);
        const double base = 0.5 + (c ? gap / 2 : -gap / 2);
        for (float& p : img.data()) p = static_cast<float>(base + rng.uniform(-0.005, 0.005));
        set.samples.push_back({img, c ? Label::Fake : Label::Real});
        set.video_ids.push_back((c ? "fake_" : "real_") + std::to_string(v));
        set.frame_idx.push_back(f);
      }
    }
  }
  return set;
}

LinearScorer mean_scorer(double scale = 1.0) {
  return LinearScorer(16, 16, std::vector<float>(16 * 16 * 3, static_cast<float>(scale / (16 * 16 * 3))), -0.5 * scale);
}

}  // namespace

TEST_CASE("AUC worked examples") {
  CHECK(auc_of({0.1, 0.2}, {0.8, 0.9}) == 1.0);
  CHECK(auc_of({0.2, 0.6}, {0.5, 0.9}) == 0.75);
  CHECK(auc_of({0.5}, {0.5}) == 0.5);
  CHECK(auc_of({0.8, 0.9}, {0.1, 0.2}) == 0.0);
}

TEST_CASE("AUC agrees with brute-force pair counting") {
  Rng rng(42);
  for (int trial = 0; trial < 100; ++trial) {
    const auto nr = rng.uniform_int(1, 25), nf = rng.uniform_int(1, 25);
    std::vector<double> real, fake;
    // Coarse rounding forces plenty of ties.
    for (int i = 0; i < nr; ++i) real.push_back(std::round(rng.normal() * 4) / 4);
    for (int i = 0; i < nf; ++i) fake.push_back(std::round((rng.normal() + 0.5) * 4) / 4);
    const double ref = testing::pair_auc(fake, real);
    CHECK(std::abs(auc_of(real, fake) - ref) < 1e-9);
    // Strictly increasing transforms leave the ranking untouched.
    std::vector<double> tr, tf;
    for (double s : real) tr.push_back(std::exp(3 * s) + 7);
    for (double s : fake) tf.push_back(std::exp(3 * s) + 7);
    CHECK(auc_of(tr, tf) == auc_of(real, fake));
  }
}

TEST_CASE("AUC errors") {
  CHECK(testing::error_code([] { auc_of({0.1, 0.2}, {}); }) == ErrorCode::SingleClassInput);
  CHECK(testing::error_code([] { auc_of({}, {0.3}); }) == ErrorCode::SingleClassInput);
  CHECK(testing::error_code([] { auc_of({std::nan("")}, {0.3}); }) == ErrorCode::NonFiniteInput);
}

TEST_CASE("video aggregation") {
  std::vector<ScoredFrame> frames;
  for (int i = 0; i < 16; ++i) frames.push_back({"a", i, 0.7, Label::Fake});
  for (int i = 0; i < 16; ++i) frames.push_back({"b", i, i < 8 ? 0.0 : 1.0, Label::Real});
  for (int i = 0; i < 4; ++i) frames.push_back({"c", 3 - i, 0.4 - 0.1 * i, Label::Real});
  // Frames past the span are ignored even when listed first.
  frames.insert(frames.begin(), ScoredFrame{"d", 20, 100.0, Label::Fake});
  for (int i = 0; i < 16; ++i) frames.push_back({"d", i, 0.0, Label::Fake});
  const auto v = video_scores(frames, 16);
  REQUIRE(v.size() == 4);
  CHECK(v[0].video_id == "d");
  CHECK(v[0].score == 0.0);
  CHECK(v[1].score == doctest::Approx(0.7).epsilon(1e-12));
  CHECK(v[2].score == 0.5);
  CHECK(v[3].score == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(v[3].label == Label::Real);
  CHECK(testing::error_code([] { video_scores({}, 16); }) == ErrorCode::EmptyVideo);
  CHECK(testing::error_code([&] { video_scores(frames, 0); }) == ErrorCode::EmptyVideo);
}

TEST_CASE("condition menus") {
  const auto all = conditions_for("all");
  REQUIRE(all.size() == 18);
  std::set<std::string> names;
  for (const auto& c : all) {
    names.insert(c.name());
    const Condition back = parse_condition(c.name());
    CHECK(back.name() == c.name());
    CHECK(back.group() == c.group());
  }
  CHECK(names.size() == 18);
  CHECK(names.count("JPEG 10") == 1);
  CHECK(names.count("White-box") == 1);
  CHECK(names.count("Black-box") == 1);
  CHECK(conditions_for("perturbations").size() == 11);
  CHECK(conditions_for("jpeg").size() == 5);
  CHECK(conditions_for("attacks").size() == 2);
  CHECK(testing::error_code([] { conditions_for("everything"); }) == ErrorCode::InvalidConfig);
  CHECK(testing::error_code([] { parse_condition("JPEG 15"); }) == ErrorCode::InvalidQuality);
  CHECK(testing::error_code([] { parse_condition("Sepia"); }) == ErrorCode::InvalidConfig);
}

TEST_CASE("grid on separable linear scorers") {
  const FrameSet frames = toy_frames(0.3, 1);
  const LinearScorer a = mean_scorer(), b = mean_scorer(5.0), surrogate = mean_scorer(2.0);
  const std::vector<GridModel> models{{"A", &a}, {"B", &b}};
  const auto conds = conditions_for("all");
  GridOptions opt;
  opt.surrogate = &surrogate;
  const EvalReport rep = robustness_grid(models, frames, conds, opt);
  // Two groups with averages, one row per regime each.
  CHECK(rep.rows.size() == models.size() * conds.size() + 2 * models.size());
  int clean_rows = 0;
  for (const auto& r : rep.rows) {
    CHECK(r.auc >= 0.0);
    CHECK(r.auc <= 1.0);
    if (r.condition == "No distortion") {
      CHECK(r.auc == 1.0);
      ++clean_rows;
    }
  }
  CHECK(clean_rows == 2);
  CHECK(rep.metadata_json.find("\"target_gradient_queries\": 0") != std::string::npos);
  CHECK(a.gradient_queries() > 0);  // white-box only

  opt.workers = 3;
  CHECK(robustness_grid(models, frames, conds, opt).to_csv() == rep.to_csv());

  testing::TempDir dir;
  rep.write(dir.path(), "grid");
  for (const char* ext : {".csv", ".md", ".json"}) CHECK(std::filesystem::exists(dir.path() / (std::string("grid") + ext)));
  const EvalReport back = read_report_csv(dir.path() / "grid.csv");
  CHECK(back.to_csv() == rep.to_csv());
  REQUIRE(back.rows.size() == rep.rows.size());
  for (std::size_t i = 0; i < back.rows.size(); ++i) {
    CHECK(back.rows[i].group == rep.rows[i].group);
    CHECK(back.rows[i].average == rep.rows[i].average);
  }
  CHECK(rep.to_markdown().find("| Condition | A | B |") != std::string::npos);
}

TEST_CASE("white-box attacks invert a linear scorer when the class gap is inside the budget") {
  // Mean intensity gap 4/255 < 2 * 8/255, so each class can be pushed past the other.
  const FrameSet frames = toy_frames(4.0 / 255.0, 2);
  const LinearScorer a = mean_scorer();
  const std::vector<GridModel> models{{"A", &a}};
  const std::vector<Condition> conds{parse_condition("Identity"), parse_condition("White-box")};
  const EvalReport rep = robustness_grid(models, frames, conds, GridOptions{});
  REQUIRE(rep.rows.size() == 3);
  CHECK(rep.rows[0].auc == 1.0);
  CHECK(rep.rows[1].auc == 0.0);
}

TEST_CASE("grid preconditions") {
  const FrameSet frames = toy_frames(0.3, 3);
  const LinearScorer a = mean_scorer();
  const std::vector<GridModel> models{{"A", &a}};
  const std::vector<Condition> bb{parse_condition("Black-box")};
  CHECK(testing::error_code([&] { robustness_grid(models, frames, bb, GridOptions{}); }) == ErrorCode::InvalidConfig);
  CHECK(testing::error_code([&] { robustness_grid({}, frames, bb, GridOptions{}); }) == ErrorCode::InvalidConfig);
}
