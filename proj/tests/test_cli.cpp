#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "fforge/cli.hpp"
#include "fforge/evaluation.hpp"
#include "test_util.hpp"

using namespace fforge;

namespace {

// Small enough to run the whole pipeline in seconds.
std::string tiny_config(const std::filesystem::path& out, std::uint64_t seed = 9) {
  nlohmann::json j{{"seed", seed},
                   {"output_dir", out.string()},
                   {"crop_size", 32},
                   {"dataset", {{"synth", {{"videos_per_class", 4}, {"frames_per_video", 4}, {"image_size", 32}}}}},
                   {"pool", {{"size", 2}, {"max_epochs", 2}}},
                   {"train", {{"max_epochs", 2}, {"width_mult", 0.25}}},
                   {"attack", {{"steps", 2}}}};
  return j.dump();
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int count_rows(const std::string& csv, const std::string& needle) {
  int n = 0;
  std::stringstream ss(csv);
  for (std::string line; std::getline(ss, line);) n += line.find(needle) != std::string::npos;
  return n;
}

}  // namespace

TEST_CASE("run config parsing") {
  unsetenv("FFORGE_SEED");
  const RunConfig c = parse_run_config(tiny_config("/tmp/x", 5));
  CHECK(c.seed == 5);
  CHECK(c.synth.seed == 5);
  CHECK(c.train_config(Regime::EA).input_size == 32);
  CHECK(c.surrogate.width_mult == 0.5);
  CHECK(c.surrogate.seed != c.seed);
  CHECK(c.model_path(Regime::EA_CA).filename() == "EA_CA.ffnn");

  const RunConfig rel = parse_run_config(R"({"seed": 1, "output_dir": "out"})", "/base");
  CHECK(rel.output_dir == std::filesystem::path("/base/out"));
  CHECK(rel.pool_path() == std::filesystem::path("/base/out/pool"));

  const RunConfig over = parse_run_config(R"({"seed": 1, "regimes": {"EA+CA": {"ea_fraction": 0.25}}})");
  CHECK(over.train_config(Regime::EA_CA).ea_fraction == 0.25);
  CHECK(over.train_config(Regime::BL).ea_fraction == 0.5);

  setenv("FFORGE_SEED", "77", 1);
  CHECK(parse_run_config(R"({"output_dir": "o"})").seed == 77);
  setenv("FFORGE_SEED", "7x", 1);
  CHECK(testing::error_code([] { parse_run_config(R"({"seed": 1})"); }) == ErrorCode::InvalidConfig);
  unsetenv("FFORGE_SEED");

  auto code = [](const char* text) { return testing::error_code([&] { parse_run_config(text); }); };
  CHECK(code(R"({"output_dir": "o"})") == ErrorCode::InvalidConfig);
  CHECK(code(R"({"seed": 1, "sed": 2})") == ErrorCode::InvalidConfig);
  CHECK(code(R"({"seed": 1, "train": {"lr": "fast"}})") == ErrorCode::InvalidConfig);
  CHECK(code(R"({"seed": 1, "train": {"input_size": 48}})") == ErrorCode::InvalidConfig);
  CHECK(code(R"({"seed": 1, "evaluation": {"conditions": "most"}})") == ErrorCode::InvalidConfig);
  CHECK(code(R"({"seed": 1, "attack": {"alpha": 1.0}})") == ErrorCode::InvalidParams);
  CHECK(code(R"({"seed": 1, "dataset": {"root": "/nonexistent/fforge"}})") == ErrorCode::IOFailure);
  CHECK(code("{seed: 1") == ErrorCode::InvalidConfig);
}

TEST_CASE("synth command") {
  unsetenv("FFORGE_SEED");
  testing::TempDir dir;
  const RunConfig c = parse_run_config(tiny_config(dir.path() / "run"));
  std::ostringstream out, err;
  REQUIRE(cmd_synth(c, out, err) == 0);
  CHECK(std::filesystem::exists(c.data_dir() / "index.csv"));
  CHECK(out.str().find("index.csv") != std::string::npos);
  const auto first = path_checksum(c.data_dir());
  std::filesystem::remove_all(c.data_dir());
  REQUIRE(cmd_synth(c, out, err) == 0);
  CHECK(path_checksum(c.data_dir()) == first);

  // A regular file where a directory is expected.
  std::ofstream(dir.path() / "blocker") << "x";
  const RunConfig blocked = parse_run_config(tiny_config(dir.path() / "blocker" / "run"));
  std::ostringstream out2, err2;
  CHECK(cmd_synth(blocked, out2, err2) == 1);
  CHECK(err2.str().find("IOFailure") != std::string::npos);
}

TEST_CASE("full command pipeline") {
  unsetenv("FFORGE_SEED");
  testing::TempDir dir;
  const RunConfig c = parse_run_config(tiny_config(dir.path() / "run"));
  std::ostringstream out, err;
  REQUIRE(cmd_synth(c, out, err) == 0);

  std::ostringstream e1;
  CHECK(cmd_train(c, "EA", out, e1) != 0);
  CHECK(e1.str().find("pool required") != std::string::npos);

  std::ostringstream pool_out;
  REQUIRE(cmd_build_pool(c, pool_out, err) == 0);
  CHECK(pool_out.str().find("accepted 2") != std::string::npos);
  const auto manifest = manifest_from_json(slurp(c.pool_path() / "manifest.json"));
  CHECK(manifest.members.size() == 2);
  CHECK(count_rows(pool_out.str(), "accepted ") + count_rows(pool_out.str(), "rejected ") >= 2);

  for (const char* r : {"BL", "CA", "EA", "EA+CA"}) REQUIRE(cmd_train(c, r, out, err) == 0);
  REQUIRE(cmd_train_surrogate(c, out, err) == 0);
  const auto sidecar = nlohmann::json::parse(slurp(c.model_path(Regime::BL).string() + ".json"));
  CHECK(sidecar.at("regime") == "BL");
  CHECK(std::filesystem::exists(dir.path() / "run" / "models" / "BL.log.csv"));
  CHECK(testing::error_code([&] { DetectorModel::load(c.model_path(Regime::EA_CA)); }) == std::nullopt);
  CHECK(cmd_train(c, "XL", out, err) == 2);

  EvaluateOptions all;
  REQUIRE(cmd_evaluate(c, all, out, err) == 0);
  const std::string csv = slurp(c.report_dir() / "report.csv");
  CHECK(count_rows(csv, "synth,") == 4 * 18 + 4 * 2);
  CHECK(std::filesystem::exists(c.report_dir() / "report.md"));

  RunConfig jpeg = c;
  jpeg.conditions = "jpeg";
  EvaluateOptions j1, j2;
  j1.out_dir = dir.path() / "j1";
  j2.out_dir = dir.path() / "j2";
  REQUIRE(cmd_evaluate(jpeg, j1, out, err) == 0);
  REQUIRE(cmd_evaluate(jpeg, j2, out, err) == 0);
  const std::string a = slurp(dir.path() / "j1" / "report.csv");
  CHECK(a == slurp(dir.path() / "j2" / "report.csv"));
  CHECK(count_rows(a, ",JPEG ") == 4 * 5);
  CHECK(count_rows(a, ",Average (JPEG),") == 4);

  std::ostringstream merged;
  REQUIRE(cmd_report({dir.path() / "j1" / "report.csv", dir.path() / "j2" / "report.csv"}, dir.path() / "m", merged,
                     err) == 0);
  CHECK(slurp(dir.path() / "m" / "report.csv") == a);

  AttackOptions wb;
  wb.checkpoint = c.model_path(Regime::BL);
  std::ostringstream atk;
  REQUIRE(cmd_attack(c, wb, atk, err) == 0);
  CHECK(atk.str().find("attacked_auc") != std::string::npos);
  AttackOptions bb = wb;
  bb.mode = "blackbox";
  std::ostringstream atk2;
  REQUIRE(cmd_attack(c, bb, atk2, err) == 0);
  CHECK(atk2.str().find("target_gradient_queries 0") != std::string::npos);
  bb.mode = "greybox";
  CHECK(cmd_attack(c, bb, atk2, err) == 2);

  std::ostringstream sum;
  CHECK(cmd_checksum(c.data_dir(), sum, err) == 0);
  CHECK(sum.str().size() > 16);
  CHECK(cmd_checksum(dir.path() / "missing", sum, err) == 1);
  INFO(err.str());
}
