#include "fforge/cli.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "fforge/error.hpp"
#include "fforge/evaluation.hpp"

namespace fforge {

namespace fs = std::filesystem;

namespace {

using nlohmann::json;

constexpr Regime kRegimes[] = {Regime::BL, Regime::CA, Regime::EA, Regime::EA_CA};

[[noreturn]] void bad(const std::string& msg) { throw Error(ErrorCode::InvalidConfig, msg); }

void check_keys(const json& j, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) bad(where + " must be an object");
  for (const auto& [key, _] : j.items()) {
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; })) {
      bad("unknown key '" + key + "' in " + where);
    }
  }
}

template <typename T>
void read(const json& j, const char* key, T& dst, const std::string& where) {
  if (!j.contains(key) || j.at(key).is_null()) return;
  try {
    dst = j.at(key).get<T>();
  } catch (const json::exception&) {
    bad(where + "." + key + " has the wrong type");
  }
}

void apply_train(const json& j, TrainConfig& c, const std::string& where) {
  check_keys(j, where,
             {"lr", "dropout", "weight_decay", "max_epochs", "batch_size", "ca_probability", "jpeg_probability",
              "ea_fraction", "ea_label_policy", "chain_selection", "chain_max_len", "patience", "backbone",
              "width_mult", "input_size"});
  read(j, "lr", c.lr, where);
  read(j, "dropout", c.dropout, where);
  read(j, "weight_decay", c.weight_decay, where);
  read(j, "max_epochs", c.max_epochs, where);
  read(j, "batch_size", c.batch_size, where);
  read(j, "ca_probability", c.ca_probability, where);
  read(j, "jpeg_probability", c.jpeg_probability, where);
  read(j, "ea_fraction", c.ea_fraction, where);
  read(j, "patience", c.patience, where);
  read(j, "backbone", c.backbone, where);
  read(j, "width_mult", c.width_mult, where);
  read(j, "input_size", c.input_size, where);
  read(j, "chain_max_len", c.chain.max_len, where);
  std::string s;
  read(j, "ea_label_policy", s, where);
  if (!s.empty()) c.ea_label_policy = parse_label_policy(s);
  s.clear();
  read(j, "chain_selection", s, where);
  if (s == "FullSet") {
    c.chain.mode = ChainSelection::Mode::FullSet;
  } else if (s == "RandomSubset") {
    c.chain.mode = ChainSelection::Mode::RandomSubset;
  } else if (!s.empty()) {
    bad(where + ".chain_selection must be FullSet or RandomSubset");
  }
}

std::string file_stem(Regime r) {
  std::string s(to_string(r));
  std::replace(s.begin(), s.end(), '+', '_');
  return s;
}

int status_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidConfig:
    case ErrorCode::InvalidParams:
    case ErrorCode::InvalidQuality: return 2;
    default: return 1;
  }
}

// Runs a command body, mapping failures to an exit status and a diagnostic.
template <typename F>
int guarded(std::ostream& err, F&& body) {
  try {
    return body();
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return status_for(e.code());
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

DatasetIndex load_dataset(const RunConfig& c) { return ingest_index(c.dataset_root ? *c.dataset_root : c.data_dir()); }

std::vector<Image> images_of(const FrameSet& set) {
  std::vector<Image> out;
  out.reserve(set.size());
  for (const auto& s : set.samples) out.push_back(s.image);
  return out;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

void require_exists(const fs::path& p, const std::string& what) {
  if (!fs::exists(p)) throw Error(ErrorCode::IOFailure, what + " not found: " + p.string());
}

TrainingResult train_one(const RunConfig& c, const TrainConfig& tc, Regime regime, const AutoencoderPool* pool,
                         const fs::path& path, std::ostream& out) {
  const DatasetSplit parts = split_by_video(load_dataset(c), c.split);
  const FrameSet train = load_frames(parts.train, c.crop_size);
  const FrameSet val = load_frames(parts.val, c.crop_size);
  TrainingResult r = train_detector(train, val, tc, regime, pool, [&](const EpochLog& e) {
    char line[160];
    std::snprintf(line, sizeof line, "epoch %3d  train_loss %.4f  val_auc %.4f  val_loss %.4f\n", e.epoch,
                  e.train_loss, e.val_auc, e.val_loss);
    out << line << std::flush;
  });
  r.model->save(path);
  fs::path log = path;
  log.replace_extension(".log.csv");
  write_training_log(r.log, log);
  out << "best epoch " << r.best_epoch << "\ncheckpoint " << path.string() << "\n";
  return r;
}

}  // namespace

TrainConfig RunConfig::train_config(Regime regime) const {
  auto it = regime_train.find(regime);
  TrainConfig c = it == regime_train.end() ? train : it->second;
  c.seed = seed;
  return c;
}

fs::path RunConfig::data_dir() const { return output_dir / "data"; }
fs::path RunConfig::pool_path() const { return pool_dir ? *pool_dir : output_dir / "pool"; }
fs::path RunConfig::model_path(Regime regime) const { return output_dir / "models" / (file_stem(regime) + ".ffnn"); }
fs::path RunConfig::surrogate_path() const { return output_dir / "models" / "surrogate.ffnn"; }
fs::path RunConfig::report_dir() const { return output_dir / "report"; }

RunConfig parse_run_config(const std::string& text, const fs::path& base_dir) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    bad(std::string("config is not valid JSON: ") + e.what());
  }
  check_keys(j, "config",
             {"seed", "output_dir", "dataset", "crop_size", "split", "pool", "train", "regimes", "surrogate", "attack",
              "evaluation", "workers"});
  RunConfig c;
  auto resolve = [&](const std::string& p) { return fs::path(p).is_absolute() ? fs::path(p) : base_dir / p; };

  if (const char* env = std::getenv("FFORGE_SEED"); env && *env) {
    try {
      std::size_t used = 0;
      c.seed = std::stoull(env, &used);
      if (env[used] != '\0') throw std::invalid_argument("trailing characters");
    } catch (const std::exception&) {
      bad(std::string("FFORGE_SEED is not an unsigned integer: ") + env);
    }
  } else if (!j.contains("seed")) {
    bad("seed is mandatory");
  } else {
    read(j, "seed", c.seed, "config");
  }
  std::string s;
  read(j, "output_dir", s, "config");
  c.output_dir = resolve(s.empty() ? "fforge-run" : s);
  read(j, "crop_size", c.crop_size, "config");
  read(j, "workers", c.workers, "config");

  if (j.contains("dataset")) {
    const json& d = j.at("dataset");
    check_keys(d, "dataset", {"name", "root", "synth"});
    read(d, "name", c.dataset_name, "dataset");
    s.clear();
    read(d, "root", s, "dataset");
    if (!s.empty()) c.dataset_root = resolve(s);
    if (d.contains("synth")) {
      const json& y = d.at("synth");
      check_keys(y, "dataset.synth", {"videos_per_class", "frames_per_video", "image_size", "fingerprint_strength"});
      read(y, "videos_per_class", c.synth.n_videos_per_class, "dataset.synth");
      read(y, "frames_per_video", c.synth.frames_per_video, "dataset.synth");
      read(y, "image_size", c.synth.image_size, "dataset.synth");
      read(y, "fingerprint_strength", c.synth.fingerprint_strength, "dataset.synth");
    }
  }
  c.synth.seed = c.seed;
  if (j.contains("split")) {
    check_keys(j.at("split"), "split", {"train", "val"});
    read(j.at("split"), "train", c.split.train, "split");
    read(j.at("split"), "val", c.split.val, "split");
  }
  if (j.contains("pool")) {
    const json& p = j.at("pool");
    check_keys(p, "pool", {"size", "dir", "max_epochs", "batch_size", "lr"});
    read(p, "size", c.pool_size, "pool");
    read(p, "max_epochs", c.pool_train.max_epochs, "pool");
    read(p, "batch_size", c.pool_train.batch_size, "pool");
    read(p, "lr", c.pool_train.lr, "pool");
    s.clear();
    read(p, "dir", s, "pool");
    if (!s.empty()) c.pool_dir = resolve(s);
  }

  c.train.input_size = c.crop_size;
  if (j.contains("train")) apply_train(j.at("train"), c.train, "train");
  if (j.contains("regimes")) {
    const json& r = j.at("regimes");
    if (!r.is_object()) bad("regimes must be an object");
    for (const auto& [name, body] : r.items()) {
      TrainConfig t = c.train;
      apply_train(body, t, "regimes." + name);
      c.regime_train[parse_regime(name)] = t;
    }
  }
  // The surrogate is an independently initialized, narrower CompactCNN.
  c.surrogate = c.train;
  c.surrogate.width_mult = 0.5;
  if (j.contains("surrogate")) apply_train(j.at("surrogate"), c.surrogate, "surrogate");
  c.surrogate.seed = mix_keys(c.seed, {"surrogate"});

  if (j.contains("attack")) {
    const json& a = j.at("attack");
    check_keys(a, "attack", {"epsilon", "alpha", "steps", "random_start"});
    read(a, "epsilon", c.attack.epsilon, "attack");
    read(a, "alpha", c.attack.alpha, "attack");
    read(a, "steps", c.attack.steps, "attack");
    read(a, "random_start", c.attack.random_start, "attack");
  }
  c.attack.seed = c.seed;
  if (j.contains("evaluation")) {
    const json& e = j.at("evaluation");
    check_keys(e, "evaluation", {"conditions", "span"});
    read(e, "conditions", c.conditions, "evaluation");
    read(e, "span", c.span, "evaluation");
  }
  validate(c);
  return c;
}

RunConfig load_run_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IOFailure, "cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str(), path.parent_path());
}

void validate(const RunConfig& c) {
  validate(c.synth);
  if (c.crop_size < 16) bad("crop_size must be >= 16");
  if (!(c.split.train > 0 && c.split.val > 0 && c.split.train + c.split.val < 1)) {
    bad("split fractions must be positive and leave a test share");
  }
  if (c.pool_size < 1) bad("pool.size must be >= 1");
  if (c.pool_train.max_epochs < 1 || c.pool_train.max_epochs > 50) bad("pool.max_epochs must lie in [1, 50]");
  if (c.pool_train.batch_size < 1 || !(c.pool_train.lr > 0)) bad("pool.batch_size and pool.lr must be positive");
  for (Regime r : kRegimes) {
    const TrainConfig t = c.train_config(r);
    validate(t);
    if (t.input_size != c.crop_size) bad("input_size must equal crop_size for regime " + std::string(to_string(r)));
  }
  validate(c.surrogate);
  if (c.surrogate.input_size != c.crop_size) bad("surrogate input_size must equal crop_size");
  validate(c.attack);
  conditions_for(c.conditions);
  if (c.span < 1) bad("evaluation.span must be >= 1");
  if (c.workers < 1) bad("workers must be >= 1");
  if (c.dataset_root && !fs::is_directory(*c.dataset_root)) {
    throw Error(ErrorCode::IOFailure, "dataset root not found: " + c.dataset_root->string());
  }
}

std::uint64_t path_checksum(const fs::path& path) {
  require_exists(path, "path");
  std::vector<fs::path> files;
  if (fs::is_directory(path)) {
    for (const auto& e : fs::recursive_directory_iterator(path)) {
      if (e.is_regular_file()) files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
  } else {
    files.push_back(path);
  }
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& f : files) {
    const std::string rel = fs::is_directory(path) ? fs::relative(f, path).generic_string() : "";
    h = fnv1a64(std::as_bytes(std::span(rel.data(), rel.size())), h);
    std::ifstream in(f, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (!in && !in.eof()) throw Error(ErrorCode::IOFailure, "cannot read " + f.string());
    h = fnv1a64(std::as_bytes(std::span(bytes.data(), bytes.size())), h);
  }
  return h;
}

int cmd_synth(const RunConfig& c, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    validate(c);
    if (c.dataset_root) bad("dataset.root is set; synth only writes into output_dir/data");
    const DatasetIndex index = build_synth_dataset(c.synth, c.data_dir());
    out << "frames " << index.entries.size() << "\nindex " << (c.data_dir() / "index.csv").string() << "\nchecksum "
        << hex64(path_checksum(c.data_dir())) << "\n";
    return 0;
  });
}

int cmd_build_pool(const RunConfig& c, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    validate(c);
    const DatasetSplit parts = split_by_video(load_dataset(c), c.split);
    const std::vector<Image> train = images_of(load_frames(parts.train, c.crop_size));
    const std::vector<Image> val = images_of(load_frames(parts.val, c.crop_size));
    PoolBuildOptions opt;
    opt.train = c.pool_train;
    opt.workers = c.workers;
    opt.log = [&](const std::string& line) { out << line << "\n" << std::flush; };
    AutoencoderPool pool = build_pool(c.pool_size, train, val, c.seed, opt);
    pool.save(c.pool_path());
    const PoolManifest& m = pool.manifest();
    out << "\nstatus    config                                epochs  heldout_mae\n";
    auto row = [&](const MemberRecord& r) {
      char line[160];
      std::snprintf(line, sizeof line, "%-9s %-37s %6d  %.6f\n", r.accepted ? "accepted" : "rejected",
                    describe(r.config).c_str(), r.epochs_run, r.heldout_mae);
      out << line;
    };
    for (const auto& r : m.members) row(r);
    for (const auto& r : m.rejected) row(r);
    out << "accepted " << m.members.size() << "  rejected " << m.rejected.size() << "\nmanifest "
        << (c.pool_path() / "manifest.json").string() << "\nchecksum " << hex64(manifest_checksum(m)) << "\n";
    return 0;
  });
}

int cmd_train(const RunConfig& c, const std::string& regime_name, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    validate(c);
    const Regime regime = parse_regime(regime_name);
    std::optional<AutoencoderPool> pool;
    if (uses_pool(regime)) {
      if (!c.pool_dir && !fs::exists(c.pool_path() / "manifest.json")) {
        err << "error: pool required for regime " << to_string(regime) << " (pass --pool DIR or run build-pool)\n";
        return 1;
      }
      pool = AutoencoderPool::load(c.pool_path());
    }
    train_one(c, c.train_config(regime), regime, pool ? &*pool : nullptr, c.model_path(regime), out);
    return 0;
  });
}

int cmd_train_surrogate(const RunConfig& c, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    validate(c);
    train_one(c, c.surrogate, Regime::BL, nullptr, c.surrogate_path(), out);
    return 0;
  });
}

int cmd_evaluate(const RunConfig& c, const EvaluateOptions& o, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    validate(c);
    std::vector<fs::path> paths = o.checkpoints;
    if (paths.empty()) {
      for (Regime r : kRegimes) {
        if (fs::exists(c.model_path(r))) paths.push_back(c.model_path(r));
      }
      if (paths.empty()) throw Error(ErrorCode::IOFailure, "no checkpoints under " + (c.output_dir / "models").string());
    }
    for (const auto& p : paths) require_exists(p, "checkpoint");
    const auto conditions = conditions_for(c.conditions);
    const bool blackbox = std::any_of(conditions.begin(), conditions.end(),
                                      [](const Condition& k) { return k.kind == Condition::Kind::Blackbox; });
    const fs::path surrogate_path = o.surrogate ? *o.surrogate : c.surrogate_path();
    if (blackbox) require_exists(surrogate_path, "surrogate checkpoint");

    std::vector<std::shared_ptr<DetectorModel>> models;
    std::vector<GridModel> grid;
    std::set<std::string> labels;
    for (const auto& p : paths) {
      models.push_back(DetectorModel::load(p));
      std::string label(to_string(models.back()->regime()));
      // Two checkpoints of one regime get distinct columns.
      for (int k = 2; labels.count(label); ++k) label = std::string(to_string(models.back()->regime())) + "#" + std::to_string(k);
      labels.insert(label);
      grid.push_back({label, models.back().get()});
    }
    std::shared_ptr<DetectorModel> surrogate;
    if (blackbox) surrogate = DetectorModel::load(surrogate_path);

    const DatasetSplit parts = split_by_video(load_dataset(c), c.split);
    const FrameSet test = load_frames(parts.test, c.crop_size, c.span);
    GridOptions g;
    g.dataset = c.dataset_name;
    g.seed = c.seed;
    g.span = c.span;
    g.attack = c.attack;
    g.surrogate = surrogate.get();
    g.workers = c.workers;
    const EvalReport report = robustness_grid(grid, test, conditions, g);
    const fs::path dir = o.out_dir ? *o.out_dir : c.report_dir();
    report.write(dir);
    out << report.to_markdown() << "report " << (dir / "report.csv").string() << "\n";
    return 0;
  });
}

int cmd_attack(const RunConfig& c, const AttackOptions& o, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    validate(c);
    if (o.mode != "whitebox" && o.mode != "blackbox") bad("--mode must be whitebox or blackbox");
    require_exists(o.checkpoint, "checkpoint");
    const bool blackbox = o.mode == "blackbox";
    const fs::path surrogate_path = o.surrogate ? *o.surrogate : c.surrogate_path();
    if (blackbox) require_exists(surrogate_path, "surrogate checkpoint");
    const auto target = DetectorModel::load(o.checkpoint);
    const auto surrogate = blackbox ? DetectorModel::load(surrogate_path) : nullptr;

    const DatasetSplit parts = split_by_video(load_dataset(c), c.split);
    const FrameSet test = load_frames(parts.test, c.crop_size, c.span);
    std::vector<Label> labels;
    for (const auto& s : test.samples) labels.push_back(s.label);
    const std::vector<Image> clean = images_of(test);
    std::vector<Image> adv;
    long queries = 0;
    if (blackbox) {
      TransferResult r = blackbox_transfer(*surrogate, *target, clean, labels, c.attack);
      adv = std::move(r.images);
      queries = r.target_gradient_queries;
    } else {
      for (std::size_t i = 0; i < clean.size(); ++i) adv.push_back(pgd_whitebox(*target, clean[i], labels[i], c.attack, i));
    }
    double worst = 0.0;
    for (std::size_t i = 0; i < adv.size(); ++i) {
      for (std::size_t k = 0; k < adv[i].data().size(); ++k) {
        worst = std::max(worst, std::abs(double(adv[i].data()[k]) - double(clean[i].data()[k])));
      }
    }
    auto auc = [&](const std::vector<Image>& imgs) {
      const auto scores = target->score_batch(imgs);
      std::vector<ScoredFrame> frames;
      for (std::size_t i = 0; i < imgs.size(); ++i) {
        frames.push_back({test.video_ids[i], test.frame_idx[i], scores[i], labels[i]});
      }
      return video_auc(video_scores(frames, c.span));
    };
    char line[200];
    std::snprintf(line, sizeof line, "mode %s\nframes %zu\nclean_auc %.6f\nattacked_auc %.6f\nmax_deviation %.8f\n",
                  o.mode.c_str(), adv.size(), auc(clean), auc(adv), worst);
    out << line;
    if (blackbox) out << "target_gradient_queries " << queries << "\n";
    if (o.save_dir) {
      fs::create_directories(*o.save_dir);
      for (std::size_t i = 0; i < adv.size(); ++i) {
        write_png(adv[i], *o.save_dir / (test.video_ids[i] + "_" + std::to_string(test.frame_idx[i]) + ".png"));
      }
      out << "saved " << adv.size() << " images to " << o.save_dir->string() << "\n";
    }
    return 0;
  });
}

int cmd_report(const std::vector<fs::path>& csvs, const std::optional<fs::path>& out_dir, std::ostream& out,
               std::ostream& err) {
  return guarded(err, [&] {
    if (csvs.empty()) bad("no report CSVs given");
    EvalReport merged;
    std::vector<int> counts;
    for (const auto& p : csvs) {
      const EvalReport r = read_report_csv(p);
      if (merged.rows.empty()) {
        merged = r;
        counts.assign(r.rows.size(), 1);
        continue;
      }
      if (r.rows.size() != merged.rows.size()) bad("reports differ in shape: " + p.string());
      for (std::size_t i = 0; i < r.rows.size(); ++i) {
        const ReportRow& a = merged.rows[i];
        const ReportRow& b = r.rows[i];
        if (a.dataset != b.dataset || a.condition != b.condition || a.regime != b.regime) {
          bad("reports differ in row order: " + p.string());
        }
        merged.rows[i].auc += b.auc;
        ++counts[i];
      }
    }
    for (std::size_t i = 0; i < merged.rows.size(); ++i) merged.rows[i].auc /= counts[i];
    json meta{{"averaged_over", csvs.size()}};
    for (const auto& p : csvs) meta["sources"].push_back(p.string());
    merged.metadata_json = meta.dump(2) + "\n";
    if (out_dir) merged.write(*out_dir);
    out << merged.to_markdown();
    return 0;
  });
}

int cmd_checksum(const fs::path& path, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    out << hex64(path_checksum(path)) << "  " << path.string() << "\n";
    return 0;
  });
}

}  // namespace fforge
