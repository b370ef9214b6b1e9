#include "fforge/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <future>
#include <map>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "fforge/error.hpp"
#include "fforge/jpeg.hpp"

namespace fforge {

namespace {

using nlohmann::json;

constexpr std::string_view kGroups[] = {"perturbations", "jpeg", "attacks"};

std::string average_name(std::string_view group) {
  return group == "jpeg" ? "Average (JPEG)" : "Average (" + std::string(group) + ")";
}

// Runs fn(i) for i in [0, n) over `workers` threads; results are written by
// index so the outcome does not depend on the worker count.
template <typename Fn>
void parallel_for(std::size_t n, int workers, Fn fn) {
  const std::size_t w = std::clamp<std::size_t>(static_cast<std::size_t>(std::max(workers, 1)), 1, std::max<std::size_t>(n, 1));
  if (w == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::future<void>> jobs;
  for (std::size_t k = 0; k < w; ++k) {
    jobs.push_back(std::async(std::launch::async, [&, k] {
      for (std::size_t i = k; i < n; i += w) fn(i);
    }));
  }
  for (auto& j : jobs) j.get();
}

std::string fmt_auc(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  return out;
}

}  // namespace

double roc_auc(std::span<const double> scores, std::span<const Label> labels) {
  if (scores.size() != labels.size()) throw Error(ErrorCode::ShapeMismatch, "scores and labels differ in length");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  for (double s : scores) {
    if (!std::isfinite(s)) throw Error(ErrorCode::NonFiniteInput, "non-finite score");
  }
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Sum of midranks of the fake scores.
  double rank_sum = 0.0;
  std::size_t n_fake = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double mid = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) {
      if (labels[order[k]] == Label::Fake) {
        rank_sum += mid;
        ++n_fake;
      }
    }
    i = j;
  }
  const std::size_t n_real = scores.size() - n_fake;
  if (n_fake == 0 || n_real == 0) throw Error(ErrorCode::SingleClassInput, "AUC needs both classes");
  const double nf = static_cast<double>(n_fake);
  return (rank_sum - nf * (nf + 1.0) / 2.0) / (nf * static_cast<double>(n_real));
}

std::vector<VideoScore> video_scores(std::span<const ScoredFrame> frames, int span) {
  if (frames.empty() || span < 1) throw Error(ErrorCode::EmptyVideo, "no frames to aggregate");
  std::vector<std::string> order;
  std::map<std::string, std::vector<const ScoredFrame*>> by_video;
  for (const auto& f : frames) {
    if (!std::isfinite(f.score)) throw Error(ErrorCode::NonFiniteInput, "non-finite frame score");
    auto& v = by_video[f.video_id];
    if (v.empty()) order.push_back(f.video_id);
    v.push_back(&f);
  }
  std::vector<VideoScore> out;
  for (const auto& id : order) {
    auto& v = by_video[id];
    std::stable_sort(v.begin(), v.end(), [](auto* a, auto* b) { return a->frame_idx < b->frame_idx; });
    const std::size_t n = std::min(v.size(), static_cast<std::size_t>(span));
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) sum += v[i]->score;
    out.push_back({id, sum / static_cast<double>(n), v.front()->label});
  }
  return out;
}

double video_auc(std::span<const VideoScore> videos) {
  std::vector<double> s;
  std::vector<Label> l;
  for (const auto& v : videos) {
    s.push_back(v.score);
    l.push_back(v.label);
  }
  return roc_auc(s, l);
}

std::string Condition::name() const {
  switch (kind) {
    case Kind::Perturbation: return std::string(perturbation_name(perturbation));
    case Kind::Jpeg: return "JPEG " + std::to_string(quality);
    case Kind::Whitebox: return "White-box";
    case Kind::Blackbox: return "Black-box";
  }
  return {};
}

std::string_view Condition::group() const {
  switch (kind) {
    case Kind::Perturbation: return kGroups[0];
    case Kind::Jpeg: return kGroups[1];
    default: return kGroups[2];
  }
}

std::vector<Condition> conditions_for(std::string_view selection) {
  std::vector<Condition> out;
  const bool all = selection == "all";
  if (!all && selection != "perturbations" && selection != "jpeg" && selection != "attacks") {
    throw Error(ErrorCode::InvalidConfig, "unknown condition set '" + std::string(selection) + "'");
  }
  if (all || selection == "perturbations") {
    for (const auto& spec : perturbation_menu()) out.push_back({Condition::Kind::Perturbation, spec.kind, 0});
  }
  if (all || selection == "jpeg") {
    for (int q : kCanonicalJpegQualities) out.push_back({Condition::Kind::Jpeg, PerturbationKind::Identity, q});
  }
  if (all || selection == "attacks") {
    out.push_back({Condition::Kind::Blackbox, PerturbationKind::Identity, 0});
    out.push_back({Condition::Kind::Whitebox, PerturbationKind::Identity, 0});
  }
  return out;
}

Condition parse_condition(std::string_view name) {
  if (name == "White-box" || name == "whitebox") return {Condition::Kind::Whitebox, PerturbationKind::Identity, 0};
  if (name == "Black-box" || name == "blackbox") return {Condition::Kind::Blackbox, PerturbationKind::Identity, 0};
  if (name.starts_with("JPEG ")) {
    const std::string q(name.substr(5));
    for (int c : kCanonicalJpegQualities) {
      if (q == std::to_string(c)) return {Condition::Kind::Jpeg, PerturbationKind::Identity, c};
    }
    throw Error(ErrorCode::InvalidQuality, "JPEG condition quality must be one of 10, 20, 30, 50, 80");
  }
  try {
    return {Condition::Kind::Perturbation, parse_perturbation_kind(name), 0};
  } catch (const Error&) {
    throw Error(ErrorCode::InvalidConfig, "unknown condition '" + std::string(name) + "'");
  }
}

std::string EvalReport::to_csv() const {
  std::string out = "dataset,condition,regime,auc\n";
  for (const auto& r : rows) out += r.dataset + "," + r.condition + "," + r.regime + "," + fmt_auc(r.auc) + "\n";
  return out;
}

std::string EvalReport::to_markdown() const {
  std::vector<std::string> datasets, regimes;
  for (const auto& r : rows) {
    if (std::find(datasets.begin(), datasets.end(), r.dataset) == datasets.end()) datasets.push_back(r.dataset);
    if (std::find(regimes.begin(), regimes.end(), r.regime) == regimes.end()) regimes.push_back(r.regime);
  }
  std::ostringstream md;
  for (const auto& ds : datasets) {
    for (std::string_view group : kGroups) {
      std::vector<std::string> conds;
      std::map<std::pair<std::string, std::string>, double> cell;
      for (const auto& r : rows) {
        if (r.dataset != ds || r.group != group) continue;
        if (std::find(conds.begin(), conds.end(), r.condition) == conds.end()) conds.push_back(r.condition);
        cell[{r.condition, r.regime}] = r.auc;
      }
      if (conds.empty()) continue;
      md << "### " << ds << " / " << group << "\n\n| Condition |";
      for (const auto& g : regimes) md << " " << g << " |";
      md << "\n|---|";
      for (std::size_t i = 0; i < regimes.size(); ++i) md << "---|";
      md << "\n";
      for (const auto& c : conds) {
        const bool avg = c.starts_with("Average");
        md << "| " << (avg ? "**" + c + "**" : c) << " |";
        for (const auto& g : regimes) {
          auto it = cell.find({c, g});
          md << " " << (it == cell.end() ? std::string("-") : fmt_auc(it->second).substr(0, 5)) << " |";
        }
        md << "\n";
      }
      md << "\n";
    }
  }
  return md.str();
}

void EvalReport::write(const std::filesystem::path& dir, const std::string& stem) const {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  const std::pair<std::string, std::string> files[] = {
      {".csv", to_csv()}, {".md", to_markdown()}, {".json", metadata_json.empty() ? "{}\n" : metadata_json}};
  for (const auto& [ext, body] : files) {
    const auto path = dir / (stem + ext);
    std::ofstream out(path, std::ios::binary);
    out << body;
    out.flush();
    if (!out) throw Error(ErrorCode::IOFailure, "cannot write " + path.string());
  }
}

EvalReport read_report_csv(const std::filesystem::path& csv_path) {
  std::ifstream in(csv_path);
  if (!in) throw Error(ErrorCode::IOFailure, "cannot read " + csv_path.string());
  std::string line;
  std::getline(in, line);
  if (line != "dataset,condition,regime,auc") throw Error(ErrorCode::IOFailure, "unexpected report header");
  EvalReport report;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != 4) throw Error(ErrorCode::IOFailure, "malformed report row '" + line + "'");
    ReportRow row{cells[0], cells[1], "", cells[2], 0.0, cells[1].starts_with("Average")};
    try {
      row.auc = std::stod(cells[3]);
    } catch (const std::exception&) {
      throw Error(ErrorCode::IOFailure, "malformed AUC in '" + line + "'");
    }
    if (row.average) {
      for (std::string_view g : kGroups) {
        if (row.condition == average_name(g)) row.group = g;
      }
    } else {
      row.group = parse_condition(row.condition).group();
    }
    report.rows.push_back(std::move(row));
  }
  return report;
}

EvalReport robustness_grid(std::span<const GridModel> models, const FrameSet& frames,
                           std::span<const Condition> conditions, const GridOptions& options) {
  if (models.empty()) throw Error(ErrorCode::InvalidConfig, "no models to evaluate");
  for (const auto& m : models) {
    if (m.scorer == nullptr) throw Error(ErrorCode::InvalidConfig, "null scorer for regime " + m.regime);
  }
  if (conditions.empty()) throw Error(ErrorCode::InvalidConfig, "no conditions to evaluate");
  if (options.span < 1) throw Error(ErrorCode::EmptyVideo, "span must be >= 1");
  validate(options.attack);
  const bool needs_surrogate = std::any_of(conditions.begin(), conditions.end(),
                                           [](const Condition& c) { return c.kind == Condition::Kind::Blackbox; });
  if (needs_surrogate && options.surrogate == nullptr) {
    throw Error(ErrorCode::InvalidConfig, "the Black-box condition needs a surrogate model");
  }

  // Only the leading span of each video reaches the video score.
  std::vector<std::size_t> picked;
  {
    std::map<std::string, std::vector<std::size_t>> by_video;
    std::vector<std::string> order;
    for (std::size_t i = 0; i < frames.size(); ++i) {
      auto& v = by_video[frames.video_ids[i]];
      if (v.empty()) order.push_back(frames.video_ids[i]);
      v.push_back(i);
    }
    for (const auto& id : order) {
      auto& v = by_video[id];
      std::stable_sort(v.begin(), v.end(), [&](auto a, auto b) { return frames.frame_idx[a] < frames.frame_idx[b]; });
      v.resize(std::min(v.size(), static_cast<std::size_t>(options.span)));
      picked.insert(picked.end(), v.begin(), v.end());
    }
  }
  if (picked.empty()) throw Error(ErrorCode::EmptyVideo, "no frames to evaluate");
  const std::size_t n = picked.size();
  auto frame_stream = [&](const Condition& c, std::size_t k) {
    const std::size_t i = picked[k];
    return mix_keys(options.seed, {"eval", std::string_view(c.name()), std::string_view(frames.video_ids[i]), frames.frame_idx[i]});
  };
  auto auc_of = [&](const std::vector<double>& scores) {
    std::vector<ScoredFrame> sf;
    for (std::size_t k = 0; k < n; ++k) {
      const std::size_t i = picked[k];
      sf.push_back({frames.video_ids[i], frames.frame_idx[i], scores[k], frames.samples[i].label});
    }
    return video_auc(video_scores(sf, options.span));
  };

  EvalReport report;
  json meta{{"dataset", options.dataset},
            {"seed", options.seed},
            {"span", options.span},
            {"frames", n},
            {"attack",
             {{"epsilon", options.attack.epsilon},
              {"alpha", options.attack.alpha},
              {"steps", options.attack.steps},
              {"random_start", options.attack.random_start},
              {"seed", options.attack.seed}}}};
  for (const auto& m : models) {
    json entry{{"regime", m.regime}};
    if (const auto* d = dynamic_cast<const DetectorModel*>(m.scorer)) {
      char buf[17];
      std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(d->checksum()));
      entry["checksum"] = buf;
    }
    meta["models"].push_back(entry);
  }

  std::vector<Image> images(n);
  for (const Condition& cond : conditions) {
    json cmeta{{"name", cond.name()}, {"group", cond.group()}};
    if (cond.kind == Condition::Kind::Perturbation) {
      parallel_for(n, options.workers, [&](std::size_t k) {
        images[k] = apply_perturbation(frames.samples[picked[k]].image,
                                       default_perturbation(cond.perturbation, frame_stream(cond, k)));
      });
    } else if (cond.kind == Condition::Kind::Jpeg) {
      cmeta["quality"] = cond.quality;
      parallel_for(n, options.workers, [&](std::size_t k) {
        images[k] = jpeg_roundtrip(frames.samples[picked[k]].image, JpegSpec{cond.quality});
      });
    } else if (cond.kind == Condition::Kind::Blackbox) {
      std::vector<long> before;
      for (const auto& m : models) before.push_back(m.scorer->gradient_queries());
      parallel_for(n, options.workers, [&](std::size_t k) {
        const Sample& s = frames.samples[picked[k]];
        images[k] = pgd_whitebox(*options.surrogate, s.image, s.label, options.attack, frame_stream(cond, k));
      });
      long queries = 0;
      for (std::size_t m = 0; m < models.size(); ++m) {
        if (models[m].scorer != options.surrogate) queries += models[m].scorer->gradient_queries() - before[m];
      }
      cmeta["target_gradient_queries"] = queries;
    }
    for (const auto& m : models) {
      if (cond.kind == Condition::Kind::Whitebox) {
        parallel_for(n, options.workers, [&](std::size_t k) {
          const Sample& s = frames.samples[picked[k]];
          images[k] = pgd_whitebox(*m.scorer, s.image, s.label, options.attack, frame_stream(cond, k));
        });
      }
      report.rows.push_back({options.dataset, cond.name(), std::string(cond.group()), m.regime,
                             auc_of(m.scorer->score_batch(images)), false});
    }
    meta["conditions"].push_back(cmeta);
  }

  // Per-group averages, mirroring the "Average" rows of the published tables.
  for (std::string_view group : {kGroups[0], kGroups[1]}) {
    for (const auto& m : models) {
      double sum = 0.0;
      int count = 0;
      for (const auto& r : report.rows) {
        if (!r.average && r.group == group && r.regime == m.regime) {
          sum += r.auc;
          ++count;
        }
      }
      if (count > 0) report.rows.push_back({options.dataset, average_name(group), std::string(group), m.regime, sum / count, true});
    }
  }
  report.metadata_json = meta.dump(2) + "\n";
  return report;
}

}  // namespace fforge
