#include "fforge/dataprep.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "fforge/error.hpp"

namespace fforge {
namespace fs = std::filesystem;
namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) fields.push_back(field);
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  for (auto& f : fields) {
    const auto b = f.find_first_not_of(" \t\r");
    const auto e = f.find_last_not_of(" \t\r");
    f = b == std::string::npos ? std::string() : f.substr(b, e - b + 1);
  }
  return fields;
}

Label parse_label(const std::string& s, std::size_t line_no) {
  if (s == "0" || s == "real") return Label::Real;
  if (s == "1" || s == "fake") return Label::Fake;
  throw Error(ErrorCode::MalformedIndex, "line " + std::to_string(line_no) + ": bad label '" + s + "'");
}

void check_unique(const std::vector<IndexEntry>& entries) {
  std::set<std::pair<std::string, int>> seen;
  for (const auto& e : entries) {
    if (!seen.emplace(e.video_id, e.frame_idx).second) {
      throw Error(ErrorCode::MalformedIndex,
                  "duplicate (video_id, frame_idx) = (" + e.video_id + ", " + std::to_string(e.frame_idx) + ")");
    }
  }
}

DatasetIndex ingest_csv(const fs::path& root, const fs::path& csv) {
  std::ifstream in(csv);
  if (!in) throw Error(ErrorCode::IOFailure, "cannot open " + csv.string());
  DatasetIndex index;
  index.root = root;
  std::string line;
  std::size_t line_no = 0;
  std::map<std::string, std::size_t> column;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto fields = split_csv_line(line);
    if (column.empty()) {
      for (std::size_t i = 0; i < fields.size(); ++i) column[fields[i]] = i;
      for (const char* required : {"video_id", "frame_idx", "image_path", "label"}) {
        if (!column.contains(required)) {
          throw Error(ErrorCode::MalformedIndex, std::string("index header lacks column '") + required + "'");
        }
      }
      continue;
    }
    auto get = [&](const char* name) -> std::string {
      auto it = column.find(name);
      if (it == column.end() || it->second >= fields.size()) return {};
      return fields[it->second];
    };
    if (fields.size() < 4) {
      throw Error(ErrorCode::MalformedIndex, "line " + std::to_string(line_no) + ": expected at least 4 fields");
    }
    IndexEntry entry;
    entry.video_id = get("video_id");
    try {
      std::size_t used = 0;
      entry.frame_idx = std::stoi(get("frame_idx"), &used);
      if (used != get("frame_idx").size() || entry.frame_idx < 0) throw std::invalid_argument("frame_idx");
    } catch (const std::exception&) {
      throw Error(ErrorCode::MalformedIndex, "line " + std::to_string(line_no) + ": bad frame_idx");
    }
    entry.image_path = get("image_path");
    entry.label = parse_label(get("label"), line_no);
    entry.landmarks_path = get("landmarks_path");
    if (entry.video_id.empty() || entry.image_path.empty()) {
      throw Error(ErrorCode::MalformedIndex, "line " + std::to_string(line_no) + ": empty video_id or image_path");
    }
    if (!fs::exists(index.resolve(entry.image_path))) {
      index.warnings.push_back("line " + std::to_string(line_no) + ": missing file " + entry.image_path + " (dropped)");
      continue;
    }
    if (!entry.landmarks_path.empty() && !fs::exists(index.resolve(entry.landmarks_path))) {
      index.warnings.push_back("line " + std::to_string(line_no) + ": missing landmarks " + entry.landmarks_path +
                               " (center crop used)");
      entry.landmarks_path.clear();
    }
    index.entries.push_back(std::move(entry));
  }
  check_unique(index.entries);
  return index;
}

DatasetIndex ingest_directories(const fs::path& root) {
  DatasetIndex index;
  index.root = root;
  for (const auto& [dir, label] : {std::pair{"real", Label::Real}, std::pair{"fake", Label::Fake}}) {
    const fs::path sub = root / dir;
    if (!fs::is_directory(sub)) continue;
    std::vector<fs::path> files;
    for (const auto& item : fs::directory_iterator(sub)) {
      if (item.is_regular_file() && item.path().extension() == ".png") files.push_back(item.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& file : files) {
      index.entries.push_back(IndexEntry{file.stem().string(), 0, (fs::path(dir) / file.filename()).string(), label, {}});
    }
  }
  check_unique(index.entries);
  return index;
}

}  // namespace

fs::path DatasetIndex::resolve(const std::string& path) const {
  const fs::path p(path);
  return p.is_absolute() ? p : root / p;
}

std::vector<std::string> DatasetIndex::video_ids() const {
  std::vector<std::string> ids;
  std::set<std::string> seen;
  for (const auto& e : entries) {
    if (seen.insert(e.video_id).second) ids.push_back(e.video_id);
  }
  return ids;
}

std::size_t DatasetIndex::count(Label label) const {
  return static_cast<std::size_t>(
      std::count_if(entries.begin(), entries.end(), [label](const IndexEntry& e) { return e.label == label; }));
}

DatasetIndex ingest_index(const fs::path& root) {
  DatasetIndex index;
  if (fs::is_regular_file(root)) {
    index = ingest_csv(root.parent_path(), root);
  } else if (fs::exists(root / "index.csv")) {
    index = ingest_csv(root, root / "index.csv");
  } else if (fs::is_directory(root / "real") || fs::is_directory(root / "fake")) {
    index = ingest_directories(root);
  } else {
    throw Error(ErrorCode::EmptyDataset, "no index.csv or real/ fake/ directories under " + root.string());
  }
  if (index.entries.empty()) throw Error(ErrorCode::EmptyDataset, "dataset at " + root.string() + " has no usable rows");
  return index;
}

void write_index_csv(const DatasetIndex& index, const fs::path& csv_path) {
  std::ofstream out(csv_path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IOFailure, "cannot write " + csv_path.string());
  out << "video_id,frame_idx,image_path,label,landmarks_path\n";
  for (const auto& e : index.entries) {
    out << e.video_id << ',' << e.frame_idx << ',' << e.image_path << ',' << static_cast<int>(e.label) << ','
        << e.landmarks_path << '\n';
  }
  if (!out) throw Error(ErrorCode::IOFailure, "failed writing " + csv_path.string());
}

Landmarks read_landmarks(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IOFailure, "cannot open landmarks " + path.string());
  Landmarks points;
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream fields(line);
    double x, y;
    if (!(fields >> x >> y)) throw Error(ErrorCode::MalformedIndex, "bad landmark line '" + line + "' in " + path.string());
    points.push_back({x, y});
  }
  return points;
}

CropBox face_box(int frame_height, int frame_width, const std::optional<Landmarks>& landmarks, double margin) {
  if (frame_height < 8 || frame_width < 8) {
    throw Error(ErrorCode::ShapeMismatch, "frame must be at least 8x8");
  }
  const double h = frame_height;
  const double w = frame_width;
  if (!landmarks || landmarks->empty()) {
    const double side = std::min(h, w);
    const double x0 = std::floor((w - side) / 2.0);
    const double y0 = std::floor((h - side) / 2.0);
    return {x0, y0, x0 + side, y0 + side};
  }
  double min_x = w, min_y = h, max_x = 0, max_y = 0;
  for (const auto& [x, y] : *landmarks) {
    if (!(x >= 0 && x <= w && y >= 0 && y <= h)) {
      throw Error(ErrorCode::LandmarkOutOfBounds,
                  "landmark (" + std::to_string(x) + ", " + std::to_string(y) + ") outside frame");
    }
    min_x = std::min(min_x, x);
    max_x = std::max(max_x, x);
    min_y = std::min(min_y, y);
    max_y = std::max(max_y, y);
  }
  const double cx = (min_x + max_x) / 2.0;
  const double cy = (min_y + max_y) / 2.0;
  // Degenerate landmark sets still yield a box of at least 8 pixels.
  const double hx = std::max((max_x - min_x) / 2.0 * margin, 4.0);
  const double hy = std::max((max_y - min_y) / 2.0 * margin, 4.0);
  return {std::max(0.0, cx - hx), std::max(0.0, cy - hy), std::min(w, cx + hx), std::min(h, cy + hy)};
}

Image crop_face(const Image& frame, const std::optional<Landmarks>& landmarks, int crop_size, double margin) {
  if (crop_size < 1) throw Error(ErrorCode::InvalidParams, "crop_size must be positive");
  const CropBox box = face_box(frame.height(), frame.width(), landmarks, margin);
  Image out(crop_size, crop_size);
  const double sx = (box.x1 - box.x0) / crop_size;
  const double sy = (box.y1 - box.y0) / crop_size;
  for (int y = 0; y < crop_size; ++y) {
    const double fy = std::clamp(box.y0 + (y + 0.5) * sy - 0.5, 0.0, frame.height() - 1.0);
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, frame.height() - 1);
    const double wy = fy - y0;
    for (int x = 0; x < crop_size; ++x) {
      const double fx = std::clamp(box.x0 + (x + 0.5) * sx - 0.5, 0.0, frame.width() - 1.0);
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, frame.width() - 1);
      const double wx = fx - x0;
      for (int c = 0; c < 3; ++c) {
        const double top = frame.at(y0, x0, c) * (1 - wx) + frame.at(y0, x1, c) * wx;
        const double bottom = frame.at(y1, x0, c) * (1 - wx) + frame.at(y1, x1, c) * wx;
        out.at(y, x, c) = static_cast<float>(top * (1 - wy) + bottom * wy);
      }
    }
  }
  return clamp(out);
}

FaceCrop load_crop(const DatasetIndex& index, const IndexEntry& entry, int crop_size) {
  const Image frame = read_png(index.resolve(entry.image_path));
  std::optional<Landmarks> landmarks;
  if (!entry.landmarks_path.empty()) landmarks = read_landmarks(index.resolve(entry.landmarks_path));
  return FaceCrop{crop_face(frame, landmarks, crop_size), entry.video_id, entry.frame_idx, entry.label};
}

FrameSpan sample_frames(const DatasetIndex& index, std::string_view video_id, int span, int crop_size, int offset) {
  if (span < 1) throw Error(ErrorCode::InvalidParams, "span must be at least 1");
  std::vector<const IndexEntry*> frames;
  for (const auto& e : index.entries) {
    if (e.video_id == video_id) frames.push_back(&e);
  }
  if (frames.empty()) throw Error(ErrorCode::UnknownVideo, "no frames for video '" + std::string(video_id) + "'");
  std::sort(frames.begin(), frames.end(),
            [](const IndexEntry* a, const IndexEntry* b) { return a->frame_idx < b->frame_idx; });
  const std::size_t start = std::min<std::size_t>(static_cast<std::size_t>(std::max(offset, 0)), frames.size() - 1);
  const std::size_t end = std::min(frames.size(), start + static_cast<std::size_t>(span));
  FrameSpan result;
  result.shortfall = end - start < static_cast<std::size_t>(span);
  for (std::size_t i = start; i < end; ++i) result.frames.push_back(load_crop(index, *frames[i], crop_size));
  return result;
}

DatasetSplit split_by_video(const DatasetIndex& index, const SplitConfig& config) {
  if (config.train <= 0 || config.val < 0 || config.train + config.val >= 1.0) {
    throw Error(ErrorCode::InvalidConfig, "split fractions must satisfy train > 0, val >= 0, train + val < 1");
  }
  DatasetSplit split;
  for (DatasetIndex* part : {&split.train, &split.val, &split.test}) part->root = index.root;
  std::map<std::string, int> assignment;  // 0 train, 1 val, 2 test
  for (Label label : {Label::Real, Label::Fake}) {
    std::set<std::string> ids;
    for (const auto& e : index.entries) {
      if (e.label == label) ids.insert(e.video_id);
    }
    const int n = static_cast<int>(ids.size());
    int n_train = std::max(1, static_cast<int>(std::lround(n * config.train)));
    int n_val = config.val > 0 && n >= 3 ? std::max(1, static_cast<int>(std::lround(n * config.val))) : 0;
    if (n_train + n_val >= n && n >= 2) {
      n_val = std::min(n_val, std::max(0, n - n_train - 1));
      n_train = std::min(n_train, n - n_val - 1);
    }
    int k = 0;
    for (const auto& id : ids) {
      assignment[id] = k < n_train ? 0 : (k < n_train + n_val ? 1 : 2);
      ++k;
    }
  }
  for (const auto& e : index.entries) {
    DatasetIndex* parts[] = {&split.train, &split.val, &split.test};
    parts[assignment.at(e.video_id)]->entries.push_back(e);
  }
  return split;
}

}  // namespace fforge
