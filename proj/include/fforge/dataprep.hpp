#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "fforge/image.hpp"

namespace fforge {

enum class Label : int { Real = 0, Fake = 1 };

struct IndexEntry {
  std::string video_id;
  int frame_idx = 0;
  std::string image_path;      // relative to the index root unless absolute
  Label label = Label::Real;
  std::string landmarks_path;  // empty when absent
};

struct DatasetIndex {
  std::filesystem::path root;
  std::vector<IndexEntry> entries;
  std::vector<std::string> warnings;  // e.g. rows dropped for missing files

  std::filesystem::path resolve(const std::string& path) const;
  /// Video ids in first-appearance order.
  std::vector<std::string> video_ids() const;
  std::size_t count(Label label) const;
};

/// Reads `root/index.csv` (video_id,frame_idx,image_path,label[,landmarks_path])
/// or, without a CSV, the PNG files of `root/real` and `root/fake`.
DatasetIndex ingest_index(const std::filesystem::path& root);
void write_index_csv(const DatasetIndex& index, const std::filesystem::path& csv_path);

using Landmarks = std::vector<std::array<double, 2>>;

/// One "x y" pair per line, pixel units.
Landmarks read_landmarks(const std::filesystem::path& path);

struct CropBox {
  double x0 = 0, y0 = 0, x1 = 0, y1 = 0;
};

/// Landmark bounding box scaled by `margin` about its center and clipped to
/// the frame; without landmarks, the largest centered square.
CropBox face_box(int frame_height, int frame_width, const std::optional<Landmarks>& landmarks,
                 double margin = 1.3);

/// Bilinear resample of `face_box` to crop_size x crop_size.
Image crop_face(const Image& frame, const std::optional<Landmarks>& landmarks, int crop_size,
                double margin = 1.3);

struct FaceCrop {
  Image image;
  std::string video_id;
  int frame_idx = 0;
  Label label = Label::Real;
};

FaceCrop load_crop(const DatasetIndex& index, const IndexEntry& entry, int crop_size);

struct FrameSpan {
  std::vector<FaceCrop> frames;
  bool shortfall = false;  // fewer than `span` frames were available
};

/// The `span` consecutive frames (by frame_idx) starting at position
/// `offset` of the video's sorted frame list.
FrameSpan sample_frames(const DatasetIndex& index, std::string_view video_id, int span = 16,
                        int crop_size = 64, int offset = 0);

struct SplitConfig {
  double train = 0.5;
  double val = 0.125;  // the remainder is the test split
};

struct DatasetSplit {
  DatasetIndex train;
  DatasetIndex val;
  DatasetIndex test;
};

/// Disjoint per-video split, done per class over sorted video ids.
DatasetSplit split_by_video(const DatasetIndex& index, const SplitConfig& config);

}  // namespace fforge
