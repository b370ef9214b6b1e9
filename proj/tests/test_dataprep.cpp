#include <doctest.h>

#include <fstream>

#include "fforge/dataprep.hpp"
#include "fforge/error.hpp"
#include "test_util.hpp"

using namespace fforge;
namespace fs = std::filesystem;

namespace {

Image pattern(int h, int w, float base) {
  Image img(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) img.at(y, x, c) = base + 0.001f * static_cast<float>((x + 2 * y + c) % 50);
  return img;
}

void write_text(const fs::path& p, const std::string& text) {
  fs::create_directories(p.parent_path());
  std::ofstream(p) << text;
}

// One video with `frames` frames, written under root/<id>/.
void add_video(const fs::path& root, std::ofstream& csv, const std::string& id, int frames, int label) {
  for (int f = 0; f < frames; ++f) {
    const std::string rel = id + "/" + std::to_string(f) + ".png";
    fs::create_directories(root / id);
    write_png(pattern(16, 16, 0.01f * static_cast<float>(f)), root / rel);
    csv << id << "," << f << "," << rel << "," << label << ",\n";
  }
}

}  // namespace

TEST_CASE("directory fallback names videos after the file stem") {
  testing::TempDir dir;
  for (const char* name : {"real/a.png", "real/b.png", "fake/c.png", "fake/d.png"}) {
    fs::create_directories((dir.path() / name).parent_path());
    write_png(pattern(12, 12, 0.2f), dir.path() / name);
  }
  const DatasetIndex index = ingest_index(dir.path());
  REQUIRE(index.entries.size() == 4);
  CHECK(index.count(Label::Real) == 2);
  CHECK(index.count(Label::Fake) == 2);
  const auto ids = index.video_ids();
  CHECK(std::find(ids.begin(), ids.end(), "c") != ids.end());
  for (const auto& e : index.entries) CHECK(e.frame_idx == 0);
}

TEST_CASE("CSV rows with missing files are dropped with a warning") {
  testing::TempDir dir;
  write_png(pattern(12, 12, 0.3f), dir.path() / "x.png");
  write_text(dir.path() / "index.csv",
             "video_id,frame_idx,image_path,label,landmarks_path\n"
             "v1,0,x.png,0,\n"
             "v2,0,missing.png,1,\n");
  const DatasetIndex index = ingest_index(dir.path());
  CHECK(index.entries.size() == 1);
  CHECK(index.warnings.size() == 1);
  // The CSV path itself is accepted too.
  CHECK(ingest_index(dir.path() / "index.csv").entries.size() == 1);
}

TEST_CASE("index errors") {
  testing::TempDir dir;
  write_png(pattern(12, 12, 0.3f), dir.path() / "x.png");
  write_text(dir.path() / "dup/index.csv",
             "video_id,frame_idx,image_path,label\nv1,0,../x.png,0\nv1,0,../x.png,1\n");
  CHECK(testing::error_code([&] { ingest_index(dir.path() / "dup"); }) == ErrorCode::MalformedIndex);
  write_text(dir.path() / "badlabel/index.csv", "video_id,frame_idx,image_path,label\nv1,0,../x.png,2\n");
  CHECK(testing::error_code([&] { ingest_index(dir.path() / "badlabel"); }) == ErrorCode::MalformedIndex);
  write_text(dir.path() / "empty/index.csv", "video_id,frame_idx,image_path,label\n");
  CHECK(testing::error_code([&] { ingest_index(dir.path() / "empty"); }) == ErrorCode::EmptyDataset);
  fs::create_directories(dir.path() / "nothing");
  CHECK(testing::error_code([&] { ingest_index(dir.path() / "nothing"); }) == ErrorCode::EmptyDataset);
}

TEST_CASE("write_index_csv round trips") {
  testing::TempDir dir;
  std::ofstream csv(dir.path() / "index.csv");
  csv << "video_id,frame_idx,image_path,label,landmarks_path\n";
  add_video(dir.path(), csv, "r0", 2, 0);
  add_video(dir.path(), csv, "f0", 2, 1);
  csv.close();
  const DatasetIndex index = ingest_index(dir.path());
  write_index_csv(index, dir.path() / "copy.csv");
  const DatasetIndex again = ingest_index(dir.path() / "copy.csv");
  REQUIRE(again.entries.size() == index.entries.size());
  for (std::size_t i = 0; i < index.entries.size(); ++i) {
    CHECK(again.entries[i].video_id == index.entries[i].video_id);
    CHECK(again.entries[i].frame_idx == index.entries[i].frame_idx);
    CHECK(again.entries[i].label == index.entries[i].label);
  }
}

TEST_CASE("landmark box geometry") {
  // Box x [40,60], y [40,70]; center (50,55); half extents 10 and 15 grow
  // by 1.3 to 13 and 19.5.
  const Landmarks pts{{40, 40}, {60, 40}, {50, 70}};
  const CropBox box = face_box(100, 100, pts);
  CHECK(box.x0 == doctest::Approx(37.0));
  CHECK(box.x1 == doctest::Approx(63.0));
  CHECK(box.y0 == doctest::Approx(35.5));
  CHECK(box.y1 == doctest::Approx(74.5));

  // Clipping at the frame border.
  const CropBox edge = face_box(100, 100, Landmarks{{0, 0}, {20, 30}});
  CHECK(edge.x0 == 0.0);
  CHECK(edge.y0 == 0.0);
  CHECK(edge.x1 == doctest::Approx(23.0));

  const CropBox center = face_box(200, 100, std::nullopt);
  CHECK(center.x0 == 0.0);
  CHECK(center.x1 == 100.0);
  CHECK(center.y0 == 50.0);
  CHECK(center.y1 == 150.0);

  CHECK(testing::error_code([&] { face_box(100, 100, Landmarks{{101, 5}}); }) == ErrorCode::LandmarkOutOfBounds);
  CHECK(testing::error_code([&] { face_box(6, 100, std::nullopt); }) == ErrorCode::ShapeMismatch);
}

TEST_CASE("crop_face output shape and determinism") {
  const Image frame = pattern(200, 100, 0.1f);
  const Image crop = crop_face(frame, std::nullopt, 64);
  CHECK(crop.height() == 64);
  CHECK(crop.width() == 64);
  CHECK(crop_face(frame, std::nullopt, 64) == crop);
  // The centered crop of a 200x100 frame starts at row 50.
  const Image direct = crop_face(crop_face(frame, std::nullopt, 100), std::nullopt, 64);
  CHECK(mae(direct, crop) < 1e-6);
  const Landmarks pts{{40, 40}, {60, 40}, {50, 70}};
  for (int size : {1, 17, 299}) CHECK(crop_face(pattern(100, 100, 0.2f), pts, size).height() == size);
}

TEST_CASE("sample_frames picks the leading span") {
  testing::TempDir dir;
  std::ofstream csv(dir.path() / "index.csv");
  csv << "video_id,frame_idx,image_path,label\n";
  add_video(dir.path(), csv, "long", 30, 0);
  add_video(dir.path(), csv, "short", 10, 1);
  csv.close();
  const DatasetIndex index = ingest_index(dir.path());

  const FrameSpan full = sample_frames(index, "long", 16, 16);
  REQUIRE(full.frames.size() == 16);
  CHECK_FALSE(full.shortfall);
  for (int i = 0; i < 16; ++i) CHECK(full.frames[i].frame_idx == i);

  const FrameSpan part = sample_frames(index, "short", 16, 16);
  CHECK(part.frames.size() == 10);
  CHECK(part.shortfall);

  const FrameSpan one = sample_frames(index, "long", 1, 16);
  REQUIRE(one.frames.size() == 1);
  CHECK(one.frames[0].frame_idx == 0);

  const FrameSpan shifted = sample_frames(index, "long", 4, 16, 20);
  CHECK(shifted.frames.front().frame_idx == 20);

  CHECK(testing::error_code([&] { sample_frames(index, "nope", 16, 16); }) == ErrorCode::UnknownVideo);
}

TEST_CASE("video split is disjoint and per class") {
  DatasetIndex index;
  for (int v = 0; v < 8; ++v)
    for (int label = 0; label < 2; ++label)
      for (int f = 0; f < 3; ++f) {
        index.entries.push_back(
            {(label ? "fake_" : "real_") + std::to_string(v), f, "x.png", static_cast<Label>(label), ""});
      }
  const DatasetSplit split = split_by_video(index, {});
  CHECK(split.train.video_ids().size() == 8);
  CHECK(split.val.video_ids().size() == 2);
  CHECK(split.test.video_ids().size() == 6);
  for (const auto* part : {&split.train, &split.val, &split.test}) {
    CHECK(part->count(Label::Real) == part->count(Label::Fake));
  }
  for (const auto& id : split.train.video_ids()) {
    for (const auto& other : split.test.video_ids()) CHECK(id != other);
  }
}
