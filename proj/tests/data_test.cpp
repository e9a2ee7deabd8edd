#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "tdrd/data.hpp"
#include "tdrd/errors.hpp"
#include "tdrd/synth.hpp"

namespace tdrd {
namespace {

std::filesystem::path scratch(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("tdrd_data_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

Image gradient_image(int w, int h) {
  Image img(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) img.at(x, y, c) = static_cast<std::uint8_t>((x * 7 + y * 3 + c * 50) % 256);
  return img;
}

TEST(YoloLabels, ParsesFields) {
  const auto labels = parse_yolo_labels("0 0.5 0.5 0.2 0.1\n");
  ASSERT_EQ(labels.size(), 1u);
  EXPECT_EQ(labels[0], (LabelRecord{0, 0.5, 0.5, 0.2, 0.1}));
  EXPECT_TRUE(parse_yolo_labels("").empty());
  EXPECT_EQ(parse_yolo_labels("1 0.2 0.3 0.1 0.1\n\n2 0.7 0.7 0.2 0.2").size(), 2u);
}

TEST(YoloLabels, RejectsUnknownClassAndBadCoordinates) {
  EXPECT_THROW(parse_yolo_labels("3 0.5 0.5 0.1 0.1"), ValidationError);
  EXPECT_THROW(parse_yolo_labels("0 1.5 0.5 0.1 0.1"), ValidationError);
  EXPECT_THROW(parse_yolo_labels("0 0.5 0.5 0.0 0.1"), ValidationError);
  EXPECT_THROW(parse_yolo_labels("0 0.95 0.5 0.2 0.1"), ValidationError);
}

TEST(YoloLabels, MalformedLineReportsItsNumber) {
  try {
    parse_yolo_labels("0 0.5 0.5 0.2 0.1\n0 0.5 oops 0.2 0.1\n");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 2);
  }
  EXPECT_THROW(parse_yolo_labels("0 0.5 0.5 0.2"), ParseError);
  EXPECT_THROW(parse_yolo_labels("0 0.5 0.5 0.2 0.1 7"), ParseError);
  EXPECT_THROW(parse_yolo_labels("0.5 0.5 0.5 0.2 0.1"), ParseError);
}

TEST(YoloLabels, FileRoundTrip) {
  const auto dir = scratch("labels");
  SynthConfig cfg;
  cfg.num_images = 10;
  cfg.image_size = 96;
  const SynthResult r = synth_generate(cfg);
  for (std::size_t i = 0; i < r.manifest.entries.size(); ++i) {
    const auto& labels = r.manifest.entries[i].labels;
    const auto path = dir / (std::to_string(i) + ".txt");
    write_yolo_labels(path, labels);
    const auto back = load_yolo_labels(path);
    ASSERT_EQ(back.size(), labels.size());
    for (std::size_t k = 0; k < labels.size(); ++k) {
      EXPECT_EQ(back[k].class_id, labels[k].class_id);
      EXPECT_NEAR(back[k].cx, labels[k].cx, 1e-9);
      EXPECT_NEAR(back[k].cy, labels[k].cy, 1e-9);
      EXPECT_NEAR(back[k].w, labels[k].w, 1e-9);
      EXPECT_NEAR(back[k].h, labels[k].h, 1e-9);
    }
  }
  EXPECT_THROW(load_yolo_labels(dir / "absent.txt"), IoError);
}

TEST(Resize, SameSizeIsIdentity) {
  const Image img = gradient_image(512, 512);
  const ResizeResult r = resize_to_input(img, 512);
  EXPECT_EQ(r.image, img);
  EXPECT_EQ(r.sx, 1.0);
  EXPECT_EQ(r.sy, 1.0);
}

TEST(Resize, ScaleFactorsFollowTheRatio) {
  const ResizeResult r = resize_to_input(gradient_image(1024, 512), 512);
  EXPECT_EQ(r.sx, 0.5);
  EXPECT_EQ(r.sy, 1.0);
  EXPECT_EQ(r.image.width, 512);
  EXPECT_EQ(r.image.height, 512);
}

TEST(Resize, NormalizedLabelsAreUnchanged) {
  const Image img = gradient_image(300, 200);
  const LabelRecord l{1, 0.4, 0.6, 0.2, 0.3};
  const ResizeResult r = resize_to_input(img, 128);
  const BBox b = l.to_box(img.width, img.height);
  const BBox mapped{b.x1 * r.sx, b.y1 * r.sy, b.x2 * r.sx, b.y2 * r.sy};
  const LabelRecord back = LabelRecord::from_box(mapped, 1, 128, 128);
  EXPECT_NEAR(back.cx, l.cx, 1e-12);
  EXPECT_NEAR(back.cy, l.cy, 1e-12);
  EXPECT_NEAR(back.w, l.w, 1e-12);
  EXPECT_NEAR(back.h, l.h, 1e-12);
}

TEST(Resize, DegenerateImageIsRejected) {
  EXPECT_THROW(resize_to_input(Image(0, 10), 64), ValidationError);
  EXPECT_THROW(resize_to_input(gradient_image(4, 4), 0), ValidationError);
}

TEST(Resize, LetterboxKeepsAspectAndPadsGray) {
  const ResizeResult r = resize_to_input(gradient_image(200, 100), 100, ResizeMode::Letterbox);
  EXPECT_EQ(r.sx, 0.5);
  EXPECT_EQ(r.sy, 0.5);
  EXPECT_EQ(r.pad_x, 0);
  EXPECT_EQ(r.pad_y, 25);
  EXPECT_EQ(r.image.at(50, 10, 0), 114);
  EXPECT_EQ(r.image.at(50, 90, 2), 114);
}

TEST(Png, RoundTripIsLossless) {
  const auto dir = scratch("png");
  const Image img = gradient_image(37, 21);
  write_png(dir / "a.png", img);
  EXPECT_EQ(read_png(dir / "a.png"), img);
  EXPECT_THROW(read_png(dir / "missing.png"), IoError);
}

TEST(Synth, SameSeedIsBitIdentical) {
  SynthConfig cfg;
  cfg.num_images = 6;
  cfg.image_size = 96;
  cfg.seed = 7;
  const SynthResult a = synth_generate(cfg), b = synth_generate(cfg);
  ASSERT_EQ(a.images.size(), b.images.size());
  for (std::size_t i = 0; i < a.images.size(); ++i) {
    EXPECT_EQ(a.images[i], b.images[i]);
    EXPECT_EQ(a.manifest.entries[i].labels, b.manifest.entries[i].labels);
    EXPECT_EQ(a.manifest.entries[i].path, b.manifest.entries[i].path);
  }
  cfg.seed = 8;
  EXPECT_NE(synth_generate(cfg).images[0], a.images[0]);
}

TEST(Synth, DegenerateMixGivesOneClass) {
  SynthConfig cfg;
  cfg.num_images = 10;
  cfg.image_size = 96;
  cfg.class_mix = {1.0, 0.0, 0.0};
  const SynthResult r = synth_generate(cfg);
  int n = 0;
  for (const auto& e : r.manifest.entries)
    for (const auto& l : e.labels) {
      EXPECT_EQ(l.class_id, 0);
      ++n;
    }
  EXPECT_GT(n, 0);
}

TEST(Synth, UniformMixIsBalancedAndStatsMatchTally) {
  SynthConfig cfg;
  cfg.num_images = 200;
  cfg.seed = 3;
  const SynthResult r = synth_generate(cfg);
  std::array<std::int64_t, 3> tally{};
  std::int64_t total = 0;
  for (const auto& e : r.manifest.entries)
    for (const auto& l : e.labels) ++tally[l.class_id], ++total;
  const ManifestStats s = manifest_stats(r.manifest);
  EXPECT_EQ(s.per_class, tally);
  EXPECT_EQ(s.instances, total);
  EXPECT_EQ(s.images, 200);
  for (int c = 0; c < 3; ++c) {
    const double share = static_cast<double>(tally[c]) / total;
    EXPECT_NEAR(share, 1.0 / 3.0, 0.1 / 3.0) << "class " << c;
  }
}

TEST(Synth, BoxesLieStrictlyInsideImages) {
  SynthConfig cfg;
  cfg.num_images = 40;
  cfg.image_size = 128;
  cfg.max_instances = 5;
  const SynthResult r = synth_generate(cfg);
  for (const auto& e : r.manifest.entries)
    for (const auto& l : e.labels) {
      const BBox b = l.to_box(e.width, e.height);
      EXPECT_GT(b.x1, 0.0);
      EXPECT_GT(b.y1, 0.0);
      EXPECT_LT(b.x2, e.width);
      EXPECT_LT(b.y2, e.height);
      EXPECT_TRUE(b.valid());
    }
}

TEST(Synth, BoxesAreWholePixelExtents) {
  SynthConfig cfg;
  cfg.num_images = 5;
  cfg.image_size = 96;
  const SynthResult r = synth_generate(cfg);
  for (std::size_t i = 0; i < r.images.size(); ++i)
    for (const auto& l : r.manifest.entries[i].labels) {
      const BBox b = l.to_box(96, 96);
      EXPECT_NEAR(b.x1, std::round(b.x1), 1e-9);
      EXPECT_NEAR(b.x2, std::round(b.x2), 1e-9);
      EXPECT_NEAR(b.y1, std::round(b.y1), 1e-9);
      EXPECT_NEAR(b.y2, std::round(b.y2), 1e-9);
    }
}

TEST(Synth, ConfigValidation) {
  SynthConfig cfg;
  cfg.class_mix = {0.5, 0.5, 0.5};
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = {};
  cfg.class_mix = {1.2, -0.2, 0.0};
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = {};
  cfg.num_images = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = {};
  SynthConfig back;
  for (const auto& [k, v] : cfg.to_entries()) back.apply(k, v);
  EXPECT_EQ(back.to_entries(), cfg.to_entries());
  EXPECT_THROW(back.apply("synth.nope", "1"), ValidationError);
}

TEST(Manifest, StatsOfEmptyManifestAreZero) {
  const ManifestStats s = manifest_stats(DatasetManifest{});
  EXPECT_EQ(s.instances, 0);
  EXPECT_EQ(s.images, 0);
  for (auto c : s.per_class) EXPECT_EQ(c, 0);
}

TEST(Manifest, PublishedBenchmarkReport) {
  const ManifestStats s = published_benchmark_stats();
  EXPECT_EQ(s.per_class[0], 10342);
  EXPECT_EQ(s.per_class[1], 8763);
  EXPECT_EQ(s.per_class[2], 10457);
  EXPECT_EQ(s.instances, 29562);
  const std::string report = s.report();
  EXPECT_NE(report.find("crack"), std::string::npos);
  EXPECT_NE(report.find("10342"), std::string::npos);
}

TEST(Manifest, RejectsDuplicatePathsAndOutOfImageLabels) {
  DatasetManifest m;
  m.entries.push_back({"images/train/a.png", 10, 10, Split::Train, {}});
  m.entries.push_back({"images/train/a.png", 10, 10, Split::Val, {}});
  EXPECT_THROW(m.validate(), ValidationError);
  m.entries.pop_back();
  m.entries[0].labels.push_back({0, 0.95, 0.5, 0.2, 0.2});
  EXPECT_THROW(m.validate(), ValidationError);
}

TEST(Dataset, WriteThenLoad) {
  const auto dir = scratch("dataset");
  SynthConfig cfg;
  cfg.num_images = 10;
  cfg.image_size = 64;
  cfg.seed = 5;
  const SynthResult r = synth_generate(cfg);
  write_dataset(dir, r);
  EXPECT_TRUE(std::filesystem::exists(dir / "images/train/000000.png"));
  EXPECT_TRUE(std::filesystem::exists(dir / "labels/train/000000.txt"));
  EXPECT_TRUE(std::filesystem::exists(dir / "labels/val/000009.txt"));
  const DatasetManifest m = read_manifest(dir / "manifest.json");
  ASSERT_EQ(m.entries.size(), r.manifest.entries.size());
  EXPECT_EQ(m.generator, r.manifest.generator);
  const Dataset from_disk = load_dataset(dir, Split::Train, 64);
  const Dataset in_memory = build_dataset(r.manifest, r.images, Split::Train, 64);
  EXPECT_EQ(from_disk.size(), 8u);
  EXPECT_EQ(from_disk.hash, in_memory.hash);
  EXPECT_EQ(load_dataset(dir, Split::Val, 64).size(), 2u);
  const Dataset half = load_dataset(dir, Split::Train, 32);
  ASSERT_FALSE(half.samples[0].boxes.empty() && in_memory.samples[0].boxes.size() > 0);
  for (std::size_t k = 0; k < half.samples[0].boxes.size(); ++k)
    EXPECT_NEAR(half.samples[0].boxes[k].box.x2, in_memory.samples[0].boxes[k].box.x2 / 2, 1e-9);
}

TEST(Dataset, MissingRootNamesTheLayout) {
  try {
    load_dataset(scratch("nothing"), Split::Train, 64);
    FAIL();
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("manifest.json"), std::string::npos);
  }
}

}  // namespace
}  // namespace tdrd
