#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "tdrd/boxes.hpp"
#include "tdrd/kv.hpp"
#include "tdrd/tensor.hpp"

namespace tdrd {

inline constexpr int kNumDamageClasses = 3;
// Class ids: 0 = crack, 1 = pothole, 2 = patch (repair).
inline constexpr std::array<std::string_view, kNumDamageClasses> kClassNames{"crack", "pothole", "patch"};

// One YOLO-format annotation: class and normalized center/size in [0, 1].
struct LabelRecord {
  int class_id = 0;
  double cx = 0, cy = 0, w = 0, h = 0;

  // Throws ValidationError when out of schema.
  void validate() const;
  BBox to_box(double width, double height) const;
  static LabelRecord from_box(const BBox& box, int class_id, double width, double height);

  friend bool operator==(const LabelRecord&, const LabelRecord&) = default;
};

std::vector<LabelRecord> parse_yolo_labels(const std::string& text);
std::vector<LabelRecord> load_yolo_labels(const std::filesystem::path& path);
std::string format_yolo_labels(const std::vector<LabelRecord>& labels);
void write_yolo_labels(const std::filesystem::path& path, const std::vector<LabelRecord>& labels);

// 8-bit interleaved RGB raster.
struct Image {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> rgb;

  Image() = default;
  Image(int w, int h, std::uint8_t fill = 0)
      : width(w), height(h), rgb(static_cast<std::size_t>(w) * h * 3, fill) {}
  std::uint8_t& at(int x, int y, int ch) { return rgb[(static_cast<std::size_t>(y) * width + x) * 3 + ch]; }
  std::uint8_t at(int x, int y, int ch) const { return rgb[(static_cast<std::size_t>(y) * width + x) * 3 + ch]; }
  friend bool operator==(const Image&, const Image&) = default;
};

Image read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const Image& image);

enum class ResizeMode { Stretch, Letterbox };

// Pixel coordinates map as x' = x * sx + pad_x (and likewise for y).
struct ResizeResult {
  Image image;
  double sx = 1.0;
  double sy = 1.0;
  int pad_x = 0;
  int pad_y = 0;
};

// Bilinear resize to size x size; letterbox keeps the aspect ratio and pads
// with gray.
ResizeResult resize_to_input(const Image& image, int size, ResizeMode mode = ResizeMode::Stretch);

enum class Split { Train, Val, Test };
std::string_view split_name(Split split);
Split parse_split(const std::string& name);

struct ImageEntry {
  std::string path;  // relative to the dataset root
  int width = 0;
  int height = 0;
  Split split = Split::Train;
  std::vector<LabelRecord> labels;
};

struct DatasetManifest {
  std::vector<ImageEntry> entries;
  int skipped_instances = 0;
  kv::Entries generator;  // echo of the generating config, if any

  // Labels inside their images and unique paths; throws ValidationError.
  void validate() const;
  std::vector<const ImageEntry*> split(Split s) const;
};

struct ManifestStats {
  std::array<std::int64_t, kNumDamageClasses> per_class{};
  std::int64_t instances = 0;
  std::int64_t images = 0;

  // Benchmark-summary style table, one line per class plus totals.
  std::string report() const;
};

ManifestStats manifest_stats(const DatasetManifest& manifest);
// Published per-class instance counts of the top-down road damage benchmark.
ManifestStats published_benchmark_stats();

void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest);
DatasetManifest read_manifest(const std::filesystem::path& path);

// Image tensor (1, 3, h, w) scaled to [0, 1].
Tensor image_to_tensor(const Image& image);

struct Sample {
  Tensor image;                     // (1, 3, input, input)
  std::vector<GroundTruth> boxes;   // input pixel coordinates
};

struct Dataset {
  std::vector<Sample> samples;
  int input_size = 0;
  std::uint64_t hash = 0;  // FNV-1a over pixels and boxes

  bool empty() const { return samples.empty(); }
  std::size_t size() const { return samples.size(); }
};

// Builds tensors for one split from in-memory images aligned with
// manifest.entries.
Dataset build_dataset(const DatasetManifest& manifest, const std::vector<Image>& images, Split split,
                      int input_size, ResizeMode mode = ResizeMode::Stretch);
// Reads <root>/manifest.json and the split's PNGs. Throws IoError naming the
// expected layout when files are missing.
Dataset load_dataset(const std::filesystem::path& root, Split split, int input_size,
                     ResizeMode mode = ResizeMode::Stretch);

std::uint64_t dataset_hash(const Dataset& dataset);

}  // namespace tdrd
