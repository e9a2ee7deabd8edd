#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "tdrd/data.hpp"
#include "tdrd/kv.hpp"

namespace tdrd {

struct Range {
  double lo = 0.0;
  double hi = 0.0;
};

// Synthetic top-down road scenes. Sizes are fractions of image_size and
// intensities are 8-bit gray levels.
struct SynthConfig {
  int num_images = 20;
  int image_size = 256;
  std::array<double, kNumDamageClasses> class_mix{1.0 / 3, 1.0 / 3, 1.0 / 3};
  std::uint64_t seed = 0;
  double val_fraction = 0.2;
  double test_fraction = 0.0;
  int min_instances = 1;
  int max_instances = 3;

  Range background{95.0, 135.0};
  double background_noise = 9.0;

  Range crack_length{0.18, 0.45};
  Range crack_width{0.008, 0.016};
  Range crack_intensity{25.0, 55.0};
  Range pothole_size{0.10, 0.26};
  Range pothole_intensity{20.0, 50.0};
  Range patch_size{0.12, 0.32};
  Range patch_intensity{175.0, 215.0};

  // Throws ConfigError.
  void validate() const;

  kv::Entries to_entries() const;  // `synth.<key>=<value>`
  void apply(const std::string& key, const std::string& value);
};

struct SynthResult {
  DatasetManifest manifest;
  std::vector<Image> images;  // aligned with manifest.entries
};

SynthResult synth_generate(const SynthConfig& cfg);

// Writes images/{split}/NNNNNN.png, labels/{split}/NNNNNN.txt and
// manifest.json under root.
void write_dataset(const std::filesystem::path& root, const SynthResult& result);

}  // namespace tdrd
