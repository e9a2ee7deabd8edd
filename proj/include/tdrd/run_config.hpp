#pragma once

#include <filesystem>
#include <string>

#include "tdrd/data.hpp"
#include "tdrd/detector.hpp"
#include "tdrd/kv.hpp"
#include "tdrd/metrics.hpp"
#include "tdrd/synth.hpp"
#include "tdrd/trainer.hpp"

namespace tdrd {

// Everything one command needs, read from flat `namespace.key=value` text.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  SynthConfig synth;
  std::filesystem::path data_root = "data";
  ResizeMode resize = ResizeMode::Stretch;
  ApInterpolation ap_mode = ApInterpolation::Point101;
  int bench_trials = 50;
  int bench_warmup = 5;

  void validate() const;
  kv::Entries to_entries() const;
  // Throws ValidationError on unknown keys or bad values.
  void apply(const std::string& key, const std::string& value);
  void apply(const kv::Entries& entries);

  std::string to_text() const;
  static RunConfig from_text(const std::string& text);
  static RunConfig load(const std::filesystem::path& path);
  void write(const std::filesystem::path& path) const;

  // "full" (512 px, 300 epochs, batch 32), "desk" (256 px, 30 epochs,
  // batch 8) or "overfit" (8 images at 128 px, up to 2000 steps).
  static RunConfig preset(const std::string& name);
};

}  // namespace tdrd
