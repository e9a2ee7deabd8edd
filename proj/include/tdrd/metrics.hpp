#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "tdrd/boxes.hpp"
#include "tdrd/data.hpp"
#include "tdrd/detector.hpp"

namespace tdrd {

enum class ApInterpolation { Point101, AllPoint };

// Greedy matching at one IoU threshold. Predictions are visited in
// ranks_before order; flags are returned in that order (sorted_preds, if
// given, receives the visiting order).
std::vector<bool> match_detections(const std::vector<Detection>& preds, const std::vector<GroundTruth>& gts,
                                   double iou_threshold, std::vector<Detection>* sorted_preds = nullptr);

// flags are TP/FP in descending score order. Returns nullopt when there is
// nothing to score (num_gt == 0 and no predictions).
std::optional<double> average_precision(const std::vector<bool>& flags, int num_gt,
                                        ApInterpolation mode = ApInterpolation::Point101);

// Per-image predictions and ground truths, aligned by index.
struct EvalInput {
  std::vector<std::vector<Detection>> preds;
  std::vector<std::vector<GroundTruth>> gts;
};

struct MapResult {
  double map_50_95 = 0.0;
  double map_50 = 0.0;
  // AP@[.50:.95] per class; nullopt when the class never occurs.
  std::array<std::optional<double>, kNumDamageClasses> per_class_ap{};
};

MapResult evaluate_map(const EvalInput& input, ApInterpolation mode = ApInterpolation::Point101);
double map_50_95(const EvalInput& input, ApInterpolation mode = ApInterpolation::Point101);
double map_50(const EvalInput& input, ApInterpolation mode = ApInterpolation::Point101);

// TP / (TP + FP) over predictions with score >= conf, matched at IoU 0.5.
// 0 when nothing survives the threshold.
double precision_at_conf(const EvalInput& input, double conf = 0.5);

// Analytic GFLOPs of one batch-1 forward pass at the given input size.
double count_flops(const Detector& model, int input_size);

struct FpsResult {
  double fps = 0.0;
  double median_ms = 0.0;
  double p95_ms = 0.0;
  int timed = 0;
};

// Runs `forward` warmup + trials times and times only the trials.
FpsResult measure_fps(const std::function<void()>& forward, int trials, int warmup);
FpsResult measure_fps(const Detector& model, int trials, int warmup);

struct MetricsReport {
  double map_50_95 = 0.0;
  double map_50 = 0.0;
  double precision_at_05 = 0.0;
  double gflops = 0.0;
  double fps = 0.0;
  // AP@[.50:.95] per class; empty for classes absent from both predictions
  // and ground truth (written as null / blank).
  std::array<std::optional<double>, kNumDamageClasses> per_class_ap{};

  std::string to_json() const;
  static std::string csv_header();
  std::string csv_row() const;
  // Human table in the layout mAP(%) | Pre(%) | FLOPs(G) | FPS.
  std::string table() const;
};

// Runs detection over the dataset (batch 1, no graph) and fills every
// accuracy field. gflops and fps are left at zero.
MetricsReport evaluate_accuracy(const Detector& model, const Dataset& dataset,
                                ApInterpolation mode = ApInterpolation::Point101);

}  // namespace tdrd
