#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "tdrd/attention_mapse.hpp"
#include "tdrd/boxes.hpp"
#include "tdrd/kv.hpp"
#include "tdrd/nn.hpp"
#include "tdrd/ops.hpp"
#include "tdrd/vgau.hpp"

namespace tdrd {

struct ModelConfig {
  bool use_dsc = true;
  bool use_mapse = true;
  bool use_vgau = true;
  std::vector<int> stage_channels{16, 32, 64};
  int num_classes = 3;
  int input_size = 512;
  std::vector<int> strides{8, 16, 32};
  double nms_iou = 0.45;
  double conf_floor = 0.001;
  int max_detections = 300;
  std::uint64_t seed = 0;

  int stem_channels = 8;
  // Width multiplier of the depthwise stage inside a DSC residual block.
  int dsc_expansion = 5;
  int mapse_heads = 4;
  int mapse_window = 7;
  std::vector<int> mapse_rates{1, 2, 4};
  int se_reduction = 4;
  PositionEncoding position_encoding = PositionEncoding::Sinusoidal;
  ops::UpsampleMode upsample_mode = ops::UpsampleMode::Nearest;

  double box_weight = 5.0;
  double cls_weight = 1.0;

  // Throws ConfigError on an unusable combination.
  void validate() const;

  // Canonical `model.<key>=<value>` entries and their inverse. Unknown
  // `model.` keys are rejected.
  kv::Entries to_entries() const;
  void apply(const std::string& key, const std::string& value);
  static ModelConfig from_entries(const kv::Entries& entries);
};

// Per-scale dense predictions. maps[i] is (n, 4 + num_classes, g_i, g_i)
// with channels (tx, ty, tw, th, class logits...).
struct RawPrediction {
  std::vector<Tensor> maps;
  std::vector<int> strides;
  int num_classes = 0;
  int input_size = 0;

  int batch() const { return maps.empty() ? 0 : maps.front().shape().n; }
};

class Detector : public nn::Module {
 public:
  explicit Detector(const ModelConfig& cfg);
  ~Detector() override;
  Detector(Detector&&) noexcept;
  Detector& operator=(Detector&&) noexcept;
  Detector(const Detector&) = delete;
  Detector& operator=(const Detector&) = delete;

  // images: (n, 3, input_size, input_size).
  RawPrediction forward(const FeatureMap& images) const;
  void collect_parameters(const std::string& prefix, std::vector<nn::NamedTensor>& out) const override;

  const ModelConfig& config() const;
  // Zeroes the final 1x1 prediction layers (weights and biases).
  void zero_prediction_layers();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

Detector build_model(const ModelConfig& cfg);

// Decodes one batch item: center = (cell + sigmoid(t)) * stride,
// size = exp(t) * stride, score = sigmoid(logit); scores below conf_floor are
// dropped and boxes clipped to the image.
std::vector<Detection> decode(const RawPrediction& raw, const ModelConfig& cfg, int batch_index = 0);

// Greedy per-class suppression; output sorted by score descending.
std::vector<Detection> nms(std::vector<Detection> dets, double iou_threshold);

// decode -> top-k -> nms -> max_detections for every batch item (no graph).
std::vector<std::vector<Detection>> detect(const Detector& model, const FeatureMap& images);

// Target cell and ideal raw offsets for one ground-truth box. The scale is
// the largest stride not exceeding sqrt(area) (the finest if none), the cell
// the one containing the box center.
struct EncodedTarget {
  int scale = 0;
  int gy = 0;
  int gx = 0;
  double tx = 0, ty = 0, tw = 0, th = 0;
};
EncodedTarget encode_target(const GroundTruth& gt, const ModelConfig& cfg);

struct LossBreakdown {
  Tensor total;  // scalar, differentiable w.r.t. the raw maps
  double box = 0.0;
  double cls = 0.0;
  int positives = 0;
};

// box = box_weight * sum(1 - CIoU) / max(1, positives) over assigned cells;
// cls = cls_weight * sum(BCE) / max(1, positives) over every cell and class.
// targets[i] holds batch item i's boxes in input pixel coordinates.
LossBreakdown detection_loss(const RawPrediction& raw, const std::vector<std::vector<GroundTruth>>& targets,
                             const ModelConfig& cfg);

// Complete IoU of two boxes: IoU - center distance^2 / enclosing diagonal^2
// - alpha * aspect term.
double ciou(const BBox& a, const BBox& b);

}  // namespace tdrd
