#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace tdrd {

enum class LayerKind {
  Conv2d,
  DepthwiseConv2d,
  Linear,
  WindowAttention,
};

// Shape summary of one counted layer for a single image (batch 1).
struct LayerRecord {
  LayerKind kind = LayerKind::Conv2d;
  std::string name;
  std::int64_t in_channels = 0;
  std::int64_t out_channels = 0;
  std::int64_t kernel_h = 1;
  std::int64_t kernel_w = 1;
  std::int64_t out_h = 1;
  std::int64_t out_w = 1;
  std::int64_t window = 0;  // attention taps per axis
};

// Analytic FLOPs (2 x multiply-accumulate) of one layer. Throws
// AccountingError on a kind it does not know.
std::int64_t layer_flops(const LayerRecord& layer);

// Sum over a sequence of layers.
std::int64_t count_flops(const std::vector<LayerRecord>& layers);

// Collects LayerRecords emitted by differentiable ops on this thread while
// alive. Nested recorders are not supported; the innermost one wins.
class FlopRecorder {
 public:
  FlopRecorder();
  ~FlopRecorder();
  FlopRecorder(const FlopRecorder&) = delete;
  FlopRecorder& operator=(const FlopRecorder&) = delete;

  const std::vector<LayerRecord>& layers() const { return layers_; }
  std::int64_t total_flops() const { return count_flops(layers_); }

  // Called by ops; no-op when no recorder is active.
  static void record(const LayerRecord& layer);

 private:
  FlopRecorder* previous_;
  std::vector<LayerRecord> layers_;
};

}  // namespace tdrd
