#include "tdrd/flops.hpp"

#include "tdrd/errors.hpp"

namespace tdrd {

namespace {
thread_local FlopRecorder* g_active = nullptr;
}

std::int64_t layer_flops(const LayerRecord& l) {
  const std::int64_t out_area = l.out_h * l.out_w;
  switch (l.kind) {
    case LayerKind::Conv2d:
      return 2 * l.kernel_h * l.kernel_w * l.in_channels * l.out_channels * out_area;
    case LayerKind::DepthwiseConv2d:
      return 2 * l.kernel_h * l.kernel_w * l.out_channels * out_area;
    case LayerKind::Linear:
      return 2 * l.in_channels * l.out_channels;
    case LayerKind::WindowAttention: {
      // Each query scores window^2 keys and mixes window^2 values over all
      // channels (heads * head_dim = channels).
      const std::int64_t taps = l.window * l.window;
      const std::int64_t qk = taps * l.in_channels * out_area;
      const std::int64_t av = taps * l.in_channels * out_area;
      return 2 * (qk + av);
    }
  }
  throw AccountingError("unknown layer kind " + std::to_string(static_cast<int>(l.kind)) + " for layer '" +
                        l.name + "'");
}

std::int64_t count_flops(const std::vector<LayerRecord>& layers) {
  std::int64_t total = 0;
  for (const auto& l : layers) total += layer_flops(l);
  return total;
}

FlopRecorder::FlopRecorder() : previous_(g_active) { g_active = this; }
FlopRecorder::~FlopRecorder() { g_active = previous_; }

void FlopRecorder::record(const LayerRecord& layer) {
  if (g_active) g_active->layers_.push_back(layer);
}

}  // namespace tdrd
