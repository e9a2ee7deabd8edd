#pragma once

#include "tdrd/nn.hpp"
#include "tdrd/ops.hpp"
#include "tdrd/tensor.hpp"

namespace tdrd {

struct VgauConfig {
  int high_channels = 1;
  int low_channels = 1;
  int out_channels = 1;
  ops::UpsampleMode upsample_mode = ops::UpsampleMode::Nearest;
};

// Global attentional upsampling: the global context of the coarse (high-level)
// map gates the 3x3-compressed fine (low-level) map, which is then summed with
// the 2x-upsampled projection of the coarse map.
//
//   out = up2(project(F_high)) + SiLU(Linear(GAP(F_high))) * compress(F_low)
class Vgau : public nn::Module {
 public:
  Vgau(const VgauConfig& cfg, Rng& rng);

  // 3x3, stride 1, pad 1: low_channels -> out_channels.
  FeatureMap channel_compress(const FeatureMap& low) const;
  // (n, out_channels, 1, 1) gate.
  Tensor global_context_gate(const FeatureMap& high) const;
  FeatureMap forward(const FeatureMap& high, const FeatureMap& low) const;

  void collect_parameters(const std::string& prefix, std::vector<nn::NamedTensor>& out) const override;

  const VgauConfig& config() const { return cfg_; }
  nn::Conv2d& compress() { return compress_; }
  nn::Linear& gate_linear() { return gate_; }
  nn::Conv2d& project() { return project_; }

 private:
  VgauConfig cfg_;
  nn::Conv2d compress_;
  nn::Linear gate_;
  nn::Conv2d project_;
};

}  // namespace tdrd
