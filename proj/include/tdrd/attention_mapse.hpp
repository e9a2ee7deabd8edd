#pragma once

#include <span>
#include <vector>

#include "tdrd/nn.hpp"
#include "tdrd/tensor.hpp"

namespace tdrd {

enum class PositionEncoding { Learned, Sinusoidal };

struct PatchEmbedConfig {
  int patch_size = 1;
  int in_channels = 1;
  int embed_channels = 1;
  PositionEncoding position_encoding = PositionEncoding::Sinusoidal;
  // Token grid extents; required only for learned positions.
  int grid_h = 0;
  int grid_w = 0;
};

// Fixed 2-D sinusoidal position table of shape (1, channels, h, w). The first
// channels / 2 channels encode the row index and the rest the column index;
// within an axis block of D channels, channel j holds sin (j even) or cos
// (j odd) of pos / 10000^(2 * (j / 2) / D).
Tensor sinusoid_table(int channels, int h, int w);

// Non-overlapping patch projection (kernel = stride = patch_size) followed by
// an additive position encoding.
class PatchEmbed : public nn::Module {
 public:
  PatchEmbed(const PatchEmbedConfig& cfg, Rng& rng);

  FeatureMap forward(const FeatureMap& x) const;
  void collect_parameters(const std::string& prefix, std::vector<nn::NamedTensor>& out) const override;

  const PatchEmbedConfig& config() const { return cfg_; }
  nn::Conv2d& projection() { return proj_; }
  Tensor& positions() { return positions_; }

 private:
  PatchEmbedConfig cfg_;
  nn::Conv2d proj_;
  Tensor positions_;  // learned only
};

struct DilatedAttentionConfig {
  int window = 7;  // taps per axis (k), odd
  std::vector<int> rates{1, 2, 4};
  int heads = 4;

  // Throws ConfigError unless the config is usable on `channels` channels.
  void validate(int channels) const;
  // Dilation rate of every head: heads are split evenly across rates with
  // the remainder going to the first (smallest) rate.
  std::vector<int> head_rates() const;
};

// Weighted sum over a k x k grid of taps spaced `rate` apart, with the
// separable tap weight weights[i] * weights[j]; zero padding at borders.
// On a 1-row map this is out(p) = sum_i w_i x(p + (i - (k - 1) / 2) * rate)
// scaled by the center weight.
FeatureMap dilated_gather(const FeatureMap& x, int rate, std::span<const double> weights);

// Multi-head sliding-window dilated attention. Heads are grouped by dilation
// rate; each head carries learnable per-tap logits (one per axis) that act as
// the aggregation weights when query-key scores vanish.
class Swda : public nn::Module {
 public:
  Swda(int channels, const DilatedAttentionConfig& cfg, Rng& rng);

  FeatureMap forward(const FeatureMap& tokens) const;
  void collect_parameters(const std::string& prefix, std::vector<nn::NamedTensor>& out) const override;

  const DilatedAttentionConfig& config() const { return cfg_; }
  nn::Conv2d& query() { return q_; }
  nn::Conv2d& key() { return k_; }
  nn::Conv2d& value() { return v_; }
  nn::Conv2d& output() { return o_; }
  Tensor& tap_logits() { return taps_; }

 private:
  int channels_;
  DilatedAttentionConfig cfg_;
  nn::Conv2d q_, k_, v_, o_;
  Tensor taps_;
};

// Squeeze-and-excitation: gate = sigmoid(W2 relu(W1 gap(F))), no biases.
class SqueezeExcite : public nn::Module {
 public:
  SqueezeExcite(int channels, int reduction, Rng& rng);

  // (n, c, 1, 1) gate with entries in (0, 1).
  Tensor gate(const FeatureMap& f) const;
  // F scaled per channel by its gate.
  FeatureMap forward(const FeatureMap& f) const;
  void collect_parameters(const std::string& prefix, std::vector<nn::NamedTensor>& out) const override;

  nn::Linear& squeeze() { return w1_; }
  nn::Linear& excite() { return w2_; }
  int channels() const { return channels_; }

 private:
  int channels_;
  nn::Linear w1_, w2_;
};

struct MapseConfig {
  int channels = 64;
  DilatedAttentionConfig attention;
  int se_reduction = 4;
  int mlp_expansion = 2;
  int patch_size = 1;
  PositionEncoding position_encoding = PositionEncoding::Sinusoidal;
  int grid_h = 0;  // learned positions only
  int grid_w = 0;
};

// Residual attention block: F_final = SE(MLP(SWDA(embed(DWConv(F))))) + F.
class Mapse : public nn::Module {
 public:
  Mapse(const MapseConfig& cfg, Rng& rng);

  struct Output {
    FeatureMap final;
    FeatureMap branch;  // recalibrated branch before the skip addition
  };

  FeatureMap forward(const FeatureMap& x) const { return forward_with_branch(x).final; }
  Output forward_with_branch(const FeatureMap& x) const;
  void collect_parameters(const std::string& prefix, std::vector<nn::NamedTensor>& out) const override;

  const MapseConfig& config() const { return cfg_; }
  nn::Conv2d& depthwise() { return dw_; }
  PatchEmbed& embed() { return embed_; }
  Swda& attention() { return swda_; }
  nn::Conv2d& mlp_in() { return fc1_; }
  nn::Conv2d& mlp_out() { return fc2_; }
  SqueezeExcite& recalibration() { return se_; }

 private:
  MapseConfig cfg_;
  nn::Conv2d dw_;
  PatchEmbed embed_;
  Swda swda_;
  nn::Conv2d fc1_, fc2_;
  SqueezeExcite se_;
};

}  // namespace tdrd
