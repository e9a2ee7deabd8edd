#pragma once

#include <vector>

#include "tdrd/tensor.hpp"

// Differentiable primitives on NCHW tensors. Every op validates extents and
// throws DimensionError on mismatch.
namespace tdrd::ops {

struct Conv2dOptions {
  int stride = 1;
  int padding = 0;
  int dilation = 1;
  int groups = 1;
};

// weight: (out, in / groups, kh, kw); bias: undefined or (1, out, 1, 1).
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, Conv2dOptions options = {});

// x: (n, in, 1, 1); weight: (out, in, 1, 1); bias: undefined or (1, out, 1, 1).
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

// Elementwise sum; `b` may have batch 1 and is then broadcast over `a`'s batch.
Tensor add(const Tensor& a, const Tensor& b);

// x * gate per channel; gate is (n, c, 1, 1) or (1, c, 1, 1).
Tensor mul_channel(const Tensor& x, const Tensor& gate);

Tensor scale(const Tensor& x, double factor);

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor silu(const Tensor& x);

// Per-channel spatial mean, (n, c, h, w) -> (n, c, 1, 1).
Tensor global_avg_pool(const Tensor& x);

// Per-sample normalization over channel groups: each group of c / groups
// channels is shifted to zero mean and unit variance over (c / groups, h, w),
// then scaled and shifted per channel. gamma, beta: (1, c, 1, 1).
Tensor group_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, int groups, double eps = 1e-5);

enum class UpsampleMode { Nearest, Bilinear };

// Integer-factor spatial upsampling. Bilinear uses half-pixel centers with
// edge clamping.
Tensor upsample(const Tensor& x, int factor, UpsampleMode mode = UpsampleMode::Nearest);

// Non-differentiable k x k average pooling with stride k.
Tensor avg_pool(const Tensor& x, int k);

struct WindowAttentionOptions {
  int heads = 1;
  int window = 7;               // taps per axis, odd
  std::vector<int> head_rates;  // dilation per head, size == heads
};

// Neighborhood softmax attention. For head h at position p the keys and
// values are sampled at p + (i - c, j - c) * rate_h for a window x window
// grid of taps (c = window / 2); positions outside the map read zeros.
// Logits are q.k / sqrt(head_dim) + tap_logits[h, i] + tap_logits[h, j].
// q, k, v: (n, heads * head_dim, h, w); tap_logits: (1, heads, 1, window).
Tensor window_attention(const Tensor& q, const Tensor& k, const Tensor& v, const Tensor& tap_logits,
                        const WindowAttentionOptions& options);

}  // namespace tdrd::ops
