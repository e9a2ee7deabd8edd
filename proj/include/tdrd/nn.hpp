#pragma once

#include <string>
#include <vector>

#include "tdrd/ops.hpp"
#include "tdrd/rng.hpp"
#include "tdrd/tensor.hpp"

namespace tdrd::nn {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

class Module {
 public:
  virtual ~Module() = default;
  // Appends this module's parameters as `prefix + local_name`.
  virtual void collect_parameters(const std::string& prefix, std::vector<NamedTensor>& out) const = 0;

  std::vector<NamedTensor> named_parameters() const;
  std::size_t parameter_count() const;
};

// He-normal weights scaled by `gain`; zero bias.
Tensor init_weight(Shape shape, int fan_in, Rng& rng, double gain = 1.0);

class Conv2d : public Module {
 public:
  Conv2d() = default;
  Conv2d(int in_channels, int out_channels, int kernel, ops::Conv2dOptions options, Rng& rng, bool bias = true,
         double gain = 1.0);

  Tensor forward(const Tensor& x) const { return ops::conv2d(x, weight_, bias_, options_); }
  void collect_parameters(const std::string& prefix, std::vector<NamedTensor>& out) const override;

  Tensor& weight() { return weight_; }
  Tensor& bias() { return bias_; }
  int in_channels() const { return weight_.shape().c * options_.groups; }
  int out_channels() const { return weight_.shape().n; }

 private:
  ops::Conv2dOptions options_;
  Tensor weight_;
  Tensor bias_;
};

class Linear : public Module {
 public:
  Linear() = default;
  Linear(int in_features, int out_features, Rng& rng, bool bias = true, double gain = 1.0);

  Tensor forward(const Tensor& x) const { return ops::linear(x, weight_, bias_); }
  void collect_parameters(const std::string& prefix, std::vector<NamedTensor>& out) const override;

  Tensor& weight() { return weight_; }
  Tensor& bias() { return bias_; }
  int in_features() const { return weight_.shape().c; }
  int out_features() const { return weight_.shape().n; }

 private:
  Tensor weight_;
  Tensor bias_;
};

// Bias-free convolution followed by group normalization with a per-channel
// scale and shift. Groups = gcd(out_channels, 8).
class ConvNorm : public Module {
 public:
  ConvNorm() = default;
  ConvNorm(int in_channels, int out_channels, int kernel, ops::Conv2dOptions options, Rng& rng,
           double scale_init = 1.0);

  Tensor forward(const Tensor& x) const;
  void collect_parameters(const std::string& prefix, std::vector<NamedTensor>& out) const override;

  Conv2d& conv() { return conv_; }
  Tensor& norm_scale() { return scale_; }
  Tensor& norm_shift() { return shift_; }
  int groups() const { return groups_; }

 private:
  Conv2d conv_;
  Tensor scale_;
  Tensor shift_;
  int groups_ = 1;
};

// Sets every value of `t` to `v` (test and initialization helper).
void fill(Tensor& t, double v);

}  // namespace tdrd::nn
