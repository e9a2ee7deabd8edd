#include "tdrd/nn.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace tdrd::nn {

std::vector<NamedTensor> Module::named_parameters() const {
  std::vector<NamedTensor> out;
  collect_parameters("", out);
  return out;
}

std::size_t Module::parameter_count() const {
  std::size_t total = 0;
  for (const auto& p : named_parameters()) total += p.tensor.numel();
  return total;
}

Tensor init_weight(Shape shape, int fan_in, Rng& rng, double gain) {
  const double stddev = gain * std::sqrt(2.0 / std::max(1, fan_in));
  std::vector<double> v(shape.numel());
  for (double& x : v) x = rng.normal(0.0, stddev);
  return Tensor::parameter(shape, std::move(v));
}

Conv2d::Conv2d(int in_channels, int out_channels, int kernel, ops::Conv2dOptions options, Rng& rng, bool bias,
               double gain)
    : options_(options) {
  const int in_per_group = in_channels / options.groups;
  weight_ = init_weight(Shape{out_channels, in_per_group, kernel, kernel}, in_per_group * kernel * kernel, rng, gain);
  if (bias) bias_ = Tensor::parameter(Shape{1, out_channels, 1, 1}, std::vector<double>(out_channels, 0.0));
}

void Conv2d::collect_parameters(const std::string& prefix, std::vector<NamedTensor>& out) const {
  out.push_back({prefix + "weight", weight_});
  if (bias_.defined()) out.push_back({prefix + "bias", bias_});
}

Linear::Linear(int in_features, int out_features, Rng& rng, bool bias, double gain) {
  weight_ = init_weight(Shape{out_features, in_features, 1, 1}, in_features, rng, gain);
  if (bias) bias_ = Tensor::parameter(Shape{1, out_features, 1, 1}, std::vector<double>(out_features, 0.0));
}

void Linear::collect_parameters(const std::string& prefix, std::vector<NamedTensor>& out) const {
  out.push_back({prefix + "weight", weight_});
  if (bias_.defined()) out.push_back({prefix + "bias", bias_});
}

ConvNorm::ConvNorm(int in_channels, int out_channels, int kernel, ops::Conv2dOptions options, Rng& rng,
                   double scale_init)
    : conv_(in_channels, out_channels, kernel, options, rng, false),
      scale_(Tensor::parameter(Shape{1, out_channels, 1, 1}, std::vector<double>(out_channels, scale_init))),
      shift_(Tensor::parameter(Shape{1, out_channels, 1, 1}, std::vector<double>(out_channels, 0.0))),
      groups_(std::gcd(out_channels, 8)) {}

Tensor ConvNorm::forward(const Tensor& x) const { return ops::group_norm(conv_.forward(x), scale_, shift_, groups_); }

void ConvNorm::collect_parameters(const std::string& prefix, std::vector<NamedTensor>& out) const {
  conv_.collect_parameters(prefix, out);
  out.push_back({prefix + "norm.scale", scale_});
  out.push_back({prefix + "norm.shift", shift_});
}

void fill(Tensor& t, double v) {
  auto values = t.mutable_values();
  std::fill(values.begin(), values.end(), v);
}

}  // namespace tdrd::nn
