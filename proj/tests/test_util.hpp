#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "tdrd/nn.hpp"
#include "tdrd/rng.hpp"
#include "tdrd/tensor.hpp"

namespace tdrd::testing {

inline Tensor random_tensor(Shape s, Rng& rng, double sd = 1.0) {
  std::vector<double> v(s.numel());
  for (auto& x : v) x = rng.normal(0.0, sd);
  return Tensor(s, std::move(v));
}

inline Tensor random_parameter(Shape s, Rng& rng, double sd = 1.0) {
  const Tensor t = random_tensor(s, rng, sd);
  return Tensor::parameter(s, std::vector<double>(t.values().begin(), t.values().end()));
}

inline std::vector<double> random_weights(std::size_t n, Rng& rng) {
  std::vector<double> w(n);
  for (auto& x : w) x = rng.normal();
  return w;
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) return INFINITY;
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

struct GradCheckResult {
  int checked = 0;
  int floored = 0;  // entries with both gradients below kGradFloor
  double worst_rel = 0.0;
  std::string worst_name;
};

inline constexpr double kGradFloor = 1e-5;

// Central finite differences of `objective` against the analytic gradient
// held in each tensor after `objective().backward()`. Samples `per_tensor`
// entries of every tensor (all entries if smaller), at least `min_total`
// overall when possible.
inline GradCheckResult grad_check(const std::function<Tensor()>& objective, std::vector<nn::NamedTensor> tensors,
                                  Rng& rng, int per_tensor = 3, double step = 1e-5) {
  for (auto& t : tensors) t.tensor.zero_grad();
  objective().backward();
  GradCheckResult r;
  for (auto& t : tensors) {
    const std::size_t n = t.tensor.numel();
    std::vector<std::size_t> picks;
    if (n <= static_cast<std::size_t>(per_tensor)) {
      for (std::size_t i = 0; i < n; ++i) picks.push_back(i);
    } else {
      for (int i = 0; i < per_tensor; ++i) picks.push_back(static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(n) - 1)));
    }
    const auto grad = t.tensor.grad();
    for (std::size_t idx : picks) {
      const double analytic = grad.empty() ? 0.0 : grad[idx];
      auto values = t.tensor.mutable_values();
      const double orig = values[idx];
      values[idx] = orig + step;
      const double up = objective().item();
      values[idx] = orig - step;
      const double down = objective().item();
      values[idx] = orig;
      const double numeric = (up - down) / (2 * step);
      // At step 1e-5 roundoff in a loss of order 10 is about 1e-10, so
      // gradients below kGradFloor are held to an absolute 1e-4 * kGradFloor.
      const double scale = std::max({std::abs(analytic), std::abs(numeric), kGradFloor});
      const double rel = std::abs(analytic - numeric) / scale;
      ++r.checked;
      r.floored += scale == kGradFloor;
      if (rel > r.worst_rel) {
        r.worst_rel = rel;
        r.worst_name = t.name + "[" + std::to_string(idx) + "] analytic " + std::to_string(analytic) + " numeric " +
                       std::to_string(numeric);
      }
    }
  }
  return r;
}

// Scalar sum(out * weights) so a map-valued function can be checked.
inline Tensor weighted_sum(const Tensor& out, const std::vector<double>& weights) {
  double s = 0;
  const auto v = out.values();
  for (std::size_t i = 0; i < v.size(); ++i) s += v[i] * weights[i];
  return Tensor::from_op(Shape{1, 1, 1, 1}, {s}, {out}, [weights](detail::Node& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[0] * weights[i];
  });
}

}  // namespace tdrd::testing
