#include <gtest/gtest.h>

#include <cmath>

#include "tdrd/errors.hpp"
#include "tdrd/vgau.hpp"
#include "test_util.hpp"

namespace tdrd {
namespace {

using testing::grad_check;
using testing::max_abs_diff;
using testing::random_parameter;
using testing::random_tensor;
using testing::random_weights;
using testing::weighted_sum;

Vgau make(int high, int low, int out, std::uint64_t seed) {
  Rng rng(seed);
  return Vgau({high, low, out}, rng);
}

TEST(Vgau, IdentityCompressKernel) {
  Vgau v = make(4, 3, 3, 1);
  nn::fill(v.compress().weight(), 0.0);
  nn::fill(v.compress().bias(), 0.0);
  for (int c = 0; c < 3; ++c) v.compress().weight().at(c, c, 1, 1) = 1.0;
  Rng rng(2);
  const Tensor low = random_tensor(Shape{1, 3, 6, 6}, rng);
  EXPECT_EQ(max_abs_diff(v.channel_compress(low).values(), low.values()), 0.0);
}

TEST(Vgau, ZeroCompressKernelAndShape) {
  Vgau v = make(4, 4, 2, 3);
  Rng rng(4);
  EXPECT_EQ(v.channel_compress(random_tensor(Shape{1, 4, 8, 8}, rng)).shape(), (Shape{1, 2, 8, 8}));
  nn::fill(v.compress().weight(), 0.0);
  nn::fill(v.compress().bias(), 0.0);
  const Tensor y = v.channel_compress(random_tensor(Shape{1, 4, 8, 8}, rng));
  for (double x : y.values()) EXPECT_EQ(x, 0.0);
}

TEST(Vgau, CompressRejectsChannelMismatch) {
  Vgau v = make(4, 4, 2, 5);
  EXPECT_THROW(v.channel_compress(Tensor(Shape{1, 3, 8, 8})), ConfigError);
}

TEST(Vgau, GateOfZeroHighIsZero) {
  Vgau v = make(4, 4, 2, 6);
  nn::fill(v.gate_linear().bias(), 0.0);
  const Tensor g = v.global_context_gate(Tensor(Shape{1, 4, 3, 3}));
  for (double x : g.values()) EXPECT_EQ(x, 0.0);
}

TEST(Vgau, GateScalarHandExample) {
  Vgau v = make(1, 1, 1, 7);
  nn::fill(v.gate_linear().weight(), 1.0);
  nn::fill(v.gate_linear().bias(), 0.0);
  EXPECT_NEAR(v.global_context_gate(Tensor(Shape{1, 1, 2, 2}, 1.0)).item(), 0.731059, 1e-5);
}

TEST(Vgau, GateIgnoresSpatialOrder) {
  Vgau v = make(3, 2, 2, 8);
  Rng rng(9);
  const Tensor high = random_tensor(Shape{1, 3, 3, 3}, rng);
  Tensor flipped(high.shape());
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < 3; ++y)
      for (int x = 0; x < 3; ++x) flipped.at(0, c, y, x) = high.at(0, c, 2 - y, 2 - x);
  EXPECT_LT(max_abs_diff(v.global_context_gate(high).values(), v.global_context_gate(flipped).values()), 1e-12);
}

TEST(Vgau, ZeroGateLeavesOnlyUpsampledProjection) {
  Vgau v = make(4, 3, 2, 10);
  nn::fill(v.gate_linear().weight(), 0.0);
  nn::fill(v.gate_linear().bias(), 0.0);
  Rng rng(11);
  const Tensor high = random_tensor(Shape{1, 4, 3, 3}, rng), low = random_tensor(Shape{1, 3, 6, 6}, rng);
  const Tensor expected = ops::upsample(v.project().forward(high), 2);
  EXPECT_EQ(max_abs_diff(v.forward(high, low).values(), expected.values()), 0.0);
}

TEST(Vgau, ZeroHighWithZeroBiasesGivesZero) {
  Vgau v = make(4, 3, 2, 12);
  nn::fill(v.gate_linear().bias(), 0.0);
  nn::fill(v.project().bias(), 0.0);
  Rng rng(13);
  const Tensor y = v.forward(Tensor(Shape{1, 4, 3, 3}), random_tensor(Shape{1, 3, 6, 6}, rng));
  for (double x : y.values()) EXPECT_EQ(x, 0.0);
}

TEST(Vgau, NearestUpsampleBlockReplicates) {
  const Tensor x(Shape{1, 1, 2, 2}, std::vector<double>{1, 2, 3, 4});
  const Tensor y = ops::upsample(x, 2);
  const std::vector<double> expected{1, 1, 2, 2, 1, 1, 2, 2, 3, 3, 4, 4, 3, 3, 4, 4};
  EXPECT_EQ(std::vector<double>(y.values().begin(), y.values().end()), expected);
}

TEST(Vgau, OutputShapeFollowsLowResolution) {
  Vgau v = make(8, 4, 6, 14);
  Rng rng(15);
  EXPECT_EQ(v.forward(random_tensor(Shape{2, 8, 4, 5}, rng), random_tensor(Shape{2, 4, 8, 10}, rng)).shape(),
            (Shape{2, 6, 8, 10}));
}

TEST(Vgau, RejectsWrongSpatialRatio) {
  Vgau v = make(4, 4, 4, 16);
  EXPECT_THROW(v.forward(Tensor(Shape{1, 4, 4, 4}), Tensor(Shape{1, 4, 6, 6})), DimensionError);
  EXPECT_THROW(v.forward(Tensor(Shape{1, 4, 4, 4}), Tensor(Shape{1, 4, 8, 7})), DimensionError);
}

TEST(Vgau, LinearInLowFeaturesForFixedGate) {
  Vgau v = make(4, 3, 2, 17);
  nn::fill(v.compress().bias(), 0.0);
  Rng rng(18);
  const Tensor high = random_tensor(Shape{1, 4, 3, 3}, rng);
  const Tensor x = random_tensor(Shape{1, 3, 6, 6}, rng), y = random_tensor(Shape{1, 3, 6, 6}, rng);
  const double a = 1.7, b = -0.4;
  std::vector<double> mix(x.numel());
  for (std::size_t i = 0; i < mix.size(); ++i) mix[i] = a * x.values()[i] + b * y.values()[i];
  const Tensor up = ops::upsample(v.project().forward(high), 2);
  auto low_term = [&](const Tensor& low) {
    const Tensor out = v.forward(high, low);
    std::vector<double> d(out.numel());
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = out.values()[i] - up.values()[i];
    return d;
  };
  const auto tx = low_term(x), ty = low_term(y), tm = low_term(Tensor(x.shape(), mix));
  double worst = 0;
  for (std::size_t i = 0; i < tm.size(); ++i) worst = std::max(worst, std::abs(tm[i] - (a * tx[i] + b * ty[i])));
  EXPECT_LT(worst, 1e-6);
}

TEST(Vgau, GradientsMatchFiniteDifferences) {
  for (auto mode : {ops::UpsampleMode::Nearest, ops::UpsampleMode::Bilinear}) {
    Rng rng(19);
    Vgau v({4, 3, 2, mode}, rng);
    Tensor high = random_parameter(Shape{1, 4, 3, 3}, rng), low = random_parameter(Shape{1, 3, 6, 6}, rng);
    const auto w = random_weights(2 * 36, rng);
    auto params = v.named_parameters();
    params.push_back({"high", high});
    params.push_back({"low", low});
    const auto r = grad_check([&] { return weighted_sum(v.forward(high, low), w); }, params, rng, 4);
    EXPECT_GE(r.checked, 20);
    EXPECT_LT(r.worst_rel, 1e-4) << r.worst_name;
  }
}

}  // namespace
}  // namespace tdrd
