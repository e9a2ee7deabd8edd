#include "tdrd/vgau.hpp"

#include <string>

#include "tdrd/errors.hpp"

namespace tdrd {

namespace {

const VgauConfig& checked(const VgauConfig& cfg) {
  if (cfg.high_channels < 1 || cfg.low_channels < 1 || cfg.out_channels < 1)
    throw ConfigError("VGAU channel counts must be positive");
  return cfg;
}

void expect_channels(const FeatureMap& f, int channels, const char* which) {
  if (f.shape().c != channels)
    throw ConfigError(std::string("VGAU ") + which + " input expects " + std::to_string(channels) +
                      " channels, got " + std::to_string(f.shape().c));
}

}  // namespace

Vgau::Vgau(const VgauConfig& cfg, Rng& rng)
    : cfg_(checked(cfg)),
      compress_(cfg.low_channels, cfg.out_channels, 3, ops::Conv2dOptions{1, 1, 1, 1}, rng),
      gate_(cfg.high_channels, cfg.out_channels, rng, true, 0.5),
      project_(cfg.high_channels, cfg.out_channels, 1, {}, rng) {}

FeatureMap Vgau::channel_compress(const FeatureMap& low) const {
  expect_channels(low, cfg_.low_channels, "low-level");
  return compress_.forward(low);
}

Tensor Vgau::global_context_gate(const FeatureMap& high) const {
  expect_channels(high, cfg_.high_channels, "high-level");
  return ops::silu(gate_.forward(ops::global_avg_pool(high)));
}

FeatureMap Vgau::forward(const FeatureMap& high, const FeatureMap& low) const {
  expect_channels(high, cfg_.high_channels, "high-level");
  expect_channels(low, cfg_.low_channels, "low-level");
  const Shape& hs = high.shape();
  const Shape& ls = low.shape();
  if (ls.h != 2 * hs.h || ls.w != 2 * hs.w || ls.n != hs.n)
    throw DimensionError("VGAU needs the low-level map at exactly 2x the high-level resolution, got " + ls.str() +
                         " and " + hs.str());
  Tensor coarse = ops::upsample(project_.forward(high), 2, cfg_.upsample_mode);
  Tensor fine = ops::mul_channel(channel_compress(low), global_context_gate(high));
  return ops::add(coarse, fine);
}

void Vgau::collect_parameters(const std::string& prefix, std::vector<nn::NamedTensor>& out) const {
  compress_.collect_parameters(prefix + "compress.", out);
  gate_.collect_parameters(prefix + "gate.", out);
  project_.collect_parameters(prefix + "project.", out);
}

}  // namespace tdrd
