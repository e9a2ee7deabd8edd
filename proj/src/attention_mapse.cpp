#include "tdrd/attention_mapse.hpp"

#include <cmath>
#include <string>

#include "tdrd/errors.hpp"
#include "tdrd/ops.hpp"

namespace tdrd {

Tensor sinusoid_table(int channels, int h, int w) {
  Tensor table(Shape{1, channels, h, w});
  const int row_block = channels / 2;
  const int col_block = channels - row_block;
  for (int c = 0; c < channels; ++c) {
    const bool rows = c < row_block;
    const int j = rows ? c : c - row_block;
    const int dim = rows ? row_block : col_block;
    const double freq = 1.0 / std::pow(10000.0, 2.0 * (j / 2) / dim);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const double angle = (rows ? y : x) * freq;
        table.at(0, c, y, x) = (j % 2 == 0) ? std::sin(angle) : std::cos(angle);
      }
  }
  return table;
}

PatchEmbed::PatchEmbed(const PatchEmbedConfig& cfg, Rng& rng)
    : cfg_(cfg),
      proj_(cfg.in_channels, cfg.embed_channels, cfg.patch_size, ops::Conv2dOptions{cfg.patch_size, 0, 1, 1}, rng) {
  if (cfg.patch_size < 1) throw ConfigError("patch_size must be positive");
  if (cfg.position_encoding == PositionEncoding::Learned) {
    if (cfg.grid_h < 1 || cfg.grid_w < 1) throw ConfigError("learned positions need the token grid extents");
    std::vector<double> init(static_cast<std::size_t>(cfg.embed_channels) * cfg.grid_h * cfg.grid_w);
    for (double& v : init) v = rng.normal(0.0, 0.02);
    positions_ = Tensor::parameter(Shape{1, cfg.embed_channels, cfg.grid_h, cfg.grid_w}, std::move(init));
  }
}

FeatureMap PatchEmbed::forward(const FeatureMap& x) const {
  const Shape& s = x.shape();
  if (s.h % cfg_.patch_size != 0)
    throw DimensionError("patch embed: height " + std::to_string(s.h) + " not divisible by patch size " +
                         std::to_string(cfg_.patch_size));
  if (s.w % cfg_.patch_size != 0)
    throw DimensionError("patch embed: width " + std::to_string(s.w) + " not divisible by patch size " +
                         std::to_string(cfg_.patch_size));
  const int gh = s.h / cfg_.patch_size;
  const int gw = s.w / cfg_.patch_size;
  Tensor tokens = proj_.forward(x);
  if (cfg_.position_encoding == PositionEncoding::Sinusoidal) {
    return ops::add(tokens, sinusoid_table(cfg_.embed_channels, gh, gw));
  }
  if (gh != cfg_.grid_h || gw != cfg_.grid_w)
    throw DimensionError("patch embed: token grid " + std::to_string(gh) + "x" + std::to_string(gw) +
                         " does not match learned positions " + std::to_string(cfg_.grid_h) + "x" +
                         std::to_string(cfg_.grid_w));
  return ops::add(tokens, positions_);
}

void PatchEmbed::collect_parameters(const std::string& prefix, std::vector<nn::NamedTensor>& out) const {
  proj_.collect_parameters(prefix + "proj.", out);
  if (positions_.defined()) out.push_back({prefix + "positions", positions_});
}

void DilatedAttentionConfig::validate(int channels) const {
  if (window < 1 || window % 2 == 0) throw ConfigError("attention window (taps) must be odd, got " + std::to_string(window));
  if (rates.empty()) throw ConfigError("attention needs at least one dilation rate");
  for (std::size_t i = 0; i < rates.size(); ++i) {
    if (rates[i] < 1) throw ConfigError("dilation rates must be positive");
    if (i > 0 && rates[i] <= rates[i - 1]) throw ConfigError("dilation rates must be strictly increasing");
  }
  if (heads < 1 || channels % heads != 0)
    throw ConfigError(std::to_string(channels) + " channels cannot be split into " + std::to_string(heads) + " heads");
}

std::vector<int> DilatedAttentionConfig::head_rates() const {
  const int groups = static_cast<int>(rates.size());
  const int per = heads / groups;
  const int extra = heads % groups;
  std::vector<int> out;
  for (int g = 0; g < groups; ++g) {
    const int count = per + (g == 0 ? extra : 0);
    for (int i = 0; i < count; ++i) out.push_back(rates[g]);
  }
  return out;
}

FeatureMap dilated_gather(const FeatureMap& x, int rate, std::span<const double> weights) {
  const int k = static_cast<int>(weights.size());
  if (k < 1 || k % 2 == 0) throw ConfigError("dilated gather needs an odd tap count, got " + std::to_string(k));
  if (rate < 1) throw ConfigError("dilation rate must be positive");
  const Shape& s = x.shape();
  const int center = (k - 1) / 2;
  // Separable: gather along columns, then along rows. Zero padding in each
  // pass equals zero padding of the full 2-D neighborhood.
  Tensor horizontal(s);
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c)
      for (int y = 0; y < s.h; ++y)
        for (int px = 0; px < s.w; ++px) {
          double acc = 0.0;
          for (int i = 0; i < k; ++i) {
            const int xx = px + (i - center) * rate;
            if (xx >= 0 && xx < s.w) acc += weights[i] * x.at(n, c, y, xx);
          }
          horizontal.at(n, c, y, px) = acc;
        }
  Tensor out(s);
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c)
      for (int py = 0; py < s.h; ++py)
        for (int px = 0; px < s.w; ++px) {
          double acc = 0.0;
          for (int i = 0; i < k; ++i) {
            const int yy = py + (i - center) * rate;
            if (yy >= 0 && yy < s.h) acc += weights[i] * horizontal.at(n, c, yy, px);
          }
          out.at(n, c, py, px) = acc;
        }
  return out;
}

Swda::Swda(int channels, const DilatedAttentionConfig& cfg, Rng& rng)
    : channels_(channels),
      cfg_(cfg),
      q_(channels, channels, 1, {}, rng, false, std::sqrt(0.5)),
      k_(channels, channels, 1, {}, rng, false, std::sqrt(0.5)),
      v_(channels, channels, 1, {}, rng, false, std::sqrt(0.5)),
      o_(channels, channels, 1, {}, rng, true, std::sqrt(0.5)) {
  cfg_.validate(channels);
  taps_ = Tensor::parameter(Shape{1, cfg_.heads, 1, cfg_.window},
                            std::vector<double>(static_cast<std::size_t>(cfg_.heads) * cfg_.window, 0.0));
}

FeatureMap Swda::forward(const FeatureMap& tokens) const {
  if (tokens.shape().c != channels_)
    throw ConfigError("SWDA configured for " + std::to_string(channels_) + " channels, got " +
                      std::to_string(tokens.shape().c));
  ops::WindowAttentionOptions opts{cfg_.heads, cfg_.window, cfg_.head_rates()};
  Tensor mixed = ops::window_attention(q_.forward(tokens), k_.forward(tokens), v_.forward(tokens), taps_, opts);
  return o_.forward(mixed);
}

void Swda::collect_parameters(const std::string& prefix, std::vector<nn::NamedTensor>& out) const {
  q_.collect_parameters(prefix + "q.", out);
  k_.collect_parameters(prefix + "k.", out);
  v_.collect_parameters(prefix + "v.", out);
  o_.collect_parameters(prefix + "o.", out);
  out.push_back({prefix + "tap_logits", taps_});
}

namespace {

int reduced_width(int channels, int reduction) {
  if (reduction < 1 || channels % reduction != 0)
    throw ConfigError("SE reduction " + std::to_string(reduction) + " must divide " + std::to_string(channels) +
                      " channels");
  return channels / reduction;
}

}  // namespace

SqueezeExcite::SqueezeExcite(int channels, int reduction, Rng& rng)
    : channels_(channels),
      w1_(channels, reduced_width(channels, reduction), rng, false),
      w2_(channels / reduction, channels, rng, false) {}

Tensor SqueezeExcite::gate(const FeatureMap& f) const {
  if (f.shape().c != channels_)
    throw ConfigError("SE configured for " + std::to_string(channels_) + " channels, got " +
                      std::to_string(f.shape().c));
  return ops::sigmoid(w2_.forward(ops::relu(w1_.forward(ops::global_avg_pool(f)))));
}

FeatureMap SqueezeExcite::forward(const FeatureMap& f) const { return ops::mul_channel(f, gate(f)); }

void SqueezeExcite::collect_parameters(const std::string& prefix, std::vector<nn::NamedTensor>& out) const {
  w1_.collect_parameters(prefix + "w1.", out);
  w2_.collect_parameters(prefix + "w2.", out);
}

namespace {

PatchEmbedConfig embed_config(const MapseConfig& cfg) {
  PatchEmbedConfig e;
  e.patch_size = cfg.patch_size;
  e.in_channels = cfg.channels;
  e.embed_channels = cfg.channels;
  e.position_encoding = cfg.position_encoding;
  e.grid_h = cfg.grid_h;
  e.grid_w = cfg.grid_w;
  return e;
}

}  // namespace

Mapse::Mapse(const MapseConfig& cfg, Rng& rng)
    : cfg_(cfg),
      dw_(cfg.channels, cfg.channels, 3, ops::Conv2dOptions{1, 1, 1, cfg.channels}, rng),
      embed_(embed_config(cfg), rng),
      swda_(cfg.channels, cfg.attention, rng),
      fc1_(cfg.channels, cfg.channels * cfg.mlp_expansion, 1, {}, rng),
      fc2_(cfg.channels * cfg.mlp_expansion, cfg.channels, 1, {}, rng, true, 0.5),
      se_(cfg.channels, cfg.se_reduction, rng) {
  if (cfg.mlp_expansion < 1) throw ConfigError("MLP expansion must be positive");
}

Mapse::Output Mapse::forward_with_branch(const FeatureMap& x) const {
  if (x.shape().c != cfg_.channels)
    throw ConfigError("MAPSE configured for " + std::to_string(cfg_.channels) + " channels, got " +
                      std::to_string(x.shape().c));
  Tensor t = dw_.forward(x);
  t = embed_.forward(t);
  t = swda_.forward(t);
  t = fc2_.forward(ops::silu(fc1_.forward(t)));
  if (cfg_.patch_size > 1) t = ops::upsample(t, cfg_.patch_size, ops::UpsampleMode::Nearest);
  Tensor branch = se_.forward(t);
  return Output{ops::add(branch, x), branch};
}

void Mapse::collect_parameters(const std::string& prefix, std::vector<nn::NamedTensor>& out) const {
  dw_.collect_parameters(prefix + "dwconv.", out);
  embed_.collect_parameters(prefix + "embed.", out);
  swda_.collect_parameters(prefix + "swda.", out);
  fc1_.collect_parameters(prefix + "mlp.fc1.", out);
  fc2_.collect_parameters(prefix + "mlp.fc2.", out);
  se_.collect_parameters(prefix + "se.", out);
}

}  // namespace tdrd
