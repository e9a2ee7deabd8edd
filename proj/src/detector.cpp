#include "tdrd/detector.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>

#include "tdrd/errors.hpp"

namespace tdrd {

// ---------------------------------------------------------------------------
// ModelConfig

void ModelConfig::validate() const {
  if (stage_channels.size() != 3 || strides.size() != 3)
    throw ConfigError("model needs exactly 3 stage channel counts and 3 strides");
  for (int c : stage_channels)
    if (c < 1) throw ConfigError("stage channels must be positive");
  const int s0 = strides[0];
  if (s0 < 2 || (s0 & (s0 - 1)) != 0) throw ConfigError("first stride must be a power of two >= 2");
  if (strides[1] != 2 * s0 || strides[2] != 4 * s0)
    throw ConfigError("strides must double per stage, got " + kv::from_int_list(strides));
  if (input_size < 1 || input_size % strides[2] != 0)
    throw ConfigError("input size " + std::to_string(input_size) + " must be a positive multiple of the largest stride " +
                      std::to_string(strides[2]));
  if (num_classes < 1) throw ConfigError("num_classes must be positive");
  if (nms_iou < 0 || nms_iou > 1) throw ConfigError("nms_iou must lie in [0, 1]");
  if (conf_floor < 0 || conf_floor > 1) throw ConfigError("conf_floor must lie in [0, 1]");
  if (max_detections < 1) throw ConfigError("max_detections must be positive");
  if (stem_channels < 1 || dsc_expansion < 1) throw ConfigError("stem_channels and dsc_expansion must be positive");
  if (use_mapse) {
    DilatedAttentionConfig att{mapse_window, mapse_rates, mapse_heads};
    att.validate(stage_channels[2]);
    if (se_reduction < 1 || stage_channels[2] % se_reduction != 0)
      throw ConfigError("se_reduction must divide the last stage's channels");
  }
  if (box_weight < 0 || cls_weight < 0) throw ConfigError("loss weights must be non-negative");
}

kv::Entries ModelConfig::to_entries() const {
  kv::Entries e;
  e["model.use_dsc"] = kv::from_bool(use_dsc);
  e["model.use_mapse"] = kv::from_bool(use_mapse);
  e["model.use_vgau"] = kv::from_bool(use_vgau);
  e["model.stage_channels"] = kv::from_int_list(stage_channels);
  e["model.num_classes"] = std::to_string(num_classes);
  e["model.input_size"] = std::to_string(input_size);
  e["model.strides"] = kv::from_int_list(strides);
  e["model.nms_iou"] = kv::from_double(nms_iou);
  e["model.conf_floor"] = kv::from_double(conf_floor);
  e["model.max_detections"] = std::to_string(max_detections);
  e["model.seed"] = std::to_string(seed);
  e["model.stem_channels"] = std::to_string(stem_channels);
  e["model.dsc_expansion"] = std::to_string(dsc_expansion);
  e["model.mapse_heads"] = std::to_string(mapse_heads);
  e["model.mapse_window"] = std::to_string(mapse_window);
  e["model.mapse_rates"] = kv::from_int_list(mapse_rates);
  e["model.se_reduction"] = std::to_string(se_reduction);
  e["model.position_encoding"] = position_encoding == PositionEncoding::Learned ? "learned" : "sinusoidal";
  e["model.upsample_mode"] = upsample_mode == ops::UpsampleMode::Bilinear ? "bilinear" : "nearest";
  e["model.box_weight"] = kv::from_double(box_weight);
  e["model.cls_weight"] = kv::from_double(cls_weight);
  return e;
}

void ModelConfig::apply(const std::string& key, const std::string& v) {
  if (key == "model.use_dsc") use_dsc = kv::to_bool(key, v);
  else if (key == "model.use_mapse") use_mapse = kv::to_bool(key, v);
  else if (key == "model.use_vgau") use_vgau = kv::to_bool(key, v);
  else if (key == "model.stage_channels") stage_channels = kv::to_int_list(key, v);
  else if (key == "model.num_classes") num_classes = kv::to_int(key, v);
  else if (key == "model.input_size") input_size = kv::to_int(key, v);
  else if (key == "model.strides") strides = kv::to_int_list(key, v);
  else if (key == "model.nms_iou") nms_iou = kv::to_double(key, v);
  else if (key == "model.conf_floor") conf_floor = kv::to_double(key, v);
  else if (key == "model.max_detections") max_detections = kv::to_int(key, v);
  else if (key == "model.seed") seed = kv::to_u64(key, v);
  else if (key == "model.stem_channels") stem_channels = kv::to_int(key, v);
  else if (key == "model.dsc_expansion") dsc_expansion = kv::to_int(key, v);
  else if (key == "model.mapse_heads") mapse_heads = kv::to_int(key, v);
  else if (key == "model.mapse_window") mapse_window = kv::to_int(key, v);
  else if (key == "model.mapse_rates") mapse_rates = kv::to_int_list(key, v);
  else if (key == "model.se_reduction") se_reduction = kv::to_int(key, v);
  else if (key == "model.position_encoding") {
    if (v == "learned") position_encoding = PositionEncoding::Learned;
    else if (v == "sinusoidal") position_encoding = PositionEncoding::Sinusoidal;
    else throw ValidationError("config key '" + key + "': expected learned or sinusoidal, got '" + v + "'");
  } else if (key == "model.upsample_mode") {
    if (v == "nearest") upsample_mode = ops::UpsampleMode::Nearest;
    else if (v == "bilinear") upsample_mode = ops::UpsampleMode::Bilinear;
    else throw ValidationError("config key '" + key + "': expected nearest or bilinear, got '" + v + "'");
  } else if (key == "model.box_weight") box_weight = kv::to_double(key, v);
  else if (key == "model.cls_weight") cls_weight = kv::to_double(key, v);
  else throw ValidationError("unknown config key '" + key + "'");
}

ModelConfig ModelConfig::from_entries(const kv::Entries& entries) {
  ModelConfig cfg;
  for (const auto& [k, v] : entries) cfg.apply(k, v);
  return cfg;
}

// ---------------------------------------------------------------------------
// Network

namespace {

constexpr int kBlocksPerStage = 2;
// sigmoid(prior_logit) = 0.01
const double kClassPriorLogit = -std::log(99.0);

struct Block {
  virtual ~Block() = default;
  virtual Tensor forward(const Tensor& x) const = 0;
  virtual void collect(const std::string& prefix, std::vector<nn::NamedTensor>& out) const = 0;
};

// x + SiLU(norm(conv3x3(x)))
struct PlainBlock : Block {
  nn::ConvNorm conv;
  PlainBlock(int c, Rng& rng) : conv(c, c, 3, ops::Conv2dOptions{1, 1, 1, 1}, rng) {}
  Tensor forward(const Tensor& x) const override { return ops::add(x, ops::silu(conv.forward(x))); }
  void collect(const std::string& prefix, std::vector<nn::NamedTensor>& out) const override {
    conv.collect_parameters(prefix + "conv.", out);
  }
};

// x + pw(SiLU(dw3x3(SiLU(pw(x))))) with an expanded depthwise stage; every
// convolution is normalized.
struct DscBlock : Block {
  nn::ConvNorm expand, depthwise, project;
  DscBlock(int c, int expansion, Rng& rng)
      : expand(c, c * expansion, 1, {}, rng),
        depthwise(c * expansion, c * expansion, 3, ops::Conv2dOptions{1, 1, 1, c * expansion}, rng),
        project(c * expansion, c, 1, {}, rng) {}
  Tensor forward(const Tensor& x) const override {
    Tensor t = ops::silu(expand.forward(x));
    t = ops::silu(depthwise.forward(t));
    return ops::add(x, project.forward(t));
  }
  void collect(const std::string& prefix, std::vector<nn::NamedTensor>& out) const override {
    expand.collect_parameters(prefix + "expand.", out);
    depthwise.collect_parameters(prefix + "depthwise.", out);
    project.collect_parameters(prefix + "project.", out);
  }
};

struct Stage {
  nn::ConvNorm down;
  std::vector<std::unique_ptr<Block>> blocks;
};

const char* level_name(int i) {
  static const char* names[] = {"p3", "p4", "p5"};
  return names[i];
}

}  // namespace

struct Detector::Impl {
  ModelConfig cfg;
  std::vector<nn::ConvNorm> stem;
  std::vector<Stage> stages;
  std::unique_ptr<Mapse> mapse;
  std::vector<nn::Conv2d> fuse_project;  // plain neck
  std::vector<std::unique_ptr<Vgau>> fuse_vgau;
  std::vector<nn::ConvNorm> head_conv;
  std::vector<nn::Conv2d> head_pred;

  explicit Impl(const ModelConfig& c) : cfg(c) {
    cfg.validate();
    Rng rng(cfg.seed);
    const ops::Conv2dOptions down{2, 1, 1, 1};

    int prev = 3;
    int stem_layers = 0;
    for (int s = cfg.strides[0]; s > 2; s /= 2) ++stem_layers;
    for (int i = 0; i < stem_layers; ++i) {
      stem.emplace_back(prev, cfg.stem_channels, 3, down, rng);
      prev = cfg.stem_channels;
    }
    for (int i = 0; i < 3; ++i) {
      const int ch = cfg.stage_channels[i];
      Stage st{nn::ConvNorm(prev, ch, 3, down, rng), {}};
      for (int b = 0; b < kBlocksPerStage; ++b) {
        if (cfg.use_dsc) st.blocks.push_back(std::make_unique<DscBlock>(ch, cfg.dsc_expansion, rng));
        else st.blocks.push_back(std::make_unique<PlainBlock>(ch, rng));
      }
      stages.push_back(std::move(st));
      prev = ch;
    }
    if (cfg.use_mapse) {
      MapseConfig mc;
      mc.channels = cfg.stage_channels[2];
      mc.attention = DilatedAttentionConfig{cfg.mapse_window, cfg.mapse_rates, cfg.mapse_heads};
      mc.se_reduction = cfg.se_reduction;
      mc.position_encoding = cfg.position_encoding;
      mc.grid_h = mc.grid_w = cfg.input_size / cfg.strides[2];
      mapse = std::make_unique<Mapse>(mc, rng);
    }
    // Top-down: fusion 0 merges level 2 into level 1, fusion 1 merges the
    // result into level 0.
    for (int f = 0; f < 2; ++f) {
      const int high = cfg.stage_channels[2 - f];
      const int low = cfg.stage_channels[1 - f];
      if (cfg.use_vgau) fuse_vgau.push_back(std::make_unique<Vgau>(VgauConfig{high, low, low, cfg.upsample_mode}, rng));
      else fuse_project.emplace_back(high, low, 1, ops::Conv2dOptions{}, rng);
    }
    for (int i = 0; i < 3; ++i) {
      const int ch = cfg.stage_channels[i];
      head_conv.emplace_back(ch, ch, 3, ops::Conv2dOptions{1, 1, 1, 1}, rng);
      head_pred.emplace_back(ch, 4 + cfg.num_classes, 1, ops::Conv2dOptions{}, rng, true, 0.1);
      auto bias = head_pred.back().bias().mutable_values();
      for (int c = 4; c < 4 + cfg.num_classes; ++c) bias[c] = kClassPriorLogit;
    }
  }

  Tensor fuse(int f, const Tensor& high, const Tensor& low) const {
    if (cfg.use_vgau) return fuse_vgau[f]->forward(high, low);
    return ops::add(ops::upsample(fuse_project[f].forward(high), 2, cfg.upsample_mode), low);
  }
};

Detector::Detector(const ModelConfig& cfg) : impl_(std::make_unique<Impl>(cfg)) {}
Detector::~Detector() = default;
Detector::Detector(Detector&&) noexcept = default;
Detector& Detector::operator=(Detector&&) noexcept = default;

const ModelConfig& Detector::config() const { return impl_->cfg; }

RawPrediction Detector::forward(const FeatureMap& images) const {
  const auto& cfg = impl_->cfg;
  const Shape& s = images.shape();
  if (s.c != 3 || s.h != cfg.input_size || s.w != cfg.input_size)
    throw DimensionError("detector expects (n, 3, " + std::to_string(cfg.input_size) + ", " +
                         std::to_string(cfg.input_size) + ") images, got " + s.str());
  Tensor x = images;
  for (const auto& conv : impl_->stem) x = ops::silu(conv.forward(x));
  std::vector<Tensor> feats;
  for (const auto& st : impl_->stages) {
    x = ops::silu(st.down.forward(x));
    for (const auto& b : st.blocks) x = b->forward(x);
    feats.push_back(x);
  }
  if (impl_->mapse) feats[2] = impl_->mapse->forward(feats[2]);

  std::vector<Tensor> levels(3);
  levels[2] = feats[2];
  levels[1] = impl_->fuse(0, levels[2], feats[1]);
  levels[0] = impl_->fuse(1, levels[1], feats[0]);

  RawPrediction raw;
  raw.strides = cfg.strides;
  raw.num_classes = cfg.num_classes;
  raw.input_size = cfg.input_size;
  for (int i = 0; i < 3; ++i) {
    Tensor h = ops::silu(impl_->head_conv[i].forward(levels[i]));
    raw.maps.push_back(impl_->head_pred[i].forward(h));
  }
  return raw;
}

void Detector::collect_parameters(const std::string& prefix, std::vector<nn::NamedTensor>& out) const {
  const auto& m = *impl_;
  for (std::size_t i = 0; i < m.stem.size(); ++i)
    m.stem[i].collect_parameters(prefix + "backbone.stem" + std::to_string(i) + ".", out);
  for (std::size_t i = 0; i < m.stages.size(); ++i) {
    const std::string sp = prefix + "backbone.stage" + std::to_string(i + 1) + ".";
    m.stages[i].down.collect_parameters(sp + "down.", out);
    for (std::size_t b = 0; b < m.stages[i].blocks.size(); ++b)
      m.stages[i].blocks[b]->collect(sp + "block" + std::to_string(b) + ".", out);
  }
  if (m.mapse) m.mapse->collect_parameters(prefix + "backbone.mapse.", out);
  for (std::size_t f = 0; f < m.fuse_vgau.size(); ++f)
    m.fuse_vgau[f]->collect_parameters(prefix + "neck.vgau" + std::to_string(f) + ".", out);
  for (std::size_t f = 0; f < m.fuse_project.size(); ++f)
    m.fuse_project[f].collect_parameters(prefix + "neck.project" + std::to_string(f) + ".", out);
  for (int i = 0; i < 3; ++i) {
    m.head_conv[i].collect_parameters(prefix + "head." + level_name(i) + ".conv.", out);
    m.head_pred[i].collect_parameters(prefix + "head." + level_name(i) + ".pred.", out);
  }
}

void Detector::zero_prediction_layers() {
  for (auto& pred : impl_->head_pred) {
    nn::fill(pred.weight(), 0.0);
    nn::fill(pred.bias(), 0.0);
  }
}

Detector build_model(const ModelConfig& cfg) { return Detector(cfg); }

// ---------------------------------------------------------------------------
// Decoding and suppression

namespace {

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

constexpr double kSizeCodeLimit = 8.0;

double size_from_code(double t) { return std::exp(std::clamp(t, -kSizeCodeLimit, kSizeCodeLimit)); }

}  // namespace

std::vector<Detection> decode(const RawPrediction& raw, const ModelConfig& cfg, int b) {
  std::vector<Detection> out;
  const double limit = raw.input_size;
  for (std::size_t s = 0; s < raw.maps.size(); ++s) {
    const Tensor& m = raw.maps[s];
    const Shape& sh = m.shape();
    const double stride = raw.strides[s];
    for (int gy = 0; gy < sh.h; ++gy) {
      for (int gx = 0; gx < sh.w; ++gx) {
        BBox box;
        bool have_box = false;
        for (int c = 0; c < raw.num_classes; ++c) {
          const double score = sigmoid(m.at(b, 4 + c, gy, gx));
          if (score < cfg.conf_floor) continue;
          if (!have_box) {
            const double cx = (gx + sigmoid(m.at(b, 0, gy, gx))) * stride;
            const double cy = (gy + sigmoid(m.at(b, 1, gy, gx))) * stride;
            const double w = size_from_code(m.at(b, 2, gy, gx)) * stride;
            const double h = size_from_code(m.at(b, 3, gy, gx)) * stride;
            box = BBox::from_center(cx, cy, w, h);
            box.x1 = std::clamp(box.x1, 0.0, limit);
            box.y1 = std::clamp(box.y1, 0.0, limit);
            box.x2 = std::clamp(box.x2, 0.0, limit);
            box.y2 = std::clamp(box.y2, 0.0, limit);
            have_box = true;
          }
          out.push_back(Detection{box, c, score});
        }
      }
    }
  }
  return out;
}

std::vector<Detection> nms(std::vector<Detection> dets, double iou_threshold) {
  std::sort(dets.begin(), dets.end(), ranks_before);
  std::vector<char> dropped(dets.size(), 0);
  std::vector<Detection> kept;
  for (std::size_t i = 0; i < dets.size(); ++i) {
    if (dropped[i]) continue;
    kept.push_back(dets[i]);
    for (std::size_t j = i + 1; j < dets.size(); ++j) {
      if (!dropped[j] && dets[j].class_id == dets[i].class_id && iou(dets[i].box, dets[j].box) > iou_threshold)
        dropped[j] = 1;
    }
  }
  return kept;
}

std::vector<std::vector<Detection>> detect(const Detector& model, const FeatureMap& images) {
  constexpr std::size_t kPreNmsTopK = 1000;
  NoGradGuard no_grad;
  const auto& cfg = model.config();
  RawPrediction raw = model.forward(images);
  std::vector<std::vector<Detection>> out;
  for (int b = 0; b < raw.batch(); ++b) {
    auto dets = decode(raw, cfg, b);
    if (dets.size() > kPreNmsTopK) {
      std::partial_sort(dets.begin(), dets.begin() + kPreNmsTopK, dets.end(), ranks_before);
      dets.resize(kPreNmsTopK);
    }
    dets = nms(std::move(dets), cfg.nms_iou);
    if (dets.size() > static_cast<std::size_t>(cfg.max_detections)) dets.resize(cfg.max_detections);
    out.push_back(std::move(dets));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Loss

namespace {

// Forward-mode dual number carrying derivatives w.r.t. the 4 box codes.
struct Dual {
  double v = 0;
  std::array<double, 4> d{};

  Dual() = default;
  Dual(double x) : v(x) {}  // NOLINT: constants promote implicitly

  static Dual constant(double x) { return Dual(x); }
  static Dual variable(double x, int i) {
    Dual r(x);
    r.d[i] = 1.0;
    return r;
  }
};

Dual operator+(Dual a, const Dual& b) {
  a.v += b.v;
  for (int i = 0; i < 4; ++i) a.d[i] += b.d[i];
  return a;
}
Dual operator-(Dual a, const Dual& b) {
  a.v -= b.v;
  for (int i = 0; i < 4; ++i) a.d[i] -= b.d[i];
  return a;
}
Dual operator*(const Dual& a, const Dual& b) {
  Dual r(a.v * b.v);
  for (int i = 0; i < 4; ++i) r.d[i] = a.d[i] * b.v + a.v * b.d[i];
  return r;
}
Dual operator/(const Dual& a, const Dual& b) {
  Dual r(a.v / b.v);
  for (int i = 0; i < 4; ++i) r.d[i] = (a.d[i] * b.v - a.v * b.d[i]) / (b.v * b.v);
  return r;
}
Dual operator+(Dual a, double b) { return a + Dual::constant(b); }
Dual operator-(Dual a, double b) { return a - Dual::constant(b); }
Dual operator-(double a, const Dual& b) { return Dual::constant(a) - b; }
Dual operator*(double a, const Dual& b) { return Dual::constant(a) * b; }
Dual operator*(const Dual& a, double b) { return a * Dual::constant(b); }
Dual operator+(double a, const Dual& b) { return Dual::constant(a) + b; }

Dual chain(const Dual& a, double value, double slope) {
  Dual r(value);
  for (int i = 0; i < 4; ++i) r.d[i] = slope * a.d[i];
  return r;
}
Dual atan(const Dual& a) { return chain(a, std::atan(a.v), 1.0 / (1.0 + a.v * a.v)); }
Dual max(const Dual& a, const Dual& b) { return a.v >= b.v ? a : b; }
Dual min(const Dual& a, const Dual& b) { return a.v <= b.v ? a : b; }
double value_of(const Dual& a) { return a.v; }

double atan(double a) { return std::atan(a); }
double max(double a, double b) { return std::max(a, b); }
double min(double a, double b) { return std::min(a, b); }
double value_of(double a) { return a; }

template <typename T>
T ciou_impl(T acx, T acy, T aw, T ah, const BBox& g) {
  constexpr double eps = 1e-12;
  const T ax1 = acx - 0.5 * aw, ax2 = acx + 0.5 * aw;
  const T ay1 = acy - 0.5 * ah, ay2 = acy + 0.5 * ah;
  T iw = min(ax2, T(g.x2)) - max(ax1, T(g.x1));
  T ih = min(ay2, T(g.y2)) - max(ay1, T(g.y1));
  if (value_of(iw) < 0) iw = T(0.0);
  if (value_of(ih) < 0) ih = T(0.0);
  const T inter = iw * ih;
  const T uni = aw * ah + g.area() - inter;
  const T iou_v = inter / (uni + eps);
  const T cw = max(ax2, T(g.x2)) - min(ax1, T(g.x1));
  const T ch = max(ay2, T(g.y2)) - min(ay1, T(g.y1));
  const T c2 = cw * cw + ch * ch + eps;
  const T dx = acx - g.cx();
  const T dy = acy - g.cy();
  const T rho2 = dx * dx + dy * dy;
  const double k = 4.0 / (std::numbers::pi * std::numbers::pi);
  const T dv = atan(T(g.width() / g.height())) - atan(aw / ah);
  const T v = k * dv * dv;
  const T alpha = v / ((1.0 - iou_v) + v + eps);
  return iou_v - rho2 / c2 - alpha * v;
}

}  // namespace

double ciou(const BBox& a, const BBox& b) { return ciou_impl<double>(a.cx(), a.cy(), a.width(), a.height(), b); }

EncodedTarget encode_target(const GroundTruth& gt, const ModelConfig& cfg) {
  EncodedTarget e;
  const double size = std::sqrt(std::max(gt.box.area(), 0.0));
  for (int i = 0; i < static_cast<int>(cfg.strides.size()); ++i)
    if (cfg.strides[i] <= size) e.scale = i;
  const double stride = cfg.strides[e.scale];
  const int grid = cfg.input_size / cfg.strides[e.scale];
  e.gx = std::clamp(static_cast<int>(std::floor(gt.box.cx() / stride)), 0, grid - 1);
  e.gy = std::clamp(static_cast<int>(std::floor(gt.box.cy() / stride)), 0, grid - 1);
  constexpr double lo = 1e-4, hi = 1.0 - 1e-4;
  const double fx = std::clamp(gt.box.cx() / stride - e.gx, lo, hi);
  const double fy = std::clamp(gt.box.cy() / stride - e.gy, lo, hi);
  e.tx = std::log(fx / (1.0 - fx));
  e.ty = std::log(fy / (1.0 - fy));
  e.tw = std::log(gt.box.width() / stride);
  e.th = std::log(gt.box.height() / stride);
  return e;
}

LossBreakdown detection_loss(const RawPrediction& raw, const std::vector<std::vector<GroundTruth>>& targets,
                             const ModelConfig& cfg) {
  const int batch = raw.batch();
  if (static_cast<int>(targets.size()) != batch)
    throw DimensionError("loss: " + std::to_string(targets.size()) + " target lists for a batch of " +
                         std::to_string(batch));
  const int nc = raw.num_classes;
  const std::size_t scales = raw.maps.size();
  auto grads = std::make_shared<std::vector<std::vector<double>>>();
  for (const auto& m : raw.maps) grads->emplace_back(m.numel(), 0.0);

  double box_sum = 0.0;
  double bce_sum = 0.0;
  int positives = 0;
  for (int b = 0; b < batch; ++b) {
    const auto& gts = targets[b];
    std::vector<std::vector<int>> owner(scales);
    for (std::size_t s = 0; s < scales; ++s) owner[s].assign(raw.maps[s].shape().plane(), -1);
    for (std::size_t k = 0; k < gts.size(); ++k) {
      if (gts[k].class_id < 0 || gts[k].class_id >= nc) throw ValidationError("loss: target class out of range");
      if (!gts[k].box.valid()) throw ValidationError("loss: degenerate target box");
      const EncodedTarget e = encode_target(gts[k], cfg);
      int& slot = owner[e.scale][static_cast<std::size_t>(e.gy) * raw.maps[e.scale].shape().w + e.gx];
      if (slot < 0) slot = static_cast<int>(k);
    }
    for (std::size_t s = 0; s < scales; ++s) {
      const Tensor& m = raw.maps[s];
      const Shape& sh = m.shape();
      auto& g = (*grads)[s];
      const double stride = raw.strides[s];
      for (int gy = 0; gy < sh.h; ++gy) {
        for (int gx = 0; gx < sh.w; ++gx) {
          const int who = owner[s][static_cast<std::size_t>(gy) * sh.w + gx];
          for (int c = 0; c < nc; ++c) {
            const std::size_t idx = m.offset(b, 4 + c, gy, gx);
            const double z = m.values()[idx];
            const double y = (who >= 0 && gts[who].class_id == c) ? 1.0 : 0.0;
            bce_sum += std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
            g[idx] = cfg.cls_weight * (sigmoid(z) - y);
          }
          if (who < 0) continue;
          ++positives;
          std::array<Dual, 4> t;
          for (int i = 0; i < 4; ++i) t[i] = Dual::variable(m.at(b, i, gy, gx), i);
          auto sig = [](const Dual& a) {
            const double s = sigmoid(a.v);
            return chain(a, s, s * (1.0 - s));
          };
          auto size = [](const Dual& a) {
            const bool inside = a.v > -kSizeCodeLimit && a.v < kSizeCodeLimit;
            const double e = size_from_code(a.v);
            return chain(a, e, inside ? e : 0.0);
          };
          const Dual cx = (gx + sig(t[0])) * stride;
          const Dual cy = (gy + sig(t[1])) * stride;
          const Dual w = size(t[2]) * stride;
          const Dual h = size(t[3]) * stride;
          const Dual loss = 1.0 - ciou_impl<Dual>(cx, cy, w, h, gts[who].box);
          box_sum += loss.v;
          for (int i = 0; i < 4; ++i) g[m.offset(b, i, gy, gx)] = cfg.box_weight * loss.d[i];
        }
      }
    }
  }

  const double norm = 1.0 / std::max(1, positives);
  for (auto& g : *grads)
    for (double& v : g) v *= norm;

  LossBreakdown out;
  out.box = cfg.box_weight * box_sum * norm;
  out.cls = cfg.cls_weight * bce_sum * norm;
  out.positives = positives;
  out.total = Tensor::from_op(Shape{1, 1, 1, 1}, {out.box + out.cls}, raw.maps, [grads](detail::Node& self) {
    const double up = self.grad[0];
    for (std::size_t s = 0; s < self.inputs.size(); ++s) {
      detail::Node* in = self.inputs[s].get();
      if (!in->requires_grad) continue;
      auto& gi = in->ensure_grad();
      const auto& src = (*grads)[s];
      for (std::size_t i = 0; i < gi.size(); ++i) gi[i] += up * src[i];
    }
  });
  return out;
}

}  // namespace tdrd
