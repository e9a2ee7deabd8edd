#include "tdrd/metrics.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>

#include <nlohmann/json.hpp>

#include "tdrd/errors.hpp"
#include "tdrd/flops.hpp"

namespace tdrd {

std::vector<bool> match_detections(const std::vector<Detection>& preds, const std::vector<GroundTruth>& gts,
                                   double iou_threshold, std::vector<Detection>* sorted_preds) {
  std::vector<Detection> order = preds;
  std::sort(order.begin(), order.end(), ranks_before);
  std::vector<bool> used(gts.size(), false);
  std::vector<bool> flags;
  flags.reserve(order.size());
  for (const auto& p : order) {
    int best = -1;
    double best_iou = iou_threshold;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (used[g] || gts[g].class_id != p.class_id) continue;
      const double o = iou(p.box, gts[g].box);
      if (o >= best_iou && (best < 0 || o > best_iou)) {
        best = static_cast<int>(g);
        best_iou = o;
      }
    }
    if (best >= 0) used[best] = true;
    flags.push_back(best >= 0);
  }
  if (sorted_preds) *sorted_preds = std::move(order);
  return flags;
}

std::optional<double> average_precision(const std::vector<bool>& flags, int num_gt, ApInterpolation mode) {
  if (num_gt <= 0) {
    if (flags.empty()) return std::nullopt;
    return 0.0;
  }
  const std::size_t n = flags.size();
  std::vector<double> recall(n), precision(n);
  double tp = 0;
  for (std::size_t i = 0; i < n; ++i) {
    tp += flags[i] ? 1 : 0;
    recall[i] = tp / num_gt;
    precision[i] = tp / static_cast<double>(i + 1);
  }
  // Monotone envelope: best precision at this recall or beyond.
  for (std::size_t i = n; i-- > 1;) precision[i - 1] = std::max(precision[i - 1], precision[i]);

  if (mode == ApInterpolation::AllPoint) {
    double ap = 0.0, prev = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      ap += (recall[i] - prev) * precision[i];
      prev = recall[i];
    }
    return ap;
  }
  double sum = 0.0;
  std::size_t i = 0;
  for (int k = 0; k <= 100; ++k) {
    const double r = k / 100.0;
    while (i < n && recall[i] < r - 1e-12) ++i;
    if (i < n) sum += precision[i];
  }
  return sum / 101.0;
}

namespace {

constexpr int kThresholds = 10;

double threshold(int t) { return 0.5 + 0.05 * t; }

struct Scored {
  Detection det;
  std::size_t image = 0;
  bool tp = false;
};

// AP for every class at one IoU threshold.
std::array<std::optional<double>, kNumDamageClasses> class_ap_at(const EvalInput& in, double thr,
                                                                  ApInterpolation mode) {
  std::array<std::vector<Scored>, kNumDamageClasses> per_class;
  std::array<int, kNumDamageClasses> num_gt{};
  for (std::size_t i = 0; i < in.gts.size(); ++i)
    for (const auto& g : in.gts[i]) ++num_gt.at(g.class_id);
  for (std::size_t i = 0; i < in.preds.size(); ++i) {
    static const std::vector<GroundTruth> kNone;
    const auto& gts = i < in.gts.size() ? in.gts[i] : kNone;
    std::vector<Detection> sorted;
    const auto flags = match_detections(in.preds[i], gts, thr, &sorted);
    for (std::size_t k = 0; k < sorted.size(); ++k) per_class.at(sorted[k].class_id).push_back({sorted[k], i, flags[k]});
  }
  std::array<std::optional<double>, kNumDamageClasses> out;
  for (int c = 0; c < kNumDamageClasses; ++c) {
    auto& list = per_class[c];
    std::stable_sort(list.begin(), list.end(), [](const Scored& a, const Scored& b) {
      if (ranks_before(a.det, b.det)) return true;
      if (ranks_before(b.det, a.det)) return false;
      return a.image < b.image;
    });
    std::vector<bool> flags;
    for (const auto& s : list) flags.push_back(s.tp);
    out[c] = average_precision(flags, num_gt[c], mode);
  }
  return out;
}

double mean_defined(const std::array<std::optional<double>, kNumDamageClasses>& v) {
  double sum = 0.0;
  int n = 0;
  for (const auto& x : v)
    if (x) sum += *x, ++n;
  return n ? sum / n : 0.0;
}

}  // namespace

MapResult evaluate_map(const EvalInput& input, ApInterpolation mode) {
  MapResult r;
  std::array<double, kNumDamageClasses> sums{};
  std::array<bool, kNumDamageClasses> defined{};
  double map_sum = 0.0;
  for (int t = 0; t < kThresholds; ++t) {
    const auto aps = class_ap_at(input, threshold(t), mode);
    const double m = mean_defined(aps);
    map_sum += m;
    if (t == 0) r.map_50 = m;
    for (int c = 0; c < kNumDamageClasses; ++c) {
      if (aps[c]) {
        sums[c] += *aps[c];
        defined[c] = true;
      }
    }
  }
  r.map_50_95 = map_sum / kThresholds;
  for (int c = 0; c < kNumDamageClasses; ++c)
    if (defined[c]) r.per_class_ap[c] = sums[c] / kThresholds;
  return r;
}

double map_50_95(const EvalInput& input, ApInterpolation mode) { return evaluate_map(input, mode).map_50_95; }

double map_50(const EvalInput& input, ApInterpolation mode) {
  return mean_defined(class_ap_at(input, 0.5, mode));
}

double precision_at_conf(const EvalInput& input, double conf) {
  std::int64_t tp = 0, total = 0;
  for (std::size_t i = 0; i < input.preds.size(); ++i) {
    std::vector<Detection> kept;
    for (const auto& d : input.preds[i])
      if (d.score >= conf) kept.push_back(d);
    static const std::vector<GroundTruth> kNone;
    const auto flags = match_detections(kept, i < input.gts.size() ? input.gts[i] : kNone, 0.5);
    for (bool f : flags) tp += f;
    total += static_cast<std::int64_t>(flags.size());
  }
  return total ? static_cast<double>(tp) / total : 0.0;
}

double count_flops(const Detector& model, int input_size) {
  auto run = [input_size](const Detector& m) {
    NoGradGuard no_grad;
    FlopRecorder rec;
    m.forward(Tensor(Shape{1, 3, input_size, input_size}, 0.0));
    return rec.total_flops();
  };
  if (input_size == model.config().input_size) return run(model) / 1e9;
  ModelConfig cfg = model.config();
  cfg.input_size = input_size;
  return run(build_model(cfg)) / 1e9;
}

FpsResult measure_fps(const std::function<void()>& forward, int trials, int warmup) {
  if (trials < 1) throw ConfigError("trials must be at least 1");
  for (int i = 0; i < warmup; ++i) forward();
  using clock = std::chrono::steady_clock;
  std::vector<double> ms;
  ms.reserve(trials);
  const auto start = clock::now();
  for (int i = 0; i < trials; ++i) {
    const auto t0 = clock::now();
    forward();
    ms.push_back(std::chrono::duration<double, std::milli>(clock::now() - t0).count());
  }
  const double total = std::chrono::duration<double>(clock::now() - start).count();
  FpsResult r;
  r.timed = static_cast<int>(ms.size());
  r.fps = total > 0 ? trials / total : 0.0;
  std::sort(ms.begin(), ms.end());
  r.median_ms = ms.size() % 2 ? ms[ms.size() / 2] : 0.5 * (ms[ms.size() / 2 - 1] + ms[ms.size() / 2]);
  r.p95_ms = ms[std::min(ms.size() - 1, static_cast<std::size_t>(std::ceil(0.95 * ms.size())) - 1)];
  return r;
}

FpsResult measure_fps(const Detector& model, int trials, int warmup) {
  const int s = model.config().input_size;
  const Tensor input(Shape{1, 3, s, s}, 0.5);
  return measure_fps([&] { detect(model, input); }, trials, warmup);
}

std::string MetricsReport::to_json() const {
  nlohmann::ordered_json j;
  j["map_50_95"] = map_50_95;
  j["map_50"] = map_50;
  j["precision_at_05"] = precision_at_05;
  j["gflops"] = gflops;
  j["fps"] = fps;
  nlohmann::ordered_json ap = nlohmann::ordered_json::array();
  for (const auto& a : per_class_ap) ap.push_back(a ? nlohmann::ordered_json(*a) : nlohmann::ordered_json(nullptr));
  j["per_class_ap"] = ap;
  return j.dump(2);
}

std::string MetricsReport::csv_header() { return "map_50_95,map_50,precision_at_05,gflops,fps,per_class_ap"; }

std::string MetricsReport::csv_row() const {
  std::string ap;
  for (int c = 0; c < kNumDamageClasses; ++c) {
    if (c) ap += ';';
    if (per_class_ap[c]) ap += kv::from_double(*per_class_ap[c]);
  }
  return kv::from_double(map_50_95) + "," + kv::from_double(map_50) + "," + kv::from_double(precision_at_05) + "," +
         kv::from_double(gflops) + "," + kv::from_double(fps) + "," + ap;
}

std::string MetricsReport::table() const {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%8s %8s %10s %8s\n%8.1f %8.1f %10.3f %8.1f\n", "mAP(%)", "Pre(%)", "FLOPs(G)", "FPS",
                100 * map_50_95, 100 * precision_at_05, gflops, fps);
  std::string out = buf;
  for (int c = 0; c < kNumDamageClasses; ++c) {
    if (per_class_ap[c]) std::snprintf(buf, sizeof(buf), "  AP %-8s %6.1f\n", std::string(kClassNames[c]).c_str(),
                                       100 * *per_class_ap[c]);
    else std::snprintf(buf, sizeof(buf), "  AP %-8s %6s\n", std::string(kClassNames[c]).c_str(), "-");
    out += buf;
  }
  return out;
}

MetricsReport evaluate_accuracy(const Detector& model, const Dataset& dataset, ApInterpolation mode) {
  EvalInput in;
  for (const auto& s : dataset.samples) {
    in.preds.push_back(detect(model, s.image).front());
    in.gts.push_back(s.boxes);
  }
  const MapResult m = evaluate_map(in, mode);
  MetricsReport r;
  r.map_50_95 = m.map_50_95;
  r.map_50 = m.map_50;
  r.per_class_ap = m.per_class_ap;
  r.precision_at_05 = precision_at_conf(in, 0.5);
  return r;
}

}  // namespace tdrd
