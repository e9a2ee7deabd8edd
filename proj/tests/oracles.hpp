#pragma once

// Brute-force reference implementations shared by the unit tests and the
// acceptance binary. Only the documented ranking comparator is shared with
// the library.

#include <algorithm>
#include <array>
#include <optional>
#include <vector>

#include "tdrd/metrics.hpp"
#include "tdrd/rng.hpp"
#include "tdrd/tensor.hpp"

namespace tdrd::testing {

// Straight triple loop: every output pixel sums the k x k dilated taps.
inline std::vector<double> gather_oracle(const Tensor& x, int r, const std::vector<double>& w) {
  const Shape s = x.shape();
  const int k = static_cast<int>(w.size()), c = (k - 1) / 2;
  std::vector<double> out(s.numel(), 0.0);
  for (int n = 0; n < s.n; ++n)
    for (int ch = 0; ch < s.c; ++ch)
      for (int y = 0; y < s.h; ++y)
        for (int xx = 0; xx < s.w; ++xx) {
          double acc = 0;
          for (int i = 0; i < k; ++i)
            for (int j = 0; j < k; ++j) {
              const int sy = y + (i - c) * r, sx = xx + (j - c) * r;
              if (sy < 0 || sx < 0 || sy >= s.h || sx >= s.w) continue;
              acc += w[i] * w[j] * x.at(n, ch, sy, sx);
            }
          out[x.offset(n, ch, y, xx)] = acc;
        }
  return out;
}

inline double oracle_iou(const BBox& a, const BBox& b) {
  const double w = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double h = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (w <= 0 || h <= 0) return 0.0;
  const double inter = w * h;
  return inter / ((a.x2 - a.x1) * (a.y2 - a.y1) + (b.x2 - b.x1) * (b.y2 - b.y1) - inter);
}

inline double oracle_ap101(const std::vector<bool>& flags, int num_gt) {
  std::vector<double> rec, prec;
  int tp = 0;
  for (std::size_t i = 0; i < flags.size(); ++i) {
    tp += flags[i];
    rec.push_back(static_cast<double>(tp) / num_gt);
    prec.push_back(static_cast<double>(tp) / (i + 1));
  }
  double sum = 0;
  for (int k = 0; k <= 100; ++k) {
    double best = 0;
    for (std::size_t i = 0; i < rec.size(); ++i)
      if (rec[i] >= k / 100.0 - 1e-12) best = std::max(best, prec[i]);
    sum += best;
  }
  return sum / 101;
}

struct OracleMap {
  double map_50_95 = 0, map_50 = 0;
  std::array<std::optional<double>, 3> per_class{};  // averaged over thresholds
};

inline OracleMap oracle_map(const EvalInput& in) {
  OracleMap out;
  for (int t = 0; t < 10; ++t) {
    const double thr = 0.5 + 0.05 * t;
    double sum = 0;
    int classes = 0;
    for (int c = 0; c < 3; ++c) {
      struct Item {
        Detection d;
        std::size_t img;
      };
      std::vector<Item> items;
      int num_gt = 0;
      for (std::size_t i = 0; i < in.gts.size(); ++i)
        for (const auto& g : in.gts[i]) num_gt += g.class_id == c;
      for (std::size_t i = 0; i < in.preds.size(); ++i)
        for (const auto& p : in.preds[i])
          if (p.class_id == c) items.push_back({p, i});
      if (num_gt == 0 && items.empty()) continue;
      ++classes;
      if (num_gt == 0) {  // AP 0
        out.per_class[c] = out.per_class[c].value_or(0.0);
        continue;
      }
      std::stable_sort(items.begin(), items.end(), [](const Item& a, const Item& b) {
        if (ranks_before(a.d, b.d)) return true;
        if (ranks_before(b.d, a.d)) return false;
        return a.img < b.img;
      });
      std::vector<std::vector<bool>> used(in.gts.size());
      for (std::size_t i = 0; i < in.gts.size(); ++i) used[i].assign(in.gts[i].size(), false);
      std::vector<bool> flags;
      for (const auto& it : items) {
        int pick = -1;
        double best = -1;
        for (std::size_t g = 0; g < in.gts[it.img].size(); ++g) {
          const auto& gt = in.gts[it.img][g];
          if (gt.class_id != c || used[it.img][g]) continue;
          const double o = oracle_iou(it.d.box, gt.box);
          if (o >= thr && o > best) best = o, pick = static_cast<int>(g);
        }
        if (pick >= 0) used[it.img][pick] = true;
        flags.push_back(pick >= 0);
      }
      const double ap = oracle_ap101(flags, num_gt);
      sum += ap;
      out.per_class[c] = out.per_class[c].value_or(0.0) + ap / 10;
    }
    const double m = classes ? sum / classes : 0.0;
    out.map_50_95 += m / 10;
    if (t == 0) out.map_50 = m;
  }
  return out;
}

inline double oracle_precision(const EvalInput& in, double conf) {
  int tp = 0, n = 0;
  for (std::size_t i = 0; i < in.preds.size(); ++i) {
    std::vector<Detection> kept;
    for (const auto& p : in.preds[i])
      if (p.score >= conf) kept.push_back(p);
    std::sort(kept.begin(), kept.end(), ranks_before);
    std::vector<bool> used(in.gts[i].size(), false);
    for (const auto& p : kept) {
      int pick = -1;
      double best = -1;
      for (std::size_t g = 0; g < in.gts[i].size(); ++g) {
        if (used[g] || in.gts[i][g].class_id != p.class_id) continue;
        const double o = oracle_iou(p.box, in.gts[i][g].box);
        if (o >= 0.5 && o > best) best = o, pick = static_cast<int>(g);
      }
      if (pick >= 0) used[pick] = true, ++tp;
      ++n;
    }
  }
  return n ? static_cast<double>(tp) / n : 0.0;
}

// Random scene where predictions are jittered copies of ground truth plus
// clutter, so every threshold sees a mix of hits and misses.
inline EvalInput random_instance(Rng& rng) {
  EvalInput in;
  const int images = rng.uniform_int(1, 4);
  int budget = 50;
  for (int i = 0; i < images; ++i) {
    std::vector<GroundTruth> gts;
    std::vector<Detection> preds;
    const int ng = rng.uniform_int(0, std::min(6, budget / 2));
    for (int g = 0; g < ng; ++g) {
      const double x = rng.uniform(0, 80), y = rng.uniform(0, 80);
      gts.push_back({BBox{x, y, x + rng.uniform(5, 30), y + rng.uniform(5, 30)}, rng.uniform_int(0, 2)});
    }
    for (const auto& g : gts) {
      const int copies = rng.uniform_int(0, 2);
      for (int k = 0; k < copies; ++k) {
        const double j = rng.uniform(0, 4);
        preds.push_back({BBox{g.box.x1 + rng.uniform(-j, j), g.box.y1 + rng.uniform(-j, j),
                              g.box.x2 + rng.uniform(-j, j), g.box.y2 + rng.uniform(-j, j)},
                         rng.uniform() < 0.85 ? g.class_id : rng.uniform_int(0, 2), rng.uniform()});
      }
    }
    const int clutter = rng.uniform_int(0, 4);
    for (int k = 0; k < clutter; ++k) {
      const double x = rng.uniform(0, 80), y = rng.uniform(0, 80);
      preds.push_back({BBox{x, y, x + rng.uniform(5, 30), y + rng.uniform(5, 30)}, rng.uniform_int(0, 2), rng.uniform()});
    }
    budget -= static_cast<int>(gts.size() + preds.size());
    in.gts.push_back(gts);
    in.preds.push_back(preds);
  }
  return in;
}

}  // namespace tdrd::testing
