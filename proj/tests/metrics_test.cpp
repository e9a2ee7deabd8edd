#include <gtest/gtest.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <thread>

#include <nlohmann/json.hpp>

#include "tdrd/errors.hpp"
#include "tdrd/metrics.hpp"
#include "tdrd/rng.hpp"
#include "oracles.hpp"

namespace tdrd {
namespace {

using testing::oracle_iou;
using testing::oracle_map;
using testing::oracle_precision;
using testing::random_instance;
using testing::OracleMap;

// ---- tests -----------------------------------------------------------------

TEST(Iou, HandExamples) {
  const BBox a{0, 0, 2, 2};
  EXPECT_EQ(iou(a, a), 1.0);
  EXPECT_EQ(iou(a, BBox{5, 5, 6, 6}), 0.0);
  EXPECT_EQ(iou(a, BBox{2, 0, 4, 2}), 0.0);
  EXPECT_EQ(iou(a, BBox{1, 1, 3, 3}), 1.0 / 7.0);
}

TEST(Match, SinglePredictionOnItsTarget) {
  const BBox b{1, 1, 5, 5};
  EXPECT_EQ(match_detections({{b, 0, 0.9}}, {{b, 0}}, 0.5), (std::vector<bool>{true}));
}

TEST(Match, SecondPredictionOnSameTargetIsFalsePositive) {
  const BBox b{1, 1, 5, 5};
  EXPECT_EQ(match_detections({{b, 0, 0.4}, {b, 0, 0.9}}, {{b, 0}}, 0.5), (std::vector<bool>{true, false}));
}

TEST(Match, PrefersHighestOverlap) {
  const std::vector<GroundTruth> gts{{BBox{0, 0, 10, 10}, 0}, {BBox{1, 0, 11, 10}, 0}};
  std::vector<Detection> sorted;
  const auto flags = match_detections({{BBox{1, 0, 11, 10}, 0, 0.9}, {BBox{0, 0, 10, 10}, 0, 0.8}}, gts, 0.5, &sorted);
  EXPECT_EQ(flags, (std::vector<bool>{true, true}));
}

TEST(Match, EqualsBruteForceGreedy) {
  Rng rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<GroundTruth> gts;
    for (int g = 0; g < 10; ++g) {
      const double x = rng.uniform(0, 60), y = rng.uniform(0, 60);
      gts.push_back({BBox{x, y, x + rng.uniform(5, 25), y + rng.uniform(5, 25)}, rng.uniform_int(0, 1)});
    }
    std::vector<Detection> preds;
    for (int p = 0; p < 30; ++p) {
      const auto& g = gts[rng.uniform_int(0, 9)];
      preds.push_back({BBox{g.box.x1 + rng.uniform(-5, 5), g.box.y1 + rng.uniform(-5, 5), g.box.x2 + rng.uniform(-5, 5),
                            g.box.y2 + rng.uniform(-5, 5)},
                       rng.uniform_int(0, 1), rng.uniform()});
    }
    std::vector<Detection> order = preds;
    std::sort(order.begin(), order.end(), [](const Detection& a, const Detection& b) { return a.score > b.score; });
    std::vector<bool> used(gts.size(), false), expected;
    for (const auto& p : order) {
      int pick = -1;
      double best = -1;
      for (std::size_t g = 0; g < gts.size(); ++g) {
        if (used[g] || gts[g].class_id != p.class_id) continue;
        const double o = oracle_iou(p.box, gts[g].box);
        if (o >= 0.5 && o > best) best = o, pick = static_cast<int>(g);
      }
      if (pick >= 0) used[pick] = true;
      expected.push_back(pick >= 0);
    }
    ASSERT_EQ(match_detections(preds, gts, 0.5), expected);
  }
}

TEST(AveragePrecision, EdgeCases) {
  EXPECT_EQ(*average_precision({true, true, true}, 3), 1.0);
  EXPECT_EQ(*average_precision({}, 4), 0.0);
  EXPECT_EQ(*average_precision({false, false}, 0), 0.0);
  EXPECT_FALSE(average_precision({}, 0).has_value());
}

TEST(AveragePrecision, CloseToContinuousArea) {
  // Interpolated curve: precision 1 up to recall 1/2, then 2/3 up to 1.
  const double continuous = 0.5 * 1.0 + 0.5 * (2.0 / 3.0);
  EXPECT_NEAR(*average_precision({true, false, true}, 2), continuous, 0.01);
  EXPECT_NEAR(*average_precision({true, false, true}, 2, ApInterpolation::AllPoint), continuous, 1e-12);
}

TEST(Map, PerfectAndEmpty) {
  EvalInput in;
  in.gts = {{{BBox{0, 0, 10, 10}, 0}, {BBox{20, 20, 30, 35}, 2}}, {{BBox{5, 5, 9, 9}, 1}}};
  in.preds = {{{BBox{0, 0, 10, 10}, 0, 1.0}, {BBox{20, 20, 30, 35}, 2, 1.0}}, {{BBox{5, 5, 9, 9}, 1, 1.0}}};
  const MapResult r = evaluate_map(in);
  EXPECT_EQ(r.map_50_95, 1.0);
  EXPECT_EQ(r.map_50, 1.0);
  for (const auto& ap : r.per_class_ap) EXPECT_EQ(*ap, 1.0);
  in.preds = {{}, {}};
  EXPECT_EQ(map_50_95(in), 0.0);
  EXPECT_EQ(map_50(in), 0.0);
}

TEST(Map, AbsentClassIsExcluded) {
  EvalInput in;
  in.gts = {{{BBox{0, 0, 10, 10}, 0}}};
  in.preds = {{{BBox{0, 0, 10, 10}, 0, 0.9}}};
  const MapResult r = evaluate_map(in);
  EXPECT_EQ(r.map_50_95, 1.0);
  EXPECT_FALSE(r.per_class_ap[1].has_value());
  in.preds[0].push_back({BBox{50, 50, 60, 60}, 1, 0.8});
  EXPECT_EQ(evaluate_map(in).map_50_95, 0.5);
}

TEST(Map, MatchesIndependentOracle) {
  Rng rng(2);
  for (int trial = 0; trial < 100; ++trial) {
    const EvalInput in = random_instance(rng);
    const OracleMap o = oracle_map(in);
    const MapResult r = evaluate_map(in);
    ASSERT_NEAR(r.map_50_95, o.map_50_95, 1e-9) << trial;
    ASSERT_NEAR(r.map_50, o.map_50, 1e-9) << trial;
    for (int c = 0; c < 3; ++c) {
      ASSERT_EQ(r.per_class_ap[c].has_value(), o.per_class[c].has_value()) << trial;
      if (o.per_class[c]) ASSERT_NEAR(*r.per_class_ap[c], *o.per_class[c], 1e-9) << trial;
    }
    ASSERT_NEAR(precision_at_conf(in, 0.5), oracle_precision(in, 0.5), 1e-9) << trial;
    ASSERT_LE(r.map_50_95, r.map_50 + 1e-12);
  }
}

TEST(Map, InvariantToInputOrder) {
  Rng rng(3);
  for (int trial = 0; trial < 30; ++trial) {
    EvalInput in = random_instance(rng);
    const double m = map_50_95(in), p = precision_at_conf(in);
    for (auto& v : in.preds) std::reverse(v.begin(), v.end());
    for (auto& v : in.gts) std::reverse(v.begin(), v.end());
    EXPECT_NEAR(map_50_95(in), m, 1e-12);
    EXPECT_NEAR(precision_at_conf(in), p, 1e-12);
  }
}

TEST(Map, DuplicateFalsePositiveNeverHelps) {
  Rng rng(4);
  for (int trial = 0; trial < 30; ++trial) {
    EvalInput in = random_instance(rng);
    std::size_t img = 0;
    while (img < in.preds.size() && in.preds[img].empty()) ++img;
    if (img == in.preds.size()) continue;
    const double m = map_50_95(in), m50 = map_50(in), p = precision_at_conf(in);
    in.preds[img].push_back(in.preds[img][0]);
    EXPECT_LE(map_50_95(in), m + 1e-12);
    EXPECT_LE(map_50(in), m50 + 1e-12);
    EXPECT_LE(precision_at_conf(in), p + 1e-12);
  }
}

TEST(Precision, HandExamples) {
  EvalInput in;
  in.gts = {{{BBox{0, 0, 10, 10}, 0}}};
  in.preds = {{{BBox{0, 0, 10, 10}, 0, 0.9}}};
  EXPECT_EQ(precision_at_conf(in), 1.0);
  in.preds[0].push_back({BBox{40, 40, 50, 50}, 0, 0.7});
  EXPECT_EQ(precision_at_conf(in), 0.5);
  in.preds = {{{BBox{0, 0, 10, 10}, 0, 0.4}}};
  EXPECT_EQ(precision_at_conf(in), 0.0);
}

TEST(Fps, KnownCostStub) {
  const FpsResult r = measure_fps([] { std::this_thread::sleep_for(std::chrono::milliseconds(10)); }, 10, 2);
  EXPECT_EQ(r.timed, 10);
  EXPECT_GE(r.fps, 80.0);
  EXPECT_LE(r.fps, 110.0);
  EXPECT_GE(r.median_ms, 9.0);
  EXPECT_GE(r.p95_ms, r.median_ms);
}

TEST(Fps, WarmupIsNotTimed) {
  int calls = 0;
  const FpsResult r = measure_fps([&] { ++calls; }, 7, 5);
  EXPECT_EQ(calls, 12);
  EXPECT_EQ(r.timed, 7);
  EXPECT_GT(r.fps, 0.0);
  EXPECT_THROW(measure_fps([] {}, 0, 0), ConfigError);
}

TEST(Report, KeysAndColumns) {
  MetricsReport r;
  r.map_50_95 = 0.25;
  r.per_class_ap = {0.1, std::nullopt, 0.3};
  const auto j = nlohmann::json::parse(r.to_json());
  std::vector<std::string> keys;
  for (const auto& [k, v] : j.items()) keys.push_back(k);
  std::sort(keys.begin(), keys.end());
  EXPECT_EQ(keys, (std::vector<std::string>{"fps", "gflops", "map_50", "map_50_95", "per_class_ap", "precision_at_05"}));
  EXPECT_TRUE(j["per_class_ap"][1].is_null());
  EXPECT_EQ(MetricsReport::csv_header(), "map_50_95,map_50,precision_at_05,gflops,fps,per_class_ap");
  EXPECT_EQ(r.csv_row(), "0.25,0,0,0,0,0.1;;0.3");
}

TEST(Flops, DetectorCountIsRepeatable) {
  ModelConfig cfg;
  cfg.input_size = 64;
  const Detector m = build_model(cfg);
  const double a = count_flops(m, 64);
  EXPECT_GT(a, 0.0);
  EXPECT_EQ(count_flops(m, 64), a);
  EXPECT_GT(count_flops(m, 128), a);
}

}  // namespace
}  // namespace tdrd
