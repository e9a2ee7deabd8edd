#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "tdrd/data.hpp"
#include "tdrd/detector.hpp"
#include "tdrd/kv.hpp"
#include "tdrd/metrics.hpp"

namespace tdrd {

enum class LrSchedule { Linear, Cosine };
enum class EvalSet { Val, Train };

struct TrainConfig {
  double lr_start = 0.01;
  double lr_end = 0.002;
  double weight_decay = 0.0005;
  double momentum = 0.8;
  int epochs = 300;
  int batch_size = 32;
  std::uint64_t seed = 0;
  int eval_every = 100;  // optimizer steps between evaluations
  int max_steps = 0;     // > 0 overrides epochs
  LrSchedule schedule = LrSchedule::Linear;
  bool hflip = true;
  EvalSet eval_on = EvalSet::Val;
  // Stop once the evaluated mAP@0.5 reaches this value; 0 disables.
  double target_map50 = 0.0;

  // Throws ConfigError.
  void validate() const;
  int total_steps(std::size_t dataset_size) const;

  kv::Entries to_entries() const;  // `train.<key>=<value>`
  void apply(const std::string& key, const std::string& value);
};

// v <- momentum * v - lr * (g + weight_decay * w); w <- w + v, for every
// parameter. Gradients are checked first; a non-finite one raises
// DivergenceError naming the parameter and nothing is updated.
void sgd_step(const std::vector<nn::NamedTensor>& params, std::vector<std::vector<double>>& velocity,
              const TrainConfig& cfg, double lr);

// Learning rate at `step` of `total_steps`: lr_start at 0, lr_end at the end.
double lr_schedule(int step, int total_steps, const TrainConfig& cfg);

struct StepRecord {
  int step = 0;
  int epoch = 0;
  double lr = 0.0;
  double loss = 0.0;
  double box = 0.0;
  double cls = 0.0;
  int positives = 0;
};

struct EvalRecord {
  int step = 0;
  MetricsReport report;
};

struct TrainHistory {
  std::vector<StepRecord> steps;
  std::vector<EvalRecord> evals;
  std::vector<double> epoch_seconds;

  // One JSON object per line, tagged "step", "eval" or "epoch".
  std::string to_jsonl() const;
};

struct TrainResult {
  TrainHistory history;
  std::optional<EvalRecord> best;  // by mAP@[.50:.95]
  int steps_run = 0;
  bool reached_target = false;
};

// Trains `model` in place. With a run_dir, writes best.ckpt, last.ckpt,
// history.jsonl and metrics.json there. On a non-finite loss or gradient
// the parameters from before that step are saved as last.ckpt and
// DivergenceError is rethrown.
TrainResult train(Detector& model, const TrainConfig& cfg, const Dataset& train_set, const Dataset& val_set,
                  const std::optional<std::filesystem::path>& run_dir = std::nullopt);

struct AblationRow {
  bool dsc = false;
  bool mapse = false;
  bool vgau = false;
  double map_50_95 = 0.0;
  double precision_at_05 = 0.0;
  double gflops = 0.0;
  double fps = 0.0;
  std::uint64_t seed = 0;
  std::uint64_t dataset_hash = 0;
  std::string status;  // "ok" or "failed: <reason>"
};

struct AblationOptions {
  int fps_trials = 20;
  int fps_warmup = 3;
  std::optional<std::filesystem::path> run_dir;  // per-row subdirectories
};

// The four module settings in order: MAPSE; DSC+MAPSE; MAPSE+VGAU; all.
std::vector<ModelConfig> ablation_configs(const ModelConfig& base);

std::vector<AblationRow> ablate(const ModelConfig& base, const TrainConfig& cfg, const Dataset& train_set,
                                const Dataset& val_set, const AblationOptions& options = {});

std::string ablation_csv(const std::vector<AblationRow>& rows);

}  // namespace tdrd
