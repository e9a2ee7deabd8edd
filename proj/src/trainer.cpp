#include "tdrd/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>

#include <nlohmann/json.hpp>

#include "tdrd/checkpoint.hpp"
#include "tdrd/errors.hpp"
#include "tdrd/rng.hpp"

namespace tdrd {

void TrainConfig::validate() const {
  if (!(lr_start > 0) || !(lr_end > 0)) throw ConfigError("train.lr_start and train.lr_end must be positive");
  if (lr_end > lr_start) throw ConfigError("train.lr_end must not exceed train.lr_start");
  if (!(weight_decay >= 0)) throw ConfigError("train.weight_decay must be non-negative");
  if (!(momentum >= 0 && momentum < 1)) throw ConfigError("train.momentum must lie in [0, 1)");
  if (epochs <= 0) throw ConfigError("train.epochs must be positive");
  if (batch_size <= 0) throw ConfigError("train.batch_size must be positive");
  if (eval_every <= 0) throw ConfigError("train.eval_every must be positive");
  if (max_steps < 0) throw ConfigError("train.max_steps must be non-negative");
  if (!(target_map50 >= 0 && target_map50 <= 1)) throw ConfigError("train.target_map50 must lie in [0, 1]");
}

int TrainConfig::total_steps(std::size_t dataset_size) const {
  if (max_steps > 0) return max_steps;
  const auto per_epoch = (dataset_size + batch_size - 1) / batch_size;
  return static_cast<int>(std::max<std::size_t>(1, per_epoch) * epochs);
}

kv::Entries TrainConfig::to_entries() const {
  kv::Entries e;
  e["train.lr_start"] = kv::from_double(lr_start);
  e["train.lr_end"] = kv::from_double(lr_end);
  e["train.weight_decay"] = kv::from_double(weight_decay);
  e["train.momentum"] = kv::from_double(momentum);
  e["train.epochs"] = std::to_string(epochs);
  e["train.batch_size"] = std::to_string(batch_size);
  e["train.seed"] = std::to_string(seed);
  e["train.eval_every"] = std::to_string(eval_every);
  e["train.max_steps"] = std::to_string(max_steps);
  e["train.schedule"] = schedule == LrSchedule::Linear ? "linear" : "cosine";
  e["train.hflip"] = kv::from_bool(hflip);
  e["train.eval_on"] = eval_on == EvalSet::Val ? "val" : "train";
  e["train.target_map50"] = kv::from_double(target_map50);
  return e;
}

void TrainConfig::apply(const std::string& key, const std::string& v) {
  if (key == "train.lr_start") lr_start = kv::to_double(key, v);
  else if (key == "train.lr_end") lr_end = kv::to_double(key, v);
  else if (key == "train.weight_decay") weight_decay = kv::to_double(key, v);
  else if (key == "train.momentum") momentum = kv::to_double(key, v);
  else if (key == "train.epochs") epochs = kv::to_int(key, v);
  else if (key == "train.batch_size") batch_size = kv::to_int(key, v);
  else if (key == "train.seed") seed = kv::to_u64(key, v);
  else if (key == "train.eval_every") eval_every = kv::to_int(key, v);
  else if (key == "train.max_steps") max_steps = kv::to_int(key, v);
  else if (key == "train.schedule") {
    if (v == "linear") schedule = LrSchedule::Linear;
    else if (v == "cosine") schedule = LrSchedule::Cosine;
    else throw ValidationError(key + " must be linear or cosine");
  } else if (key == "train.hflip") hflip = kv::to_bool(key, v);
  else if (key == "train.eval_on") {
    if (v == "val") eval_on = EvalSet::Val;
    else if (v == "train") eval_on = EvalSet::Train;
    else throw ValidationError(key + " must be val or train");
  } else if (key == "train.target_map50") target_map50 = kv::to_double(key, v);
  else throw ValidationError("unknown config key '" + key + "'");
}

void sgd_step(const std::vector<nn::NamedTensor>& params, std::vector<std::vector<double>>& velocity,
              const TrainConfig& cfg, double lr) {
  if (velocity.size() != params.size()) {
    velocity.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) velocity[i].assign(params[i].tensor.numel(), 0.0);
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (velocity[i].size() != params[i].tensor.numel())
      throw DimensionError("optimizer state for " + params[i].name + " has the wrong size");
    for (double g : params[i].tensor.grad())
      if (!std::isfinite(g)) throw DivergenceError("non-finite gradient in parameter " + params[i].name);
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor w = params[i].tensor;
    auto values = w.mutable_values();
    const auto grad = w.grad();
    auto& v = velocity[i];
    for (std::size_t k = 0; k < values.size(); ++k) {
      const double g = grad.empty() ? 0.0 : grad[k];
      v[k] = cfg.momentum * v[k] - lr * (g + cfg.weight_decay * values[k]);
      values[k] += v[k];
    }
  }
}

double lr_schedule(int step, int total_steps, const TrainConfig& cfg) {
  if (total_steps <= 0 || step >= total_steps) return cfg.lr_end;
  if (step <= 0) return cfg.lr_start;
  const double t = static_cast<double>(step) / total_steps;
  if (cfg.schedule == LrSchedule::Cosine)
    return cfg.lr_end + (cfg.lr_start - cfg.lr_end) * 0.5 * (1 + std::cos(std::numbers::pi * t));
  return cfg.lr_start + (cfg.lr_end - cfg.lr_start) * t;
}

namespace {

nlohmann::ordered_json report_json(const MetricsReport& r) { return nlohmann::ordered_json::parse(r.to_json()); }

// Stacks samples into one (n, 3, s, s) batch, mirroring those picked for a
// horizontal flip.
std::pair<Tensor, std::vector<std::vector<GroundTruth>>> make_batch(const Dataset& data,
                                                                    const std::vector<std::size_t>& idx,
                                                                    const std::vector<bool>& flip) {
  const int s = data.input_size;
  const std::size_t plane = static_cast<std::size_t>(s) * s;
  std::vector<double> values(idx.size() * 3 * plane);
  std::vector<std::vector<GroundTruth>> targets;
  for (std::size_t b = 0; b < idx.size(); ++b) {
    const Sample& sample = data.samples[idx[b]];
    const auto src = sample.image.values();
    double* dst = values.data() + b * 3 * plane;
    if (!flip[b]) {
      std::copy(src.begin(), src.end(), dst);
      targets.push_back(sample.boxes);
      continue;
    }
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < s; ++y)
        for (int x = 0; x < s; ++x) dst[c * plane + y * s + x] = src[c * plane + y * s + (s - 1 - x)];
    std::vector<GroundTruth> boxes = sample.boxes;
    for (auto& g : boxes) g.box = BBox{s - g.box.x2, g.box.y1, s - g.box.x1, g.box.y2};
    targets.push_back(std::move(boxes));
  }
  return {Tensor(Shape{static_cast<int>(idx.size()), 3, s, s}, std::move(values)), std::move(targets)};
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
}

}  // namespace

std::string TrainHistory::to_jsonl() const {
  std::string out;
  std::size_t e = 0;
  auto flush_evals = [&](int upto) {
    while (e < evals.size() && evals[e].step <= upto) {
      nlohmann::ordered_json j;
      j["type"] = "eval";
      j["step"] = evals[e].step;
      j["report"] = report_json(evals[e].report);
      out += j.dump() + "\n";
      ++e;
    }
  };
  for (const auto& s : steps) {
    nlohmann::ordered_json j;
    j["type"] = "step";
    j["step"] = s.step;
    j["epoch"] = s.epoch;
    j["lr"] = s.lr;
    j["loss"] = s.loss;
    j["box"] = s.box;
    j["cls"] = s.cls;
    j["positives"] = s.positives;
    out += j.dump() + "\n";
    flush_evals(s.step);
  }
  flush_evals(std::numeric_limits<int>::max());
  for (std::size_t i = 0; i < epoch_seconds.size(); ++i) {
    nlohmann::ordered_json j;
    j["type"] = "epoch";
    j["epoch"] = i;
    j["seconds"] = epoch_seconds[i];
    out += j.dump() + "\n";
  }
  return out;
}

TrainResult train(Detector& model, const TrainConfig& cfg, const Dataset& train_set, const Dataset& val_set,
                  const std::optional<std::filesystem::path>& run_dir) {
  cfg.validate();
  if (train_set.empty()) throw ValidationError("training set is empty");
  if (train_set.input_size != model.config().input_size)
    throw ConfigError("dataset input size " + std::to_string(train_set.input_size) + " differs from model.input_size " +
                      std::to_string(model.config().input_size));
  if (run_dir) std::filesystem::create_directories(*run_dir);

  const Dataset& eval_set = (cfg.eval_on == EvalSet::Train || val_set.empty()) ? train_set : val_set;
  const auto params = model.named_parameters();
  std::vector<std::vector<double>> velocity;
  Rng rng(cfg.seed ^ 0x7472616e5f736571ull);
  const int total = cfg.total_steps(train_set.size());
  const std::size_t n = train_set.size();
  const std::size_t batch = std::min<std::size_t>(cfg.batch_size, n);

  TrainResult result;
  auto finish = [&] {
    if (!run_dir) return;
    save_checkpoint(*run_dir / "last.ckpt", model);
    write_text(*run_dir / "history.jsonl", result.history.to_jsonl());
    const MetricsReport final_report = result.history.evals.empty() ? MetricsReport{} : result.history.evals.back().report;
    write_text(*run_dir / "metrics.json", final_report.to_json() + "\n");
  };
  auto evaluate = [&](int step) {
    EvalRecord rec{step, evaluate_accuracy(model, eval_set)};
    result.history.evals.push_back(rec);
    if (!result.best || rec.report.map_50_95 > result.best->report.map_50_95) {
      result.best = rec;
      if (run_dir) save_checkpoint(*run_dir / "best.ckpt", model);
    }
    if (cfg.target_map50 > 0 && rec.report.map_50 >= cfg.target_map50) result.reached_target = true;
  };

  std::vector<std::size_t> order(n);
  int step = 0;
  int epoch = 0;
  try {
    while (step < total && !result.reached_target) {
      const auto epoch_start = std::chrono::steady_clock::now();
      for (std::size_t i = 0; i < n; ++i) order[i] = i;
      for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.uniform_int(0, static_cast<int>(i) - 1)]);
      for (std::size_t start = 0; start + batch <= n && step < total && !result.reached_target; start += batch) {
        std::vector<std::size_t> idx(order.begin() + start, order.begin() + start + batch);
        std::vector<bool> flip(batch, false);
        if (cfg.hflip)
          for (std::size_t b = 0; b < batch; ++b) flip[b] = rng.uniform() < 0.5;
        auto [images, targets] = make_batch(train_set, idx, flip);

        for (auto p : params) p.tensor.zero_grad();
        const LossBreakdown loss = detection_loss(model.forward(images), targets, model.config());
        const double value = loss.total.item();
        if (!std::isfinite(value)) throw DivergenceError("non-finite loss at step " + std::to_string(step));
        loss.total.backward();
        const double lr = lr_schedule(step, total, cfg);
        sgd_step(params, velocity, cfg, lr);
        result.history.steps.push_back({step, epoch, lr, value, loss.box, loss.cls, loss.positives});
        ++step;
        if (step % cfg.eval_every == 0 || step == total) evaluate(step);
      }
      result.history.epoch_seconds.push_back(
          std::chrono::duration<double>(std::chrono::steady_clock::now() - epoch_start).count());
      ++epoch;
    }
  } catch (const DivergenceError&) {
    result.steps_run = step;
    finish();
    throw;
  }
  result.steps_run = step;
  finish();
  return result;
}

std::vector<ModelConfig> ablation_configs(const ModelConfig& base) {
  std::vector<ModelConfig> out;
  for (auto [dsc, vgau] : {std::pair{false, false}, {true, false}, {false, true}, {true, true}}) {
    ModelConfig c = base;
    c.use_mapse = true;
    c.use_dsc = dsc;
    c.use_vgau = vgau;
    out.push_back(c);
  }
  return out;
}

std::vector<AblationRow> ablate(const ModelConfig& base, const TrainConfig& cfg, const Dataset& train_set,
                                const Dataset& val_set, const AblationOptions& options) {
  std::vector<AblationRow> rows;
  const Dataset& eval_set = val_set.empty() ? train_set : val_set;
  for (const ModelConfig& mc : ablation_configs(base)) {
    AblationRow row;
    row.dsc = mc.use_dsc;
    row.mapse = mc.use_mapse;
    row.vgau = mc.use_vgau;
    row.seed = cfg.seed;
    row.dataset_hash = train_set.hash;
    try {
      Detector model = build_model(mc);
      row.gflops = count_flops(model, mc.input_size);
      std::optional<std::filesystem::path> dir;
      if (options.run_dir)
        dir = *options.run_dir / (std::string(mc.use_dsc ? "dsc_" : "") + "mapse" + (mc.use_vgau ? "_vgau" : ""));
      train(model, cfg, train_set, val_set, dir);
      const MetricsReport r = evaluate_accuracy(model, eval_set);
      row.map_50_95 = r.map_50_95;
      row.precision_at_05 = r.precision_at_05;
      row.fps = measure_fps(model, options.fps_trials, options.fps_warmup).fps;
      row.status = "ok";
    } catch (const std::exception& e) {
      row.status = std::string("failed: ") + e.what();
    }
    rows.push_back(row);
  }
  return rows;
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
  std::string out = "dsc,mapse,vgau,map_50_95,precision_at_05,gflops,fps,seed,dataset_hash,status\n";
  for (const auto& r : rows) {
    std::string status = r.status;
    std::replace(status.begin(), status.end(), ',', ';');
    std::replace(status.begin(), status.end(), '\n', ' ');
    out += kv::from_bool(r.dsc) + "," + kv::from_bool(r.mapse) + "," + kv::from_bool(r.vgau) + "," +
           kv::from_double(r.map_50_95) + "," + kv::from_double(r.precision_at_05) + "," + kv::from_double(r.gflops) +
           "," + kv::from_double(r.fps) + "," + std::to_string(r.seed) + "," + std::to_string(r.dataset_hash) + "," +
           status + "\n";
  }
  return out;
}

}  // namespace tdrd
