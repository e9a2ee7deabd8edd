// Command-line front end: synth | train | eval | bench | ablate.
#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "tdrd/checkpoint.hpp"
#include "tdrd/errors.hpp"
#include "tdrd/run_config.hpp"

namespace {

using namespace tdrd;

constexpr int kExitUser = 1;
constexpr int kExitInternal = 2;
constexpr int kExitDivergence = 3;

// Options shared by every subcommand that resolves a RunConfig.
struct ConfigOptions {
  std::string preset;
  std::string config_file;
  std::vector<std::string> overrides;

  void attach(CLI::App* cmd) {
    cmd->add_option("--preset", preset, "Start from a preset: full, desk or overfit");
    cmd->add_option("--config", config_file, "Key=value config file applied after the preset");
    cmd->add_option("--set", overrides, "Extra key=value override, repeatable");
  }

  RunConfig resolve() const {
    RunConfig cfg = preset.empty() ? RunConfig{} : RunConfig::preset(preset);
    if (!config_file.empty()) cfg.apply(RunConfig::load(config_file).to_entries());
    for (const auto& kv_text : overrides) {
      const auto eq = kv_text.find('=');
      if (eq == std::string::npos) throw ValidationError("--set expects key=value, got '" + kv_text + "'");
      cfg.apply(kv_text.substr(0, eq), kv_text.substr(eq + 1));
    }
    return cfg;
  }
};

void write_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
}

Dataset load_split(const RunConfig& cfg, Split split) {
  return load_dataset(cfg.data_root, split, cfg.model.input_size, cfg.resize);
}

void write_report(const std::filesystem::path& dir, const MetricsReport& r) {
  write_file(dir / "metrics.json", r.to_json() + "\n");
  write_file(dir / "metrics.csv", MetricsReport::csv_header() + "\n" + r.csv_row() + "\n");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Top-down road damage detector: synthesize data, train, evaluate, benchmark and ablate."};
  app.require_subcommand(1);

  // synth
  ConfigOptions synth_opts;
  std::string synth_out;
  std::optional<int> synth_images, synth_size;
  std::optional<std::uint64_t> synth_seed;
  std::string synth_mix;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic road-damage dataset");
  synth_opts.attach(synth);
  synth->add_option("--out", synth_out, "Dataset directory (default: data.root)");
  synth->add_option("--num-images", synth_images, "Number of images");
  synth->add_option("--image-size", synth_size, "Square image size in pixels");
  synth->add_option("--seed", synth_seed, "Generator seed");
  synth->add_option("--class-mix", synth_mix, "Class weights crack,pothole,patch summing to 1");

  // train
  ConfigOptions train_opts;
  std::string train_data, train_run = "runs/train";
  std::optional<std::uint64_t> train_seed;
  std::optional<int> train_epochs, train_steps;
  bool no_mapse = false, no_vgau = false, no_dsc = false;
  auto* train_cmd = app.add_subcommand("train", "Train a detector on a dataset directory");
  train_opts.attach(train_cmd);
  train_cmd->add_option("--data", train_data, "Dataset directory (default: data.root)");
  train_cmd->add_option("--run-dir", train_run, "Output directory for checkpoints, history and config");
  train_cmd->add_option("--seed", train_seed, "Seed for weights and batch order");
  train_cmd->add_option("--epochs", train_epochs, "Training epochs");
  train_cmd->add_option("--max-steps", train_steps, "Step budget; overrides epochs when > 0");
  train_cmd->add_flag("--no-mapse", no_mapse, "Disable the backbone attention block");
  train_cmd->add_flag("--no-vgau", no_vgau, "Use plain upsample-and-add fusion in the neck");
  train_cmd->add_flag("--no-dsc", no_dsc, "Use plain convolutions in the residual blocks");

  // eval
  ConfigOptions eval_opts;
  std::string eval_ckpt, eval_data, eval_split = "val", eval_out;
  std::optional<int> eval_trials, eval_warmup;
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset split");
  eval_opts.attach(eval);
  eval->add_option("--checkpoint", eval_ckpt, "Checkpoint file")->required();
  eval->add_option("--data", eval_data, "Dataset directory (default: data.root)");
  eval->add_option("--split", eval_split, "train, val or test");
  eval->add_option("--out", eval_out, "Directory for metrics.json, metrics.csv and config.txt");
  eval->add_option("--trials", eval_trials, "Timed forward passes for FPS");
  eval->add_option("--warmup", eval_warmup, "Untimed warmup passes");

  // bench
  ConfigOptions bench_opts;
  std::string bench_ckpt, bench_out;
  std::optional<int> bench_trials, bench_warmup;
  auto* bench = app.add_subcommand("bench", "Report analytic GFLOPs and measured FPS");
  bench_opts.attach(bench);
  bench->add_option("--checkpoint", bench_ckpt, "Checkpoint file (default: freshly built model from the config)");
  bench->add_option("--out", bench_out, "Directory for bench.json and config.txt");
  bench->add_option("--trials", bench_trials, "Timed forward passes");
  bench->add_option("--warmup", bench_warmup, "Untimed warmup passes");

  // ablate
  ConfigOptions ablate_opts;
  std::string ablate_data, ablate_out = "runs/ablate";
  std::optional<int> ablate_trials, ablate_warmup;
  std::optional<std::uint64_t> ablate_seed;
  auto* ablate_cmd = app.add_subcommand("ablate", "Train and score the four module settings");
  ablate_opts.attach(ablate_cmd);
  ablate_cmd->add_option("--data", ablate_data, "Dataset directory (default: data.root)");
  ablate_cmd->add_option("--out", ablate_out, "Output directory for ablation.csv and per-row runs");
  ablate_cmd->add_option("--seed", ablate_seed, "Seed shared by every row");
  ablate_cmd->add_option("--trials", ablate_trials, "Timed forward passes for FPS");
  ablate_cmd->add_option("--warmup", ablate_warmup, "Untimed warmup passes");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUser;
  }

  try {
    if (*synth) {
      RunConfig cfg = synth_opts.resolve();
      if (!synth_out.empty()) cfg.data_root = synth_out;
      if (synth_images) cfg.synth.num_images = *synth_images;
      if (synth_size) cfg.synth.image_size = *synth_size;
      if (synth_seed) cfg.synth.seed = *synth_seed;
      if (!synth_mix.empty()) cfg.apply("synth.class_mix", synth_mix);
      cfg.validate();
      const SynthResult result = synth_generate(cfg.synth);
      write_dataset(cfg.data_root, result);
      cfg.write(cfg.data_root / "config.txt");
      std::cout << manifest_stats(result.manifest).report();
      if (result.manifest.skipped_instances > 0)
        std::cout << "warning: " << result.manifest.skipped_instances << " instance(s) skipped after 100 placements\n";
      return 0;
    }
    if (*train_cmd) {
      RunConfig cfg = train_opts.resolve();
      if (!train_data.empty()) cfg.data_root = train_data;
      if (train_seed) cfg.train.seed = cfg.model.seed = *train_seed;
      if (train_epochs) cfg.train.epochs = *train_epochs;
      if (train_steps) cfg.train.max_steps = *train_steps;
      if (no_mapse) cfg.model.use_mapse = false;
      if (no_vgau) cfg.model.use_vgau = false;
      if (no_dsc) cfg.model.use_dsc = false;
      cfg.validate();
      const std::filesystem::path run_dir = train_run;
      cfg.write(run_dir / "config.txt");
      const Dataset train_set = load_split(cfg, Split::Train);
      const Dataset val_set = load_split(cfg, Split::Val);
      Detector model = build_model(cfg.model);
      const TrainResult result = train(model, cfg.train, train_set, val_set, run_dir);
      std::cout << "steps " << result.steps_run << "\n";
      if (!result.history.evals.empty()) {
        const auto& last = result.history.evals.back().report;
        std::cout << last.table() << "mAP@0.5 " << last.map_50 << "\n";
      }
      return 0;
    }
    if (*eval) {
      RunConfig cfg = eval_opts.resolve();
      const ModelConfig stored = read_checkpoint_config(eval_ckpt);
      if (!eval_opts.config_file.empty() || !eval_opts.preset.empty() || !eval_opts.overrides.empty()) {
        if (cfg.model.to_entries() != stored.to_entries())
          throw SchemaError("model settings in the config differ from those stored in " + eval_ckpt);
      }
      cfg.model = stored;
      if (!eval_data.empty()) cfg.data_root = eval_data;
      if (eval_trials) cfg.bench_trials = *eval_trials;
      if (eval_warmup) cfg.bench_warmup = *eval_warmup;
      cfg.validate();
      const Detector model = load_checkpoint(eval_ckpt);
      const Dataset data = load_split(cfg, parse_split(eval_split));
      MetricsReport r = evaluate_accuracy(model, data, cfg.ap_mode);
      r.gflops = count_flops(model, cfg.model.input_size);
      r.fps = measure_fps(model, cfg.bench_trials, cfg.bench_warmup).fps;
      std::cout << r.table();
      if (!eval_out.empty()) {
        write_report(eval_out, r);
        cfg.write(std::filesystem::path(eval_out) / "config.txt");
      }
      return 0;
    }
    if (*bench) {
      RunConfig cfg = bench_opts.resolve();
      if (bench_trials) cfg.bench_trials = *bench_trials;
      if (bench_warmup) cfg.bench_warmup = *bench_warmup;
      std::optional<Detector> model;
      if (!bench_ckpt.empty()) {
        model.emplace(load_checkpoint(bench_ckpt));
        cfg.model = model->config();
      }
      cfg.validate();
      if (!model) model.emplace(build_model(cfg.model));
      const double gflops = count_flops(*model, cfg.model.input_size);
      const FpsResult fps = measure_fps(*model, cfg.bench_trials, cfg.bench_warmup);
      char buf[256];
      std::snprintf(buf, sizeof(buf),
                    "{\n  \"gflops\": %.9g,\n  \"fps\": %.6g,\n  \"median_ms\": %.6g,\n  \"p95_ms\": %.6g,\n"
                    "  \"trials\": %d,\n  \"warmup\": %d\n}\n",
                    gflops, fps.fps, fps.median_ms, fps.p95_ms, fps.timed, cfg.bench_warmup);
      std::cout << buf;
      if (!bench_out.empty()) {
        write_file(std::filesystem::path(bench_out) / "bench.json", buf);
        cfg.write(std::filesystem::path(bench_out) / "config.txt");
      }
      return 0;
    }
    if (*ablate_cmd) {
      RunConfig cfg = ablate_opts.resolve();
      if (!ablate_data.empty()) cfg.data_root = ablate_data;
      if (ablate_seed) cfg.train.seed = cfg.model.seed = *ablate_seed;
      if (ablate_trials) cfg.bench_trials = *ablate_trials;
      if (ablate_warmup) cfg.bench_warmup = *ablate_warmup;
      cfg.validate();
      const std::filesystem::path out = ablate_out;
      cfg.write(out / "config.txt");
      const Dataset train_set = load_split(cfg, Split::Train);
      const Dataset val_set = load_split(cfg, Split::Val);
      AblationOptions opts;
      opts.fps_trials = cfg.bench_trials;
      opts.fps_warmup = cfg.bench_warmup;
      opts.run_dir = out;
      const auto rows = ablate(cfg.model, cfg.train, train_set, val_set, opts);
      const std::string csv = ablation_csv(rows);
      write_file(out / "ablation.csv", csv);
      std::cout << csv;
      for (const auto& r : rows)
        if (r.status == "ok") return 0;
      return kExitInternal;
    }
  } catch (const DivergenceError& e) {
    std::cerr << "error: training diverged: " << e.what() << "\n";
    return kExitDivergence;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUser;
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUser;
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUser;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUser;
  } catch (const SchemaError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUser;
  } catch (const DimensionError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUser;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return kExitInternal;
  }
  return kExitInternal;
}
