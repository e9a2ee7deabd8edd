#include "tdrd/run_config.hpp"

#include <fstream>
#include <sstream>

#include "tdrd/errors.hpp"

namespace tdrd {

void RunConfig::validate() const {
  model.validate();
  train.validate();
  synth.validate();
  if (bench_trials < 1) throw ConfigError("bench.trials must be at least 1");
  if (bench_warmup < 0) throw ConfigError("bench.warmup must be non-negative");
}

kv::Entries RunConfig::to_entries() const {
  kv::Entries e = model.to_entries();
  e.merge(train.to_entries());
  e.merge(synth.to_entries());
  e["data.root"] = data_root.string();
  e["data.resize"] = resize == ResizeMode::Stretch ? "stretch" : "letterbox";
  e["eval.ap"] = ap_mode == ApInterpolation::Point101 ? "101" : "all";
  e["bench.trials"] = std::to_string(bench_trials);
  e["bench.warmup"] = std::to_string(bench_warmup);
  return e;
}

void RunConfig::apply(const std::string& key, const std::string& value) {
  if (key.starts_with("model.")) model.apply(key, value);
  else if (key.starts_with("train.")) train.apply(key, value);
  else if (key.starts_with("synth.")) synth.apply(key, value);
  else if (key == "data.root") data_root = value;
  else if (key == "data.resize") {
    if (value == "stretch") resize = ResizeMode::Stretch;
    else if (value == "letterbox") resize = ResizeMode::Letterbox;
    else throw ValidationError(key + " must be stretch or letterbox");
  } else if (key == "eval.ap") {
    if (value == "101") ap_mode = ApInterpolation::Point101;
    else if (value == "all") ap_mode = ApInterpolation::AllPoint;
    else throw ValidationError(key + " must be 101 or all");
  } else if (key == "bench.trials") bench_trials = kv::to_int(key, value);
  else if (key == "bench.warmup") bench_warmup = kv::to_int(key, value);
  else throw ValidationError("unknown config key '" + key + "'");
}

void RunConfig::apply(const kv::Entries& entries) {
  for (const auto& [k, v] : entries) apply(k, v);
}

std::string RunConfig::to_text() const { return kv::format(to_entries()); }

RunConfig RunConfig::from_text(const std::string& text) {
  RunConfig cfg;
  cfg.apply(kv::parse(text));
  return cfg;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return from_text(ss.str());
}

void RunConfig::write(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << to_text();
}

RunConfig RunConfig::preset(const std::string& name) {
  RunConfig c;
  if (name == "full") {
    c.model.input_size = 512;
    c.synth.image_size = 512;
    c.train.epochs = 300;
    c.train.batch_size = 32;
  } else if (name == "desk") {
    c.model.input_size = 256;
    c.synth.image_size = 256;
    c.synth.num_images = 40;
    c.train.epochs = 30;
    c.train.batch_size = 8;
    c.train.eval_every = 40;
  } else if (name == "overfit") {
    c.model.input_size = 128;
    c.synth.image_size = 128;
    c.synth.num_images = 8;
    c.synth.val_fraction = 0.0;
    c.train.batch_size = 8;
    c.train.max_steps = 2000;
    c.train.eval_every = 50;
    c.train.eval_on = EvalSet::Train;
    c.train.hflip = false;
    c.train.target_map50 = 0.9;
  } else {
    throw ValidationError("unknown preset '" + name + "' (expected full, desk or overfit)");
  }
  return c;
}

}  // namespace tdrd
