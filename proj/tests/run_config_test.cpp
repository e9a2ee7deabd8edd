#include <gtest/gtest.h>

#include <filesystem>

#include "tdrd/errors.hpp"
#include "tdrd/run_config.hpp"

namespace tdrd {
namespace {

TEST(RunConfig, TextRoundTripIsExact) {
  RunConfig c = RunConfig::preset("desk");
  c.train.lr_start = 0.0123456789;
  c.train.schedule = LrSchedule::Cosine;
  c.model.use_vgau = false;
  c.synth.class_mix = {0.5, 0.25, 0.25};
  c.resize = ResizeMode::Letterbox;
  c.ap_mode = ApInterpolation::AllPoint;
  c.data_root = "somewhere/else";
  const std::string text = c.to_text();
  const RunConfig back = RunConfig::from_text(text);
  EXPECT_EQ(back.to_text(), text);
  EXPECT_EQ(back.train.lr_start, 0.0123456789);
  EXPECT_FALSE(back.model.use_vgau);
  EXPECT_EQ(back.resize, ResizeMode::Letterbox);
}

TEST(RunConfig, FileRoundTrip) {
  const auto path = std::filesystem::temp_directory_path() / "tdrd_run_config_test" / "config.txt";
  const RunConfig c = RunConfig::preset("overfit");
  c.write(path);
  EXPECT_EQ(RunConfig::load(path).to_text(), c.to_text());
  std::filesystem::remove_all(path.parent_path());
  EXPECT_THROW(RunConfig::load(path), IoError);
}

TEST(RunConfig, UnknownKeysRejected) {
  RunConfig c;
  EXPECT_THROW(c.apply("model.colour", "red"), ValidationError);
  EXPECT_THROW(c.apply("train.lr", "0.1"), ValidationError);
  EXPECT_THROW(c.apply("synth.sky", "1"), ValidationError);
  EXPECT_THROW(c.apply("nothing", "1"), ValidationError);
  EXPECT_THROW(c.apply("data.resize", "crop"), ValidationError);
  EXPECT_THROW(RunConfig::from_text("model.use_dsc=true\nbogus.key=3\n"), ValidationError);
}

TEST(RunConfig, Presets) {
  const RunConfig full = RunConfig::preset("full");
  EXPECT_EQ(full.model.input_size, 512);
  EXPECT_EQ(full.train.epochs, 300);
  EXPECT_EQ(full.train.batch_size, 32);
  EXPECT_EQ(full.train.lr_start, 0.01);
  EXPECT_EQ(full.train.lr_end, 0.002);
  EXPECT_EQ(full.train.weight_decay, 0.0005);
  EXPECT_EQ(full.train.momentum, 0.8);

  const RunConfig desk = RunConfig::preset("desk");
  EXPECT_EQ(desk.model.input_size, 256);
  EXPECT_EQ(desk.synth.image_size, 256);
  EXPECT_EQ(desk.train.epochs, 30);
  EXPECT_EQ(desk.train.batch_size, 8);

  const RunConfig overfit = RunConfig::preset("overfit");
  EXPECT_EQ(overfit.synth.num_images, 8);
  EXPECT_EQ(overfit.train.max_steps, 2000);
  EXPECT_EQ(overfit.train.eval_on, EvalSet::Train);

  for (const char* name : {"full", "desk", "overfit"}) EXPECT_NO_THROW(RunConfig::preset(name).validate());
  EXPECT_THROW(RunConfig::preset("huge"), ValidationError);
}

TEST(RunConfig, BadValuesFailValidation) {
  RunConfig c;
  c.apply("bench.trials", "0");
  EXPECT_THROW(c.validate(), ConfigError);
  c = RunConfig{};
  EXPECT_THROW(c.apply("bench.trials", "many"), ValidationError);
}

}  // namespace
}  // namespace tdrd
