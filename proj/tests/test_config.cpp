#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "mtlu/config.hpp"

using namespace mtlu;

TEST(Config, DefaultsDescribeTheReferenceSetup) {
  const ExperimentConfig c;
  const NetworkSpec s = c.network_spec();
  EXPECT_EQ(s.arch, Architecture::fsrnet);
  EXPECT_EQ(s.af.kind, ActivationKind::mtlu);
  EXPECT_EQ(s.af.bins, 40);
  EXPECT_EQ(s.af.bin_width, 0.05);
  EXPECT_EQ(c.train.lr_init, 1e-3);
}

TEST(Config, AutoArchitectureFollowsTask) {
  ExperimentConfig c;
  apply_override(c, "task=denoise");
  EXPECT_EQ(c.network_spec().arch, Architecture::fdnet);
  EXPECT_EQ(c.eval_options().multiple, kFdnetShuffle);
  apply_override(c, "net.arch=plain");
  EXPECT_EQ(c.network_spec().arch, Architecture::plain);
}

TEST(Config, DumpParsesBackToTheSameConfig) {
  ExperimentConfig c;
  for (const char* o : {"task=denoise", "task.sigma=15", "af.kind=apl", "af.bin_width=0.1", "af.left_edge=-0.75",
                        "af.shared=true", "train.lr=0.0003", "train.weight_decay=1e-5", "out.dir=some dir",
                        "train.seed=18446744073709551615", "net.denoise_target=clean"})
    apply_override(c, o);
  ExperimentConfig back;
  apply_config_text(back, dump_config(c));
  EXPECT_EQ(dump_config(back), dump_config(c));
  EXPECT_EQ(back.af.left_edge, -0.75);
  EXPECT_EQ(back.train.lr_init, 0.0003);
  EXPECT_EQ(back.out_dir, "some dir");
  EXPECT_EQ(back.train.seed, 18446744073709551615ULL);
  EXPECT_EQ(back.network_spec(), c.network_spec());
}

TEST(Config, EveryKeyRoundTripsIndividually) {
  ExperimentConfig c;
  for (const auto& k : config_keys()) {
    const std::string v = config_get(c, k);
    ExperimentConfig d;
    config_set(d, k, v);
    EXPECT_EQ(config_get(d, k), v) << k;
  }
}

TEST(Config, NumbersPrintShortest) {
  ExperimentConfig c;
  apply_override(c, "train.lr=1e-3");
  EXPECT_EQ(config_get(c, "train.lr"), "0.001");
  apply_override(c, "af.bin_width=0.1");
  EXPECT_EQ(config_get(c, "af.bin_width"), "0.1");
}

TEST(Config, CommentsBlanksAndWhitespace) {
  ExperimentConfig c;
  apply_config_text(c, "# comment\n\n  af.bins = 80 \r\ntrain.augment=false\n");
  EXPECT_EQ(c.af.bins, 80);
  EXPECT_FALSE(c.augment);
}

TEST(Config, ErrorsNameTheKeyAndLine) {
  ExperimentConfig c;
  EXPECT_THROW(apply_override(c, "no.such.key=1"), ConfigError);
  EXPECT_THROW(apply_override(c, "af.bins"), ConfigError);
  EXPECT_THROW(apply_override(c, "af.bins=forty"), ConfigError);
  EXPECT_THROW(apply_override(c, "af.bins=40.5"), ConfigError);
  EXPECT_THROW(apply_override(c, "train.lr=nan"), ConfigError);
  EXPECT_THROW(apply_override(c, "train.augment=maybe"), ConfigError);
  EXPECT_THROW(apply_override(c, "af.kind=swish"), ConfigError);
  EXPECT_THROW(apply_override(c, "net.arch=unet"), ConfigError);
  try {
    apply_config_text(c, "af.bins=40\n\nbogus=1\n");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos) << e.what();
    EXPECT_NE(std::string(e.what()).find("bogus"), std::string::npos) << e.what();
  }
}

TEST(Config, LeftEdgeAuto) {
  ExperimentConfig c;
  apply_override(c, "af.left_edge=-2");
  EXPECT_EQ(c.af.left_edge, -2.0);
  apply_override(c, "af.left_edge=auto");
  EXPECT_FALSE(c.af.left_edge.has_value());
  EXPECT_EQ(config_get(c, "af.left_edge"), "auto");
}

TEST(Config, FileLoading) {
  const auto path = std::filesystem::temp_directory_path() / "mtlu_test_config.cfg";
  { std::ofstream(path) << "task=sr\ntask.factor=3\n"; }
  EXPECT_EQ(load_config(path).factor, 3);
  { std::ofstream(path) << "task.factor=x\n"; }
  try {
    load_config(path);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find(path.string()), std::string::npos);
  }
  std::filesystem::remove(path);
  try {
    load_config(path);
    FAIL();
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("mtlu_test_config.cfg"), std::string::npos);
  }
}
