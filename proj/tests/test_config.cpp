#include <gtest/gtest.h>

#include "unit/config.hpp"

using namespace unit;

namespace {

std::string error_of(const std::string& text) {
  try {
    parse_config_text(text);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(Config, EmptyTextGivesDefaults) {
  ExperimentConfig c = parse_config_text("");
  EXPECT_EQ(c.tasks.size(), 8u);
  EXPECT_EQ(c.train.lr, TrainConfig{}.lr);
  EXPECT_EQ(c.model.decoder.layers, DecoderConfig{}.layers);
}

TEST(Config, KeyValueText) {
  ExperimentConfig c = parse_config_text(
      "# comment line\n"
      "optimizer.lr = 2e-4   # trailing comment\n"
      "training.iterations = 300, optimizer.warmup = 30\n"
      "decoder.mode = separate\n"
      "decoder.activation = \"gelu\"\n"
      "image_encoder.backbone_channels = [4, 8, 16]\n"
      "training.augment = false\n");
  EXPECT_DOUBLE_EQ(c.train.lr, 2e-4);
  EXPECT_EQ(c.train.iterations, 300u);
  EXPECT_EQ(c.train.warmup, 30u);
  EXPECT_EQ(c.model.decoder.mode, DecoderMode::separate);
  EXPECT_EQ(c.model.decoder.layer.activation, Activation::gelu);
  EXPECT_EQ(c.model.image.backbone_channels, (std::array<std::size_t, 3>{4, 8, 16}));
  EXPECT_FALSE(c.train.augment);
}

TEST(Config, JsonText) {
  ExperimentConfig c = parse_config_text(R"({"training": {"batch_size": 4, "seed": 9}, "loss": {"giou": 3.5}})");
  EXPECT_EQ(c.train.batch_size, 4u);
  EXPECT_EQ(c.train.seed, 9u);
  EXPECT_DOUBLE_EQ(c.model.loss.giou, 3.5);
  EXPECT_NE(error_of("{\"training\": "), "");
}

TEST(Config, UnknownKeyIsNamed) {
  EXPECT_NE(error_of("optmizer.lr = 5e-5").find("'optmizer.lr'"), std::string::npos);
  EXPECT_NE(error_of(R"({"decoder": {"layerz": 3}})").find("'decoder.layerz'"), std::string::npos);
  EXPECT_NE(error_of("tasks.enabled = [text_nli3]\ntasks.shapes_det.queries = 5").find("tasks.shapes_det.queries"),
            std::string::npos);
}

TEST(Config, InvalidValuesAreNamed) {
  EXPECT_NE(error_of("training.iterations = many").find("training.iterations"), std::string::npos);
  EXPECT_NE(error_of("decoder.mode = mixed").find("decoder.mode"), std::string::npos);
  EXPECT_NE(error_of("training.iterations = 100\noptimizer.warmup = 100").find("optimizer.warmup"), std::string::npos);
  EXPECT_NE(error_of("decoder.heads = 5").find("decoder"), std::string::npos);
  EXPECT_NE(error_of("tasks.shapes_det.queries = 0").find("tasks.shapes_det.queries"), std::string::npos);
  EXPECT_NE(error_of("tasks.enabled = [shapes_det, nonsense]").find("nonsense"), std::string::npos);
  EXPECT_NE(error_of("just some words"), "");
}

TEST(Config, SubsetKeepsDefaultProportions) {
  ExperimentConfig c = parse_config_text("tasks.enabled = [shapes_det, shapes_vqa]");
  ASSERT_EQ(c.tasks.size(), 2u);
  EXPECT_NEAR(c.tasks[0].probability, 0.20 / 0.46, 1e-12);
  EXPECT_NEAR(c.tasks[1].probability, 0.26 / 0.46, 1e-12);
}

TEST(Config, RoundedWeightsAreAcceptedWithinSlack) {
  ExperimentConfig c = parse_config_text(
      "tasks.enabled = [text_nli3, text_polarity, text_paraphrase]\n"
      "tasks.text_nli3.probability = 0.33\n"
      "tasks.text_polarity.probability = 0.33\n"
      "tasks.text_paraphrase.probability = 0.33\n");
  EXPECT_EQ(c.tasks.size(), 3u);
  EXPECT_NE(error_of("tasks.enabled = [text_nli3, text_polarity]\n"
                     "tasks.text_nli3.probability = 0.5\n"
                     "tasks.text_polarity.probability = 0.3\n")
                .find("probability"),
            std::string::npos);
}

TEST(Config, ResolvedJsonRoundTrips) {
  ExperimentConfig c = parse_config_text(
      "tasks.enabled = [shapes_det, text_polarity]\n"
      "tasks.shapes_det.probability = 0.75\n"
      "tasks.text_polarity.probability = 0.25\n"
      "tasks.shapes_det.queries = 7\n"
      "text_encoder.dropout = 0.25\n"
      "optimizer.lr = 3e-4\n");
  const std::string json = resolved_config_json(c);
  ExperimentConfig d = parse_config_text(json);
  EXPECT_EQ(resolved_config_json(d), json);
  EXPECT_EQ(d.tasks[0].queries, 7u);
  EXPECT_DOUBLE_EQ(d.tasks[1].probability, 0.25);
  EXPECT_DOUBLE_EQ(d.model.text.layer.dropout, 0.25);
  EXPECT_NE(json.find("\"lr\": 0.0003"), std::string::npos);
}
