#include <gtest/gtest.h>

#include "jepamatch/config.hpp"
#include "jepamatch/errors.hpp"

using namespace jepamatch;

namespace {

std::string field_of(const std::string &json) {
  try {
    parse_run_config(json);
  } catch (const ConfigError &e) {
    return e.field();
  }
  return "<accepted>";
}

} // namespace

TEST(Config, EmptyObjectKeepsDefaults) {
  const RunConfig c = parse_run_config("{}");
  EXPECT_EQ(c.train.lambda_unsup, 1.0);
  EXPECT_EQ(c.train.lambda_rep, 0.5);
  EXPECT_EQ(c.train.beta, 0.2);
  EXPECT_EQ(c.augment.num_local, 6u);
  EXPECT_EQ(c.sigreg.sketch.num_slices, 1024u);
  EXPECT_EQ(c.sigreg.sketch.num_knots, 17u);
  EXPECT_EQ(c.sigreg.sketch.t_max, 5.0);
  EXPECT_EQ(c.train.distance, ag::Distance::squared_euclidean);
  EXPECT_FALSE(c.train.stop_grad_target);
}

TEST(Config, UnknownKeysNameTheirPath) {
  EXPECT_EQ(field_of(R"({"train": {"learning_rat": 0.1}})"), "train.learning_rat");
  EXPECT_EQ(field_of(R"({"bogus": 1})"), "bogus");
  EXPECT_EQ(field_of(R"({"sigreg": {"slices": 3}})"), "sigreg.slices");
}

TEST(Config, IllTypedValues) {
  EXPECT_EQ(field_of(R"({"train": {"total_iters": "many"}})"), "train.total_iters");
  EXPECT_EQ(field_of(R"({"train": {"stop_grad_target": 1}})"), "train.stop_grad_target");
  EXPECT_EQ(field_of(R"({"train": {"distance": "manhattan"}})"), "train.distance");
  EXPECT_EQ(field_of(R"({"model": {"encoder_widths": [4, -1]}})"), "model.encoder_widths[1]");
  EXPECT_EQ(field_of(R"({"dataset": 3})"), "dataset");
}

TEST(Config, RangeChecks) {
  EXPECT_EQ(field_of(R"({"dataset": {"gamma": 0.5}})"), "dataset.gamma");
  EXPECT_EQ(field_of(R"({"train": {"beta": 1.5}})"), "train.beta");
  EXPECT_EQ(field_of(R"({"train": {"warmup_fraction": 1.0}})"), "train.warmup_fraction");
  EXPECT_EQ(field_of(R"({"sigreg": {"num_knots": 16}})"), "sigreg.num_knots");
  EXPECT_EQ(field_of(R"({"augment": {"strong_dropout_frac": 1.0}})"),
            "augment.strong_dropout_frac");
}

TEST(Config, MalformedJson) { EXPECT_THROW(parse_run_config("{"), ConfigError); }

TEST(Config, SerialisationRoundTrip) {
  RunConfig c = parse_run_config(R"({
    "dataset": {"generator": "rings", "num_classes": 3, "gamma": 4.5, "seed": 12},
    "augment": {"num_local": 3, "strong_noise_sigma": 0.75},
    "model": {"encoder_widths": [16, 8], "proj_dim": 4},
    "sigreg": {"anneal": "cosine", "sigma_end": 0.2},
    "train": {"distance": "cosine", "stop_grad_target": true,
              "threshold_mapping": "convex", "learning_rate": 0.125},
    "output_dir": "somewhere"})");
  const std::string once = run_config_to_json(c);
  EXPECT_EQ(run_config_to_json(parse_run_config(once)), once);
  EXPECT_EQ(c.dataset.generator, Generator::rings);
  EXPECT_EQ(c.sigreg.anneal, AnnealShape::cosine);
  EXPECT_EQ(c.train.threshold_mapping, ThresholdMapping::convex);
  EXPECT_EQ(c.model.encoder_widths, (std::vector<std::size_t>{16, 8}));
}

TEST(Config, SeedOverrideTouchesDataAndTraining) {
  RunConfig c;
  c.override_seed(42);
  EXPECT_EQ(c.dataset.seed, 42u);
  EXPECT_EQ(c.train.seed, 42u);
}

TEST(Config, WarmupIterations) {
  TrainConfig t;
  t.total_iters = 3000;
  t.warmup_fraction = 0.5;
  EXPECT_EQ(t.warmup_iters(), 1500u);
  t.warmup_fraction = 1.0 / 3.0;
  EXPECT_EQ(t.warmup_iters(), 1000u);
}
