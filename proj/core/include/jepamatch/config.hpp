#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "jepamatch/autograd.hpp"
#include "jepamatch/curriculum.hpp"
#include "jepamatch/datasets.hpp"
#include "jepamatch/networks.hpp"
#include "jepamatch/sigreg.hpp"
#include "jepamatch/views.hpp"

namespace jepamatch {

struct TrainConfig {
  std::size_t total_iters = 3000;
  double warmup_fraction = 1.0 / 3.0;
  double lambda_unsup = 1.0;
  double lambda_rep = 0.5;
  double beta = 0.2;
  std::size_t batch_labeled = 16;
  std::size_t batch_unlabeled = 32;
  double learning_rate = 0.03;
  double momentum = 0.9;
  double weight_decay = 0.0;
  double tau = 0.95;
  ThresholdMapping threshold_mapping = ThresholdMapping::linear;
  ag::Distance distance = ag::Distance::squared_euclidean;
  bool stop_grad_target = false;
  std::size_t log_interval = 50;
  std::uint64_t seed = 0;

  std::size_t warmup_iters() const;
  void validate() const; // throws ConfigError("train.<field>")
};

struct SigregBlock {
  SigregConfig sketch;
  double sigma_start = 1.0;
  double sigma_end = 0.1;
  AnnealShape anneal = AnnealShape::linear;
};

// One file fully determines a run.
struct RunConfig {
  DatasetConfig dataset;
  AugmentConfig augment;
  ModelConfig model;
  SigregBlock sigreg;
  TrainConfig train;
  std::string output_dir = "run";

  void validate() const;
  AnnealSchedule anneal_schedule() const;
  // Sets both the dataset and the training seed.
  void override_seed(std::uint64_t seed);
};

// Parses a JSON document. Missing keys keep their defaults; unknown keys and
// ill-typed values raise ConfigError naming the dotted field path. The
// result is validated.
RunConfig parse_run_config(const std::string &json_text);
RunConfig load_run_config(const std::filesystem::path &path);
// Every field written explicitly; parse_run_config(to_json(c)) == c.
std::string run_config_to_json(const RunConfig &cfg);

} // namespace jepamatch
