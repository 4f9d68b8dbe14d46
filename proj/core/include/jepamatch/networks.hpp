#pragma once

// Backbone encoder, classifier head and projection head as MLPs on the tape.
//
//   encoder    : d -> w_1 -> ... -> w_L, ReLU after every layer
//   classifier : w_L -> C, affine
//   projector  : Linear(no bias) -> BN -> GELU,
//                Linear(no bias) -> BN -> GELU,
//                Linear(bias) -> d_z
//
// Weights are stored input-major (fan_in x fan_out) so a layer is x * W + b.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "jepamatch/autograd.hpp"
#include "jepamatch/tensor.hpp"

namespace jepamatch {

struct ModelConfig {
  std::vector<std::size_t> encoder_widths{256, 256, 128};
  std::size_t projector_hidden = 512;
  std::size_t proj_dim = 128;

  void validate() const; // throws ConfigError("model.<field>")
};

struct ModelDims {
  std::size_t input_dim = 0;
  std::size_t num_classes = 0;
  ModelConfig model;
};

struct Linear {
  Tensor weight; // fan_in x fan_out
  Tensor bias;   // [fan_out]; empty when the layer has no bias
  bool has_bias() const { return bias.size() > 0; }
};

struct BatchNormState {
  static constexpr double kMomentum = 0.1;
  static constexpr double kEps = 1e-5;
  Tensor gamma;
  Tensor beta;
  Tensor running_mean;
  Tensor running_var;
};

enum class Mode { train, eval };

struct ModelParams {
  std::vector<Linear> encoder;
  Linear classifier;
  Linear proj1;
  BatchNormState bn1;
  Linear proj2;
  BatchNormState bn2;
  Linear proj3;

  std::size_t input_dim() const { return encoder.front().weight.rows(); }
  std::size_t feature_dim() const { return encoder.back().weight.cols(); }
  std::size_t num_classes() const { return classifier.weight.cols(); }
  std::size_t proj_dim() const { return proj3.weight.cols(); }

  // Parameters updated by the optimiser, in a fixed order.
  std::vector<std::pair<std::string, Tensor *>> trainable();
  std::vector<std::pair<std::string, const Tensor *>> trainable() const;
  // Everything persisted in a checkpoint (trainable + running statistics).
  std::vector<std::pair<std::string, const Tensor *>> all_named() const;

  friend bool operator==(const ModelParams &, const ModelParams &);
};

// Kaiming-uniform fan-in weights, U(-sqrt(6/fan_in), sqrt(6/fan_in)); zero
// biases; BN gamma=1, beta=0, running stats (0, 1).
ModelParams init_params(std::uint64_t seed, const ModelDims &dims);

// ModelParams placed on a tape. Trainable leaves are listed in the same order
// as ModelParams::trainable().
struct BoundModel {
  std::vector<Var> encoder_w, encoder_b;
  Var cls_w, cls_b;
  Var p1_w, bn1_gamma, bn1_beta;
  Var p2_w, bn2_gamma, bn2_beta;
  Var p3_w, p3_b;
  std::vector<Var> leaves;
  const ModelParams *params = nullptr;
};

BoundModel bind(Tape &tape, const ModelParams &params, bool trainable = true);

Var encode(const BoundModel &m, Var x);
Var classify(const BoundModel &m, Var h);
// Train mode uses batch statistics and, when `running` is non-null, updates
// its running mean/variance (momentum 0.1, unbiased variance). Eval mode uses
// the bound model's running statistics and mutates nothing.
Var project(const BoundModel &m, Var h, Mode mode, ModelParams *running = nullptr);

// Gradients of the last backward() for every trainable leaf.
std::vector<Tensor> collect_grads(const Tape &tape, const BoundModel &m);

// Eval-mode convenience wrappers on a private tape.
Tensor encode_eval(const ModelParams &params, const Tensor &x);
Tensor logits_eval(const ModelParams &params, const Tensor &x);

// Checkpoint "JMCK" | version u32 | repeated until EOF:
//   name_len u32 | name bytes | rank u32 | dims u64[rank] | f64 payload
inline constexpr std::uint32_t kCheckpointVersion = 1;
std::vector<std::uint8_t> encode_checkpoint(const ModelParams &params);
ModelParams decode_checkpoint(std::span<const std::uint8_t> bytes);
void save_checkpoint(const std::filesystem::path &path, const ModelParams &params);
ModelParams load_checkpoint(const std::filesystem::path &path);

} // namespace jepamatch
