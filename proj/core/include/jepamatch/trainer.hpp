#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "jepamatch/config.hpp"
#include "jepamatch/curriculum.hpp"
#include "jepamatch/datasets.hpp"
#include "jepamatch/networks.hpp"

namespace jepamatch {

// Prediction loss over unlabeled rows:
//   (1/B) sum_i [ D(z_s_i, z_w_i) + sum_k D(z_loc_k_i, z_w_i) ]
Var prediction_loss(Var z_weak, Var z_strong, std::span<const Var> z_locals,
                    ag::Distance metric);

struct LossComponents {
  double sup = 0.0;
  double unsup = 0.0;
  double pred = 0.0;
  double sigreg = 0.0;    // crop-averaged SIGReg term, before the beta weight
  double repulsion = 0.0; // 0 during warmup
  double total = 0.0;
};

// Recombines logged components the way the total loss is assembled:
//   sup + l_u * unsup + l_r * ((1 - beta) pred + beta sigreg + repulsion)
double combine_losses(const LossComponents &c, const TrainConfig &cfg);

struct MetricsRecord {
  std::size_t iter = 0; // 1-based: number of completed steps
  LossComponents loss;
  std::optional<double> test_acc; // set on logging steps
  double pl_acc = 0.0;            // correct / masked-in, 0 when nothing passes
  std::size_t util_masked = 0;
  std::size_t util_correct = 0;
  std::size_t max_class_count = 0; // masked-in pseudo-labels of the top class
  double sigma_t = 1.0;
  bool main_phase = false;
  std::vector<double> thresholds;
};

struct EvalResult {
  double accuracy = 0.0;
  std::vector<double> per_class; // NaN-free: classes absent from the split get 0
  std::vector<std::size_t> per_class_count;
};

EvalResult evaluate(const ModelParams &params, const Dataset &split);
EvalResult evaluate_logits(const Tensor &logits, std::span<const int> labels,
                           std::size_t num_classes);

// Shuffled pass over [0, n); reshuffles when exhausted.
class EpochSampler {
public:
  EpochSampler(std::size_t n, Rng rng);
  std::vector<std::size_t> next(std::size_t count);

private:
  std::vector<std::size_t> order_;
  std::size_t pos_;
  Rng rng_;
};

// SGD with momentum: v = mu v + (g + wd p); p -= lr v.
class SgdMomentum {
public:
  SgdMomentum(double lr, double momentum, double weight_decay)
      : lr_(lr), momentum_(momentum), weight_decay_(weight_decay) {}
  void step(std::span<Tensor *const> params, std::span<const Tensor> grads);

private:
  double lr_, momentum_, weight_decay_;
  std::vector<Tensor> velocity_;
};

// Hidden ground truth of unlabeled rows. Only metrics consult it.
class LabelOracle {
public:
  explicit LabelOracle(const Dataset &ds);
  int truth(std::size_t unlabeled_index) const { return truth_.at(unlabeled_index); }

private:
  std::vector<int> truth_;
};

// Tensors and decisions of one training step, exposed for inspection.
struct StepTrace {
  std::vector<std::size_t> labeled_ids;   // positions in TrainingView::labeled_rows
  std::vector<std::size_t> unlabeled_ids; // positions in TrainingView::unlabeled_rows
  PseudoBatchResult pseudo;
  std::vector<Tensor> grads; // ModelParams::trainable() order
  bool main_phase = false;
};

// One JEPAMatch run: parameters, optimiser, thresholds and RNG streams.
class Trainer {
public:
  Trainer(const RunConfig &cfg, const Dataset &train, const Dataset &test);

  // Executes iteration `iteration()` and advances. Evaluates on the test
  // split when the step closes a logging interval or is the last step.
  MetricsRecord step(StepTrace *trace = nullptr);
  bool done() const { return t_ >= cfg_.train.total_iters; }
  std::size_t iteration() const { return t_; }
  bool is_log_step(std::size_t completed) const;

  const ModelParams &params() const { return params_; }
  const ThresholdState &thresholds() const { return thresholds_; }
  const RunConfig &config() const { return cfg_; }
  const Dataset &test_split() const { return *test_; }

  // Total loss / gradients of the step that would run next, evaluated at
  // `params` instead of the current parameters. Pseudo-labels and the mask
  // stay at the values the current parameters produce, since no gradient
  // flows through them. No state changes; the following step() consumes the
  // same batch. Used by gradient checks.
  double probe_loss(const ModelParams &params);
  std::vector<Tensor> probe_gradients(const ModelParams &params);

private:
  struct Batch {
    std::vector<std::size_t> labeled_ids, unlabeled_ids;
    Tensor x_labeled;   // B_l x d
    Tensor x_unlabeled; // (2 + K) B_u x d: weak | strong | local_1 .. local_K
    std::vector<int> y_labeled;
  };
  struct Forward {
    Var total;
    LossComponents loss;
    PseudoBatchResult pseudo;
    bool main_phase = false;
    double sigma_t = 1.0;
  };

  Batch draw_batch();
  const Batch &pending_batch();
  Forward forward(Tape &tape, const BoundModel &m, const Batch &batch,
                  ThresholdState &thresholds, ModelParams *running,
                  const PseudoBatchResult *frozen = nullptr) const;
  const PseudoBatchResult &probe_pseudo();

  RunConfig cfg_;
  TrainingView view_;
  LabelOracle oracle_;
  const Dataset *test_;
  ModelParams params_;
  ThresholdState thresholds_;
  SgdMomentum optimizer_;
  EpochSampler labeled_sampler_, unlabeled_sampler_;
  Rng labeled_views_, unlabeled_views_;
  std::uint64_t slice_seed_;
  std::size_t t_ = 0;
  std::optional<Batch> pending_;
  std::optional<PseudoBatchResult> probe_pseudo_;
};

// metrics.csv header, exact column order.
inline constexpr const char *kMetricsHeader =
    "iter,loss_sup,loss_unsup,loss_pred,loss_sigreg,loss_repulsion,loss_total,"
    "test_acc,pl_acc,util_masked,util_correct,max_class_count,sigma_t";
std::string metrics_csv_row(const MetricsRecord &r);

struct RunResult {
  std::vector<MetricsRecord> logged;
  ModelParams params;
  double final_test_acc = 0.0;
};

// Trains to completion, keeping only the logged records.
RunResult train_in_memory(const RunConfig &cfg, const Dataset &train,
                          const Dataset &test);

// Generates the data, trains, and writes into `out_dir`: metrics.csv,
// model.jmck (final parameters), test.jmds (held-out split), train.jmds and
// config.resolved.json.
RunResult run(const RunConfig &cfg, const std::filesystem::path &out_dir);

} // namespace jepamatch
