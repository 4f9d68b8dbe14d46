#pragma once

// Pseudo-labeling with class-wise dynamic thresholds (FlexMatch rule).
//
// Every tracked unlabeled sample remembers the class it was last confidently
// predicted as (confidence >= base tau), or "unused". With sigma_c the number
// of samples whose record is c:
//
//   beta_c = sigma_c / max(max_c' sigma_c', unused)
//   tau_c  = tau * M(beta_c),  M(x) = x (linear) or x / (2 - x) (convex)

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "jepamatch/autograd.hpp"

namespace jepamatch {

enum class ThresholdMapping { linear, convex };

class ThresholdState {
public:
  ThresholdState(std::size_t num_classes, std::size_t num_samples,
                 double base_tau = 0.95,
                 ThresholdMapping mapping = ThresholdMapping::linear);

  double base_tau() const { return base_tau_; }
  std::size_t num_classes() const { return counts_.size(); }
  std::size_t num_samples() const { return record_.size(); }
  ThresholdMapping mapping() const { return mapping_; }
  std::span<const std::size_t> counts() const { return counts_; }
  std::size_t unused() const { return unused_; }
  std::span<const double> thresholds() const { return thresholds_; }
  double threshold(int c) const { return thresholds_.at(static_cast<std::size_t>(c)); }
  // Class currently recorded for a sample, -1 when unused.
  int recorded_class(std::size_t sample) const { return record_.at(sample); }

  // Records the latest confident prediction of each listed sample and
  // refreshes the thresholds. Predictions below base tau leave the sample's
  // record untouched.
  void update(std::span<const int> predicted, std::span<const double> confidence,
              std::span<const std::size_t> sample_ids);

private:
  void refresh();

  double base_tau_;
  ThresholdMapping mapping_;
  std::vector<int> record_;
  std::vector<std::size_t> counts_;
  std::size_t unused_;
  std::vector<double> thresholds_;
};

inline void update_thresholds(ThresholdState &state, std::span<const int> predicted,
                              std::span<const double> confidence,
                              std::span<const std::size_t> sample_ids) {
  state.update(predicted, confidence, sample_ids);
}

struct PseudoBatchResult {
  std::vector<int> labels;         // argmax, lowest index on ties
  std::vector<double> confidences; // max probability
  std::vector<std::uint8_t> mask;  // confidence >= tau_{label}

  std::size_t masked_in() const;
};

// Argmax and max of each probability row. Rows must sum to 1 within 1e-9.
void argmax_confidence(const Tensor &probs, std::vector<int> &labels,
                       std::vector<double> &confidences);

// Pseudo-labels and mask from detached weak-view probabilities.
PseudoBatchResult pseudo_label(const Tensor &p_weak, const ThresholdState &state);

// Mean cross-entropy over the labeled batch.
Var supervised_loss(Var logits, std::span<const int> labels);

// (1/B_u) sum_i M_i H(pseudo_i, softmax(logits_strong_i)).
Var unsupervised_loss(Var logits_strong, const PseudoBatchResult &result);

} // namespace jepamatch
