#include "jepamatch/curriculum.hpp"

#include <algorithm>
#include <cmath>

#include "jepamatch/errors.hpp"

namespace jepamatch {

ThresholdState::ThresholdState(std::size_t num_classes, std::size_t num_samples,
                               double base_tau, ThresholdMapping mapping)
    : base_tau_(base_tau), mapping_(mapping), record_(num_samples, -1),
      counts_(num_classes, 0), unused_(num_samples), thresholds_(num_classes, 0.0) {
  if (num_classes < 2)
    throw ConfigError("train.num_classes", "need at least 2 classes");
  if (!(base_tau > 0.0 && base_tau <= 1.0))
    throw ConfigError("train.tau", "base threshold must lie in (0, 1]");
  refresh();
}

void ThresholdState::update(std::span<const int> predicted,
                            std::span<const double> confidence,
                            std::span<const std::size_t> sample_ids) {
  if (predicted.size() != confidence.size() || predicted.size() != sample_ids.size())
    throw DimensionError("update_thresholds: argument lengths differ");
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    const auto id = sample_ids[i];
    const int c = predicted[i];
    if (id >= record_.size())
      throw ContractError("update_thresholds: sample id " + std::to_string(id) +
                          " not tracked");
    if (c < 0 || static_cast<std::size_t>(c) >= counts_.size())
      throw ContractError("update_thresholds: class " + std::to_string(c) +
                          " out of range");
    if (!(confidence[i] >= base_tau_))
      continue;
    int &slot = record_[id];
    if (slot < 0)
      --unused_;
    else
      --counts_[static_cast<std::size_t>(slot)];
    slot = c;
    ++counts_[static_cast<std::size_t>(c)];
  }
  refresh();
}

void ThresholdState::refresh() {
  const std::size_t peak = *std::max_element(counts_.begin(), counts_.end());
  const std::size_t denom = std::max(peak, unused_);
  for (std::size_t c = 0; c < counts_.size(); ++c) {
    const double beta =
        denom ? static_cast<double>(counts_[c]) / static_cast<double>(denom) : 0.0;
    const double mapped =
        mapping_ == ThresholdMapping::linear ? beta : beta / (2.0 - beta);
    thresholds_[c] = base_tau_ * mapped;
  }
}

std::size_t PseudoBatchResult::masked_in() const {
  return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), 1));
}

void argmax_confidence(const Tensor &probs, std::vector<int> &labels,
                       std::vector<double> &confidences) {
  if (probs.rank() != 2)
    throw DimensionError("pseudo_label: probabilities must be a matrix, got " +
                         shape_str(probs.shape()));
  const auto n = probs.rows(), c = probs.cols();
  labels.assign(n, 0);
  confidences.assign(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    auto row = probs.row(i);
    double s = 0.0;
    for (double v : row) {
      if (!(v >= 0.0 && v <= 1.0))
        throw ContractError("pseudo_label: row " + std::to_string(i) +
                            " is not a probability vector");
      s += v;
    }
    if (std::abs(s - 1.0) > 1e-9)
      throw ContractError("pseudo_label: row " + std::to_string(i) + " sums to " +
                          std::to_string(s));
    std::size_t best = 0;
    for (std::size_t j = 1; j < c; ++j)
      if (row[j] > row[best])
        best = j;
    labels[i] = static_cast<int>(best);
    confidences[i] = row[best];
  }
}

PseudoBatchResult pseudo_label(const Tensor &p_weak, const ThresholdState &state) {
  PseudoBatchResult out;
  argmax_confidence(p_weak, out.labels, out.confidences);
  if (p_weak.cols() != state.num_classes())
    throw DimensionError("pseudo_label: " + std::to_string(p_weak.cols()) +
                         " classes vs threshold state with " +
                         std::to_string(state.num_classes()));
  out.mask.resize(out.labels.size());
  for (std::size_t i = 0; i < out.labels.size(); ++i)
    out.mask[i] = out.confidences[i] >= state.threshold(out.labels[i]) ? 1 : 0;
  return out;
}

Var supervised_loss(Var logits, std::span<const int> labels) {
  const Tensor &L = logits.value();
  if (L.rank() != 2 || L.rows() != labels.size())
    throw DimensionError("supervised_loss: " + std::to_string(labels.size()) +
                         " labels for logits " + shape_str(L.shape()));
  return ag::softmax_cross_entropy(logits, one_hot(labels, L.cols()));
}

Var unsupervised_loss(Var logits_strong, const PseudoBatchResult &result) {
  const Tensor &L = logits_strong.value();
  if (L.rank() != 2 || L.rows() != result.labels.size() ||
      result.mask.size() != result.labels.size())
    throw DimensionError("unsupervised_loss: pseudo-label batch does not match " +
                         shape_str(L.shape()));
  std::vector<double> weights(result.mask.begin(), result.mask.end());
  return ag::weighted_softmax_cross_entropy(
      logits_strong, one_hot(result.labels, L.cols()), weights,
      static_cast<double>(L.rows()));
}

} // namespace jepamatch
