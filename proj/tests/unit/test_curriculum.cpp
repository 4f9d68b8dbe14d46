#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "jepamatch/curriculum.hpp"
#include "jepamatch/errors.hpp"
#include "jepamatch/rng.hpp"
#include "jepamatch/verify/oracles.hpp"

using namespace jepamatch;

namespace {

std::vector<std::size_t> ids(std::size_t lo, std::size_t hi) {
  std::vector<std::size_t> v(hi - lo);
  std::iota(v.begin(), v.end(), lo);
  return v;
}

std::vector<double> thresholds(const ThresholdState &s) {
  return {s.thresholds().begin(), s.thresholds().end()};
}

} // namespace

TEST(Thresholds, ColdStartIsZero) {
  ThresholdState s(3, 10);
  EXPECT_EQ(thresholds(s), (std::vector<double>{0, 0, 0}));
  EXPECT_EQ(s.unused(), 10u);
}

TEST(Thresholds, EqualCountsGiveBaseTau) {
  ThresholdState s(2, 4, 0.9);
  s.update(std::vector<int>{0, 1, 0, 1}, std::vector<double>{1, 1, 1, 1}, ids(0, 4));
  EXPECT_EQ(thresholds(s), (std::vector<double>{0.9, 0.9}));
}

TEST(Thresholds, TenAndFive) {
  ThresholdState s(2, 15, 0.95);
  std::vector<int> pred(15, 0);
  std::fill(pred.begin() + 10, pred.end(), 1);
  s.update(pred, std::vector<double>(15, 0.99), ids(0, 15));
  EXPECT_EQ(thresholds(s), (std::vector<double>{0.95, 0.475}));
}

TEST(Thresholds, UnusedDominatesEarly) {
  ThresholdState s(2, 100, 0.95);
  s.update(std::vector<int>{0, 0, 1}, std::vector<double>{0.99, 0.99, 0.99}, ids(0, 3));
  // beta = count / max(max count, unused) = count / 97
  EXPECT_EQ(s.threshold(0), 0.95 * (2.0 / 97.0));
  EXPECT_EQ(s.threshold(1), 0.95 * (1.0 / 97.0));
}

TEST(Thresholds, LatestConfidentPredictionReplaces) {
  ThresholdState s(2, 2, 0.95);
  s.update(std::vector<int>{0, 0}, std::vector<double>{0.99, 0.99}, ids(0, 2));
  s.update(std::vector<int>{1}, std::vector<double>{0.96}, ids(1, 2));
  EXPECT_EQ(std::vector<std::size_t>(s.counts().begin(), s.counts().end()),
            (std::vector<std::size_t>{1, 1}));
  s.update(std::vector<int>{0}, std::vector<double>{0.5}, ids(1, 2));
  EXPECT_EQ(s.recorded_class(1), 1);
}

TEST(Thresholds, ConvexMapping) {
  ThresholdState s(2, 15, 0.95, ThresholdMapping::convex);
  std::vector<int> pred(15, 0);
  std::fill(pred.begin() + 10, pred.end(), 1);
  s.update(pred, std::vector<double>(15, 0.99), ids(0, 15));
  EXPECT_NEAR(s.threshold(1), 0.95 * (0.5 / 1.5), 1e-15);
  EXPECT_EQ(s.threshold(0), 0.95);
}

TEST(Thresholds, InvariantsUnderRandomUpdates) {
  Rng rng(3);
  ThresholdState s(4, 50, 0.8);
  std::uniform_int_distribution<int> cls(0, 3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> who(0, 49);
  for (int step = 0; step < 200; ++step) {
    std::vector<int> p(8);
    std::vector<double> c(8);
    std::vector<std::size_t> id(8);
    for (int i = 0; i < 8; ++i) {
      p[i] = cls(rng);
      c[i] = u(rng);
      id[i] = who(rng);
    }
    s.update(p, c, id);
    std::size_t total = s.unused();
    for (std::size_t c2 = 0; c2 < 4; ++c2) {
      total += s.counts()[c2];
      EXPECT_LE(s.threshold(static_cast<int>(c2)), 0.8);
      if (s.counts()[c2] > 0) {
        EXPECT_GT(s.threshold(static_cast<int>(c2)), 0.0);
      }
    }
    EXPECT_EQ(total, 50u);
  }
}

TEST(PseudoLabel, Examples) {
  ThresholdState s(2, 4);
  s.update(std::vector<int>{0, 0, 0, 0}, std::vector<double>{1, 1, 1, 1}, ids(0, 4));
  const auto r = pseudo_label(Tensor::matrix({{0.97, 0.03}, {0.60, 0.40}, {0.5, 0.5}}), s);
  EXPECT_EQ(r.labels, (std::vector<int>{0, 0, 0}));
  EXPECT_EQ(r.mask, (std::vector<std::uint8_t>{1, 0, 0}));
  EXPECT_EQ(r.confidences[0], 0.97);
  EXPECT_EQ(r.masked_in(), 1u);
}

TEST(PseudoLabel, RejectsNonProbabilityRows) {
  ThresholdState s(2, 4);
  EXPECT_THROW(pseudo_label(Tensor::matrix({{0.7, 0.7}}), s), ContractError);
}

TEST(PseudoLabel, MaskMatchesThreshold) {
  Rng rng(5);
  ThresholdState s(3, 30, 0.7);
  std::vector<int> p(30);
  std::vector<double> c(30);
  for (std::size_t i = 0; i < 30; ++i) {
    p[i] = static_cast<int>(i % 3);
    c[i] = i < 20 ? 0.9 : 0.1;
  }
  s.update(p, c, ids(0, 30));
  Tensor probs({200, 3});
  std::uniform_real_distribution<double> u(0.0, 3.0);
  for (std::size_t i = 0; i < 200; ++i) {
    double sum = 0.0;
    for (std::size_t j = 0; j < 3; ++j)
      sum += (probs.at(i, j) = std::exp(u(rng)));
    for (std::size_t j = 0; j < 3; ++j)
      probs.at(i, j) /= sum;
  }
  const auto r = pseudo_label(probs, s);
  for (std::size_t i = 0; i < 200; ++i)
    EXPECT_EQ(r.mask[i] != 0, r.confidences[i] >= s.threshold(r.labels[i]));
}

TEST(Losses, SupervisedIsCrossEntropy) {
  const Tensor logits = Tensor::matrix({{1, 2, 0.5}, {-1, 0, 3}});
  const std::vector<int> labels{2, 2};
  Tape tape;
  EXPECT_NEAR(supervised_loss(tape.constant(logits), labels).value().item(),
              oracle::cross_entropy(logits, labels), 1e-15);
}

TEST(Losses, UnsupervisedWithNoMaskIsZero) {
  Tape tape;
  PseudoBatchResult r{{0, 1}, {0.2, 0.3}, {0, 0}};
  EXPECT_EQ(unsupervised_loss(tape.constant(Tensor::matrix({{9, -9}, {4, 1}})), r)
                .value()
                .item(),
            0.0);
}

TEST(Losses, UnsupervisedSaturatedCorrect) {
  Tape tape;
  PseudoBatchResult r{{1}, {0.99}, {1}};
  EXPECT_LT(unsupervised_loss(tape.constant(Tensor::matrix({{0, 40}})), r).value().item(),
            1e-15);
}

TEST(Losses, UnsupervisedMatchesMaskedOracle) {
  const Tensor logits = Tensor::matrix({{1, 2, 0}, {0.5, -1, 2}, {3, 3, 3}, {0, 0, 1}});
  PseudoBatchResult r{{1, 2, 0, 0}, {1, 1, 1, 1}, {1, 0, 1, 1}};
  const std::vector<double> w{1, 0, 1, 1};
  Tape tape;
  EXPECT_NEAR(unsupervised_loss(tape.constant(logits), r).value().item(),
              oracle::cross_entropy(logits, r.labels, w, 4.0), 1e-15);
}
