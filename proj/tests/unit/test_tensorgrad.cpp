#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "jepamatch/autograd.hpp"
#include "jepamatch/errors.hpp"
#include "jepamatch/rng.hpp"
#include "jepamatch/verify/oracles.hpp"

using namespace jepamatch;

namespace {

Tensor randn(Shape s, Rng &rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Tensor t(std::move(s));
  for (auto &v : t.values())
    v = n(rng);
  return t;
}

double max_abs_diff(const Tensor &a, const Tensor &b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

} // namespace

TEST(Tensor, ShapeAndValuesAgree) {
  EXPECT_THROW(Tensor({2, 3}, std::vector<double>(5)), DimensionError);
  Tensor t({2, 3}, 1.5);
  EXPECT_EQ(t.size(), 6u);
  EXPECT_EQ(t.rows(), 2u);
  EXPECT_EQ(t.cols(), 3u);
}

TEST(Matmul, IdentityLeavesMatrix) {
  Tape tape;
  const Tensor a = Tensor::matrix({{1, 2}, {3, 4}});
  const auto c = ag::matmul(tape.constant(Tensor::matrix({{1, 0}, {0, 1}})), tape.constant(a));
  EXPECT_EQ(c.value(), a);
}

TEST(Matmul, UnitRowSelectsEntry) {
  Tape tape;
  const auto c = ag::matmul(tape.constant(Tensor::matrix({{1, 0}})),
                            tape.constant(Tensor::matrix({{2}, {3}})));
  EXPECT_EQ(c.value(), Tensor::matrix({{2}}));
}

TEST(Matmul, MatchesTripleLoop) {
  Rng rng(3);
  const Tensor a = randn({3, 4}, rng), b = randn({4, 2}, rng);
  Tape tape;
  const auto c = ag::matmul(tape.constant(a), tape.constant(b));
  EXPECT_LE(max_abs_diff(c.value(), oracle::matmul(a, b)), 1e-12);
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
  Tape tape;
  try {
    ag::matmul(tape.constant(Tensor({2, 3})), tape.constant(Tensor({2, 3})));
    FAIL() << "no throw";
  } catch (const DimensionError &e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2x3]"), std::string::npos) << msg;
  }
}

TEST(Matmul, GradientsAreTransposedProducts) {
  Rng rng(5);
  const Tensor a = randn({3, 4}, rng), b = randn({4, 2}, rng), g = randn({3, 2}, rng);
  Tape tape;
  auto va = tape.param(a), vb = tape.param(b);
  // d/dA sum(G .* AB) = G B^T
  tape.backward(ag::sum(ag::mul(ag::matmul(va, vb), tape.constant(g))));
  EXPECT_LE(max_abs_diff(tape.grad(va), oracle::matmul(g, [&] {
              Tensor bt({2, 4});
              for (std::size_t i = 0; i < 4; ++i)
                for (std::size_t j = 0; j < 2; ++j)
                  bt.at(j, i) = b.at(i, j);
              return bt;
            }())),
            1e-12);
}

TEST(Elementwise, FixedPoints) {
  Tape tape;
  EXPECT_EQ(ag::gelu(tape.constant(Tensor::vector({0.0}))).value()[0], 0.0);
  const auto r = ag::relu(tape.constant(Tensor::vector({-3.0, 3.0}))).value();
  EXPECT_EQ(r[0], 0.0);
  EXPECT_EQ(r[1], 3.0);
}

TEST(Elementwise, CosineDerivativeAtZero) {
  Tape tape;
  auto x = tape.param(Tensor::vector({0.0}));
  auto y = ag::elementwise(ag::Unary::cos, x);
  EXPECT_EQ(y.value()[0], 1.0);
  tape.backward(ag::sum(y));
  EXPECT_EQ(std::abs(tape.grad(x)[0]), 0.0);
}

TEST(Elementwise, GeluIsTanhForm) {
  for (double x : {-3.0, -0.7, 0.2, 1.0, 4.5}) {
    const double want =
        0.5 * x * (1.0 + std::tanh(std::sqrt(2.0 / std::numbers::pi) * (x + 0.044715 * x * x * x)));
    EXPECT_DOUBLE_EQ(gelu_value(x), want);
  }
}

TEST(Elementwise, LogOfNonPositiveIsDomainError) {
  Tape tape;
  EXPECT_THROW(ag::elementwise(ag::Unary::log, tape.constant(Tensor::vector({1.0, 0.0}))),
               DomainError);
  EXPECT_THROW(ag::elementwise(ag::Unary::sqrt, tape.constant(Tensor::vector({-1.0}))),
               DomainError);
}

TEST(CrossEntropy, SaturatedCorrectPrediction) {
  Tape tape;
  const auto l = ag::softmax_cross_entropy(tape.constant(Tensor::matrix({{30, 0, 0}})),
                                           Tensor::matrix({{1, 0, 0}}));
  EXPECT_LT(l.value().item(), 1e-10);
}

TEST(CrossEntropy, UniformLogitsGiveLogC) {
  Tape tape;
  const auto l = ag::softmax_cross_entropy(tape.constant(Tensor({2, 4})),
                                           one_hot(std::vector<int>{1, 3}, 4));
  EXPECT_NEAR(l.value().item(), std::log(4.0), 1e-15);
}

TEST(CrossEntropy, MatchesDirectSummation) {
  Rng rng(9);
  const Tensor logits = randn({5, 3}, rng, 3.0);
  const std::vector<int> labels{0, 2, 1, 1, 0};
  Tape tape;
  const auto l = ag::softmax_cross_entropy(tape.constant(logits), one_hot(labels, 3));
  EXPECT_NEAR(l.value().item(), oracle::cross_entropy(logits, labels), 1e-12);
}

TEST(CrossEntropy, GradientIsSoftmaxMinusTargetOverB) {
  Rng rng(10);
  const Tensor logits = randn({4, 3}, rng);
  const std::vector<int> labels{0, 1, 2, 1};
  Tape tape;
  auto x = tape.param(logits);
  tape.backward(ag::softmax_cross_entropy(x, one_hot(labels, 3)));
  Tensor want = softmax_rows(logits);
  for (std::size_t i = 0; i < 4; ++i) {
    want.at(i, static_cast<std::size_t>(labels[i])) -= 1.0;
    for (std::size_t j = 0; j < 3; ++j)
      want.at(i, j) /= 4.0;
  }
  EXPECT_LE(max_abs_diff(tape.grad(x), want), 1e-15);
}

TEST(CrossEntropy, ClassCountMismatch) {
  Tape tape;
  EXPECT_THROW(ag::softmax_cross_entropy(tape.constant(Tensor({2, 3})), Tensor({2, 4})),
               DimensionError);
}

TEST(Backward, SumGivesOnes) {
  Tape tape;
  auto x = tape.param(Tensor::matrix({{1, -2}, {3, 5}}));
  tape.backward(ag::sum(x));
  EXPECT_EQ(tape.grad(x), Tensor({2, 2}, 1.0));
}

TEST(Backward, HalfSquaredNormGivesX) {
  Tape tape;
  const Tensor v = Tensor::vector({0.5, -1.25, 3.0});
  auto x = tape.param(v);
  tape.backward(ag::scale(ag::sum(ag::square(x)), 0.5));
  EXPECT_EQ(tape.grad(x), v);
}

TEST(Backward, NonScalarLossIsContractError) {
  Tape tape;
  auto x = tape.param(Tensor::vector({1, 2}));
  EXPECT_THROW(tape.backward(x), ContractError);
}

TEST(Backward, RepeatedPassesAreBitwiseEqual) {
  Rng rng(1);
  Tape tape;
  auto w = tape.param(randn({4, 3}, rng));
  auto x = tape.constant(randn({5, 4}, rng));
  auto loss = ag::softmax_cross_entropy(ag::gelu(ag::matmul(x, w)),
                                        one_hot(std::vector<int>{0, 1, 2, 0, 1}, 3));
  tape.backward(loss);
  const Tensor g1 = tape.grad(w);
  tape.backward(loss);
  EXPECT_EQ(g1, tape.grad(w));
}

TEST(Backward, UnusedLeafHasZeroGradient) {
  Tape tape;
  auto x = tape.param(Tensor::vector({1, 2}));
  auto y = tape.param(Tensor::vector({3, 4}));
  tape.backward(ag::sum(x));
  EXPECT_EQ(tape.grad(y), Tensor({2}, 0.0));
  EXPECT_FALSE(tape.depends_on(ag::sum(x), y));
}

TEST(Backward, DetachBlocksGradient) {
  Tape tape;
  auto x = tape.param(Tensor::vector({1, 2}));
  tape.backward(ag::sum(ag::mul(ag::detach(x), x)));
  EXPECT_EQ(tape.grad(x), Tensor::vector({1, 2}));
}

TEST(RowDistance, SquaredEuclideanByHand) {
  Tape tape;
  const auto d = ag::row_distance(tape.constant(Tensor::matrix({{1, 2}})),
                                  tape.constant(Tensor::matrix({{4, 6}})),
                                  ag::Distance::squared_euclidean);
  EXPECT_EQ(d.value()[0], 25.0);
}

TEST(RowDistance, CosineOfOrthogonalIsOne) {
  Tape tape;
  const auto d = ag::row_distance(tape.constant(Tensor::matrix({{1, 0}})),
                                  tape.constant(Tensor::matrix({{0, 1}})), ag::Distance::cosine);
  EXPECT_NEAR(d.value()[0], 1.0, 1e-15);
}

TEST(RowDistance, IdenticalRowsAreZero) {
  Tape tape;
  const Tensor a = Tensor::matrix({{0.3, -2}, {5, 1}});
  for (auto m : {ag::Distance::squared_euclidean, ag::Distance::cosine}) {
    const auto d = ag::row_distance(tape.constant(a), tape.constant(a), m);
    EXPECT_NEAR(d.value()[0], 0.0, 1e-15);
    EXPECT_NEAR(d.value()[1], 0.0, 1e-15);
  }
}

// Randomised finite-difference property over the composite ops.
TEST(Backward, CompositeMatchesFiniteDifferences) {
  Rng rng(21);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor w = randn({4, 3}, rng), x = randn({6, 4}, rng);
    Tensor gamma = randn({3}, rng), beta = randn({3}, rng);
    auto build = [&](Tape &t, bool grad) {
      auto vw = grad ? t.param(w) : t.constant(w);
      auto h = ag::matmul(t.constant(x), vw);
      auto bn = ag::batch_norm(h, t.constant(gamma), t.constant(beta), 1e-5, nullptr, nullptr);
      auto n = ag::row_normalize(ag::gelu(bn), 1e-12);
      return std::pair{vw, ag::mean(ag::square(n))};
    };
    Tape tape;
    auto [vw, loss] = build(tape, true);
    tape.backward(loss);
    const Tensor fd = oracle::central_difference(
        [&] {
          Tape t;
          return build(t, false).second.value().item();
        },
        w, 1e-5);
    EXPECT_LT(oracle::relative_error(tape.grad(vw), fd), 1e-4);
  }
}
