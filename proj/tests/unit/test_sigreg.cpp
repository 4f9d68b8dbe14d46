#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <limits>

#include "jepamatch/errors.hpp"
#include "jepamatch/sigreg.hpp"
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

SigregConfig sketch(std::size_t m = 64) {
  SigregConfig c;
  c.num_slices = m;
  return c;
}

double loss(const Tensor &z, const Tensor &mu, double sigma, const Tensor &slices,
            const SigregConfig &cfg) {
  Tape tape;
  return sigreg_loss(tape.constant(z), tape.constant(mu), sigma, slices, cfg).value().item();
}

std::vector<double> to_vec(const Tensor &t) { return {t.values().begin(), t.values().end()}; }

// Closed forms for an all-zero batch over the 17 knots of [-5, 5], computed
// independently in double precision.
constexpr double kZeroBatchSigma1 = 0.6949833079313614;
constexpr double kZeroBatchSigmaHalf = 0.39713584714142836;

} // namespace

TEST(Knots, OddGridContainsZero) {
  const auto k = sigreg_knots(SigregConfig{});
  ASSERT_EQ(k.size(), 17u);
  EXPECT_EQ(k.front(), -5.0);
  EXPECT_EQ(k.back(), 5.0);
  EXPECT_EQ(k[8], 0.0);
  SigregConfig even;
  even.num_knots = 16;
  EXPECT_THROW(even.validate(), ConfigError);
}

TEST(Slices, UnitColumnsAndPerIterationStreams) {
  Rng rng(1);
  const Tensor s = sample_slices(6, 10, rng);
  for (std::size_t m = 0; m < 10; ++m) {
    double n = 0.0;
    for (std::size_t i = 0; i < 6; ++i)
      n += s.at(i, m) * s.at(i, m);
    EXPECT_NEAR(n, 1.0, 1e-14);
  }
  EXPECT_EQ(slices_for_iteration(3, 7, 6, 10), slices_for_iteration(3, 7, 6, 10));
  EXPECT_FALSE(slices_for_iteration(3, 7, 6, 10) == slices_for_iteration(3, 8, 6, 10));
}

TEST(Sigreg, ZeroBatchClosedForm) {
  Rng rng(2);
  for (std::size_t d : {2u, 5u, 16u}) {
    const Tensor slices = sample_slices(d, 32, rng);
    EXPECT_NEAR(loss(Tensor({4, d}), Tensor({d}), 1.0, slices, sketch(32)), kZeroBatchSigma1,
                1e-12);
    EXPECT_NEAR(loss(Tensor({4, d}), Tensor({d}), 0.5, slices, sketch(32)), kZeroBatchSigmaHalf,
                1e-12);
  }
  EXPECT_NEAR(oracle::sigreg_zero_batch(17, 5.0), kZeroBatchSigma1, 1e-15);
}

TEST(Sigreg, ZeroKnotContributesNothing) {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor z = randn({9, 4}, rng, 3.0), mu = randn({4}, rng);
    const auto prof = sigreg_knot_profile(z, mu, 0.3, sample_slices(4, 16, rng), sketch(16));
    EXPECT_LE(std::abs(prof[8]), 1e-12);
  }
}

TEST(Sigreg, MatchesBruteForce) {
  Rng rng(4);
  for (int trial = 0; trial < 10; ++trial) {
    const Tensor z = randn({11, 6}, rng), mu = randn({6}, rng, 0.5);
    const Tensor slices = sample_slices(6, 40, rng);
    EXPECT_NEAR(loss(z, mu, 0.7, slices, sketch(slices.cols())),
                oracle::sigreg(z, to_vec(mu), 0.7, slices, 17, 5.0), 1e-10);
  }
}

TEST(Sigreg, ProfileAveragesToLoss) {
  Rng rng(5);
  const Tensor z = randn({8, 3}, rng), mu = randn({3}, rng);
  const Tensor slices = sample_slices(3, 20, rng);
  const auto prof = sigreg_knot_profile(z, mu, 1.2, slices, sketch(slices.cols()));
  double s = 0.0;
  for (double v : prof) {
    EXPECT_GE(v, 0.0);
    s += v;
  }
  EXPECT_NEAR(s / static_cast<double>(prof.size()), loss(z, mu, 1.2, slices, sketch(slices.cols())), 1e-14);
}

TEST(Sigreg, RowPermutationInvariant) {
  Rng rng(6);
  const Tensor z = randn({10, 5}, rng), mu = randn({5}, rng);
  const Tensor slices = sample_slices(5, 30, rng);
  Tensor zp = z;
  for (std::size_t i = 0; i < 10; ++i)
    std::copy_n(z.row(9 - i).data(), 5, zp.row(i).data());
  EXPECT_NEAR(loss(z, mu, 1.0, slices, sketch(slices.cols())), loss(zp, mu, 1.0, slices, sketch(slices.cols())), 1e-14);
}

TEST(Sigreg, TranslationCovariant) {
  Rng rng(7);
  const Tensor z = randn({10, 5}, rng), mu = randn({5}, rng), v = randn({5}, rng, 2.0);
  const Tensor slices = sample_slices(5, 30, rng);
  Tensor zs = z, ms = mu;
  for (std::size_t i = 0; i < 10; ++i)
    for (std::size_t j = 0; j < 5; ++j)
      zs.at(i, j) += v[j];
  for (std::size_t j = 0; j < 5; ++j)
    ms[j] += v[j];
  EXPECT_NEAR(loss(z, mu, 0.8, slices, sketch(slices.cols())), loss(zs, ms, 0.8, slices, sketch(slices.cols())), 1e-12);
}

TEST(Sigreg, GaussianBeatsCollapse) {
  Rng rng(8);
  const Tensor slices = sample_slices(8, 128, rng);
  const Tensor gauss = randn({256, 8}, rng);
  Tensor point({256, 8}, 0.4);
  Tensor rank1({256, 8});
  for (std::size_t i = 0; i < 256; ++i) {
    const double a = std::normal_distribution<double>(0.0, 1.0)(rng);
    for (std::size_t j = 0; j < 8; ++j)
      rank1.at(i, j) = a / std::sqrt(8.0);
  }
  const Tensor mu({8});
  const double g = loss(gauss, mu, 1.0, slices, sketch(128));
  EXPECT_LT(g, loss(point, mu, 1.0, slices, sketch(128)));
  EXPECT_LT(g, loss(rank1, mu, 1.0, slices, sketch(128)));
}

TEST(Sigreg, NonFiniteInputIsNumericError) {
  Tensor z({3, 2}, 1.0);
  z[3] = std::numeric_limits<double>::quiet_NaN();
  Rng rng(0);
  EXPECT_THROW(loss(z, Tensor({2}), 1.0, sample_slices(2, 4, rng), sketch(4)), NumericError);
}

TEST(Warmup, SingleCropReduces) {
  Rng rng(9);
  const Tensor z = randn({7, 4}, rng), slices = sample_slices(4, 16, rng);
  Tape tape;
  std::vector<Var> crops{tape.constant(z)};
  EXPECT_EQ(global_warmup_term(crops, slices, sketch(slices.cols())).value().item(),
            loss(z, Tensor({4}), 1.0, slices, sketch(slices.cols())));
}

TEST(Warmup, IdenticalCropsEqualSingle) {
  Rng rng(10);
  const Tensor z = randn({7, 4}, rng), slices = sample_slices(4, 16, rng);
  Tape tape;
  std::vector<Var> crops(3, tape.constant(z));
  EXPECT_NEAR(global_warmup_term(crops, slices, sketch(slices.cols())).value().item(),
              loss(z, Tensor({4}), 1.0, slices, sketch(slices.cols())), 1e-15);
}

TEST(Warmup, CropOrderIrrelevant) {
  Rng rng(11);
  const Tensor slices = sample_slices(4, 16, rng);
  Tape tape;
  std::vector<Var> crops;
  for (int k = 0; k < 4; ++k)
    crops.push_back(tape.constant(randn({6, 4}, rng)));
  const double a = global_warmup_term(crops, slices, sketch(slices.cols())).value().item();
  std::reverse(crops.begin(), crops.end());
  EXPECT_NEAR(a, global_warmup_term(crops, slices, sketch(slices.cols())).value().item(), 1e-15);
}

TEST(ClassMeans, DefinitionCases) {
  Tape tape;
  const Tensor z = Tensor::matrix({{1, 2}, {3, 4}, {5, 6}, {100, 100}});
  const std::vector<int> labels{0, 1, 1, 1};
  const std::vector<std::uint8_t> mask{1, 1, 1, 0};
  const ClassMeans m = class_means(tape.constant(z), labels, mask);
  EXPECT_EQ(m.classes, (std::vector<int>{0, 1}));
  EXPECT_EQ(m.means.value(), Tensor::matrix({{1, 2}, {4, 5}}));
  EXPECT_EQ(m.slot(2), -1);
  const auto ref = oracle::class_means(z, labels, mask);
  EXPECT_EQ(ref[1].second, (std::vector<double>{4, 5}));
}

TEST(Center, MaskedRowsMoveUnmaskedStay) {
  Tape tape;
  const Tensor z = Tensor::matrix({{1, 2}, {3, 4}, {5, 6}});
  const std::vector<int> labels{0, 1, 1};
  const std::vector<std::uint8_t> all{1, 1, 1};
  const ClassMeans m = class_means(tape.constant(z), labels, all); // means (1,2), (4,5)
  const Tensor crops = Tensor::matrix({{1, 2}, {0, 0}, {7, 7}});
  const std::vector<std::uint8_t> mask{1, 0, 1};
  const Tensor c = center(tape.constant(crops), labels, mask, m).value();
  EXPECT_EQ(c, Tensor::matrix({{0, 0}, {0, 0}, {3, 2}}));

  const std::vector<std::uint8_t> none{0, 0, 0};
  EXPECT_EQ(center(tape.constant(crops), labels, none, m).value(), crops);
}

TEST(Center, MissingMeanIsContractError) {
  Tape tape;
  const Tensor z = Tensor::matrix({{1, 2}, {3, 4}});
  const std::vector<int> labels{0, 0};
  const std::vector<std::uint8_t> all{1, 1};
  const ClassMeans m = class_means(tape.constant(z), labels, all);
  const std::vector<int> pseudo{0, 2};
  EXPECT_THROW(center(tape.constant(z), pseudo, all, m), ContractError);
}

TEST(Repulsion, HandCasesAndScaleInvariance) {
  auto rep = [](Tensor means) {
    Tape tape;
    std::vector<int> labels;
    for (std::size_t i = 0; i < means.rows(); ++i)
      labels.push_back(static_cast<int>(i));
    const std::vector<std::uint8_t> mask(means.rows(), 1);
    return repulsion_loss(class_means(tape.constant(means), labels, mask)).value().item();
  };
  EXPECT_EQ(rep(Tensor::matrix({{1, 0}, {0, 1}})), 0.0);
  EXPECT_EQ(rep(Tensor::matrix({{1, 0}, {1, 0}})), 1.0);
  EXPECT_EQ(rep(Tensor::matrix({{1, 0}, {-0.5, std::sqrt(3.0) / 2}})), 0.0);
  const Tensor m = Tensor::matrix({{1, 2, 0}, {2, 1, 1}, {0.5, -1, 2}});
  Tensor scaled = m;
  for (std::size_t j = 0; j < 3; ++j)
    scaled.at(1, j) *= 7.5;
  EXPECT_NEAR(rep(m), rep(scaled), 1e-15);
  std::vector<std::vector<double>> rows;
  for (std::size_t i = 0; i < 3; ++i)
    rows.emplace_back(m.row(i).begin(), m.row(i).end());
  EXPECT_NEAR(rep(m), oracle::repulsion(rows), 1e-15);
  EXPECT_EQ(rep(Tensor::matrix({{1, 1}})), 0.0);
  // Zero mean: guarded, finite.
  EXPECT_TRUE(std::isfinite(rep(Tensor::matrix({{0, 0}, {1, 0}}))));
}

TEST(MainPhase, NoMaskUnitSigmaIsWarmupPlusRepulsion) {
  Rng rng(12);
  const Tensor slices = sample_slices(4, 16, rng);
  Tape tape;
  const Tensor zl = randn({3, 4}, rng);
  const std::vector<int> labels{0, 1, 2};
  const std::vector<std::uint8_t> ones(3, 1);
  const ClassMeans means = class_means(tape.constant(zl), labels, ones);
  std::vector<Var> crops{tape.constant(randn({5, 4}, rng)), tape.constant(randn({5, 4}, rng))};
  const std::vector<int> pseudo{0, 1, 2, 0, 1};
  const std::vector<std::uint8_t> none(5, 0);
  const auto t = main_phase_term(crops, pseudo, none, means, 1.0, slices, sketch(slices.cols()));
  const double want = global_warmup_term(crops, slices, sketch(slices.cols())).value().item() +
                      repulsion_loss(means).value().item();
  EXPECT_NEAR(t.total.value().item(), want, 1e-14);
}

TEST(MainPhase, SingleClassHasNoRepulsion) {
  Rng rng(13);
  Tape tape;
  const std::vector<int> labels{1, 1};
  const std::vector<std::uint8_t> ones(2, 1);
  const ClassMeans means = class_means(tape.constant(randn({2, 3}, rng)), labels, ones);
  std::vector<Var> crops{tape.constant(randn({2, 3}, rng))};
  const auto t = main_phase_term(crops, labels, ones, means, 0.5, sample_slices(3, 8, rng),
                                 sketch(8));
  EXPECT_EQ(t.repulsion.value().item(), 0.0);
}

TEST(Anneal, LinearSchedule) {
  AnnealSchedule s;
  s.warmup_iters = 100;
  s.total_iters = 300;
  EXPECT_EQ(anneal_sigma(0, s), 1.0);
  EXPECT_EQ(anneal_sigma(99, s), 1.0);
  EXPECT_EQ(anneal_sigma(100, s), 1.0);
  EXPECT_NEAR(anneal_sigma(200, s), 0.55, 1e-15);
  EXPECT_NEAR(anneal_sigma(300, s), 0.1, 1e-15);
  for (auto shape : {AnnealShape::linear, AnnealShape::cosine}) {
    s.shape = shape;
    double prev = 2.0;
    for (std::size_t t = 0; t <= 300; ++t) {
      const double v = anneal_sigma(t, s);
      EXPECT_LE(v, prev);
      prev = v;
    }
    EXPECT_NEAR(anneal_sigma(300, s), 0.1, 1e-15);
  }
}
