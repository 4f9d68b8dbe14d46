#include <gtest/gtest.h>

#include <cmath>

#include "jepamatch/errors.hpp"
#include "jepamatch/views.hpp"

using namespace jepamatch;

namespace {

std::vector<double> ramp(std::size_t d) {
  std::vector<double> x(d);
  for (std::size_t i = 0; i < d; ++i)
    x[i] = 1.0 + static_cast<double>(i);
  return x;
}

AugmentConfig identity_config() {
  AugmentConfig c;
  c.weak_noise_sigma = 0.0;
  c.strong_noise_sigma = 0.0;
  c.strong_dropout_frac = 0.0;
  c.local_window_frac_min = 1.0;
  c.local_window_frac_max = 1.0;
  return c;
}

std::size_t zeros(const Tensor &t) {
  return static_cast<std::size_t>(
      std::count(t.values().begin(), t.values().end(), 0.0));
}

} // namespace

TEST(Views, ZeroNoiseWeakIsInput) {
  AugmentConfig c;
  c.weak_noise_sigma = 0.0;
  Rng rng(1);
  const auto x = ramp(6);
  EXPECT_EQ(make_views(x, c, rng).weak, Tensor({6}, x));
  EXPECT_EQ(make_weak_only(x, c, rng), Tensor({6}, x));
}

TEST(Views, DegenerateConfigIsIdentity) {
  Rng rng(2);
  const auto x = ramp(9);
  const ViewSet v = make_views(x, identity_config(), rng);
  const Tensor want({9}, x);
  EXPECT_EQ(v.weak, want);
  EXPECT_EQ(v.strong, want);
  ASSERT_EQ(v.locals.size(), 6u);
  for (const auto &l : v.locals)
    EXPECT_EQ(l, want);
}

TEST(Views, DropoutZeroesExactCount) {
  AugmentConfig c = identity_config();
  c.strong_dropout_frac = 0.5;
  Rng rng(3);
  for (int i = 0; i < 20; ++i)
    EXPECT_EQ(zeros(make_views(ramp(10), c, rng).strong), 5u);
}

TEST(Views, LocalViewsAreContiguousWindows) {
  AugmentConfig c;
  c.weak_noise_sigma = 0.0;
  c.num_local = 4;
  Rng rng(4);
  const auto x = ramp(20);
  for (int rep = 0; rep < 50; ++rep) {
    const ViewSet v = make_views(x, c, rng);
    ASSERT_EQ(v.locals.size(), 4u);
    for (const auto &l : v.locals) {
      ASSERT_EQ(l.size(), 20u);
      std::size_t first = 20, last = 0;
      for (std::size_t i = 0; i < 20; ++i)
        if (l[i] != 0.0) {
          first = std::min(first, i);
          last = i;
          EXPECT_EQ(l[i], x[i]);
        }
      const std::size_t len = last - first + 1;
      EXPECT_EQ(20 - zeros(l), len);
      EXPECT_GE(len, 4u);
      EXPECT_LE(len, 10u);
    }
  }
}

TEST(Views, KeptFractionWithinBand) {
  AugmentConfig c;
  c.weak_noise_sigma = 0.0;
  c.num_local = 1;
  Rng rng(5);
  const std::size_t d = 50, draws = 10000;
  const auto x = ramp(d);
  double sum = 0.0, sq = 0.0;
  for (std::size_t i = 0; i < draws; ++i) {
    const double f = static_cast<double>(d - zeros(make_views(x, c, rng).locals[0])) / d;
    sum += f;
    sq += f * f;
  }
  const double mean = sum / draws;
  const double sd = std::sqrt(sq / draws - mean * mean);
  const double band = 3.0 * sd / std::sqrt(static_cast<double>(draws));
  EXPECT_GE(mean + band, c.local_window_frac_min);
  EXPECT_LE(mean - band, c.local_window_frac_max);
  // U[0.2, 0.5] has mean 0.35.
  EXPECT_NEAR(mean, 0.35, band + 0.01);
}

TEST(Views, DeterministicGivenState) {
  AugmentConfig c;
  Rng a(7), b(7);
  const auto x = ramp(12);
  const ViewSet va = make_views(x, c, a), vb = make_views(x, c, b);
  EXPECT_EQ(va.weak, vb.weak);
  EXPECT_EQ(va.strong, vb.strong);
  EXPECT_EQ(va.locals, vb.locals);
}

TEST(Views, WindowLength) {
  EXPECT_EQ(local_window_length(1.0, 32), 32u);
  EXPECT_EQ(local_window_length(0.2, 32), 6u);
  EXPECT_EQ(local_window_length(0.001, 32), 1u);
}

TEST(Views, ValidationNamesField) {
  AugmentConfig c;
  c.local_window_frac_min = 0.6;
  c.local_window_frac_max = 0.5;
  try {
    c.validate();
    FAIL();
  } catch (const ConfigError &e) {
    EXPECT_EQ(e.field(), "augment.local_window_frac_min");
  }
  c = AugmentConfig{};
  c.strong_dropout_frac = 1.0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Views, NeedTwoCoordinates) {
  Rng rng(0);
  const std::vector<double> x{1.0};
  EXPECT_THROW(make_views(x, AugmentConfig{}, rng), ContractError);
}
