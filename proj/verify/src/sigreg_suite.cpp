#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <random>

#include "jepamatch/sigreg.hpp"
#include "jepamatch/verify/oracles.hpp"
#include "jepamatch/verify/suites.hpp"

namespace jepamatch::verify {

namespace {

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

double loss_value(const Tensor &z, const Tensor &mu, double sigma, const Tensor &slices,
                  const SigregConfig &cfg) {
  Tape tape;
  return sigreg_loss(tape.constant(z), tape.constant(mu), sigma, slices, cfg)
      .value()
      .item();
}

Tensor gaussian(Shape shape, Rng &rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Tensor t(std::move(shape));
  for (auto &v : t.values())
    v = n(rng);
  return t;
}

} // namespace

std::vector<Check> run_sigreg_oracle(const SuiteOptions &opts) {
  std::vector<Check> out;
  const SigregConfig cfg; // 1024 slices, 17 knots, t_max 5
  char buf[192];

  // Fused kernel vs brute force, and the t = 0 knot on the same instances.
  {
    const auto t0 = Clock::now();
    Rng rng = substream(opts.seed, "sigreg-oracle.instances");
    double worst = 0.0, worst_zero_knot = 0.0;
    const std::size_t instances = 50;
    for (std::size_t i = 0; i < instances; ++i) {
      const auto n = std::uniform_int_distribution<std::size_t>(1, 48)(rng);
      const auto d = std::uniform_int_distribution<std::size_t>(2, 16)(rng);
      const double sigma = std::uniform_real_distribution<double>(0.1, 2.0)(rng);
      const Tensor z = gaussian({n, d}, rng, 1.5);
      const Tensor mu = gaussian({d}, rng, 0.5);
      const Tensor slices = sample_slices(d, cfg.num_slices, rng);
      const double fused = loss_value(z, mu, sigma, slices, cfg);
      const double ref =
          oracle::sigreg(z, mu.values(), sigma, slices, cfg.num_knots, cfg.t_max);
      worst = std::max(worst, std::abs(fused - ref));
      const auto profile = sigreg_knot_profile(z, mu, sigma, slices, cfg);
      worst_zero_knot = std::max(worst_zero_knot, std::abs(profile[cfg.num_knots / 2]));
    }
    const double secs = since(t0);
    std::snprintf(buf, sizeof buf, "instances=%zu max_abs_diff=%.3e tol=1e-10", instances,
                  worst);
    out.push_back({"sigreg-oracle", "brute-force-equivalence", worst <= 1e-10, buf, secs});
    std::snprintf(buf, sizeof buf, "instances=%zu max_contribution=%.3e tol=1e-12",
                  instances, worst_zero_knot);
    out.push_back({"sigreg-oracle", "zero-knot-contribution", worst_zero_knot <= 1e-12,
                   buf, secs});
  }

  // All-zero batch against N(0, I) has a slice-independent closed form.
  {
    const auto t0 = Clock::now();
    const double expected = oracle::sigreg_zero_batch(cfg.num_knots, cfg.t_max);
    double worst = 0.0;
    for (std::uint64_t s = 0; s < 5; ++s) {
      const std::size_t d = 4 + 3 * s;
      const Tensor slices = slices_for_iteration(opts.seed, s, d, cfg.num_slices);
      const double v = loss_value(Tensor({8 + s, d}), Tensor({d}), 1.0, slices, cfg);
      worst = std::max(worst, std::abs(v - expected));
    }
    std::snprintf(buf, sizeof buf, "closed_form=%.15f max_abs_diff=%.3e tol=1e-12",
                  expected, worst);
    out.push_back({"sigreg-oracle", "zero-batch-closed-form", worst <= 1e-12, buf,
                   since(t0)});
  }

  // Gaussian samples must score strictly below collapsed batches.
  {
    const auto t0 = Clock::now();
    const std::size_t N = 512, d = 16, seeds = 20;
    std::size_t wins = 0;
    double max_gauss = 0.0, min_point = 1e300, min_rank1 = 1e300;
    const Tensor mu({d});
    for (std::uint64_t s = 0; s < seeds; ++s) {
      Rng rng = substream(opts.seed, "sigreg-oracle.collapse", s);
      const Tensor slices = sample_slices(d, cfg.num_slices, rng);
      const Tensor iso = gaussian({N, d}, rng);
      const Tensor point_src = gaussian({d}, rng);
      Tensor point({N, d});
      for (std::size_t i = 0; i < N; ++i)
        std::copy_n(point_src.data(), d, point.row(i).data());
      Tensor dir = gaussian({d}, rng);
      double nrm = 0.0;
      for (double v : dir.values())
        nrm += v * v;
      nrm = std::sqrt(nrm);
      Tensor rank1({N, d});
      std::normal_distribution<double> coef(0.0, 1.0);
      for (std::size_t i = 0; i < N; ++i) {
        const double a = coef(rng);
        for (std::size_t j = 0; j < d; ++j)
          rank1.at(i, j) = a * dir[j] / nrm;
      }
      const double lg = loss_value(iso, mu, 1.0, slices, cfg);
      const double lp = loss_value(point, mu, 1.0, slices, cfg);
      const double lr = loss_value(rank1, mu, 1.0, slices, cfg);
      max_gauss = std::max(max_gauss, lg);
      min_point = std::min(min_point, lp);
      min_rank1 = std::min(min_rank1, lr);
      if (lg < lp && lg < lr)
        ++wins;
    }
    std::snprintf(buf, sizeof buf,
                  "seeds=%zu strict_wins=%zu max_gaussian=%.4e min_point=%.4e min_rank1=%.4e",
                  seeds, wins, max_gauss, min_point, min_rank1);
    out.push_back({"sigreg-oracle", "collapse-discrimination", wins == seeds, buf,
                   since(t0)});
  }
  return out;
}

} // namespace jepamatch::verify
