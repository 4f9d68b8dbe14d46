#include "jepamatch/views.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "jepamatch/errors.hpp"

namespace jepamatch {

void AugmentConfig::validate() const {
  if (!(weak_noise_sigma >= 0.0))
    throw ConfigError("augment.weak_noise_sigma", "must be >= 0");
  if (!(strong_noise_sigma >= 0.0))
    throw ConfigError("augment.strong_noise_sigma", "must be >= 0");
  if (!(strong_dropout_frac >= 0.0 && strong_dropout_frac < 1.0))
    throw ConfigError("augment.strong_dropout_frac", "must lie in [0, 1)");
  if (!(local_window_frac_min > 0.0 && local_window_frac_min <= 1.0))
    throw ConfigError("augment.local_window_frac_min", "must lie in (0, 1]");
  if (!(local_window_frac_max > 0.0 && local_window_frac_max <= 1.0))
    throw ConfigError("augment.local_window_frac_max", "must lie in (0, 1]");
  if (local_window_frac_min > local_window_frac_max)
    throw ConfigError("augment.local_window_frac_min", "exceeds local_window_frac_max");
  if (num_local == 0)
    throw ConfigError("augment.num_local", "need at least one local view");
}

std::size_t local_window_length(double frac, std::size_t dim) {
  const auto len = static_cast<long long>(std::llround(frac * static_cast<double>(dim)));
  return static_cast<std::size_t>(std::clamp<long long>(len, 1, static_cast<long long>(dim)));
}

namespace {

Tensor noisy(std::span<const double> x, double sigma, Rng &rng) {
  Tensor out({x.size()}, std::vector<double>(x.begin(), x.end()));
  if (sigma > 0.0) {
    std::normal_distribution<double> normal(0.0, sigma);
    for (auto &v : out.values())
      v += normal(rng);
  }
  return out;
}

void check_input(std::span<const double> x) {
  if (x.size() < 2)
    throw ContractError("views need inputs with at least 2 coordinates");
}

} // namespace

Tensor make_weak_only(std::span<const double> x, const AugmentConfig &cfg,
                      Rng &rng) {
  check_input(x);
  return noisy(x, cfg.weak_noise_sigma, rng);
}

ViewSet make_views(std::span<const double> x, const AugmentConfig &cfg, Rng &rng) {
  check_input(x);
  const std::size_t d = x.size();
  ViewSet views;
  views.weak = noisy(x, cfg.weak_noise_sigma, rng);

  views.strong = noisy(x, cfg.strong_noise_sigma, rng);
  const auto drop = static_cast<std::size_t>(
      std::llround(cfg.strong_dropout_frac * static_cast<double>(d)));
  if (drop > 0) {
    std::vector<std::size_t> idx(d);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    // Partial Fisher-Yates: the first `drop` entries become a uniform subset.
    for (std::size_t i = 0; i < drop; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, d - 1);
      std::swap(idx[i], idx[pick(rng)]);
      views.strong[idx[i]] = 0.0;
    }
  }

  std::uniform_real_distribution<double> frac(cfg.local_window_frac_min,
                                              cfg.local_window_frac_max);
  views.locals.reserve(cfg.num_local);
  for (std::size_t k = 0; k < cfg.num_local; ++k) {
    const std::size_t len = local_window_length(frac(rng), d);
    std::uniform_int_distribution<std::size_t> start_dist(0, d - len);
    const std::size_t start = start_dist(rng);
    Tensor local({d});
    std::normal_distribution<double> normal(0.0, cfg.weak_noise_sigma > 0.0
                                                     ? cfg.weak_noise_sigma
                                                     : 1.0);
    for (std::size_t j = start; j < start + len; ++j)
      local[j] = x[j] + (cfg.weak_noise_sigma > 0.0 ? normal(rng) : 0.0);
    views.locals.push_back(std::move(local));
  }
  return views;
}

} // namespace jepamatch
