#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "jepamatch/rng.hpp"
#include "jepamatch/tensor.hpp"

namespace jepamatch {

struct AugmentConfig {
  double weak_noise_sigma = 0.1;
  double strong_noise_sigma = 0.5;
  double strong_dropout_frac = 0.3;
  // Local views keep one contiguous window of round(f * d) coordinates,
  // f ~ U[min, max].
  double local_window_frac_min = 0.2;
  double local_window_frac_max = 0.5;
  std::size_t num_local = 6;

  void validate() const; // throws ConfigError("augment.<field>")
};

struct ViewSet {
  Tensor weak;
  Tensor strong;
  std::vector<Tensor> locals;
};

ViewSet make_views(std::span<const double> x, const AugmentConfig &cfg, Rng &rng);
Tensor make_weak_only(std::span<const double> x, const AugmentConfig &cfg,
                      Rng &rng);

// Window length for a draw f: round(f * d) clamped to [1, d].
std::size_t local_window_length(double frac, std::size_t dim);

} // namespace jepamatch
