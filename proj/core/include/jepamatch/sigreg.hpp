#pragma once

// Sketched isotropic Gaussian regularisation.
//
// Embeddings are projected on M random unit directions; on each direction
// the empirical characteristic function of the batch is compared with the
// characteristic function of the projected target N(mu, sigma^2 I) at K
// uniformly spaced frequencies t_k in [-t_max, t_max]:
//
//   loss = 1/(M K) sum_m sum_k |ecf_m(t_k) - exp(i t_k mu_m - sigma^2 t_k^2 / 2)|^2
//
// The warmup form targets N(0, I) on every local-view batch. The main-phase
// form first subtracts class means from confident samples, targets
// N(0, sigma_t^2 I) and adds a repulsion penalty between class means.

#include <cstdint>
#include <span>
#include <vector>

#include "jepamatch/autograd.hpp"
#include "jepamatch/rng.hpp"

namespace jepamatch {

struct SigregConfig {
  std::size_t num_slices = 1024;
  std::size_t num_knots = 17; // odd, so that t = 0 is a knot
  double t_max = 5.0;

  void validate() const; // throws ConfigError("sigreg.<field>")
};

// Knots t_k, k = 0..K-1, uniformly spaced over [-t_max, t_max].
std::vector<double> sigreg_knots(const SigregConfig &cfg);

// d x M matrix with i.i.d. standard-normal entries, columns L2-normalised.
Tensor sample_slices(std::size_t dim, std::size_t num_slices, Rng &rng);

// The slice matrix for one training iteration: fresh per iteration, shared
// by every call inside it.
Tensor slices_for_iteration(std::uint64_t slice_seed, std::uint64_t iteration,
                            std::size_t dim, std::size_t num_slices);

// SIGReg of the rows of `z` [N x d] against N(target_mu, sigma^2 I), using
// the given d x M slice matrix. Differentiable w.r.t. z and target_mu.
Var sigreg_loss(Var z, Var target_mu, double sigma, const Tensor &slices,
                const SigregConfig &cfg);

// Per-knot squared CF deviation averaged over slices; the loss is the mean
// of this profile.
std::vector<double> sigreg_knot_profile(const Tensor &z, const Tensor &target_mu,
                                        double sigma, const Tensor &slices,
                                        const SigregConfig &cfg);

// (1/K) sum_k SIGReg(local_k, N(0, I)).
Var global_warmup_term(std::span<const Var> local_views, const Tensor &slices,
                       const SigregConfig &cfg);

// Per-class means of the weak-view projections over contributing samples.
struct ClassMeans {
  std::vector<int> classes; // active classes, ascending
  Var means;                // [classes.size() x d_z]
  Tape *tape = nullptr;

  std::size_t active() const { return classes.size(); }
  // Row of `means` for class c, or -1 when c has no contributors.
  int slot(int c) const;
};

// `mask[i] != 0` marks a contributing row (labeled rows are always 1).
ClassMeans class_means(Var z_weak, std::span<const int> labels,
                       std::span<const std::uint8_t> mask);

// z_i - mask_i * mu_{pseudo_i}.
Var center(Var z, std::span<const int> pseudo, std::span<const std::uint8_t> mask,
           const ClassMeans &means);

// 1/(C(C-1)) sum_{i != j} max(0, S_ij)^2 over cosine similarities of the
// class means; 0 when fewer than two classes are active.
Var repulsion_loss(const ClassMeans &means);

inline constexpr double kRepulsionNormEps = 1e-12;

struct MainPhaseTerms {
  Var sigreg;    // (1/K) sum_k SIGReg(centered local_k, N(0, sigma_t^2 I))
  Var repulsion;
  Var total;     // sigreg + repulsion
};

MainPhaseTerms main_phase_term(std::span<const Var> local_views,
                               std::span<const int> pseudo,
                               std::span<const std::uint8_t> mask,
                               const ClassMeans &means, double sigma_t,
                               const Tensor &slices, const SigregConfig &cfg);

enum class AnnealShape { linear, cosine };

struct AnnealSchedule {
  double sigma_start = 1.0;
  double sigma_end = 0.1;
  std::size_t warmup_iters = 0; // T_warm
  std::size_t total_iters = 1;  // T_total
  AnnealShape shape = AnnealShape::linear;
};

// sigma_start before T_warm, then a monotone ramp reaching sigma_end at
// T_total (linear by default).
double anneal_sigma(std::size_t t, const AnnealSchedule &sched);

} // namespace jepamatch
