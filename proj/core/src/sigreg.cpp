#include "jepamatch/sigreg.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numbers>

#include "jepamatch/errors.hpp"

namespace jepamatch {

namespace {

using RowMajor =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMajor>;

ConstMap as_matrix(const Tensor &t) {
  return ConstMap(t.data(), static_cast<Eigen::Index>(t.rows()),
                  static_cast<Eigen::Index>(t.cols()));
}

} // namespace

void SigregConfig::validate() const {
  if (num_slices < 1)
    throw ConfigError("sigreg.num_slices", "must be >= 1");
  if (num_knots < 2 || num_knots % 2 == 0)
    throw ConfigError("sigreg.num_knots", "must be odd and >= 3");
  if (!(t_max > 0.0) || !std::isfinite(t_max))
    throw ConfigError("sigreg.t_max", "must be positive");
}

std::vector<double> sigreg_knots(const SigregConfig &cfg) {
  cfg.validate();
  const std::size_t half = (cfg.num_knots - 1) / 2;
  const double step = cfg.t_max / static_cast<double>(half);
  std::vector<double> t(cfg.num_knots);
  for (std::size_t k = 0; k < cfg.num_knots; ++k)
    t[k] = (static_cast<double>(k) - static_cast<double>(half)) * step;
  return t;
}

Tensor sample_slices(std::size_t dim, std::size_t num_slices, Rng &rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Tensor u({dim, num_slices});
  for (auto &v : u.values())
    v = normal(rng);
  for (std::size_t m = 0; m < num_slices; ++m) {
    double norm = 0.0;
    for (std::size_t i = 0; i < dim; ++i)
      norm += u.at(i, m) * u.at(i, m);
    norm = std::sqrt(norm);
    if (norm == 0.0) {
      // Measure-zero event; fall back to a coordinate axis.
      u.at(m % dim, m) = 1.0;
      continue;
    }
    for (std::size_t i = 0; i < dim; ++i)
      u.at(i, m) /= norm;
  }
  return u;
}

Tensor slices_for_iteration(std::uint64_t slice_seed, std::uint64_t iteration,
                            std::size_t dim, std::size_t num_slices) {
  Rng rng = substream(slice_seed, "slices", iteration);
  return sample_slices(dim, num_slices, rng);
}

// The knots are symmetric and evenly spaced, t_k = (k - P) * step, so
// exp(i t_k x) = w^(k-P) with w = exp(i step x): one sin/cos per projected
// value plus P complex multiplications cover every knot.
namespace {

struct EcfResidual {
  RowMajor xt;                 // M x N projections
  std::vector<double> a, b;    // Re/Im residual, M x K
  std::vector<double> tr, ti;  // target CF, M x K
  std::vector<double> knots;
  std::size_t M = 0, N = 0, K = 0, P = 0;
  double step = 0.0;
};

EcfResidual ecf_residual(const Tensor &Z, const Tensor &mu, double sigma,
                         const Tensor &slices, const SigregConfig &cfg) {
  cfg.validate();
  if (Z.rank() != 2)
    throw DimensionError("sigreg_loss: batch must be a matrix, got " +
                         shape_str(Z.shape()));
  const std::size_t N = Z.rows(), d = Z.cols();
  const std::size_t M = slices.cols(), K = cfg.num_knots;
  if (slices.rank() != 2 || slices.rows() != d)
    throw DimensionError("sigreg_loss: slices " + shape_str(slices.shape()) +
                         " do not match embedding width " + std::to_string(d));
  if (M != cfg.num_slices)
    throw DimensionError("sigreg_loss: slice matrix has " + std::to_string(M) +
                         " columns, config expects " + std::to_string(cfg.num_slices));
  if (mu.size() != d)
    throw DimensionError("sigreg_loss: target mean " + shape_str(mu.shape()) +
                         " vs embedding width " + std::to_string(d));
  if (!(sigma > 0.0) || !std::isfinite(sigma))
    throw ContractError("sigreg_loss: target sigma must be positive");
  if (!Z.all_finite() || !mu.all_finite())
    throw NumericError("sigreg_loss: non-finite input");

  EcfResidual r;
  r.M = M;
  r.N = N;
  r.K = K;
  r.P = (K - 1) / 2;
  r.step = cfg.t_max / static_cast<double>(r.P);
  r.knots = sigreg_knots(cfg);
  const std::size_t P = r.P;

  // Projections, slice-major: xt[m, j] = u_m . z_j.
  r.xt = as_matrix(slices).transpose() * as_matrix(Z).transpose();
  Eigen::VectorXd mproj = as_matrix(slices).transpose() *
                          Eigen::Map<const Eigen::VectorXd>(mu.data(), static_cast<Eigen::Index>(d));

  r.a.resize(M * K);
  r.b.resize(M * K);
  r.tr.resize(M * K);
  r.ti.resize(M * K);
  std::vector<double> re(K), im(K);
  const double inv_n = 1.0 / static_cast<double>(N);
  for (std::size_t m = 0; m < M; ++m) {
    std::fill(re.begin(), re.end(), 0.0);
    std::fill(im.begin(), im.end(), 0.0);
    for (std::size_t j = 0; j < N; ++j) {
      const double x = r.xt(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(j));
      const double c1 = std::cos(r.step * x), s1 = std::sin(r.step * x);
      double c = 1.0, s = 0.0;
      re[P] += 1.0;
      for (std::size_t p = 1; p <= P; ++p) {
        const double cn = c * c1 - s * s1;
        s = s * c1 + c * s1;
        c = cn;
        re[P + p] += c;
        re[P - p] += c;
        im[P + p] += s;
        im[P - p] -= s;
      }
    }
    const double mm = mproj(static_cast<Eigen::Index>(m));
    for (std::size_t k = 0; k < K; ++k) {
      const double t = r.knots[k];
      const double decay = std::exp(-0.5 * sigma * sigma * t * t);
      const std::size_t idx = m * K + k;
      r.tr[idx] = std::cos(t * mm) * decay;
      r.ti[idx] = std::sin(t * mm) * decay;
      r.a[idx] = re[k] * inv_n - r.tr[idx];
      r.b[idx] = im[k] * inv_n - r.ti[idx];
    }
  }
  return r;
}

} // namespace

std::vector<double> sigreg_knot_profile(const Tensor &z, const Tensor &target_mu,
                                        double sigma, const Tensor &slices,
                                        const SigregConfig &cfg) {
  const EcfResidual r = ecf_residual(z, target_mu, sigma, slices, cfg);
  std::vector<double> out(r.K, 0.0);
  for (std::size_t m = 0; m < r.M; ++m)
    for (std::size_t k = 0; k < r.K; ++k) {
      const std::size_t idx = m * r.K + k;
      out[k] += r.a[idx] * r.a[idx] + r.b[idx] * r.b[idx];
    }
  for (auto &v : out)
    v /= static_cast<double>(r.M);
  return out;
}

Var sigreg_loss(Var z, Var target_mu, double sigma, const Tensor &slices,
                const SigregConfig &cfg) {
  if (!z.tape || z.tape != target_mu.tape)
    throw ContractError("sigreg_loss: inputs must share a tape");
  Tape &tape = *z.tape;
  EcfResidual r = ecf_residual(z.value(), target_mu.value(), sigma, slices, cfg);
  const std::size_t M = r.M, N = r.N, K = r.K, P = r.P;
  const double step = r.step, inv_n = 1.0 / static_cast<double>(N);
  double total = 0.0;
  for (std::size_t idx = 0; idx < M * K; ++idx)
    total += r.a[idx] * r.a[idx] + r.b[idx] * r.b[idx];
  const double norm = 1.0 / static_cast<double>(M * K);
  auto knots = std::move(r.knots);
  auto xt = std::move(r.xt);
  auto a = std::move(r.a), b = std::move(r.b), tr = std::move(r.tr), ti = std::move(r.ti);

  return tape.record(
      Tensor::scalar(total * norm), {z.id, target_mu.id},
      [zi = z.id, mi = target_mu.id, xt = std::move(xt), a = std::move(a),
       b = std::move(b), tr = std::move(tr), ti = std::move(ti), knots, slices,
       norm, inv_n, step, P, K, M, N](Tape &t, const Tensor &g) {
        const double coef = 2.0 * g[0] * norm;
        if (t.requires_grad(zi)) {
          RowMajor dxt(static_cast<Eigen::Index>(M), static_cast<Eigen::Index>(N));
          for (std::size_t m = 0; m < M; ++m) {
            const double *am = a.data() + m * K;
            const double *bm = b.data() + m * K;
            for (std::size_t j = 0; j < N; ++j) {
              const double x = xt(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(j));
              const double c1 = std::cos(step * x), s1 = std::sin(step * x);
              double c = 1.0, s = 0.0, acc = 0.0;
              for (std::size_t p = 1; p <= P; ++p) {
                const double cn = c * c1 - s * s1;
                s = s * c1 + c * s1;
                c = cn;
                // Knots +p*step and -p*step together.
                acc += static_cast<double>(p) * step *
                       (-(am[P + p] + am[P - p]) * s + (bm[P + p] - bm[P - p]) * c);
              }
              dxt(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(j)) =
                  coef * inv_n * acc;
            }
          }
          auto &dz = t.grad_buffer(zi);
          Eigen::Map<RowMajor>(dz.data(), static_cast<Eigen::Index>(dz.rows()),
                               static_cast<Eigen::Index>(dz.cols()))
              .noalias() += dxt.transpose() * as_matrix(slices).transpose();
        }
        if (t.requires_grad(mi)) {
          Eigen::VectorXd dproj(static_cast<Eigen::Index>(M));
          for (std::size_t m = 0; m < M; ++m) {
            double acc = 0.0;
            for (std::size_t k = 0; k < K; ++k) {
              const std::size_t idx = m * K + k;
              acc += knots[k] * (a[idx] * ti[idx] - b[idx] * tr[idx]);
            }
            dproj(static_cast<Eigen::Index>(m)) = coef * acc;
          }
          auto &dmu = t.grad_buffer(mi);
          Eigen::Map<Eigen::VectorXd>(dmu.data(), static_cast<Eigen::Index>(dmu.size()))
              .noalias() += as_matrix(slices) * dproj;
        }
      });
}

Var global_warmup_term(std::span<const Var> local_views, const Tensor &slices,
                       const SigregConfig &cfg) {
  if (local_views.empty())
    throw ContractError("global_warmup_term needs at least one local view");
  Tape &tape = *local_views[0].tape;
  const std::size_t d = local_views[0].value().cols();
  Var zero_mu = tape.constant(Tensor({d}));
  Var acc = sigreg_loss(local_views[0], zero_mu, 1.0, slices, cfg);
  for (std::size_t k = 1; k < local_views.size(); ++k)
    acc = ag::add(acc, sigreg_loss(local_views[k], zero_mu, 1.0, slices, cfg));
  return ag::scale(acc, 1.0 / static_cast<double>(local_views.size()));
}

int ClassMeans::slot(int c) const {
  auto it = std::lower_bound(classes.begin(), classes.end(), c);
  if (it == classes.end() || *it != c)
    return -1;
  return static_cast<int>(it - classes.begin());
}

ClassMeans class_means(Var z_weak, std::span<const int> labels,
                       std::span<const std::uint8_t> mask) {
  const Tensor &Z = z_weak.value();
  if (Z.rank() != 2 || labels.size() != Z.rows() || mask.size() != Z.rows())
    throw DimensionError("class_means: " + std::to_string(labels.size()) +
                         " labels and " + std::to_string(mask.size()) +
                         " mask entries for batch " + shape_str(Z.shape()));
  std::vector<int> group(labels.size(), -1);
  std::vector<int> classes;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0)
      throw ContractError("class_means: negative label");
    if (!mask[i])
      continue;
    group[i] = labels[i];
    classes.push_back(labels[i]);
  }
  std::sort(classes.begin(), classes.end());
  classes.erase(std::unique(classes.begin(), classes.end()), classes.end());
  ClassMeans out;
  out.tape = z_weak.tape;
  out.classes = std::move(classes);
  if (!out.classes.empty())
    out.means = ag::group_mean(z_weak, group, out.classes);
  return out;
}

Var center(Var z, std::span<const int> pseudo, std::span<const std::uint8_t> mask,
           const ClassMeans &means) {
  const Tensor &Z = z.value();
  if (Z.rank() != 2 || pseudo.size() != Z.rows() || mask.size() != Z.rows())
    throw DimensionError("center: labels/mask do not match batch " +
                         shape_str(Z.shape()));
  std::vector<int> index(pseudo.size(), -1);
  bool any = false;
  for (std::size_t i = 0; i < pseudo.size(); ++i) {
    if (!mask[i])
      continue;
    index[i] = means.slot(pseudo[i]);
    if (index[i] < 0)
      throw ContractError("center: masked sample " + std::to_string(i) +
                          " has class " + std::to_string(pseudo[i]) +
                          " without a class mean");
    any = true;
  }
  if (!any)
    return z;
  if (means.means.value().cols() != Z.cols())
    throw DimensionError("center: class means width differs from batch width");
  return ag::sub(z, ag::gather_rows(means.means, index));
}

Var repulsion_loss(const ClassMeans &means) {
  if (!means.tape)
    throw ContractError("repulsion_loss: class means not on a tape");
  const std::size_t c = means.active();
  if (c < 2)
    return means.tape->constant(Tensor::scalar(0.0));
  Tape &tape = *means.tape;
  Var unit = ag::row_normalize(means.means, kRepulsionNormEps);
  Var sim = ag::matmul(unit, ag::transpose(unit));
  Tensor off_diag({c, c}, 1.0);
  for (std::size_t i = 0; i < c; ++i)
    off_diag.at(i, i) = 0.0;
  Var pos = ag::mul(ag::relu(sim), tape.constant(std::move(off_diag)));
  return ag::scale(ag::sum(ag::square(pos)),
                   1.0 / static_cast<double>(c * (c - 1)));
}

MainPhaseTerms main_phase_term(std::span<const Var> local_views,
                               std::span<const int> pseudo,
                               std::span<const std::uint8_t> mask,
                               const ClassMeans &means, double sigma_t,
                               const Tensor &slices, const SigregConfig &cfg) {
  if (local_views.empty())
    throw ContractError("main_phase_term needs at least one local view");
  Tape &tape = *local_views[0].tape;
  const std::size_t d = local_views[0].value().cols();
  Var zero_mu = tape.constant(Tensor({d}));
  Var acc;
  for (std::size_t k = 0; k < local_views.size(); ++k) {
    Var centered = center(local_views[k], pseudo, mask, means);
    Var term = sigreg_loss(centered, zero_mu, sigma_t, slices, cfg);
    acc = k == 0 ? term : ag::add(acc, term);
  }
  MainPhaseTerms out;
  out.sigreg = ag::scale(acc, 1.0 / static_cast<double>(local_views.size()));
  out.repulsion = repulsion_loss(means);
  out.total = ag::add(out.sigreg, out.repulsion);
  return out;
}

double anneal_sigma(std::size_t t, const AnnealSchedule &s) {
  if (s.total_iters <= s.warmup_iters)
    throw ContractError("anneal_sigma: total iterations must exceed warmup");
  if (t <= s.warmup_iters)
    return s.sigma_start;
  const double span = static_cast<double>(s.total_iters - s.warmup_iters);
  const double progress =
      std::clamp(static_cast<double>(t - s.warmup_iters) / span, 0.0, 1.0);
  const double ramp = s.shape == AnnealShape::linear
                          ? progress
                          : 0.5 * (1.0 - std::cos(std::numbers::pi * progress));
  return s.sigma_start - (s.sigma_start - s.sigma_end) * ramp;
}

} // namespace jepamatch
