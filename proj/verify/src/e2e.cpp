#include <chrono>
#include <cstdio>
#include <iostream>
#include <numeric>

#include "jepamatch/trainer.hpp"
#include "jepamatch/verify/suites.hpp"

namespace jepamatch::verify {

RunConfig reference_benchmark_config(double gamma, std::uint64_t seed) {
  RunConfig cfg;
  cfg.dataset.generator = Generator::gaussian_mixture;
  cfg.dataset.num_classes = 4;
  cfg.dataset.dim = 32;
  cfg.dataset.separation = 3.0;
  cfg.dataset.labels_per_class = 4;
  cfg.dataset.unlabeled_total = 4000;
  cfg.dataset.gamma = gamma;
  cfg.dataset.test_per_class = 250;
  // Desk-scale widths; see README for the defaults.
  cfg.model.encoder_widths = {64, 64};
  cfg.model.projector_hidden = 64;
  cfg.model.proj_dim = 16;
  cfg.sigreg.sketch.num_slices = 256;
  // Coordinate dropout erases the informative direction at this size; heavier
  // noise only.
  cfg.augment.strong_noise_sigma = 1.0;
  cfg.augment.strong_dropout_frac = 0.0;
  cfg.train.distance = ag::Distance::cosine;
  cfg.train.learning_rate = 0.003;
  cfg.train.total_iters = 3000;
  cfg.train.warmup_fraction = 0.5; // low-label regime
  cfg.train.log_interval = 50;
  cfg.override_seed(seed);
  return cfg;
}

namespace {

using Clock = std::chrono::steady_clock;

struct Trace {
  std::vector<MetricsRecord> steps; // every iteration
  double final_acc = 0.0;
};

Trace train_trace(const RunConfig &cfg) {
  const Dataset train = generate(cfg.dataset);
  const Dataset test = generate_test_split(cfg.dataset);
  Trainer trainer(cfg, train, test);
  Trace tr;
  tr.steps.reserve(cfg.train.total_iters);
  while (!trainer.done()) {
    tr.steps.push_back(trainer.step());
    if (tr.steps.back().test_acc)
      tr.final_acc = *tr.steps.back().test_acc;
  }
  return tr;
}

// Pooled pseudo-label accuracy over the `window` steps ending at iteration
// `end` (1-based, inclusive).
double pooled_pl_acc(const Trace &tr, std::size_t end, std::size_t window) {
  std::size_t correct = 0, masked = 0;
  for (std::size_t it = end + 1 - window; it <= end; ++it) {
    correct += tr.steps[it - 1].util_correct;
    masked += tr.steps[it - 1].util_masked;
  }
  return masked ? static_cast<double>(correct) / static_cast<double>(masked) : 0.0;
}

// First logged iteration whose test accuracy reaches `target`; 0 when never.
std::size_t first_reach(const Trace &tr, double target) {
  for (const auto &r : tr.steps)
    if (r.test_acc && *r.test_acc >= target)
      return r.iter;
  return 0;
}

double mean_max_class(const Trace &tr) {
  double s = 0.0;
  for (const auto &r : tr.steps)
    s += static_cast<double>(r.max_class_count);
  return s / static_cast<double>(tr.steps.size());
}

double mean(const std::vector<double> &v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

} // namespace

std::vector<Check> run_e2e(const E2EOptions &opts) {
  std::vector<Check> out;
  char buf[256];
  const std::size_t needed = (opts.seeds.size() * 4 + 4) / 5; // >= 4 of 5

  for (std::size_t g = 0; g < opts.gammas.size(); ++g) {
    const double gamma = opts.gammas[g];
    const auto t0 = Clock::now();
    std::vector<double> acc_jm, acc_base, mc_jm, mc_base;
    std::size_t pl_up = 0, converged = 0;
    for (auto seed : opts.seeds) {
      const RunConfig jm_cfg = reference_benchmark_config(gamma, seed);
      RunConfig base_cfg = jm_cfg;
      base_cfg.train.lambda_rep = 0.0;
      const Trace jm = train_trace(jm_cfg);
      const Trace base = train_trace(base_cfg);
      acc_jm.push_back(jm.final_acc);
      acc_base.push_back(base.final_acc);
      mc_jm.push_back(mean_max_class(jm));
      mc_base.push_back(mean_max_class(base));

      const auto T = jm_cfg.train.total_iters, warm = jm_cfg.train.warmup_iters();
      const auto window = jm_cfg.train.log_interval;
      const double pl_warm = pooled_pl_acc(jm, warm, window);
      const double pl_end = pooled_pl_acc(jm, T, window);
      if (pl_end > pl_warm)
        ++pl_up;
      const auto reach = first_reach(jm, base.final_acc);
      if (reach != 0 && reach <= T)
        ++converged;

      std::snprintf(buf, sizeof buf,
                    "  gamma=%g seed=%llu acc=%.4f base_acc=%.4f pl_warm=%.4f pl_end=%.4f "
                    "reach=%zu max_class=%.3f base_max_class=%.3f\n",
                    gamma, static_cast<unsigned long long>(seed), jm.final_acc,
                    base.final_acc, pl_warm, pl_end, reach, mc_jm.back(), mc_base.back());
      if (opts.verbose)
        std::cerr << buf << std::flush;
    }
    const double secs =
        std::chrono::duration<double>(Clock::now() - t0).count();
    const std::string tag = "gamma" + std::to_string(static_cast<int>(gamma));

    const double margin = mean(acc_jm) - mean(acc_base);
    bool acc_ok = margin >= 0.0;
    std::string pin = "unpinned";
    if (g < opts.pinned_margins.size()) {
      const double pinned = opts.pinned_margins[g];
      acc_ok = acc_ok && std::abs(margin - pinned) <= opts.pin_tolerance;
      std::snprintf(buf, sizeof buf, "pinned=%.4f+-%.3f", pinned, opts.pin_tolerance);
      pin = buf;
    }
    std::snprintf(buf, sizeof buf, "mean_acc=%.4f baseline_mean_acc=%.4f margin=%.4f %s",
                  mean(acc_jm), mean(acc_base), margin, pin.c_str());
    out.push_back({"e2e", "accuracy-vs-baseline-" + tag, acc_ok, buf, secs});

    std::snprintf(buf, sizeof buf, "seeds_improved=%zu/%zu need=%zu", pl_up,
                  opts.seeds.size(), needed);
    out.push_back({"e2e", "pseudo-label-trend-" + tag, pl_up >= needed, buf, 0.0});

    std::snprintf(buf, sizeof buf, "seeds_reaching_baseline_final=%zu/%zu need=%zu",
                  converged, opts.seeds.size(), needed);
    out.push_back({"e2e", "convergence-" + tag, converged >= needed, buf, 0.0});

    if (gamma > 1.0) {
      std::snprintf(buf, sizeof buf, "mean_max_class=%.4f baseline=%.4f", mean(mc_jm),
                    mean(mc_base));
      out.push_back(
          {"e2e", "predominant-class-" + tag, mean(mc_jm) <= mean(mc_base), buf, 0.0});
    }
  }
  return out;
}

} // namespace jepamatch::verify
