#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <random>

#include "jepamatch/trainer.hpp"
#include "jepamatch/views.hpp"
#include "jepamatch/verify/suites.hpp"

namespace jepamatch::verify {

namespace {

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

bool same_trainable(const ModelParams &a, const ModelParams &b) {
  auto x = a.trainable();
  auto y = b.trainable();
  for (std::size_t i = 0; i < x.size(); ++i)
    if (!(*x[i].second == *y[i].second))
      return false;
  return true;
}

// Plain supervised training: labeled weak views, cross-entropy, SGD.
class SupervisedLoop {
public:
  SupervisedLoop(const RunConfig &cfg, const Dataset &train)
      : cfg_(cfg), view_(train),
        params_(init_params(cfg.train.seed,
                            ModelDims{train.dim(), train.num_classes, cfg.model})),
        sampler_(view_.labeled_rows().size(), substream(cfg.train.seed, "batches.labeled")),
        rng_(substream(cfg.train.seed, "views.labeled")),
        opt_(cfg.train.learning_rate, cfg.train.momentum, cfg.train.weight_decay) {}

  void step() {
    const auto ids = sampler_.next(cfg_.train.batch_labeled);
    Tensor x({ids.size(), view_.dim()});
    std::vector<int> y;
    for (std::size_t i = 0; i < ids.size(); ++i) {
      const Tensor v = make_weak_only(view_.features().row(view_.labeled_rows()[ids[i]]),
                                      cfg_.augment, rng_);
      std::copy_n(v.data(), v.size(), x.row(i).data());
      y.push_back(view_.labeled_labels()[ids[i]]);
    }
    Tape tape;
    auto m = bind(tape, params_, true);
    tape.backward(supervised_loss(classify(m, encode(m, tape.constant(x))), y));
    auto grads = collect_grads(tape, m);
    std::vector<Tensor *> ps;
    for (auto &[name, p] : params_.trainable())
      ps.push_back(p);
    opt_.step(ps, grads);
  }
  const ModelParams &params() const { return params_; }

private:
  RunConfig cfg_;
  TrainingView view_;
  ModelParams params_;
  EpochSampler sampler_;
  Rng rng_;
  SgdMomentum opt_;
};

std::string read_text(const std::filesystem::path &p) {
  const auto bytes = read_file_bytes(p);
  return std::string(bytes.begin(), bytes.end());
}

} // namespace

std::vector<Check> run_trainer_contracts(const SuiteOptions &opts) {
  std::vector<Check> out;
  char buf[200];

  // Zero unlabeled and representation weights: supervised-only updates.
  {
    const auto t0 = Clock::now();
    RunConfig cfg = reference_benchmark_config(1.0, opts.seed);
    cfg.train.lambda_unsup = 0.0;
    cfg.train.lambda_rep = 0.0;
    cfg.train.total_iters = 100;
    cfg.train.log_interval = 100;
    const Dataset train = generate(cfg.dataset);
    const Dataset test = generate_test_split(cfg.dataset);
    Trainer trainer(cfg, train, test);
    SupervisedLoop ref(cfg, train);
    std::size_t first_mismatch = 0;
    for (std::size_t t = 1; t <= 100 && first_mismatch == 0; ++t) {
      trainer.step();
      ref.step();
      if (!same_trainable(trainer.params(), ref.params()))
        first_mismatch = t;
    }
    std::snprintf(buf, sizeof buf, "iterations=100 first_mismatch=%zu", first_mismatch);
    out.push_back({"trainer", "supervised-degeneracy", first_mismatch == 0, buf, since(t0)});
  }

  // Phase boundary, logged sigma and loss decomposition.
  {
    const auto t0 = Clock::now();
    RunConfig cfg = reference_benchmark_config(1.0, opts.seed);
    cfg.train.total_iters = 40;
    cfg.train.warmup_fraction = 0.5;
    cfg.train.log_interval = 10;
    const Dataset train = generate(cfg.dataset);
    const Dataset test = generate_test_split(cfg.dataset);
    Trainer trainer(cfg, train, test);
    const auto warm = cfg.train.warmup_iters();
    const auto sched = cfg.anneal_schedule();
    bool phase_ok = true, sigma_ok = true, sum_ok = true, count_ok = true;
    double worst_sum = 0.0;
    while (!trainer.done()) {
      const auto t = trainer.iteration();
      const MetricsRecord r = trainer.step();
      phase_ok = phase_ok && r.main_phase == (t >= warm) &&
                 (r.main_phase || r.loss.repulsion == 0.0);
      sigma_ok = sigma_ok && r.sigma_t == anneal_sigma(t, sched);
      const double diff = std::abs(combine_losses(r.loss, cfg.train) - r.loss.total);
      worst_sum = std::max(worst_sum, diff);
      sum_ok = sum_ok && diff <= 1e-12;
      count_ok = count_ok && r.max_class_count <= r.util_masked &&
                 r.util_masked <= cfg.train.batch_unlabeled &&
                 r.util_correct <= r.util_masked;
    }
    std::snprintf(buf, sizeof buf,
                  "warmup_iters=%zu phase=%s sigma=%s decomposition_err=%.2e counts=%s", warm,
                  phase_ok ? "ok" : "bad", sigma_ok ? "ok" : "bad", worst_sum,
                  count_ok ? "ok" : "bad");
    out.push_back({"trainer", "phase-and-logging", phase_ok && sigma_ok && sum_ok && count_ok,
                   buf, since(t0)});
  }

  // Hidden ground truth: permuting unlabeled labels changes no loss or weight.
  {
    const auto t0 = Clock::now();
    RunConfig cfg = reference_benchmark_config(10.0, opts.seed);
    cfg.train.total_iters = 30;
    cfg.train.warmup_fraction = 0.5;
    const Dataset train = generate(cfg.dataset);
    Dataset shuffled = train;
    Rng rng = substream(opts.seed, "contracts.shuffle");
    const auto n = train.num_labeled();
    std::shuffle(shuffled.labels.begin() + static_cast<long>(n), shuffled.labels.end(), rng);
    const Dataset test = generate_test_split(cfg.dataset);
    Trainer a(cfg, train, test), b(cfg, shuffled, test);
    bool ok = true;
    while (!a.done() && ok) {
      const auto ra = a.step();
      const auto rb = b.step();
      ok = ra.loss.total == rb.loss.total && ra.util_masked == rb.util_masked &&
           a.params() == b.params();
    }
    out.push_back({"trainer", "ground-truth-isolation", ok,
                   ok ? "iterations=30 identical" : "runs diverged", since(t0)});
  }

  // Byte-identical metrics for the same config and seed.
  {
    const auto t0 = Clock::now();
    RunConfig cfg = reference_benchmark_config(10.0, opts.seed);
    cfg.train.total_iters = 300;
    const auto base = std::filesystem::temp_directory_path() /
                      ("jepamatch-determinism-" + std::to_string(opts.seed));
    std::filesystem::remove_all(base);
    run(cfg, base / "a");
    run(cfg, base / "b");
    const std::string ma = read_text(base / "a" / "metrics.csv");
    const std::string mb = read_text(base / "b" / "metrics.csv");
    const bool ok = ma == mb && !ma.empty();
    std::snprintf(buf, sizeof buf, "iterations=300 bytes=%zu identical=%s", ma.size(),
                  ok ? "yes" : "no");
    std::filesystem::remove_all(base);
    out.push_back({"trainer", "determinism", ok, buf, since(t0)});
  }
  return out;
}

} // namespace jepamatch::verify
