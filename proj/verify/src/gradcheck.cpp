#include <algorithm>
#include <chrono>
#include <cstdio>
#include <functional>
#include <random>

#include "jepamatch/curriculum.hpp"
#include "jepamatch/sigreg.hpp"
#include "jepamatch/trainer.hpp"
#include "jepamatch/verify/oracles.hpp"
#include "jepamatch/verify/suites.hpp"

namespace jepamatch::verify {

namespace {

constexpr double kStep = 1e-5;
constexpr double kTolerance = 1e-4;

using Builder = std::function<Var(Tape &, std::span<const Var>)>;

Tensor random_tensor(Shape shape, Rng &rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Tensor t(std::move(shape));
  for (auto &v : t.values())
    v = n(rng);
  return t;
}

std::size_t pick(Rng &rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

std::vector<int> random_labels(Rng &rng, std::size_t n, std::size_t classes) {
  std::vector<int> out(n);
  std::uniform_int_distribution<int> u(0, static_cast<int>(classes) - 1);
  for (auto &v : out)
    v = u(rng);
  return out;
}

std::vector<std::uint8_t> random_mask(Rng &rng, std::size_t n) {
  std::vector<std::uint8_t> out(n);
  std::bernoulli_distribution b(0.6);
  for (auto &v : out)
    v = b(rng) ? 1 : 0;
  out[0] = 1;
  return out;
}

double worst_error(const Builder &build, std::vector<Tensor> &inputs, bool corrupt) {
  Tape tape;
  std::vector<Var> vars;
  for (const auto &t : inputs)
    vars.push_back(tape.param(t));
  tape.backward(build(tape, vars));

  auto value = [&] {
    Tape t2;
    std::vector<Var> v2;
    for (const auto &t : inputs)
      v2.push_back(t2.constant(t));
    return build(t2, v2).value().item();
  };
  double worst = 0.0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    Tensor g = tape.grad(vars[i]);
    if (corrupt)
      for (auto &v : g.values())
        v *= 1.0 + 1e-3;
    const Tensor fd = oracle::central_difference(value, inputs[i], kStep);
    worst = std::max(worst, oracle::relative_error(g, fd));
  }
  return worst;
}

struct Case {
  std::string name;
  std::function<double(Rng &, std::size_t trial, bool corrupt)> trial;
};

SigregConfig small_sketch(std::size_t slices) {
  SigregConfig c;
  c.num_slices = slices;
  return c;
}

double supervised_trial(Rng &rng, std::size_t, bool corrupt) {
  const auto B = pick(rng, 2, 8), C = pick(rng, 2, 5);
  std::vector<Tensor> in{random_tensor({B, C}, rng, 2.0)};
  const auto labels = random_labels(rng, B, C);
  return worst_error(
      [&](Tape &, std::span<const Var> v) { return supervised_loss(v[0], labels); }, in,
      corrupt);
}

double unsupervised_trial(Rng &rng, std::size_t, bool corrupt) {
  const auto B = pick(rng, 2, 8), C = pick(rng, 2, 5);
  std::vector<Tensor> in{random_tensor({B, C}, rng, 2.0)};
  PseudoBatchResult r;
  r.labels = random_labels(rng, B, C);
  r.confidences.assign(B, 1.0);
  r.mask = random_mask(rng, B);
  return worst_error(
      [&](Tape &, std::span<const Var> v) { return unsupervised_loss(v[0], r); }, in,
      corrupt);
}

double prediction_trial(Rng &rng, std::size_t trial, bool corrupt) {
  const auto B = pick(rng, 2, 8), dz = pick(rng, 2, 16), K = pick(rng, 1, 3);
  std::vector<Tensor> in;
  for (std::size_t i = 0; i < K + 2; ++i)
    in.push_back(random_tensor({B, dz}, rng));
  const auto metric = trial % 2 ? ag::Distance::cosine : ag::Distance::squared_euclidean;
  return worst_error(
      [&](Tape &, std::span<const Var> v) {
        return prediction_loss(v[0], v[1], v.subspan(2), metric);
      },
      in, corrupt);
}

double warmup_trial(Rng &rng, std::size_t, bool corrupt) {
  const auto N = pick(rng, 2, 8), dz = pick(rng, 2, 16), K = pick(rng, 1, 3);
  const auto cfg = small_sketch(32);
  const Tensor slices = sample_slices(dz, cfg.num_slices, rng);
  std::vector<Tensor> in;
  for (std::size_t i = 0; i < K; ++i)
    in.push_back(random_tensor({N, dz}, rng));
  return worst_error(
      [&](Tape &, std::span<const Var> v) { return global_warmup_term(v, slices, cfg); },
      in, corrupt);
}

double repulsion_trial(Rng &rng, std::size_t, bool corrupt) {
  const auto C = pick(rng, 2, 4), dz = pick(rng, 2, 16);
  const auto B = pick(rng, C, 8);
  std::vector<Tensor> in{random_tensor({B, dz}, rng)};
  auto labels = random_labels(rng, B, C);
  for (std::size_t c = 0; c < C; ++c)
    labels[c] = static_cast<int>(c);
  const std::vector<std::uint8_t> mask(B, 1);
  return worst_error(
      [&](Tape &, std::span<const Var> v) {
        return repulsion_loss(class_means(v[0], labels, mask));
      },
      in, corrupt);
}

double main_phase_trial(Rng &rng, std::size_t, bool corrupt) {
  const auto Bl = pick(rng, 1, 4), Bu = pick(rng, 2, 6), dz = pick(rng, 2, 16);
  const auto K = pick(rng, 1, 3), C = pick(rng, 2, 4);
  const double sigma = std::uniform_real_distribution<double>(0.1, 1.0)(rng);
  const auto cfg = small_sketch(32);
  const Tensor slices = sample_slices(dz, cfg.num_slices, rng);
  std::vector<Tensor> in{random_tensor({Bl + Bu, dz}, rng)};
  for (std::size_t k = 0; k < K; ++k)
    in.push_back(random_tensor({Bu, dz}, rng));
  auto labels = random_labels(rng, Bl, C);
  const auto pseudo = random_labels(rng, Bu, C);
  const auto mask = random_mask(rng, Bu);
  labels.insert(labels.end(), pseudo.begin(), pseudo.end());
  std::vector<std::uint8_t> contrib(Bl, 1);
  contrib.insert(contrib.end(), mask.begin(), mask.end());
  return worst_error(
      [&](Tape &, std::span<const Var> v) {
        ClassMeans means = class_means(v[0], labels, contrib);
        return main_phase_term(v.subspan(1), pseudo, mask, means, sigma, slices, cfg)
            .total;
      },
      in, corrupt);
}

RunConfig toy_config(std::uint64_t seed, std::size_t trial) {
  RunConfig cfg;
  cfg.dataset.num_classes = 2;
  cfg.dataset.dim = 4;
  cfg.dataset.labels_per_class = 4;
  cfg.dataset.unlabeled_total = 40;
  cfg.dataset.test_per_class = 5;
  cfg.dataset.seed = seed;
  cfg.augment.num_local = 2;
  cfg.model.encoder_widths = {6, 5};
  cfg.model.projector_hidden = 6;
  cfg.model.proj_dim = 3;
  cfg.sigreg.sketch.num_slices = 16;
  cfg.train.total_iters = 4;
  cfg.train.warmup_fraction = 0.5;
  cfg.train.batch_labeled = 4;
  cfg.train.batch_unlabeled = 4;
  cfg.train.tau = 0.7;
  cfg.train.log_interval = 1000;
  cfg.train.distance = trial % 3 == 2 ? ag::Distance::cosine : ag::Distance::squared_euclidean;
  cfg.train.seed = seed;
  return cfg;
}

double total_trial(Rng &rng, std::size_t trial, bool corrupt) {
  const std::uint64_t seed = rng();
  const RunConfig cfg = toy_config(seed, trial);
  const Dataset train = generate(cfg.dataset);
  const Dataset test = generate_test_split(cfg.dataset);
  Trainer trainer(cfg, train, test);
  // Odd trials probe a main-phase step.
  if (trial % 2 == 1)
    while (trainer.iteration() < cfg.train.warmup_iters())
      trainer.step();

  // Zero-initialised biases put rows whose previous layer is entirely dead
  // exactly on a ReLU kink; move off it.
  ModelParams p = trainer.params();
  std::normal_distribution<double> jitter(0.0, 0.1);
  for (auto *layer : {&p.encoder[0], &p.encoder[1], &p.classifier, &p.proj3})
    for (auto &v : layer->bias.values())
      v += jitter(rng);
  auto grads = trainer.probe_gradients(p);
  auto named = p.trainable();
  double worst = 0.0;
  for (std::size_t i = 0; i < named.size(); ++i) {
    if (corrupt)
      for (auto &v : grads[i].values())
        v *= 1.0 + 1e-3;
    const Tensor fd = oracle::central_difference([&] { return trainer.probe_loss(p); },
                                                 *named[i].second, kStep);
    worst = std::max(worst, oracle::relative_error(grads[i], fd));
  }
  return worst;
}

} // namespace

std::vector<Check> run_gradcheck(const SuiteOptions &opts) {
  const std::vector<Case> cases{
      {"supervised-ce", supervised_trial},
      {"masked-unsupervised-ce", unsupervised_trial},
      {"prediction", prediction_trial},
      {"warmup-sigreg", warmup_trial},
      {"repulsion", repulsion_trial},
      {"main-phase", main_phase_trial},
      {"total-step", total_trial},
  };
  std::vector<Check> out;
  for (const auto &c : cases) {
    const auto start = std::chrono::steady_clock::now();
    Rng rng = substream(opts.seed, "gradcheck." + c.name);
    double worst = 0.0;
    for (std::size_t t = 0; t < opts.trials; ++t)
      worst = std::max(worst, c.trial(rng, t, opts.corrupt_gradients));
    Check chk;
    chk.suite = "gradcheck";
    chk.name = c.name;
    chk.passed = worst < kTolerance;
    char buf[128];
    std::snprintf(buf, sizeof buf, "trials=%zu max_rel_err=%.3e tol=%.0e", opts.trials,
                  worst, kTolerance);
    chk.detail = buf;
    chk.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    out.push_back(std::move(chk));
  }
  return out;
}

} // namespace jepamatch::verify
