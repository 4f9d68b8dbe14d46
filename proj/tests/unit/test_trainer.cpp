#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <set>
#include <sstream>

#include "jepamatch/trainer.hpp"

using namespace jepamatch;

namespace {

RunConfig tiny(std::size_t iters = 20) {
  RunConfig c;
  c.dataset.num_classes = 3;
  c.dataset.dim = 6;
  c.dataset.labels_per_class = 2;
  c.dataset.unlabeled_total = 120;
  c.dataset.test_per_class = 10;
  c.dataset.gamma = 3.0;
  c.augment.num_local = 2;
  c.model.encoder_widths = {12};
  c.model.projector_hidden = 10;
  c.model.proj_dim = 5;
  c.sigreg.sketch.num_slices = 16;
  c.train.total_iters = iters;
  c.train.warmup_fraction = 0.5;
  c.train.batch_labeled = 6;
  c.train.batch_unlabeled = 8;
  c.train.log_interval = 5;
  c.train.learning_rate = 0.01;
  return c;
}

struct Fixture {
  RunConfig cfg;
  Dataset train, test;
  explicit Fixture(RunConfig c)
      : cfg(std::move(c)), train(generate(cfg.dataset)), test(generate_test_split(cfg.dataset)) {}
};

} // namespace

TEST(PredictionLoss, IdenticalViewsAreZero) {
  Tape tape;
  const Tensor z = Tensor::matrix({{1, 2}, {-3, 0.5}});
  auto w = tape.constant(z);
  std::vector<Var> locals{tape.constant(z), tape.constant(z)};
  for (auto m : {ag::Distance::squared_euclidean, ag::Distance::cosine})
    EXPECT_NEAR(prediction_loss(w, tape.constant(z), locals, m).value().item(), 0.0, 1e-15);
}

TEST(PredictionLoss, HandArithmetic) {
  Tape tape;
  auto w = tape.constant(Tensor::matrix({{0, 0}, {1, 1}}));
  auto s = tape.constant(Tensor::matrix({{3, 4}, {1, 1}}));          // 25, 0
  std::vector<Var> locals{tape.constant(Tensor::matrix({{1, 0}, {1, 3}}))}; // 1, 4
  EXPECT_EQ(prediction_loss(w, s, locals, ag::Distance::squared_euclidean).value().item(),
            (25.0 + 0.0 + 1.0 + 4.0) / 2.0);
}

TEST(PredictionLoss, StopGradientOnTarget) {
  Tape tape;
  auto w = tape.param(Tensor::matrix({{0.3, -1}}));
  auto s = tape.param(Tensor::matrix({{1, 2}}));
  tape.backward(prediction_loss(ag::detach(w), s, {}, ag::Distance::squared_euclidean));
  EXPECT_EQ(tape.grad(w), Tensor({1, 2}, 0.0));
  EXPECT_EQ(tape.grad(s), Tensor::matrix({{2 * 0.7, 2 * 3.0}}));
}

TEST(CombineLosses, WeightedSum) {
  LossComponents c{1.0, 2.0, 3.0, 4.0, 5.0, 0.0};
  TrainConfig t;
  t.lambda_unsup = 0.5;
  t.lambda_rep = 0.25;
  t.beta = 0.2;
  EXPECT_DOUBLE_EQ(combine_losses(c, t), 1.0 + 1.0 + 0.25 * (0.8 * 3.0 + 0.2 * 4.0 + 5.0));
}

TEST(Sgd, MomentumByHand) {
  SgdMomentum opt(0.1, 0.9, 0.01);
  Tensor p = Tensor::vector({1.0});
  std::vector<Tensor *> ps{&p};
  const std::vector<Tensor> g{Tensor::vector({2.0})};
  opt.step(ps, g);
  // v = 2 + 0.01 * 1 = 2.01; p = 1 - 0.201
  EXPECT_NEAR(p[0], 0.799, 1e-15);
  opt.step(ps, g);
  // v = 0.9 * 2.01 + 2 + 0.00799
  EXPECT_NEAR(p[0], 0.799 - 0.1 * (1.809 + 2.00799), 1e-15);
}

TEST(Sampler, EachEpochIsAPermutation) {
  EpochSampler s(7, Rng(1));
  for (int epoch = 0; epoch < 3; ++epoch) {
    std::set<std::size_t> seen;
    for (int i = 0; i < 7; ++i)
      seen.insert(s.next(1)[0]);
    EXPECT_EQ(seen.size(), 7u);
  }
  EXPECT_EQ(s.next(20).size(), 20u);
}

TEST(Evaluate, PerfectLogits) {
  const std::vector<int> labels{0, 1, 2, 1};
  const auto r = evaluate_logits(one_hot(labels, 3), labels, 3);
  EXPECT_EQ(r.accuracy, 1.0);
  EXPECT_EQ(r.per_class, (std::vector<double>{1, 1, 1}));
}

TEST(Evaluate, RandomLogitsNearChance) {
  Rng rng(2);
  std::normal_distribution<double> n(0.0, 1.0);
  Tensor logits({4000, 4});
  for (auto &v : logits.values())
    v = n(rng);
  std::vector<int> labels(4000);
  for (std::size_t i = 0; i < 4000; ++i)
    labels[i] = static_cast<int>(i % 4);
  const auto r = evaluate_logits(logits, labels, 4);
  // Binomial(4000, 1/4): sd ~0.0068; 4 sd band.
  EXPECT_NEAR(r.accuracy, 0.25, 0.028);
  double weighted = 0.0;
  for (std::size_t c = 0; c < 4; ++c)
    weighted += r.per_class[c] * static_cast<double>(r.per_class_count[c]);
  EXPECT_NEAR(weighted / 4000.0, r.accuracy, 1e-15);
}

TEST(Trainer, PseudoLabelsCarryNoGradient) {
  Tape tape;
  auto weak = tape.param(Tensor::matrix({{2, 0}, {0, 1}}));
  auto strong = tape.param(Tensor::matrix({{1, 0}, {0, 3}}));
  ThresholdState st(2, 2);
  const auto r = pseudo_label(softmax_rows(weak.value()), st);
  auto loss = unsupervised_loss(strong, r);
  tape.backward(loss);
  EXPECT_FALSE(tape.depends_on(loss, weak));
  EXPECT_EQ(tape.grad(weak), Tensor({2, 2}, 0.0));
}

TEST(Trainer, StepInvariants) {
  Fixture f(tiny(30));
  Trainer tr(f.cfg, f.train, f.test);
  const auto warm = f.cfg.train.warmup_iters();
  const auto sched = f.cfg.anneal_schedule();
  while (!tr.done()) {
    const auto t = tr.iteration();
    const auto r = tr.step();
    EXPECT_EQ(r.iter, t + 1);
    EXPECT_EQ(r.main_phase, t >= warm);
    if (!r.main_phase) {
      EXPECT_EQ(r.loss.repulsion, 0.0);
    }
    EXPECT_EQ(r.sigma_t, anneal_sigma(t, sched));
    EXPECT_NEAR(combine_losses(r.loss, f.cfg.train), r.loss.total, 1e-12);
    EXPECT_LE(r.max_class_count, r.util_masked);
    EXPECT_LE(r.util_masked, f.cfg.train.batch_unlabeled);
    EXPECT_LE(r.util_correct, r.util_masked);
    EXPECT_EQ(r.test_acc.has_value(), (t + 1) % 5 == 0 || t + 1 == 30);
    if (r.test_acc) {
      EXPECT_GE(*r.test_acc, 0.0);
      EXPECT_LE(*r.test_acc, 1.0);
    }
    for (double th : r.thresholds)
      EXPECT_LE(th, f.cfg.train.tau);
  }
}

TEST(Trainer, ProbeLeavesStateUntouched) {
  Fixture f(tiny());
  Trainer a(f.cfg, f.train, f.test), b(f.cfg, f.train, f.test);
  a.step();
  b.step();
  const double l = a.probe_loss(a.params());
  a.probe_gradients(a.params());
  const auto ra = a.step(), rb = b.step();
  EXPECT_EQ(ra.loss.total, rb.loss.total);
  EXPECT_EQ(l, ra.loss.total);
  EXPECT_EQ(a.params(), b.params());
}

TEST(Trainer, HiddenLabelsDoNotReachLosses) {
  Fixture f(tiny(12));
  Dataset flipped = f.train;
  for (std::size_t i = flipped.num_labeled(); i < flipped.size(); ++i)
    flipped.labels[i] = (flipped.labels[i] + 1) % 3;
  Trainer a(f.cfg, f.train, f.test), b(f.cfg, flipped, f.test);
  while (!a.done()) {
    const auto ra = a.step(), rb = b.step();
    EXPECT_EQ(ra.loss.total, rb.loss.total);
  }
  EXPECT_EQ(a.params(), b.params());
}

TEST(Trainer, ZeroWeightsGiveSupervisedComponentsOnly) {
  RunConfig c = tiny(6);
  c.train.lambda_unsup = 0.0;
  c.train.lambda_rep = 0.0;
  Fixture f(c);
  Trainer tr(f.cfg, f.train, f.test);
  while (!tr.done()) {
    const auto r = tr.step();
    EXPECT_EQ(r.loss.total, r.loss.sup);
  }
}

TEST(Metrics, CsvRowHasAllColumns) {
  Fixture f(tiny(5));
  Trainer tr(f.cfg, f.train, f.test);
  MetricsRecord r;
  while (!tr.done())
    r = tr.step();
  const std::string row = metrics_csv_row(r);
  EXPECT_EQ(std::count(row.begin(), row.end(), ','),
            std::count(kMetricsHeader, kMetricsHeader + std::strlen(kMetricsHeader), ','));
  EXPECT_EQ(row.substr(0, 2), "5,");
}

TEST(Run, InMemoryMatchesEvaluate) {
  Fixture f(tiny(10));
  const auto res = train_in_memory(f.cfg, f.train, f.test);
  EXPECT_EQ(res.logged.size(), 2u);
  EXPECT_EQ(res.final_test_acc, evaluate(res.params, f.test).accuracy);
}
