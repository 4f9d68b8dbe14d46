#include <chrono>
#include <cmath>
#include <cstdio>
#include <random>
#include <sstream>

#include "jepamatch/curriculum.hpp"
#include "jepamatch/sigreg.hpp"
#include "jepamatch/verify/suites.hpp"

namespace jepamatch::verify {

namespace {

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string list(std::span<const double> v) {
  std::ostringstream os;
  os.precision(17);
  os << '[';
  for (std::size_t i = 0; i < v.size(); ++i)
    os << (i ? "," : "") << v[i];
  os << ']';
  return os.str();
}

std::vector<std::size_t> range(std::size_t lo, std::size_t hi) {
  std::vector<std::size_t> v;
  for (std::size_t i = lo; i < hi; ++i)
    v.push_back(i);
  return v;
}

double repulsion_of(std::initializer_list<std::initializer_list<double>> rows) {
  Tape tape;
  const Tensor z = Tensor::matrix(rows);
  std::vector<int> labels;
  for (std::size_t i = 0; i < z.rows(); ++i)
    labels.push_back(static_cast<int>(i));
  const std::vector<std::uint8_t> mask(z.rows(), 1);
  return repulsion_loss(class_means(tape.constant(z), labels, mask)).value().item();
}

} // namespace

std::vector<Check> run_curriculum(const SuiteOptions &opts) {
  std::vector<Check> out;

  // Hand-simulated replay: 2 classes, 15 tracked samples, base 0.95.
  {
    const auto t0 = Clock::now();
    ThresholdState st(2, 15, 0.95, ThresholdMapping::linear);
    std::vector<std::string> fails;
    auto expect = [&](const char *step, std::vector<double> want, std::size_t unused) {
      const auto got = st.thresholds();
      bool ok = st.unused() == unused && got.size() == want.size();
      for (std::size_t c = 0; ok && c < want.size(); ++c)
        ok = got[c] == want[c];
      std::size_t total = st.unused();
      for (auto n : st.counts())
        total += n;
      ok = ok && total == 15;
      if (!ok)
        fails.push_back(std::string(step) + " got " + list(got));
    };
    expect("cold", {0.0, 0.0}, 15);
    // 1: ten confident class-0 predictions; five class-1 below base tau.
    {
      auto ids = range(0, 15);
      std::vector<int> pred(15, 0);
      std::vector<double> conf(15, 0.99);
      for (std::size_t i = 10; i < 15; ++i) {
        pred[i] = 1;
        conf[i] = 0.5;
      }
      st.update(pred, conf, ids);
      expect("step1", {0.95, 0.0}, 5);
    }
    // 2: the five become confident class-1 predictions -> counts [10, 5].
    {
      auto ids = range(10, 15);
      std::vector<int> pred(5, 1);
      std::vector<double> conf(5, 0.97);
      st.update(pred, conf, ids);
      expect("step2", {0.95, 0.475}, 0);
    }
    // 3: unconfident flips and a repeated assignment change nothing.
    {
      std::vector<std::size_t> ids{0, 1, 2, 3};
      std::vector<int> pred{1, 1, 1, 0};
      std::vector<double> conf{0.6, 0.6, 0.6, 0.99};
      st.update(pred, conf, ids);
      expect("step3", {0.95, 0.475}, 0);
    }
    const bool ok = fails.empty();
    out.push_back({"curriculum", "threshold-replay", ok,
                   ok ? "counts=[10,5] thresholds=" + list(st.thresholds())
                      : fails.front(),
                   since(t0)});
  }

  // Mask consistency and tie-breaking on random states.
  {
    const auto t0 = Clock::now();
    Rng rng = substream(opts.seed, "curriculum.mask");
    std::size_t violations = 0, monotone_violations = 0;
    for (std::size_t trial = 0; trial < opts.trials; ++trial) {
      const std::size_t C = 2 + trial % 4, n = 64;
      ThresholdState st(C, n);
      std::uniform_int_distribution<int> cls(0, static_cast<int>(C) - 1);
      std::uniform_real_distribution<double> u(0.0, 1.0);
      std::vector<int> pred(n);
      std::vector<double> conf(n);
      for (std::size_t i = 0; i < n; ++i) {
        pred[i] = cls(rng);
        conf[i] = u(rng) < 0.5 ? 0.995 + 0.005 * u(rng) : 0.9 * u(rng);
      }
      st.update(pred, conf, range(0, n));
      Tensor p({16, C});
      for (std::size_t i = 0; i < 16; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < C; ++j)
          s += (p.at(i, j) = std::exp(4.0 * u(rng)));
        for (std::size_t j = 0; j < C; ++j)
          p.at(i, j) /= s;
      }
      const auto r = pseudo_label(p, st);
      for (std::size_t i = 0; i < 16; ++i)
        if ((r.mask[i] != 0) != (r.confidences[i] >= st.threshold(r.labels[i])))
          ++violations;
      // Same records (every confidence is >= 0.995 or < 0.9) under a higher
      // base tau never admit more samples.
      ThresholdState hi(C, n, 0.99);
      hi.update(pred, conf, range(0, n));
      if (pseudo_label(p, hi).masked_in() > r.masked_in())
        ++monotone_violations;
    }
    ThresholdState st(2, 4);
    st.update(std::vector<int>{0, 0, 0, 0}, std::vector<double>{1, 1, 1, 1}, range(0, 4));
    // thresholds now [0.95, 0]
    const auto a = pseudo_label(Tensor::matrix({{0.97, 0.03}, {0.60, 0.40}, {0.5, 0.5}}), st);
    const bool examples = a.labels == std::vector<int>{0, 0, 0} &&
                          a.mask == std::vector<std::uint8_t>{1, 0, 0};
    char buf[160];
    std::snprintf(buf, sizeof buf,
                  "trials=%zu mask_violations=%zu monotone_violations=%zu examples=%s",
                  opts.trials, violations, monotone_violations, examples ? "ok" : "bad");
    out.push_back({"curriculum", "mask-consistency",
                   violations == 0 && monotone_violations == 0 && examples, buf,
                   since(t0)});
  }

  // Repulsion between class means.
  {
    const auto t0 = Clock::now();
    const double orth = repulsion_of({{1.0, 0.0}, {0.0, 1.0}});
    const double same = repulsion_of({{1.0, 0.0}, {1.0, 0.0}});
    const double obtuse = repulsion_of({{1.0, 0.0}, {-0.5, std::sqrt(3.0) / 2.0}});
    const bool ok = orth == 0.0 && same == 1.0 && obtuse == 0.0;
    char buf[160];
    std::snprintf(buf, sizeof buf, "orthogonal=%.17g identical=%.17g cos_-0.5=%.17g", orth,
                  same, obtuse);
    out.push_back({"curriculum", "repulsion-hand-cases", ok, buf, since(t0)});
  }

  // Unsupervised loss with every mask off.
  {
    const auto t0 = Clock::now();
    Tape tape;
    PseudoBatchResult r{{0, 1, 2}, {0.1, 0.2, 0.3}, {0, 0, 0}};
    const double v =
        unsupervised_loss(tape.constant(Tensor::matrix({{5, -3, 1}, {0, 9, 2}, {1, 1, 1}})), r)
            .value()
            .item();
    char buf[64];
    std::snprintf(buf, sizeof buf, "loss=%.17g", v);
    out.push_back({"curriculum", "empty-mask-unsupervised", v == 0.0, buf, since(t0)});
  }
  return out;
}

} // namespace jepamatch::verify
