#include <benchmark/benchmark.h>

#include "jepamatch/sigreg.hpp"
#include "jepamatch/trainer.hpp"

using namespace jepamatch;

namespace {

Tensor randn(Shape s, Rng &rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Tensor t(std::move(s));
  for (auto &v : t.values())
    v = n(rng);
  return t;
}

// args: batch rows, projection dim, slices
void BM_SigregForwardBackward(benchmark::State &state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto d = static_cast<std::size_t>(state.range(1));
  const auto m = static_cast<std::size_t>(state.range(2));
  Rng rng(1);
  const Tensor z0 = randn({n, d}, rng);
  const Tensor slices = sample_slices(d, m, rng);
  SigregConfig cfg;
  cfg.num_slices = m;
  for (auto _ : state) {
    Tape tape;
    auto z = tape.param(z0);
    auto loss = sigreg_loss(z, tape.constant(Tensor({d})), 1.0, slices, cfg);
    tape.backward(loss);
    benchmark::DoNotOptimize(tape.grad(z));
  }
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(n * m));
}
BENCHMARK(BM_SigregForwardBackward)
    ->Args({64, 16, 256})
    ->Args({64, 16, 1024})
    ->Args({256, 16, 256})
    ->Unit(benchmark::kMicrosecond);

RunConfig step_config(std::size_t warmup_iters) {
  RunConfig c;
  c.dataset.num_classes = 4;
  c.dataset.dim = 32;
  c.dataset.labels_per_class = 4;
  c.dataset.unlabeled_total = 4000;
  c.dataset.test_per_class = 10;
  c.model.encoder_widths = {64, 64};
  c.model.projector_hidden = 64;
  c.model.proj_dim = 16;
  c.sigreg.sketch.num_slices = 256;
  c.train.total_iters = 1u << 30;
  c.train.warmup_fraction = static_cast<double>(warmup_iters) / c.train.total_iters;
  c.train.log_interval = 1u << 30;
  return c;
}

// arg 0: warmup phase, 1: main phase
void BM_TrainerStep(benchmark::State &state) {
  const RunConfig cfg = step_config(state.range(0) == 0 ? (1u << 29) : 1);
  const Dataset train = generate(cfg.dataset), test = generate_test_split(cfg.dataset);
  Trainer tr(cfg, train, test);
  while (state.range(0) == 1 && tr.iteration() < cfg.train.warmup_iters())
    tr.step();
  for (auto _ : state)
    benchmark::DoNotOptimize(tr.step());
}
BENCHMARK(BM_TrainerStep)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

} // namespace

BENCHMARK_MAIN();
