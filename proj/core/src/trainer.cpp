#include "jepamatch/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "jepamatch/errors.hpp"
#include "jepamatch/sigreg.hpp"
#include "jepamatch/views.hpp"

namespace jepamatch {

Var prediction_loss(Var z_weak, Var z_strong, std::span<const Var> z_locals,
                    ag::Distance metric) {
  const auto rows = z_weak.value().rows();
  Var acc = ag::sum(ag::row_distance(z_strong, z_weak, metric));
  for (const auto &loc : z_locals)
    acc = ag::add(acc, ag::sum(ag::row_distance(loc, z_weak, metric)));
  return ag::scale(acc, 1.0 / static_cast<double>(rows));
}

double combine_losses(const LossComponents &c, const TrainConfig &cfg) {
  const double rep =
      (1.0 - cfg.beta) * c.pred + cfg.beta * c.sigreg + c.repulsion;
  return c.sup + cfg.lambda_unsup * c.unsup + cfg.lambda_rep * rep;
}

// ---------------------------------------------------------------------------

EvalResult evaluate_logits(const Tensor &logits, std::span<const int> labels,
                           std::size_t num_classes) {
  if (logits.rank() != 2 || logits.rows() != labels.size() ||
      logits.cols() != num_classes)
    throw DimensionError("evaluate: logits " + shape_str(logits.shape()) +
                         " do not match " + std::to_string(labels.size()) +
                         " labels over " + std::to_string(num_classes) + " classes");
  EvalResult r;
  r.per_class.assign(num_classes, 0.0);
  r.per_class_count.assign(num_classes, 0);
  std::vector<std::size_t> hits(num_classes, 0);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    auto row = logits.row(i);
    const auto pred = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
    const auto y = static_cast<std::size_t>(labels[i]);
    ++r.per_class_count[y];
    if (pred == labels[i]) {
      ++hits[y];
      ++correct;
    }
  }
  for (std::size_t c = 0; c < num_classes; ++c)
    if (r.per_class_count[c])
      r.per_class[c] = static_cast<double>(hits[c]) /
                       static_cast<double>(r.per_class_count[c]);
  r.accuracy = labels.empty() ? 0.0
                              : static_cast<double>(correct) /
                                    static_cast<double>(labels.size());
  return r;
}

EvalResult evaluate(const ModelParams &params, const Dataset &split) {
  if (split.dim() != params.input_dim())
    throw DimensionError("evaluate: data has " + std::to_string(split.dim()) +
                         " features, model expects " +
                         std::to_string(params.input_dim()));
  if (split.num_classes != params.num_classes())
    throw DimensionError("evaluate: data has " + std::to_string(split.num_classes) +
                         " classes, model predicts " +
                         std::to_string(params.num_classes()));
  return evaluate_logits(logits_eval(params, split.features), split.labels,
                         split.num_classes);
}

// ---------------------------------------------------------------------------

EpochSampler::EpochSampler(std::size_t n, Rng rng)
    : order_(n), pos_(n), rng_(std::move(rng)) {
  if (n == 0)
    throw ContractError("EpochSampler over an empty set");
  std::iota(order_.begin(), order_.end(), std::size_t{0});
}

std::vector<std::size_t> EpochSampler::next(std::size_t count) {
  std::vector<std::size_t> out;
  out.reserve(count);
  while (out.size() < count) {
    if (pos_ == order_.size()) {
      std::shuffle(order_.begin(), order_.end(), rng_);
      pos_ = 0;
    }
    out.push_back(order_[pos_++]);
  }
  return out;
}

void SgdMomentum::step(std::span<Tensor *const> params, std::span<const Tensor> grads) {
  if (params.size() != grads.size())
    throw DimensionError("optimizer: parameter and gradient counts differ");
  if (velocity_.empty())
    for (auto *p : params)
      velocity_.emplace_back(p->shape());
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i]->values();
    auto g = grads[i].values();
    auto v = velocity_[i].values();
    for (std::size_t j = 0; j < p.size(); ++j) {
      v[j] = momentum_ * v[j] + (g[j] + weight_decay_ * p[j]);
      p[j] -= lr_ * v[j];
    }
  }
}

LabelOracle::LabelOracle(const Dataset &ds) {
  for (std::size_t i = 0; i < ds.size(); ++i)
    if (!ds.labeled[i])
      truth_.push_back(ds.labels[i]);
}

// ---------------------------------------------------------------------------

Trainer::Trainer(const RunConfig &cfg, const Dataset &train, const Dataset &test)
    : cfg_(cfg), view_(train), oracle_(train), test_(&test),
      params_(init_params(cfg.train.seed,
                          ModelDims{train.dim(), train.num_classes, cfg.model})),
      thresholds_(train.num_classes, view_.unlabeled_rows().size(), cfg.train.tau,
                  cfg.train.threshold_mapping),
      optimizer_(cfg.train.learning_rate, cfg.train.momentum, cfg.train.weight_decay),
      labeled_sampler_(view_.labeled_rows().size(),
                       substream(cfg.train.seed, "batches.labeled")),
      unlabeled_sampler_(view_.unlabeled_rows().size(),
                         substream(cfg.train.seed, "batches.unlabeled")),
      labeled_views_(substream(cfg.train.seed, "views.labeled")),
      unlabeled_views_(substream(cfg.train.seed, "views.unlabeled")),
      slice_seed_(substream_seed(cfg.train.seed, "slices")) {
  cfg_.validate();
  if (test.dim() != train.dim() || test.num_classes != train.num_classes)
    throw DimensionError("test split does not match the training data");
}

bool Trainer::is_log_step(std::size_t completed) const {
  return completed % cfg_.train.log_interval == 0 ||
         completed == cfg_.train.total_iters;
}

Trainer::Batch Trainer::draw_batch() {
  const auto &tc = cfg_.train;
  const auto d = view_.dim();
  const auto K = cfg_.augment.num_local;
  Batch b;
  b.labeled_ids = labeled_sampler_.next(tc.batch_labeled);
  b.unlabeled_ids = unlabeled_sampler_.next(tc.batch_unlabeled);

  b.x_labeled = Tensor({b.labeled_ids.size(), d});
  for (std::size_t i = 0; i < b.labeled_ids.size(); ++i) {
    const auto row = view_.labeled_rows()[b.labeled_ids[i]];
    Tensor v = make_weak_only(view_.features().row(row), cfg_.augment, labeled_views_);
    std::copy_n(v.data(), d, b.x_labeled.row(i).data());
    b.y_labeled.push_back(view_.labeled_labels()[b.labeled_ids[i]]);
  }

  const auto B = b.unlabeled_ids.size();
  b.x_unlabeled = Tensor({(2 + K) * B, d});
  for (std::size_t i = 0; i < B; ++i) {
    const auto row = view_.unlabeled_rows()[b.unlabeled_ids[i]];
    ViewSet vs = make_views(view_.features().row(row), cfg_.augment, unlabeled_views_);
    std::copy_n(vs.weak.data(), d, b.x_unlabeled.row(i).data());
    std::copy_n(vs.strong.data(), d, b.x_unlabeled.row(B + i).data());
    for (std::size_t k = 0; k < K; ++k)
      std::copy_n(vs.locals[k].data(), d, b.x_unlabeled.row((2 + k) * B + i).data());
  }
  return b;
}

const Trainer::Batch &Trainer::pending_batch() {
  if (!pending_)
    pending_ = draw_batch();
  return *pending_;
}

Trainer::Forward Trainer::forward(Tape &tape, const BoundModel &m, const Batch &batch,
                                  ThresholdState &thresholds, ModelParams *running,
                                  const PseudoBatchResult *frozen) const {
  const auto &tc = cfg_.train;
  const auto B = batch.unlabeled_ids.size();
  const auto Bl = batch.labeled_ids.size();
  const auto K = cfg_.augment.num_local;
  Forward f;

  // Curriculum level.
  Var h_l = encode(m, tape.constant(batch.x_labeled));
  Var sup = supervised_loss(classify(m, h_l), batch.y_labeled);

  Var h_u = encode(m, tape.constant(batch.x_unlabeled));
  Var logits_ws = classify(m, ag::slice_rows(h_u, 0, 2 * B));
  Var logits_w = ag::slice_rows(logits_ws, 0, B);
  Var logits_s = ag::slice_rows(logits_ws, B, B);

  // Weak-view prediction is read as plain numbers: no gradient path.
  const Tensor probs = softmax_rows(logits_w.value());
  std::vector<int> argmax;
  std::vector<double> conf;
  argmax_confidence(probs, argmax, conf);
  thresholds.update(argmax, conf, batch.unlabeled_ids);
  f.pseudo = frozen ? *frozen : pseudo_label(probs, thresholds);
  Var unsup = unsupervised_loss(logits_s, f.pseudo);

  // Representation level.
  const Var both[] = {h_l, h_u};
  Var z = project(m, ag::concat_rows(both), Mode::train, running);
  Var z_l = ag::slice_rows(z, 0, Bl);
  Var z_w = ag::slice_rows(z, Bl, B);
  Var z_s = ag::slice_rows(z, Bl + B, B);
  std::vector<Var> z_loc;
  for (std::size_t k = 0; k < K; ++k)
    z_loc.push_back(ag::slice_rows(z, Bl + (2 + k) * B, B));

  Var target = tc.stop_grad_target ? ag::detach(z_w) : z_w;
  Var pred = prediction_loss(target, z_s, z_loc, tc.distance);

  const Tensor slices = slices_for_iteration(slice_seed_, t_, z.value().cols(),
                                             cfg_.sigreg.sketch.num_slices);
  Var sig, repulsion;
  f.main_phase = t_ >= tc.warmup_iters();
  if (!f.main_phase) {
    sig = global_warmup_term(z_loc, slices, cfg_.sigreg.sketch);
    repulsion = tape.constant(Tensor::scalar(0.0));
    f.sigma_t = cfg_.sigreg.sigma_start;
  } else {
    std::vector<int> labels(batch.y_labeled);
    labels.insert(labels.end(), f.pseudo.labels.begin(), f.pseudo.labels.end());
    std::vector<std::uint8_t> mask(Bl, 1);
    mask.insert(mask.end(), f.pseudo.mask.begin(), f.pseudo.mask.end());
    const Var weak_rows[] = {z_l, z_w};
    ClassMeans means = class_means(ag::concat_rows(weak_rows), labels, mask);
    f.sigma_t = anneal_sigma(t_, cfg_.anneal_schedule());
    MainPhaseTerms terms = main_phase_term(z_loc, f.pseudo.labels, f.pseudo.mask,
                                           means, f.sigma_t, slices,
                                           cfg_.sigreg.sketch);
    sig = terms.sigreg;
    repulsion = terms.repulsion;
  }
  Var rep = ag::add(ag::add(ag::scale(pred, 1.0 - tc.beta), ag::scale(sig, tc.beta)),
                    repulsion);
  f.total = ag::add(ag::add(sup, ag::scale(unsup, tc.lambda_unsup)),
                    ag::scale(rep, tc.lambda_rep));

  f.loss.sup = sup.value().item();
  f.loss.unsup = unsup.value().item();
  f.loss.pred = pred.value().item();
  f.loss.sigreg = sig.value().item();
  f.loss.repulsion = repulsion.value().item();
  f.loss.total = f.total.value().item();
  return f;
}

const PseudoBatchResult &Trainer::probe_pseudo() {
  if (!probe_pseudo_) {
    const Batch &batch = pending_batch();
    Tape tape;
    auto m = bind(tape, params_, false);
    ThresholdState scratch = thresholds_;
    probe_pseudo_ = forward(tape, m, batch, scratch, nullptr).pseudo;
  }
  return *probe_pseudo_;
}

double Trainer::probe_loss(const ModelParams &params) {
  const PseudoBatchResult &frozen = probe_pseudo();
  Tape tape;
  auto m = bind(tape, params, false);
  ThresholdState scratch = thresholds_;
  return forward(tape, m, *pending_, scratch, nullptr, &frozen).loss.total;
}

std::vector<Tensor> Trainer::probe_gradients(const ModelParams &params) {
  const PseudoBatchResult &frozen = probe_pseudo();
  Tape tape;
  auto m = bind(tape, params, true);
  ThresholdState scratch = thresholds_;
  Var total = forward(tape, m, *pending_, scratch, nullptr, &frozen).total;
  tape.backward(total);
  return collect_grads(tape, m);
}

MetricsRecord Trainer::step(StepTrace *trace) {
  if (done())
    throw ContractError("step() after the last iteration");
  const Batch batch = pending_batch();
  pending_.reset();
  probe_pseudo_.reset();

  Tape tape;
  auto m = bind(tape, params_, true);
  Forward f = forward(tape, m, batch, thresholds_, &params_);
  tape.backward(f.total);
  auto grads = collect_grads(tape, m);

  std::vector<Tensor *> targets;
  for (auto &[name, p] : params_.trainable())
    targets.push_back(p);
  optimizer_.step(targets, grads);

  MetricsRecord r;
  r.iter = t_ + 1;
  r.loss = f.loss;
  r.sigma_t = f.sigma_t;
  r.main_phase = f.main_phase;
  r.thresholds.assign(thresholds_.thresholds().begin(), thresholds_.thresholds().end());
  std::vector<std::size_t> per_class(view_.num_classes(), 0);
  for (std::size_t i = 0; i < batch.unlabeled_ids.size(); ++i) {
    if (!f.pseudo.mask[i])
      continue;
    ++r.util_masked;
    ++per_class[static_cast<std::size_t>(f.pseudo.labels[i])];
    if (oracle_.truth(batch.unlabeled_ids[i]) == f.pseudo.labels[i])
      ++r.util_correct;
  }
  r.max_class_count = *std::max_element(per_class.begin(), per_class.end());
  r.pl_acc = r.util_masked ? static_cast<double>(r.util_correct) /
                                 static_cast<double>(r.util_masked)
                           : 0.0;

  if (trace) {
    trace->labeled_ids = batch.labeled_ids;
    trace->unlabeled_ids = batch.unlabeled_ids;
    trace->pseudo = f.pseudo;
    trace->grads = std::move(grads);
    trace->main_phase = f.main_phase;
  }
  ++t_;
  if (is_log_step(r.iter))
    r.test_acc = evaluate(params_, *test_).accuracy;
  return r;
}

// ---------------------------------------------------------------------------

std::string metrics_csv_row(const MetricsRecord &r) {
  char buf[512];
  std::snprintf(buf, sizeof buf,
                "%zu,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%zu,%zu,%zu,%.17g",
                r.iter, r.loss.sup, r.loss.unsup, r.loss.pred, r.loss.sigreg,
                r.loss.repulsion, r.loss.total, r.test_acc.value_or(0.0), r.pl_acc,
                r.util_masked, r.util_correct, r.max_class_count, r.sigma_t);
  return buf;
}

RunResult train_in_memory(const RunConfig &cfg, const Dataset &train,
                          const Dataset &test) {
  Trainer trainer(cfg, train, test);
  RunResult result;
  while (!trainer.done()) {
    MetricsRecord r = trainer.step();
    if (r.test_acc) {
      result.final_test_acc = *r.test_acc;
      result.logged.push_back(std::move(r));
    }
  }
  result.params = trainer.params();
  return result;
}

RunResult run(const RunConfig &cfg, const std::filesystem::path &out_dir) {
  cfg.validate();
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec)
    throw IoError("cannot create " + out_dir.string() + ": " + ec.message());

  const Dataset train = generate(cfg.dataset);
  const Dataset test = generate_test_split(cfg.dataset);
  {
    std::ofstream snap(out_dir / "config.resolved.json");
    if (!snap)
      throw IoError("cannot write " + (out_dir / "config.resolved.json").string());
    snap << run_config_to_json(cfg);
  }
  save_raw(out_dir / "train.jmds", train);
  save_raw(out_dir / "test.jmds", test);

  std::ofstream csv(out_dir / "metrics.csv", std::ios::trunc);
  if (!csv)
    throw IoError("cannot write " + (out_dir / "metrics.csv").string());
  csv << kMetricsHeader << '\n';

  Trainer trainer(cfg, train, test);
  RunResult result;
  while (!trainer.done()) {
    MetricsRecord r = trainer.step();
    if (r.test_acc) {
      csv << metrics_csv_row(r) << '\n';
      result.final_test_acc = *r.test_acc;
      result.logged.push_back(std::move(r));
    }
  }
  csv.flush();
  if (!csv)
    throw IoError("write failed for metrics.csv");
  result.params = trainer.params();
  save_checkpoint(out_dir / "model.jmck", result.params);
  return result;
}

} // namespace jepamatch
