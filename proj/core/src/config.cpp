#include "jepamatch/config.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "jepamatch/errors.hpp"

namespace jepamatch {

using nlohmann::json;

std::size_t TrainConfig::warmup_iters() const {
  return static_cast<std::size_t>(
      std::llround(warmup_fraction * static_cast<double>(total_iters)));
}

void TrainConfig::validate() const {
  if (total_iters < 2)
    throw ConfigError("train.total_iters", "must be >= 2");
  if (!(warmup_fraction > 0.0 && warmup_fraction < 1.0))
    throw ConfigError("train.warmup_fraction", "must lie in (0, 1)");
  if (warmup_iters() >= total_iters)
    throw ConfigError("train.warmup_fraction", "leaves no main-phase iterations");
  if (!(lambda_unsup >= 0.0))
    throw ConfigError("train.lambda_unsup", "must be >= 0");
  if (!(lambda_rep >= 0.0))
    throw ConfigError("train.lambda_rep", "must be >= 0");
  if (!(beta >= 0.0 && beta <= 1.0))
    throw ConfigError("train.beta", "must lie in [0, 1]");
  if (batch_labeled < 1)
    throw ConfigError("train.batch_labeled", "must be >= 1");
  if (batch_unlabeled < 2)
    throw ConfigError("train.batch_unlabeled", "must be >= 2");
  if (!(learning_rate > 0.0))
    throw ConfigError("train.learning_rate", "must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0))
    throw ConfigError("train.momentum", "must lie in [0, 1)");
  if (!(weight_decay >= 0.0))
    throw ConfigError("train.weight_decay", "must be >= 0");
  if (!(tau > 0.0 && tau <= 1.0))
    throw ConfigError("train.tau", "must lie in (0, 1]");
  if (log_interval < 1)
    throw ConfigError("train.log_interval", "must be >= 1");
}

void RunConfig::validate() const {
  if (dataset.num_classes < 2)
    throw ConfigError("dataset.num_classes", "need at least 2 classes");
  if (dataset.dim < 2)
    throw ConfigError("dataset.dim", "need at least 2 dimensions");
  if (!(dataset.gamma >= 1.0) || !std::isfinite(dataset.gamma))
    throw ConfigError("dataset.gamma", "imbalance factor must be >= 1");
  if (dataset.generator == Generator::gaussian_mixture) {
    if (dataset.dim < dataset.num_classes)
      throw ConfigError("dataset.dim", "gaussian mixture needs dim >= num_classes");
    if (!(dataset.separation > 0.0))
      throw ConfigError("dataset.separation", "must be positive");
  }
  if (dataset.labels_per_class < 1)
    throw ConfigError("dataset.labels_per_class", "must be >= 1");
  if (dataset.unlabeled_total < dataset.num_classes)
    throw ConfigError("dataset.unlabeled_total", "must cover every class");
  if (dataset.test_per_class < 1)
    throw ConfigError("dataset.test_per_class", "must be >= 1");
  augment.validate();
  model.validate();
  sigreg.sketch.validate();
  if (!(sigreg.sigma_start > 0.0))
    throw ConfigError("sigreg.sigma_start", "must be positive");
  if (!(sigreg.sigma_end > 0.0 && sigreg.sigma_end <= sigreg.sigma_start))
    throw ConfigError("sigreg.sigma_end", "must lie in (0, sigma_start]");
  train.validate();
  if (output_dir.empty())
    throw ConfigError("output_dir", "must not be empty");
}

AnnealSchedule RunConfig::anneal_schedule() const {
  return AnnealSchedule{sigreg.sigma_start, sigreg.sigma_end, train.warmup_iters(),
                        train.total_iters, sigreg.anneal};
}

void RunConfig::override_seed(std::uint64_t seed) {
  dataset.seed = seed;
  train.seed = seed;
}

namespace {

// Reads members of one JSON object, tracking which keys were consumed so
// leftovers can be reported as unknown.
class Block {
public:
  Block(const json &j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object())
      throw ConfigError(path_.empty() ? "<root>" : path_, "must be an object");
  }

  std::string field(const std::string &key) const {
    return path_.empty() ? key : path_ + "." + key;
  }

  template <typename T> void get(const std::string &key, T &out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end())
      return;
    try {
      if constexpr (std::is_same_v<T, double>) {
        if (!it->is_number())
          throw ConfigError(field(key), "expected a number");
        out = it->template get<double>();
      } else if constexpr (std::is_integral_v<T> && !std::is_same_v<T, bool>) {
        if (!it->is_number_unsigned() &&
            !(it->is_number_integer() && it->template get<long long>() >= 0))
          throw ConfigError(field(key), "expected a non-negative integer");
        out = it->template get<T>();
      } else if constexpr (std::is_same_v<T, bool>) {
        if (!it->is_boolean())
          throw ConfigError(field(key), "expected a boolean");
        out = it->template get<bool>();
      } else {
        if (!it->is_string())
          throw ConfigError(field(key), "expected a string");
        out = it->template get<T>();
      }
    } catch (const json::exception &e) {
      throw ConfigError(field(key), e.what());
    }
  }

  template <typename E>
  void get_enum(const std::string &key, E &out,
                std::initializer_list<std::pair<const char *, E>> names) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end())
      return;
    if (!it->is_string())
      throw ConfigError(field(key), "expected a string");
    const auto s = it->template get<std::string>();
    for (const auto &[name, value] : names)
      if (s == name) {
        out = value;
        return;
      }
    throw ConfigError(field(key), "unknown value \"" + s + "\"");
  }

  void get_widths(const std::string &key, std::vector<std::size_t> &out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end())
      return;
    if (!it->is_array() || it->empty())
      throw ConfigError(field(key), "expected a non-empty array of integers");
    out.clear();
    for (std::size_t i = 0; i < it->size(); ++i) {
      const auto &v = (*it)[i];
      if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<long long>() >= 0))
        throw ConfigError(field(key) + "[" + std::to_string(i) + "]",
                          "expected a non-negative integer");
      out.push_back(v.get<std::size_t>());
    }
  }

  const json *child(const std::string &key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void reject_unknown() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key()))
        throw ConfigError(field(it.key()), "unknown key");
  }

private:
  const json &j_;
  std::string path_;
  std::set<std::string> seen_;
};

const std::initializer_list<std::pair<const char *, Generator>> kGenerators = {
    {"gaussian_mixture", Generator::gaussian_mixture}, {"rings", Generator::rings}};
const std::initializer_list<std::pair<const char *, AnnealShape>> kAnneal = {
    {"linear", AnnealShape::linear}, {"cosine", AnnealShape::cosine}};
const std::initializer_list<std::pair<const char *, ThresholdMapping>> kMapping = {
    {"linear", ThresholdMapping::linear}, {"convex", ThresholdMapping::convex}};
const std::initializer_list<std::pair<const char *, ag::Distance>> kDistance = {
    {"squared_euclidean", ag::Distance::squared_euclidean},
    {"cosine", ag::Distance::cosine}};

template <typename E>
std::string enum_name(E v, std::initializer_list<std::pair<const char *, E>> names) {
  for (const auto &[name, value] : names)
    if (value == v)
      return name;
  return "?";
}

} // namespace

RunConfig parse_run_config(const std::string &json_text) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::parse_error &e) {
    throw ConfigError("<root>", std::string("invalid JSON: ") + e.what());
  }
  RunConfig cfg;
  Block top(root, "");
  top.get("output_dir", cfg.output_dir);

  if (const json *j = top.child("dataset")) {
    Block b(*j, "dataset");
    auto &d = cfg.dataset;
    b.get_enum("generator", d.generator, kGenerators);
    b.get("num_classes", d.num_classes);
    b.get("dim", d.dim);
    b.get("labels_per_class", d.labels_per_class);
    b.get("unlabeled_total", d.unlabeled_total);
    b.get("separation", d.separation);
    b.get("gamma", d.gamma);
    b.get("noise", d.noise);
    b.get("inner_radius", d.inner_radius);
    b.get("radius_step", d.radius_step);
    b.get("test_per_class", d.test_per_class);
    b.get("seed", d.seed);
    b.reject_unknown();
  }
  if (const json *j = top.child("augment")) {
    Block b(*j, "augment");
    auto &a = cfg.augment;
    b.get("weak_noise_sigma", a.weak_noise_sigma);
    b.get("strong_noise_sigma", a.strong_noise_sigma);
    b.get("strong_dropout_frac", a.strong_dropout_frac);
    b.get("local_window_frac_min", a.local_window_frac_min);
    b.get("local_window_frac_max", a.local_window_frac_max);
    b.get("num_local", a.num_local);
    b.reject_unknown();
  }
  if (const json *j = top.child("model")) {
    Block b(*j, "model");
    b.get_widths("encoder_widths", cfg.model.encoder_widths);
    b.get("projector_hidden", cfg.model.projector_hidden);
    b.get("proj_dim", cfg.model.proj_dim);
    b.reject_unknown();
  }
  if (const json *j = top.child("sigreg")) {
    Block b(*j, "sigreg");
    auto &s = cfg.sigreg;
    b.get("num_slices", s.sketch.num_slices);
    b.get("num_knots", s.sketch.num_knots);
    b.get("t_max", s.sketch.t_max);
    b.get("sigma_start", s.sigma_start);
    b.get("sigma_end", s.sigma_end);
    b.get_enum("anneal", s.anneal, kAnneal);
    b.reject_unknown();
  }
  if (const json *j = top.child("train")) {
    Block b(*j, "train");
    auto &t = cfg.train;
    b.get("total_iters", t.total_iters);
    b.get("warmup_fraction", t.warmup_fraction);
    b.get("lambda_unsup", t.lambda_unsup);
    b.get("lambda_rep", t.lambda_rep);
    b.get("beta", t.beta);
    b.get("batch_labeled", t.batch_labeled);
    b.get("batch_unlabeled", t.batch_unlabeled);
    b.get("learning_rate", t.learning_rate);
    b.get("momentum", t.momentum);
    b.get("weight_decay", t.weight_decay);
    b.get("tau", t.tau);
    b.get_enum("threshold_mapping", t.threshold_mapping, kMapping);
    b.get_enum("distance", t.distance, kDistance);
    b.get("stop_grad_target", t.stop_grad_target);
    b.get("log_interval", t.log_interval);
    b.get("seed", t.seed);
    b.reject_unknown();
  }
  top.reject_unknown();
  cfg.validate();
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path &path) {
  std::ifstream in(path);
  if (!in)
    throw IoError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str());
}

std::string run_config_to_json(const RunConfig &c) {
  json j;
  j["output_dir"] = c.output_dir;
  const auto &d = c.dataset;
  j["dataset"] = {{"generator", enum_name(d.generator, kGenerators)},
                  {"num_classes", d.num_classes},
                  {"dim", d.dim},
                  {"labels_per_class", d.labels_per_class},
                  {"unlabeled_total", d.unlabeled_total},
                  {"separation", d.separation},
                  {"gamma", d.gamma},
                  {"noise", d.noise},
                  {"inner_radius", d.inner_radius},
                  {"radius_step", d.radius_step},
                  {"test_per_class", d.test_per_class},
                  {"seed", d.seed}};
  const auto &a = c.augment;
  j["augment"] = {{"weak_noise_sigma", a.weak_noise_sigma},
                  {"strong_noise_sigma", a.strong_noise_sigma},
                  {"strong_dropout_frac", a.strong_dropout_frac},
                  {"local_window_frac_min", a.local_window_frac_min},
                  {"local_window_frac_max", a.local_window_frac_max},
                  {"num_local", a.num_local}};
  j["model"] = {{"encoder_widths", c.model.encoder_widths},
                {"projector_hidden", c.model.projector_hidden},
                {"proj_dim", c.model.proj_dim}};
  const auto &s = c.sigreg;
  j["sigreg"] = {{"num_slices", s.sketch.num_slices},
                 {"num_knots", s.sketch.num_knots},
                 {"t_max", s.sketch.t_max},
                 {"sigma_start", s.sigma_start},
                 {"sigma_end", s.sigma_end},
                 {"anneal", enum_name(s.anneal, kAnneal)}};
  const auto &t = c.train;
  j["train"] = {{"total_iters", t.total_iters},
                {"warmup_fraction", t.warmup_fraction},
                {"lambda_unsup", t.lambda_unsup},
                {"lambda_rep", t.lambda_rep},
                {"beta", t.beta},
                {"batch_labeled", t.batch_labeled},
                {"batch_unlabeled", t.batch_unlabeled},
                {"learning_rate", t.learning_rate},
                {"momentum", t.momentum},
                {"weight_decay", t.weight_decay},
                {"tau", t.tau},
                {"threshold_mapping", enum_name(t.threshold_mapping, kMapping)},
                {"distance", enum_name(t.distance, kDistance)},
                {"stop_grad_target", t.stop_grad_target},
                {"log_interval", t.log_interval},
                {"seed", t.seed}};
  return j.dump(2) + "\n";
}

} // namespace jepamatch
