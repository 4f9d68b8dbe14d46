#include "jepamatch/networks.hpp"

#include <cmath>
#include <cstring>
#include <map>

#include "jepamatch/datasets.hpp"
#include "jepamatch/errors.hpp"
#include "jepamatch/rng.hpp"

namespace jepamatch {

void ModelConfig::validate() const {
  if (encoder_widths.empty())
    throw ConfigError("model.encoder_widths", "need at least one layer");
  for (std::size_t i = 0; i < encoder_widths.size(); ++i)
    if (encoder_widths[i] == 0)
      throw ConfigError("model.encoder_widths[" + std::to_string(i) + "]",
                        "must be positive");
  if (projector_hidden == 0)
    throw ConfigError("model.projector_hidden", "must be positive");
  if (proj_dim == 0)
    throw ConfigError("model.proj_dim", "must be positive");
}

namespace {

void add_bn(std::vector<std::pair<std::string, const Tensor *>> &out,
            const std::string &prefix, const BatchNormState &bn, bool stats) {
  out.emplace_back(prefix + ".gamma", &bn.gamma);
  out.emplace_back(prefix + ".beta", &bn.beta);
  if (stats) {
    out.emplace_back(prefix + ".running_mean", &bn.running_mean);
    out.emplace_back(prefix + ".running_var", &bn.running_var);
  }
}

std::vector<std::pair<std::string, const Tensor *>> named(const ModelParams &p,
                                                          bool stats) {
  std::vector<std::pair<std::string, const Tensor *>> out;
  for (std::size_t i = 0; i < p.encoder.size(); ++i) {
    out.emplace_back("encoder." + std::to_string(i) + ".weight", &p.encoder[i].weight);
    out.emplace_back("encoder." + std::to_string(i) + ".bias", &p.encoder[i].bias);
  }
  out.emplace_back("classifier.weight", &p.classifier.weight);
  out.emplace_back("classifier.bias", &p.classifier.bias);
  out.emplace_back("projector.0.weight", &p.proj1.weight);
  add_bn(out, "projector.bn0", p.bn1, stats);
  out.emplace_back("projector.1.weight", &p.proj2.weight);
  add_bn(out, "projector.bn1", p.bn2, stats);
  out.emplace_back("projector.2.weight", &p.proj3.weight);
  out.emplace_back("projector.2.bias", &p.proj3.bias);
  return out;
}

Linear make_linear(std::size_t fan_in, std::size_t fan_out, bool bias, Rng &rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Linear l;
  l.weight = Tensor({fan_in, fan_out});
  for (auto &v : l.weight.values())
    v = dist(rng);
  if (bias)
    l.bias = Tensor({fan_out});
  return l;
}

BatchNormState make_bn(std::size_t width) {
  return BatchNormState{Tensor({width}, 1.0), Tensor({width}, 0.0),
                        Tensor({width}, 0.0), Tensor({width}, 1.0)};
}

Var linear(Var x, Var w, const Var *b) {
  Var y = ag::matmul(x, w);
  return b ? ag::add_row(y, *b) : y;
}

} // namespace

std::vector<std::pair<std::string, const Tensor *>> ModelParams::trainable() const {
  return named(*this, false);
}

std::vector<std::pair<std::string, Tensor *>> ModelParams::trainable() {
  std::vector<std::pair<std::string, Tensor *>> out;
  for (auto &[name, t] : named(*this, false))
    out.emplace_back(name, const_cast<Tensor *>(t));
  return out;
}

std::vector<std::pair<std::string, const Tensor *>> ModelParams::all_named() const {
  return named(*this, true);
}

bool operator==(const ModelParams &a, const ModelParams &b) {
  auto na = a.all_named(), nb = b.all_named();
  if (na.size() != nb.size())
    return false;
  for (std::size_t i = 0; i < na.size(); ++i)
    if (na[i].first != nb[i].first || !(*na[i].second == *nb[i].second))
      return false;
  return true;
}

ModelParams init_params(std::uint64_t seed, const ModelDims &dims) {
  dims.model.validate();
  if (dims.input_dim == 0)
    throw ConfigError("model.input_dim", "must be positive");
  if (dims.num_classes < 2)
    throw ConfigError("model.num_classes", "need at least 2 classes");
  Rng rng = substream(seed, "init");
  ModelParams p;
  std::size_t fan_in = dims.input_dim;
  for (auto w : dims.model.encoder_widths) {
    p.encoder.push_back(make_linear(fan_in, w, true, rng));
    fan_in = w;
  }
  p.classifier = make_linear(fan_in, dims.num_classes, true, rng);
  const auto hidden = dims.model.projector_hidden;
  p.proj1 = make_linear(fan_in, hidden, false, rng);
  p.bn1 = make_bn(hidden);
  p.proj2 = make_linear(hidden, hidden, false, rng);
  p.bn2 = make_bn(hidden);
  p.proj3 = make_linear(hidden, dims.model.proj_dim, true, rng);
  return p;
}

BoundModel bind(Tape &tape, const ModelParams &params, bool trainable) {
  BoundModel m;
  m.params = &params;
  auto leaf = [&](const Tensor &t) {
    Var v = tape.leaf(t, trainable);
    m.leaves.push_back(v);
    return v;
  };
  for (const auto &layer : params.encoder) {
    m.encoder_w.push_back(leaf(layer.weight));
    m.encoder_b.push_back(leaf(layer.bias));
  }
  m.cls_w = leaf(params.classifier.weight);
  m.cls_b = leaf(params.classifier.bias);
  m.p1_w = leaf(params.proj1.weight);
  m.bn1_gamma = leaf(params.bn1.gamma);
  m.bn1_beta = leaf(params.bn1.beta);
  m.p2_w = leaf(params.proj2.weight);
  m.bn2_gamma = leaf(params.bn2.gamma);
  m.bn2_beta = leaf(params.bn2.beta);
  m.p3_w = leaf(params.proj3.weight);
  m.p3_b = leaf(params.proj3.bias);
  return m;
}

Var encode(const BoundModel &m, Var x) {
  const auto d = m.params->input_dim();
  if (x.value().rank() != 2 || x.value().cols() != d)
    throw DimensionError("encode: expected [B x " + std::to_string(d) + "], got " +
                         shape_str(x.shape()));
  Var h = x;
  for (std::size_t i = 0; i < m.encoder_w.size(); ++i)
    h = ag::relu(linear(h, m.encoder_w[i], &m.encoder_b[i]));
  return h;
}

Var classify(const BoundModel &m, Var h) {
  const auto f = m.params->feature_dim();
  if (h.value().rank() != 2 || h.value().cols() != f)
    throw DimensionError("classify: expected [B x " + std::to_string(f) + "], got " +
                         shape_str(h.shape()));
  return linear(h, m.cls_w, &m.cls_b);
}

namespace {

Var bn_forward(Var x, Var gamma, Var beta, const BatchNormState &state, Mode mode,
               BatchNormState *running) {
  Tape &tape = *x.tape;
  if (mode == Mode::train) {
    Tensor mu, var;
    Var y = ag::batch_norm(x, gamma, beta, BatchNormState::kEps, &mu, &var);
    if (running) {
      const double n = static_cast<double>(x.value().rows());
      const double m = BatchNormState::kMomentum;
      for (std::size_t j = 0; j < mu.size(); ++j) {
        running->running_mean[j] = (1.0 - m) * running->running_mean[j] + m * mu[j];
        running->running_var[j] =
            (1.0 - m) * running->running_var[j] + m * var[j] * n / (n - 1.0);
      }
    }
    return y;
  }
  const auto c = state.running_mean.size();
  Tensor s({c}), t({c});
  for (std::size_t j = 0; j < c; ++j) {
    s[j] = 1.0 / std::sqrt(state.running_var[j] + BatchNormState::kEps);
    t[j] = -state.running_mean[j] * s[j];
  }
  Var normed = ag::column_affine(x, tape.constant(std::move(s)), tape.constant(std::move(t)));
  return ag::column_affine(normed, gamma, beta);
}

} // namespace

Var project(const BoundModel &m, Var h, Mode mode, ModelParams *running) {
  const auto f = m.params->feature_dim();
  if (h.value().rank() != 2 || h.value().cols() != f)
    throw DimensionError("project: expected [B x " + std::to_string(f) + "], got " +
                         shape_str(h.shape()));
  if (mode == Mode::train && h.value().rows() < 2)
    throw ContractError("project: training mode needs a batch of at least 2");
  Var a = ag::matmul(h, m.p1_w);
  a = ag::gelu(bn_forward(a, m.bn1_gamma, m.bn1_beta, m.params->bn1, mode,
                          running ? &running->bn1 : nullptr));
  a = ag::matmul(a, m.p2_w);
  a = ag::gelu(bn_forward(a, m.bn2_gamma, m.bn2_beta, m.params->bn2, mode,
                          running ? &running->bn2 : nullptr));
  return linear(a, m.p3_w, &m.p3_b);
}

std::vector<Tensor> collect_grads(const Tape &tape, const BoundModel &m) {
  std::vector<Tensor> out;
  out.reserve(m.leaves.size());
  for (auto v : m.leaves)
    out.push_back(tape.grad(v));
  return out;
}

Tensor encode_eval(const ModelParams &params, const Tensor &x) {
  Tape tape;
  auto m = bind(tape, params, false);
  return encode(m, tape.constant(x)).value();
}

Tensor logits_eval(const ModelParams &params, const Tensor &x) {
  Tape tape;
  auto m = bind(tape, params, false);
  return classify(m, encode(m, tape.constant(x))).value();
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr char kMagic[4] = {'J', 'M', 'C', 'K'};

template <typename T> void put(std::vector<std::uint8_t> &out, T v) {
  const auto *p = reinterpret_cast<const std::uint8_t *>(&v);
  out.insert(out.end(), p, p + sizeof(T));
}

template <typename T>
T get(std::span<const std::uint8_t> bytes, std::size_t &pos, const char *what) {
  if (bytes.size() - pos < sizeof(T))
    throw FormatError(pos, std::string("truncated checkpoint reading ") + what);
  T v;
  std::memcpy(&v, bytes.data() + pos, sizeof(T));
  pos += sizeof(T);
  return v;
}

} // namespace

std::vector<std::uint8_t> encode_checkpoint(const ModelParams &params) {
  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  put<std::uint32_t>(out, kCheckpointVersion);
  for (const auto &[name, t] : params.all_named()) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t->rank()));
    for (auto d : t->shape())
      put<std::uint64_t>(out, d);
    for (double v : t->values())
      put<double>(out, v);
  }
  return out;
}

ModelParams decode_checkpoint(std::span<const std::uint8_t> bytes) {
  std::size_t pos = 0;
  for (int i = 0; i < 4; ++i)
    if (get<char>(bytes, pos, "magic") != kMagic[i])
      throw FormatError(0, "bad magic, expected JMCK");
  const auto version_at = pos;
  if (auto v = get<std::uint32_t>(bytes, pos, "version"); v != kCheckpointVersion)
    throw FormatError(version_at, "unsupported checkpoint version " + std::to_string(v));

  std::map<std::string, Tensor> entries;
  std::vector<std::string> order;
  while (pos < bytes.size()) {
    const auto entry_at = pos;
    const auto len = get<std::uint32_t>(bytes, pos, "name length");
    if (bytes.size() - pos < len)
      throw FormatError(pos, "truncated checkpoint reading name");
    std::string name(reinterpret_cast<const char *>(bytes.data() + pos), len);
    pos += len;
    const auto rank = get<std::uint32_t>(bytes, pos, "rank");
    if (rank > 8)
      throw FormatError(pos - 4, "implausible rank " + std::to_string(rank));
    Shape shape(rank);
    std::uint64_t count = 1;
    for (auto &d : shape) {
      const auto at = pos;
      d = get<std::uint64_t>(bytes, pos, "shape");
      if (d == 0 || d > (bytes.size() - pos) / 8 + 1)
        throw FormatError(at, "bad dimension for " + name);
      count *= d;
    }
    if ((bytes.size() - pos) / 8 < count)
      throw FormatError(pos, "truncated payload for " + name);
    std::vector<double> values(count);
    std::memcpy(values.data(), bytes.data() + pos, count * 8);
    pos += count * 8;
    if (entries.count(name))
      throw FormatError(entry_at, "duplicate tensor " + name);
    order.push_back(name);
    entries.emplace(name, Tensor(std::move(shape), std::move(values)));
  }

  auto take = [&](const std::string &name) -> Tensor {
    auto it = entries.find(name);
    if (it == entries.end())
      throw FormatError(bytes.size(), "checkpoint lacks tensor " + name);
    Tensor t = std::move(it->second);
    entries.erase(it);
    return t;
  };
  auto take_bn = [&](const std::string &prefix) {
    BatchNormState bn;
    bn.gamma = take(prefix + ".gamma");
    bn.beta = take(prefix + ".beta");
    bn.running_mean = take(prefix + ".running_mean");
    bn.running_var = take(prefix + ".running_var");
    return bn;
  };

  ModelParams p;
  for (std::size_t i = 0; entries.count("encoder." + std::to_string(i) + ".weight"); ++i) {
    Linear l;
    l.weight = take("encoder." + std::to_string(i) + ".weight");
    l.bias = take("encoder." + std::to_string(i) + ".bias");
    p.encoder.push_back(std::move(l));
  }
  if (p.encoder.empty())
    throw FormatError(bytes.size(), "checkpoint has no encoder layers");
  p.classifier.weight = take("classifier.weight");
  p.classifier.bias = take("classifier.bias");
  p.proj1.weight = take("projector.0.weight");
  p.bn1 = take_bn("projector.bn0");
  p.proj2.weight = take("projector.1.weight");
  p.bn2 = take_bn("projector.bn1");
  p.proj3.weight = take("projector.2.weight");
  p.proj3.bias = take("projector.2.bias");
  if (!entries.empty())
    throw FormatError(bytes.size(), "unexpected tensor " + entries.begin()->first);

  // Shape consistency of the chain.
  std::size_t width = p.encoder.front().weight.rows();
  auto check = [&](const Linear &l, const std::string &name) {
    if (l.weight.rank() != 2 || l.weight.rows() != width ||
        (l.has_bias() && l.bias.size() != l.weight.cols()))
      throw FormatError(bytes.size(), "inconsistent shape for " + name);
  };
  for (std::size_t i = 0; i < p.encoder.size(); ++i) {
    check(p.encoder[i], "encoder." + std::to_string(i));
    width = p.encoder[i].weight.cols();
  }
  const std::size_t features = width;
  check(p.classifier, "classifier");
  check(p.proj1, "projector.0");
  width = p.proj1.weight.cols();
  check(p.proj2, "projector.1");
  width = p.proj2.weight.cols();
  check(p.proj3, "projector.2");
  if (p.bn1.gamma.size() != p.proj1.weight.cols() ||
      p.bn2.gamma.size() != p.proj2.weight.cols() || features == 0)
    throw FormatError(bytes.size(), "inconsistent batch-norm shapes");
  return p;
}

void save_checkpoint(const std::filesystem::path &path, const ModelParams &params) {
  write_file_bytes(path, encode_checkpoint(params));
}

ModelParams load_checkpoint(const std::filesystem::path &path) {
  return decode_checkpoint(read_file_bytes(path));
}

} // namespace jepamatch
