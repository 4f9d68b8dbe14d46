#include "jepamatch/autograd.hpp"

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
using MutMap = Eigen::Map<RowMajor>;

ConstMap as_matrix(const Tensor &t) {
  return ConstMap(t.data(), static_cast<Eigen::Index>(t.rows()),
                  static_cast<Eigen::Index>(t.cols()));
}
MutMap as_matrix(Tensor &t) {
  return MutMap(t.data(), static_cast<Eigen::Index>(t.rows()),
                static_cast<Eigen::Index>(t.cols()));
}

void require_matrix(const Tensor &t, const char *op) {
  if (t.rank() != 2)
    throw DimensionError(std::string(op) + " expects a matrix, got " +
                         shape_str(t.shape()));
}

void require_same_shape(const Tensor &a, const Tensor &b, const char *op) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shapes " + shape_str(a.shape()) +
                         " and " + shape_str(b.shape()) + " differ");
}

Tape &tape_of(Var a) {
  if (!a.tape)
    throw ContractError("variable is not attached to a tape");
  return *a.tape;
}

Tape &tape_of(Var a, Var b) {
  if (a.tape != b.tape)
    throw ContractError("variables belong to different tapes");
  return tape_of(a);
}

constexpr double kGeluScale = 0.7978845608028654; // sqrt(2/pi)
constexpr double kGeluCubic = 0.044715;

} // namespace

const Tensor &Var::value() const { return tape->value(id); }

// ---------------------------------------------------------------------------
// Tape

Var Tape::leaf(Tensor value, bool requires_grad) {
  nodes_.push_back(Node{std::move(value), {}, nullptr, requires_grad, {}});
  return Var{this, nodes_.size() - 1};
}

Var Tape::record(Tensor value, std::vector<std::size_t> inputs, BackwardFn fn) {
  bool needs = false;
  for (auto id : inputs)
    needs = needs || nodes_.at(id).requires_grad;
  if (!needs)
    fn = nullptr;
  nodes_.push_back(Node{std::move(value), std::move(inputs), std::move(fn),
                        needs, {}});
  return Var{this, nodes_.size() - 1};
}

Tensor Tape::grad(Var v) const {
  const auto &node = nodes_.at(v.id);
  if (node.grad)
    return *node.grad;
  return Tensor::zeros(node.value.shape());
}

Tensor &Tape::grad_buffer(std::size_t id) {
  auto &node = nodes_[id];
  if (!node.grad)
    node.grad = Tensor::zeros(node.value.shape());
  return *node.grad;
}

void Tape::accumulate(std::size_t id, const Tensor &g) {
  if (!nodes_[id].requires_grad)
    return;
  auto &buf = grad_buffer(id);
  if (buf.size() != g.size())
    throw DimensionError("gradient of shape " + shape_str(g.shape()) +
                         " for node of shape " + shape_str(buf.shape()));
  auto dst = buf.values();
  auto src = g.values();
  for (std::size_t i = 0; i < dst.size(); ++i)
    dst[i] += src[i];
}

void Tape::backward(Var loss) {
  if (loss.tape != this)
    throw ContractError("loss belongs to another tape");
  if (nodes_.at(loss.id).value.size() != 1)
    throw ContractError("backward() needs a scalar loss, got shape " +
                        shape_str(nodes_[loss.id].value.shape()));
  for (auto &n : nodes_)
    n.grad.reset();
  if (!nodes_[loss.id].requires_grad)
    return;
  grad_buffer(loss.id)[0] = 1.0;
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    auto &node = nodes_[i];
    if (!node.backward || !node.grad)
      continue;
    // Copy: the callback may grow other accumulators but never this one.
    const Tensor g = *node.grad;
    node.backward(*this, g);
  }
}

bool Tape::depends_on(Var node, Var ancestor) const {
  if (ancestor.id > node.id)
    return false;
  std::vector<char> seen(node.id + 1, 0);
  std::vector<std::size_t> stack{node.id};
  while (!stack.empty()) {
    auto id = stack.back();
    stack.pop_back();
    if (id == ancestor.id)
      return true;
    if (seen[id])
      continue;
    seen[id] = 1;
    for (auto in : nodes_[id].inputs)
      if (in >= ancestor.id)
        stack.push_back(in);
  }
  return false;
}

// ---------------------------------------------------------------------------
// Numeric helpers

double gelu_value(double x) {
  return 0.5 * x * (1.0 + std::tanh(kGeluScale * (x + kGeluCubic * x * x * x)));
}

double gelu_derivative(double x) {
  const double th = std::tanh(kGeluScale * (x + kGeluCubic * x * x * x));
  const double du = kGeluScale * (1.0 + 3.0 * kGeluCubic * x * x);
  return 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * du;
}

Tensor softmax_rows(const Tensor &logits) {
  Tensor out(logits.shape());
  const auto n = logits.rows(), c = logits.cols();
  for (std::size_t i = 0; i < n; ++i) {
    auto in = logits.row(i);
    auto o = out.row(i);
    const double m = *std::max_element(in.begin(), in.end());
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      o[j] = std::exp(in[j] - m);
      z += o[j];
    }
    for (std::size_t j = 0; j < c; ++j)
      o[j] /= z;
  }
  return out;
}

Tensor one_hot(std::span<const int> labels, std::size_t num_classes) {
  Tensor out({labels.size(), num_classes});
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= num_classes)
      throw ContractError("label " + std::to_string(labels[i]) +
                          " outside [0, " + std::to_string(num_classes) + ")");
    out.at(i, static_cast<std::size_t>(labels[i])) = 1.0;
  }
  return out;
}

namespace ag {

// ---------------------------------------------------------------------------
// Linear algebra

Var matmul(Var a, Var b) {
  Tape &tape = tape_of(a, b);
  const Tensor &A = a.value(), &B = b.value();
  require_matrix(A, "matmul");
  require_matrix(B, "matmul");
  if (A.cols() != B.rows())
    throw DimensionError("matmul: inner dimensions of " + shape_str(A.shape()) +
                         " and " + shape_str(B.shape()) + " disagree");
  Tensor C({A.rows(), B.cols()});
  as_matrix(C).noalias() = as_matrix(A) * as_matrix(B);
  return tape.record(std::move(C), {a.id, b.id},
                     [ai = a.id, bi = b.id](Tape &t, const Tensor &g) {
                       const Tensor &A = t.value(ai), &B = t.value(bi);
                       if (t.requires_grad(ai))
                         as_matrix(t.grad_buffer(ai)).noalias() +=
                             as_matrix(g) * as_matrix(B).transpose();
                       if (t.requires_grad(bi))
                         as_matrix(t.grad_buffer(bi)).noalias() +=
                             as_matrix(A).transpose() * as_matrix(g);
                     });
}

Var transpose(Var a) {
  Tape &tape = tape_of(a);
  const Tensor &A = a.value();
  require_matrix(A, "transpose");
  Tensor T({A.cols(), A.rows()});
  as_matrix(T) = as_matrix(A).transpose();
  return tape.record(std::move(T), {a.id}, [ai = a.id](Tape &t, const Tensor &g) {
    as_matrix(t.grad_buffer(ai)) += as_matrix(g).transpose();
  });
}

// ---------------------------------------------------------------------------
// Elementwise binary and reductions

Var add(Var a, Var b) {
  Tape &tape = tape_of(a, b);
  require_same_shape(a.value(), b.value(), "add");
  Tensor out = a.value();
  auto o = out.values();
  auto bv = b.value().values();
  for (std::size_t i = 0; i < o.size(); ++i)
    o[i] += bv[i];
  return tape.record(std::move(out), {a.id, b.id},
                     [ai = a.id, bi = b.id](Tape &t, const Tensor &g) {
                       t.accumulate(ai, g);
                       t.accumulate(bi, g);
                     });
}

Var sub(Var a, Var b) {
  Tape &tape = tape_of(a, b);
  require_same_shape(a.value(), b.value(), "sub");
  Tensor out = a.value();
  auto o = out.values();
  auto bv = b.value().values();
  for (std::size_t i = 0; i < o.size(); ++i)
    o[i] -= bv[i];
  return tape.record(std::move(out), {a.id, b.id},
                     [ai = a.id, bi = b.id](Tape &t, const Tensor &g) {
                       t.accumulate(ai, g);
                       if (t.requires_grad(bi)) {
                         auto dst = t.grad_buffer(bi).values();
                         auto src = g.values();
                         for (std::size_t i = 0; i < dst.size(); ++i)
                           dst[i] -= src[i];
                       }
                     });
}

Var mul(Var a, Var b) {
  Tape &tape = tape_of(a, b);
  require_same_shape(a.value(), b.value(), "mul");
  Tensor out = a.value();
  auto o = out.values();
  auto bv = b.value().values();
  for (std::size_t i = 0; i < o.size(); ++i)
    o[i] *= bv[i];
  return tape.record(std::move(out), {a.id, b.id},
                     [ai = a.id, bi = b.id](Tape &t, const Tensor &g) {
                       auto gv = g.values();
                       if (t.requires_grad(ai)) {
                         auto bv = t.value(bi).values();
                         auto dst = t.grad_buffer(ai).values();
                         for (std::size_t i = 0; i < dst.size(); ++i)
                           dst[i] += gv[i] * bv[i];
                       }
                       if (t.requires_grad(bi)) {
                         auto av = t.value(ai).values();
                         auto dst = t.grad_buffer(bi).values();
                         for (std::size_t i = 0; i < dst.size(); ++i)
                           dst[i] += gv[i] * av[i];
                       }
                     });
}

Var scale(Var a, double c) {
  Tape &tape = tape_of(a);
  Tensor out = a.value();
  for (auto &v : out.values())
    v *= c;
  return tape.record(std::move(out), {a.id}, [ai = a.id, c](Tape &t, const Tensor &g) {
    auto dst = t.grad_buffer(ai).values();
    auto src = g.values();
    for (std::size_t i = 0; i < dst.size(); ++i)
      dst[i] += c * src[i];
  });
}

Var add_row(Var a, Var bias) {
  Tape &tape = tape_of(a, bias);
  const Tensor &A = a.value(), &b = bias.value();
  require_matrix(A, "add_row");
  if (b.size() != A.cols())
    throw DimensionError("add_row: bias " + shape_str(b.shape()) +
                         " does not match columns of " + shape_str(A.shape()));
  Tensor out = A;
  const auto n = A.rows(), c = A.cols();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < c; ++j)
      out.at(i, j) += b[j];
  return tape.record(std::move(out), {a.id, bias.id},
                     [ai = a.id, bi = bias.id](Tape &t, const Tensor &g) {
                       t.accumulate(ai, g);
                       if (t.requires_grad(bi)) {
                         auto &db = t.grad_buffer(bi);
                         const auto n = g.rows(), c = g.cols();
                         for (std::size_t i = 0; i < n; ++i)
                           for (std::size_t j = 0; j < c; ++j)
                             db[j] += g.at(i, j);
                       }
                     });
}

Var sum(Var a) {
  Tape &tape = tape_of(a);
  double s = 0.0;
  for (double v : a.value().values())
    s += v;
  return tape.record(Tensor::scalar(s), {a.id}, [ai = a.id](Tape &t, const Tensor &g) {
    const double gs = g[0];
    for (auto &v : t.grad_buffer(ai).values())
      v += gs;
  });
}

Var mean(Var a) { return scale(sum(a), 1.0 / static_cast<double>(a.value().size())); }

Var square(Var a) { return mul(a, a); }

Var elementwise(Unary op, Var x) {
  Tape &tape = tape_of(x);
  Tensor out = x.value();
  auto o = out.values();
  for (std::size_t i = 0; i < o.size(); ++i) {
    const double v = o[i];
    switch (op) {
    case Unary::gelu:
      o[i] = gelu_value(v);
      break;
    case Unary::relu:
      o[i] = v > 0.0 ? v : 0.0;
      break;
    case Unary::exp:
      o[i] = std::exp(v);
      break;
    case Unary::cos:
      o[i] = std::cos(v);
      break;
    case Unary::sin:
      o[i] = std::sin(v);
      break;
    case Unary::log:
      if (!(v > 0.0))
        throw DomainError("log of non-positive value " + std::to_string(v) +
                          " at element " + std::to_string(i));
      o[i] = std::log(v);
      break;
    case Unary::sqrt:
      if (!(v > 0.0))
        throw DomainError("sqrt of non-positive value " + std::to_string(v) +
                          " at element " + std::to_string(i));
      o[i] = std::sqrt(v);
      break;
    }
  }
  return tape.record(std::move(out), {x.id},
                     [xi = x.id, op, yi = tape.size()](Tape &t, const Tensor &g) {
                       auto in = t.value(xi).values();
                       auto y = t.value(yi).values();
                       auto gv = g.values();
                       auto dst = t.grad_buffer(xi).values();
                       for (std::size_t i = 0; i < dst.size(); ++i) {
                         double d = 0.0;
                         switch (op) {
                         case Unary::gelu:
                           d = gelu_derivative(in[i]);
                           break;
                         case Unary::relu:
                           d = in[i] > 0.0 ? 1.0 : 0.0;
                           break;
                         case Unary::exp:
                           d = y[i];
                           break;
                         case Unary::cos:
                           d = -std::sin(in[i]);
                           break;
                         case Unary::sin:
                           d = std::cos(in[i]);
                           break;
                         case Unary::log:
                           d = 1.0 / in[i];
                           break;
                         case Unary::sqrt:
                           d = 0.5 / y[i];
                           break;
                         }
                         dst[i] += gv[i] * d;
                       }
                     });
}

Var detach(Var x) { return tape_of(x).constant(x.value()); }

// ---------------------------------------------------------------------------
// Cross-entropy

Var weighted_softmax_cross_entropy(Var logits, const Tensor &targets,
                                   std::span<const double> weights,
                                   double denominator) {
  Tape &tape = tape_of(logits);
  const Tensor &L = logits.value();
  require_matrix(L, "softmax_cross_entropy");
  if (targets.rank() != 2 || targets.rows() != L.rows() ||
      targets.cols() != L.cols())
    throw DimensionError("softmax_cross_entropy: logits " +
                         shape_str(L.shape()) + " vs targets " +
                         shape_str(targets.shape()));
  if (weights.size() != L.rows())
    throw DimensionError("softmax_cross_entropy: " +
                         std::to_string(weights.size()) + " weights for " +
                         std::to_string(L.rows()) + " rows");
  if (!(denominator > 0.0))
    throw ContractError("softmax_cross_entropy: denominator must be positive");
  const auto n = L.rows(), c = L.cols();
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      const double y = targets.at(i, j);
      if (y != 0.0 && y != 1.0)
        throw ContractError("target entries must be 0 or 1");
      s += y;
    }
    if (s != 1.0)
      throw ContractError("target row " + std::to_string(i) +
                          " does not sum to 1");
  }

  Tensor probs = softmax_rows(L);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (weights[i] == 0.0)
      continue;
    auto row = L.row(i);
    const double m = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (double v : row)
      z += std::exp(v - m);
    const double lse = m + std::log(z);
    double h = 0.0;
    for (std::size_t j = 0; j < c; ++j)
      h += targets.at(i, j) * (lse - row[j]);
    total += weights[i] * h;
  }

  std::vector<double> w(weights.begin(), weights.end());
  return tape.record(
      Tensor::scalar(total / denominator), {logits.id},
      [li = logits.id, probs = std::move(probs), targets, w = std::move(w),
       denominator](Tape &t, const Tensor &g) {
        auto &dl = t.grad_buffer(li);
        const double gs = g[0] / denominator;
        const auto n = probs.rows(), c = probs.cols();
        for (std::size_t i = 0; i < n; ++i) {
          if (w[i] == 0.0)
            continue;
          for (std::size_t j = 0; j < c; ++j)
            dl.at(i, j) += gs * w[i] * (probs.at(i, j) - targets.at(i, j));
        }
      });
}

Var softmax_cross_entropy(Var logits, const Tensor &targets) {
  const auto n = logits.value().rank() == 2 ? logits.value().rows() : 0;
  std::vector<double> ones(n, 1.0);
  return weighted_softmax_cross_entropy(logits, targets, ones,
                                        static_cast<double>(n));
}

// ---------------------------------------------------------------------------
// Row manipulation

Var slice_rows(Var x, std::size_t begin, std::size_t count) {
  Tape &tape = tape_of(x);
  const Tensor &X = x.value();
  require_matrix(X, "slice_rows");
  if (count == 0 || begin + count > X.rows())
    throw DimensionError("slice_rows: rows [" + std::to_string(begin) + ", " +
                         std::to_string(begin + count) + ") of " +
                         shape_str(X.shape()));
  const auto c = X.cols();
  Tensor out({count, c});
  std::copy_n(X.data() + begin * c, count * c, out.data());
  return tape.record(std::move(out), {x.id},
                     [xi = x.id, begin, c](Tape &t, const Tensor &g) {
                       double *dst = t.grad_buffer(xi).data() + begin * c;
                       auto src = g.values();
                       for (std::size_t i = 0; i < src.size(); ++i)
                         dst[i] += src[i];
                     });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty())
    throw ContractError("concat_rows of nothing");
  Tape &tape = tape_of(parts[0]);
  const auto c = parts[0].value().cols();
  std::size_t n = 0;
  std::vector<std::size_t> ids;
  std::vector<std::size_t> offsets;
  for (const auto &p : parts) {
    tape_of(parts[0], p);
    require_matrix(p.value(), "concat_rows");
    if (p.value().cols() != c)
      throw DimensionError("concat_rows: column count " +
                           std::to_string(p.value().cols()) + " vs " +
                           std::to_string(c));
    ids.push_back(p.id);
    offsets.push_back(n);
    n += p.value().rows();
  }
  Tensor out({n, c});
  for (std::size_t k = 0; k < parts.size(); ++k)
    std::copy_n(parts[k].value().data(), parts[k].value().size(),
                out.data() + offsets[k] * c);
  return tape.record(std::move(out), ids,
                     [ids, offsets, c](Tape &t, const Tensor &g) {
                       for (std::size_t k = 0; k < ids.size(); ++k) {
                         if (!t.requires_grad(ids[k]))
                           continue;
                         auto dst = t.grad_buffer(ids[k]).values();
                         const double *src = g.data() + offsets[k] * c;
                         for (std::size_t i = 0; i < dst.size(); ++i)
                           dst[i] += src[i];
                       }
                     });
}

Var gather_rows(Var x, std::span<const int> index) {
  Tape &tape = tape_of(x);
  const Tensor &X = x.value();
  require_matrix(X, "gather_rows");
  const auto c = X.cols();
  if (index.empty())
    throw ContractError("gather_rows with empty index");
  Tensor out({index.size(), c});
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] < 0)
      continue;
    if (static_cast<std::size_t>(index[i]) >= X.rows())
      throw DimensionError("gather_rows: index " + std::to_string(index[i]) +
                           " out of " + std::to_string(X.rows()) + " rows");
    std::copy_n(X.data() + static_cast<std::size_t>(index[i]) * c, c,
                out.data() + i * c);
  }
  std::vector<int> idx(index.begin(), index.end());
  return tape.record(std::move(out), {x.id},
                     [xi = x.id, idx = std::move(idx), c](Tape &t, const Tensor &g) {
                       auto &dx = t.grad_buffer(xi);
                       for (std::size_t i = 0; i < idx.size(); ++i) {
                         if (idx[i] < 0)
                           continue;
                         double *dst = dx.data() + static_cast<std::size_t>(idx[i]) * c;
                         const double *src = g.data() + i * c;
                         for (std::size_t j = 0; j < c; ++j)
                           dst[j] += src[j];
                       }
                     });
}

Var group_mean(Var x, std::span<const int> group, std::span<const int> groups) {
  Tape &tape = tape_of(x);
  const Tensor &X = x.value();
  require_matrix(X, "group_mean");
  if (group.size() != X.rows())
    throw DimensionError("group_mean: " + std::to_string(group.size()) +
                         " group ids for " + std::to_string(X.rows()) + " rows");
  if (groups.empty())
    throw ContractError("group_mean with no groups");
  const auto c = X.cols();
  // slot[i] = output row for input row i, or -1.
  std::vector<int> slot(X.rows(), -1);
  std::vector<double> counts(groups.size(), 0.0);
  for (std::size_t i = 0; i < X.rows(); ++i) {
    for (std::size_t g = 0; g < groups.size(); ++g)
      if (group[i] == groups[g]) {
        slot[i] = static_cast<int>(g);
        counts[g] += 1.0;
        break;
      }
  }
  for (std::size_t g = 0; g < groups.size(); ++g)
    if (counts[g] == 0.0)
      throw ContractError("group_mean: group " + std::to_string(groups[g]) +
                          " has no members");
  Tensor out({groups.size(), c});
  for (std::size_t i = 0; i < X.rows(); ++i) {
    if (slot[i] < 0)
      continue;
    auto dst = out.row(static_cast<std::size_t>(slot[i]));
    auto src = X.row(i);
    for (std::size_t j = 0; j < c; ++j)
      dst[j] += src[j];
  }
  for (std::size_t g = 0; g < groups.size(); ++g)
    for (auto &v : out.row(g))
      v /= counts[g];
  return tape.record(std::move(out), {x.id},
                     [xi = x.id, slot = std::move(slot), counts = std::move(counts),
                      c](Tape &t, const Tensor &gr) {
                       auto &dx = t.grad_buffer(xi);
                       for (std::size_t i = 0; i < slot.size(); ++i) {
                         if (slot[i] < 0)
                           continue;
                         const auto g = static_cast<std::size_t>(slot[i]);
                         for (std::size_t j = 0; j < c; ++j)
                           dx.at(i, j) += gr.at(g, j) / counts[g];
                       }
                     });
}

Var row_normalize(Var x, double eps) {
  Tape &tape = tape_of(x);
  const Tensor &X = x.value();
  require_matrix(X, "row_normalize");
  const auto n = X.rows(), c = X.cols();
  Tensor out = X;
  std::vector<double> norms(n);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (double v : X.row(i))
      s += v * v;
    norms[i] = std::max(std::sqrt(s), eps);
    for (auto &v : out.row(i))
      v /= norms[i];
  }
  return tape.record(std::move(out), {x.id},
                     [xi = x.id, yi = tape.size(), norms = std::move(norms), eps,
                      c](Tape &t, const Tensor &g) {
                       const Tensor &Y = t.value(yi);
                       auto &dx = t.grad_buffer(xi);
                       for (std::size_t i = 0; i < norms.size(); ++i) {
                         const double inv = 1.0 / norms[i];
                         if (norms[i] <= eps) {
                           // Clamped norm is constant.
                           for (std::size_t j = 0; j < c; ++j)
                             dx.at(i, j) += g.at(i, j) * inv;
                           continue;
                         }
                         double dot = 0.0;
                         for (std::size_t j = 0; j < c; ++j)
                           dot += g.at(i, j) * Y.at(i, j);
                         for (std::size_t j = 0; j < c; ++j)
                           dx.at(i, j) += inv * (g.at(i, j) - Y.at(i, j) * dot);
                       }
                     });
}

Var row_distance(Var a, Var b, Distance metric) {
  Tape &tape = tape_of(a, b);
  const Tensor &A = a.value(), &B = b.value();
  require_matrix(A, "row_distance");
  require_same_shape(A, B, "row_distance");
  constexpr double eps = 1e-12;
  const auto n = A.rows(), c = A.cols();
  Tensor out({n});
  std::vector<double> na(n), nb(n), cosv(n);
  for (std::size_t i = 0; i < n; ++i) {
    double dot = 0.0, sa = 0.0, sb = 0.0, sq = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      const double x = A.at(i, j), y = B.at(i, j);
      dot += x * y;
      sa += x * x;
      sb += y * y;
      sq += (x - y) * (x - y);
    }
    if (metric == Distance::squared_euclidean) {
      out[i] = sq;
    } else {
      na[i] = std::max(std::sqrt(sa), eps);
      nb[i] = std::max(std::sqrt(sb), eps);
      cosv[i] = dot / (na[i] * nb[i]);
      out[i] = 1.0 - cosv[i];
    }
  }
  return tape.record(
      std::move(out), {a.id, b.id},
      [ai = a.id, bi = b.id, metric, na = std::move(na), nb = std::move(nb),
       cosv = std::move(cosv), c](Tape &t, const Tensor &g) {
        const Tensor &A = t.value(ai), &B = t.value(bi);
        const bool ga = t.requires_grad(ai), gb = t.requires_grad(bi);
        Tensor *da = ga ? &t.grad_buffer(ai) : nullptr;
        Tensor *db = gb ? &t.grad_buffer(bi) : nullptr;
        for (std::size_t i = 0; i < A.rows(); ++i) {
          const double gi = g[i];
          for (std::size_t j = 0; j < c; ++j) {
            const double x = A.at(i, j), y = B.at(i, j);
            if (metric == Distance::squared_euclidean) {
              if (da)
                da->at(i, j) += gi * 2.0 * (x - y);
              if (db)
                db->at(i, j) -= gi * 2.0 * (x - y);
            } else {
              // d(1 - cos)/dx = -(y/(|x||y|) - cos * x/|x|^2); norms at eps
              // are treated as constants.
              const double inv = 1.0 / (na[i] * nb[i]);
              const double ka = na[i] > eps ? cosv[i] / (na[i] * na[i]) : 0.0;
              const double kb = nb[i] > eps ? cosv[i] / (nb[i] * nb[i]) : 0.0;
              if (da)
                da->at(i, j) -= gi * (y * inv - ka * x);
              if (db)
                db->at(i, j) -= gi * (x * inv - kb * y);
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Normalisation

Var batch_norm(Var x, Var gamma, Var beta, double eps, Tensor *batch_mean,
               Tensor *batch_var) {
  Tape &tape = tape_of(x, gamma);
  tape_of(x, beta);
  const Tensor &X = x.value();
  require_matrix(X, "batch_norm");
  const auto n = X.rows(), c = X.cols();
  if (gamma.value().size() != c || beta.value().size() != c)
    throw DimensionError("batch_norm: affine parameters do not match " +
                         shape_str(X.shape()));
  if (n < 2)
    throw ContractError("batch_norm in training mode needs at least 2 rows");
  Tensor mu({c}), var({c});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < c; ++j)
      mu[j] += X.at(i, j);
  for (std::size_t j = 0; j < c; ++j)
    mu[j] /= static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < c; ++j) {
      const double d = X.at(i, j) - mu[j];
      var[j] += d * d;
    }
  for (std::size_t j = 0; j < c; ++j)
    var[j] /= static_cast<double>(n);
  std::vector<double> inv_std(c);
  for (std::size_t j = 0; j < c; ++j)
    inv_std[j] = 1.0 / std::sqrt(var[j] + eps);
  Tensor xhat({n, c});
  Tensor out({n, c});
  const Tensor &G = gamma.value(), &Bt = beta.value();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < c; ++j) {
      xhat.at(i, j) = (X.at(i, j) - mu[j]) * inv_std[j];
      out.at(i, j) = G[j] * xhat.at(i, j) + Bt[j];
    }
  if (batch_mean)
    *batch_mean = mu;
  if (batch_var)
    *batch_var = var;
  return tape.record(
      std::move(out), {x.id, gamma.id, beta.id},
      [xi = x.id, gi = gamma.id, bi = beta.id, xhat = std::move(xhat),
       inv_std = std::move(inv_std)](Tape &t, const Tensor &g) {
        const auto n = xhat.rows(), c = xhat.cols();
        const Tensor &G = t.value(gi);
        std::vector<double> sum_g(c, 0.0), sum_gx(c, 0.0);
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < c; ++j) {
            sum_g[j] += g.at(i, j);
            sum_gx[j] += g.at(i, j) * xhat.at(i, j);
          }
        if (t.requires_grad(gi)) {
          auto &dg = t.grad_buffer(gi);
          for (std::size_t j = 0; j < c; ++j)
            dg[j] += sum_gx[j];
        }
        if (t.requires_grad(bi)) {
          auto &db = t.grad_buffer(bi);
          for (std::size_t j = 0; j < c; ++j)
            db[j] += sum_g[j];
        }
        if (t.requires_grad(xi)) {
          auto &dx = t.grad_buffer(xi);
          const double dn = static_cast<double>(n);
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < c; ++j)
              dx.at(i, j) += G[j] * inv_std[j] / dn *
                             (dn * g.at(i, j) - sum_g[j] - xhat.at(i, j) * sum_gx[j]);
        }
      });
}

Var column_affine(Var x, Var s, Var tv) {
  Tape &tape = tape_of(x, s);
  tape_of(x, tv);
  const Tensor &X = x.value();
  require_matrix(X, "column_affine");
  const auto n = X.rows(), c = X.cols();
  if (s.value().size() != c || tv.value().size() != c)
    throw DimensionError("column_affine: coefficients do not match " +
                         shape_str(X.shape()));
  Tensor out({n, c});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < c; ++j)
      out.at(i, j) = X.at(i, j) * s.value()[j] + tv.value()[j];
  return tape.record(std::move(out), {x.id, s.id, tv.id},
                     [xi = x.id, si = s.id, ti = tv.id](Tape &t, const Tensor &g) {
                       const Tensor &X = t.value(xi), &S = t.value(si);
                       const auto n = X.rows(), c = X.cols();
                       if (t.requires_grad(xi)) {
                         auto &dx = t.grad_buffer(xi);
                         for (std::size_t i = 0; i < n; ++i)
                           for (std::size_t j = 0; j < c; ++j)
                             dx.at(i, j) += g.at(i, j) * S[j];
                       }
                       if (t.requires_grad(si)) {
                         auto &ds = t.grad_buffer(si);
                         for (std::size_t i = 0; i < n; ++i)
                           for (std::size_t j = 0; j < c; ++j)
                             ds[j] += g.at(i, j) * X.at(i, j);
                       }
                       if (t.requires_grad(ti)) {
                         auto &dt = t.grad_buffer(ti);
                         for (std::size_t i = 0; i < n; ++i)
                           for (std::size_t j = 0; j < c; ++j)
                             dt[j] += g.at(i, j);
                       }
                     });
}

} // namespace ag
} // namespace jepamatch
