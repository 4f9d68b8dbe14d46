#include "jepamatch/verify/oracles.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

namespace jepamatch::oracle {

Tensor matmul(const Tensor &a, const Tensor &b) {
  if (a.cols() != b.rows())
    throw std::invalid_argument("oracle::matmul shape mismatch");
  Tensor c({a.rows(), b.cols()});
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k)
        s += a.at(i, k) * b.at(k, j);
      c.at(i, j) = s;
    }
  return c;
}

double cross_entropy(const Tensor &logits, std::span<const int> labels,
                     std::span<const double> weights, double denominator) {
  double total = 0.0;
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    double mx = logits.at(i, 0);
    for (std::size_t j = 1; j < logits.cols(); ++j)
      mx = std::max(mx, logits.at(i, j));
    double z = 0.0;
    for (std::size_t j = 0; j < logits.cols(); ++j)
      z += std::exp(logits.at(i, j) - mx);
    const double p = std::exp(logits.at(i, static_cast<std::size_t>(labels[i])) - mx) / z;
    total += weights[i] * -std::log(p);
  }
  return total / denominator;
}

double cross_entropy(const Tensor &logits, std::span<const int> labels) {
  std::vector<double> ones(labels.size(), 1.0);
  return cross_entropy(logits, labels, ones, static_cast<double>(labels.size()));
}

double sigreg(const Tensor &z, std::span<const double> mu, double sigma,
              const Tensor &slices, std::size_t num_knots, double t_max) {
  const std::size_t n = z.rows(), d = z.cols(), m_count = slices.cols();
  double total = 0.0;
  for (std::size_t m = 0; m < m_count; ++m) {
    double mu_proj = 0.0;
    for (std::size_t i = 0; i < d; ++i)
      mu_proj += mu[i] * slices.at(i, m);
    for (std::size_t k = 0; k < num_knots; ++k) {
      const double t =
          -t_max + 2.0 * t_max * static_cast<double>(k) / static_cast<double>(num_knots - 1);
      double re = 0.0, im = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        double x = 0.0;
        for (std::size_t i = 0; i < d; ++i)
          x += z.at(j, i) * slices.at(i, m);
        re += std::cos(t * x);
        im += std::sin(t * x);
      }
      re /= static_cast<double>(n);
      im /= static_cast<double>(n);
      const double env = std::exp(-sigma * sigma * t * t / 2.0);
      const double dr = re - std::cos(t * mu_proj) * env;
      const double di = im - std::sin(t * mu_proj) * env;
      total += dr * dr + di * di;
    }
  }
  return total / static_cast<double>(m_count * num_knots);
}

double sigreg_zero_batch(std::size_t num_knots, double t_max) {
  double s = 0.0;
  for (std::size_t k = 0; k < num_knots; ++k) {
    const double t =
        -t_max + 2.0 * t_max * static_cast<double>(k) / static_cast<double>(num_knots - 1);
    const double v = 1.0 - std::exp(-t * t / 2.0);
    s += v * v;
  }
  return s / static_cast<double>(num_knots);
}

double gelu(double x) {
  const double c = std::sqrt(2.0 / std::acos(-1.0));
  return 0.5 * x * (1.0 + std::tanh(c * (x + 0.044715 * x * x * x)));
}

namespace {

Tensor affine(const Tensor &x, const Linear &layer) {
  Tensor y = matmul(x, layer.weight);
  if (layer.has_bias())
    for (std::size_t i = 0; i < y.rows(); ++i)
      for (std::size_t j = 0; j < y.cols(); ++j)
        y.at(i, j) += layer.bias[j];
  return y;
}

Tensor bn_gelu_eval(const Tensor &x, const BatchNormState &bn) {
  Tensor y = x;
  for (std::size_t i = 0; i < y.rows(); ++i)
    for (std::size_t j = 0; j < y.cols(); ++j) {
      const double xhat = (x.at(i, j) - bn.running_mean[j]) /
                          std::sqrt(bn.running_var[j] + BatchNormState::kEps);
      y.at(i, j) = gelu(bn.gamma[j] * xhat + bn.beta[j]);
    }
  return y;
}

} // namespace

Tensor encoder(const ModelParams &p, const Tensor &x) {
  Tensor h = x;
  for (const auto &layer : p.encoder) {
    h = affine(h, layer);
    for (auto &v : h.values())
      v = v > 0.0 ? v : 0.0;
  }
  return h;
}

Tensor logits(const ModelParams &p, const Tensor &x) {
  return affine(encoder(p, x), p.classifier);
}

Tensor project_eval(const ModelParams &p, const Tensor &h) {
  Tensor a = bn_gelu_eval(affine(h, p.proj1), p.bn1);
  a = bn_gelu_eval(affine(a, p.proj2), p.bn2);
  return affine(a, p.proj3);
}

std::vector<std::pair<int, std::vector<double>>>
class_means(const Tensor &z, std::span<const int> labels,
            std::span<const std::uint8_t> mask) {
  std::map<int, std::pair<std::vector<double>, double>> acc;
  for (std::size_t i = 0; i < z.rows(); ++i) {
    if (!mask[i])
      continue;
    auto &[sum, count] = acc[labels[i]];
    sum.resize(z.cols(), 0.0);
    for (std::size_t j = 0; j < z.cols(); ++j)
      sum[j] += z.at(i, j);
    count += 1.0;
  }
  std::vector<std::pair<int, std::vector<double>>> out;
  for (auto &[c, sc] : acc) {
    for (auto &v : sc.first)
      v /= sc.second;
    out.emplace_back(c, sc.first);
  }
  return out;
}

double repulsion(const std::vector<std::vector<double>> &means) {
  const std::size_t c = means.size();
  if (c < 2)
    return 0.0;
  auto norm = [](const std::vector<double> &v) {
    double s = 0.0;
    for (double x : v)
      s += x * x;
    return std::max(std::sqrt(s), 1e-12);
  };
  double total = 0.0;
  for (std::size_t i = 0; i < c; ++i)
    for (std::size_t j = 0; j < c; ++j) {
      if (i == j)
        continue;
      double dot = 0.0;
      for (std::size_t k = 0; k < means[i].size(); ++k)
        dot += means[i][k] * means[j][k];
      const double s = dot / (norm(means[i]) * norm(means[j]));
      if (s > 0.0)
        total += s * s;
    }
  return total / static_cast<double>(c * (c - 1));
}

Tensor central_difference(const std::function<double()> &f, Tensor &x, double h) {
  Tensor g(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + h;
    const double up = f();
    x[i] = keep - h;
    const double down = f();
    x[i] = keep;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

double relative_error(const Tensor &a, const Tensor &b, double floor) {
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nb), floor});
}

} // namespace jepamatch::oracle
