#pragma once

// Reference implementations written directly from the definitions, with no
// shared code paths into the library's fused kernels. Slow on purpose.

#include <functional>
#include <span>
#include <vector>

#include "jepamatch/networks.hpp"
#include "jepamatch/tensor.hpp"

namespace jepamatch::oracle {

Tensor matmul(const Tensor &a, const Tensor &b);

// (1/denominator) sum_i w_i * -log softmax(logits_i)[label_i].
double cross_entropy(const Tensor &logits, std::span<const int> labels,
                     std::span<const double> weights, double denominator);
double cross_entropy(const Tensor &logits, std::span<const int> labels);

// Per slice, per knot, per sample; knots from linspace(-t_max, t_max, K).
double sigreg(const Tensor &z, std::span<const double> mu, double sigma,
              const Tensor &slices, std::size_t num_knots, double t_max);

// Closed form for an all-zero batch against N(0, I):
//   mean_k (1 - exp(-t_k^2 / 2))^2
double sigreg_zero_batch(std::size_t num_knots, double t_max);

double gelu(double x);
// Layer by layer with explicit loops.
Tensor encoder(const ModelParams &p, const Tensor &x);
Tensor logits(const ModelParams &p, const Tensor &x);
// Eval mode: running statistics.
Tensor project_eval(const ModelParams &p, const Tensor &h);

// Means of the rows of z per class among rows with mask != 0, as a map
// ordered by class id.
std::vector<std::pair<int, std::vector<double>>>
class_means(const Tensor &z, std::span<const int> labels,
            std::span<const std::uint8_t> mask);
double repulsion(const std::vector<std::vector<double>> &means);

// Central differences of f with respect to every entry of x, restoring x.
Tensor central_difference(const std::function<double()> &f, Tensor &x, double h);

// ||a - b||_2 / max(||a||_2, ||b||_2, floor).
double relative_error(const Tensor &a, const Tensor &b, double floor = 1e-4);

} // namespace jepamatch::oracle
