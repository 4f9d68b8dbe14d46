#include "jepamatch/tensor.hpp"

#include <cmath>

#include "jepamatch/errors.hpp"

namespace jepamatch {

std::string shape_str(const Shape &shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i)
      out += "x";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

std::size_t shape_numel(const Shape &shape) {
  std::size_t n = 1;
  for (auto d : shape) {
    if (d == 0)
      throw DimensionError("tensor dimensions must be positive, got " +
                           shape_str(shape));
    n *= d;
  }
  return n;
}

Tensor::Tensor(Shape shape, double fill)
    : shape_(std::move(shape)), values_(shape_numel(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : shape_(std::move(shape)), values_(std::move(values)) {
  if (shape_numel(shape_) != values_.size())
    throw DimensionError("shape " + shape_str(shape_) + " holds " +
                         std::to_string(shape_numel(shape_)) +
                         " values, got " + std::to_string(values_.size()));
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
  std::vector<double> values;
  std::size_t ncols = rows.size() ? rows.begin()->size() : 0;
  for (const auto &r : rows) {
    if (r.size() != ncols)
      throw DimensionError("ragged matrix literal");
    values.insert(values.end(), r.begin(), r.end());
  }
  return Tensor({rows.size(), ncols}, std::move(values));
}

Tensor Tensor::vector(std::initializer_list<double> values) {
  return Tensor({values.size()}, std::vector<double>(values));
}

std::size_t Tensor::rows() const {
  if (shape_.size() == 2)
    return shape_[0];
  if (shape_.size() <= 1)
    return 1;
  throw DimensionError("rows() on tensor of shape " + shape_str(shape_));
}

std::size_t Tensor::cols() const {
  if (shape_.size() == 2)
    return shape_[1];
  if (shape_.size() == 1)
    return shape_[0];
  if (shape_.empty())
    return 1;
  throw DimensionError("cols() on tensor of shape " + shape_str(shape_));
}

double Tensor::item() const {
  if (values_.size() != 1)
    throw ContractError("item() on tensor of shape " + shape_str(shape_));
  return values_[0];
}

bool Tensor::all_finite() const noexcept {
  for (double v : values_)
    if (!std::isfinite(v))
      return false;
  return true;
}

} // namespace jepamatch
