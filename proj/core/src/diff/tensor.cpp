#include "realcf/diff/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

#include "realcf/error.hpp"

namespace realcf::diff {

namespace {

std::size_t product(const std::vector<std::size_t>& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

}  // namespace

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> values)
    : shape_(std::move(shape)), values_(std::move(values)) {
  if (product(shape_) != values_.size()) {
    throw ConfigError("tensor shape " + shape_string() + " does not match " +
                      std::to_string(values_.size()) + " values");
  }
  cols_ = shape_.empty() ? 1 : shape_.back();
}

Tensor Tensor::zeros(std::size_t rows, std::size_t cols) { return filled(rows, cols, 0.0); }

Tensor Tensor::filled(std::size_t rows, std::size_t cols, double value) {
  return Tensor({rows, cols}, std::vector<double>(rows * cols, value));
}

Tensor Tensor::scalar(double value) { return Tensor({1, 1}, {value}); }

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::initializer_list<double> values) {
  return Tensor({rows, cols}, std::vector<double>(values));
}

Tensor Tensor::row(std::span<const double> values) {
  return Tensor({1, values.size()}, std::vector<double>(values.begin(), values.end()));
}

Tensor Tensor::column(std::span<const double> values) {
  return Tensor({values.size(), 1}, std::vector<double>(values.begin(), values.end()));
}

std::size_t Tensor::rows() const {
  if (shape_.size() > 2) throw ConfigError("rows() on tensor of rank " + std::to_string(rank()));
  return shape_.size() == 2 ? shape_[0] : 1;
}

std::size_t Tensor::cols() const {
  if (shape_.size() > 2) throw ConfigError("cols() on tensor of rank " + std::to_string(rank()));
  return shape_.empty() ? 1 : shape_.back();
}

void Tensor::resize(std::size_t rows, std::size_t cols) {
  if (shape_.size() != 2 || shape_[0] != rows || shape_[1] != cols) {
    shape_ = {rows, cols};
  }
  values_.resize(rows * cols);
  cols_ = cols;
}

void Tensor::fill(double value) { std::fill(values_.begin(), values_.end(), value); }

double Tensor::item() const {
  if (values_.size() != 1) {
    throw ConfigError("item() on tensor of shape " + shape_string());
  }
  return values_[0];
}

bool Tensor::all_finite() const {
  return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

std::string Tensor::shape_string() const {
  std::string out = "[";
  for (std::size_t i = 0; i < shape_.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(shape_[i]);
  }
  return out + "]";
}

}  // namespace realcf::diff
