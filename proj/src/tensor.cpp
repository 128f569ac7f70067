#include "delib/tensor.hpp"

#include <algorithm>
#include <cmath>

namespace delib {

namespace {

void check_dims(int rows, int cols) {
  if (rows <= 0 || cols <= 0) {
    throw ContractViolation("tensor dimensions must be positive, got [" + std::to_string(rows) +
                            "x" + std::to_string(cols) + "]");
  }
}

}  // namespace

Tensor::Tensor(int rows, int cols, double fill) : rows_(rows), cols_(cols) {
  check_dims(rows, cols);
  data_.assign(static_cast<std::size_t>(rows) * cols, fill);
}

Tensor::Tensor(int rows, int cols, std::vector<double> values)
    : rows_(rows), cols_(cols), data_(std::move(values)) {
  check_dims(rows, cols);
  if (data_.size() != static_cast<std::size_t>(rows) * cols) {
    throw ContractViolation("tensor " + shape_string() + " needs " +
                            std::to_string(static_cast<std::size_t>(rows) * cols) +
                            " values, got " + std::to_string(data_.size()));
  }
}

Tensor Tensor::scalar(double value) { return Tensor(1, 1, std::vector<double>{value}); }

Tensor Tensor::row(std::vector<double> values) {
  const int n = static_cast<int>(values.size());
  return Tensor(1, n, std::move(values));
}

Tensor Tensor::identity(int n) {
  Tensor t(n, n);
  for (int i = 0; i < n; ++i) t(i, i) = 1.0;
  return t;
}

std::string Tensor::shape_string() const {
  return "[" + std::to_string(rows_) + "x" + std::to_string(cols_) + "]";
}

double Tensor::item() const {
  if (rows_ != 1 || cols_ != 1) {
    throw ContractViolation("item() needs a [1x1] tensor, got " + shape_string());
  }
  return data_[0];
}

bool Tensor::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

void Tensor::fill(double value) noexcept { std::fill(data_.begin(), data_.end(), value); }

}  // namespace delib
