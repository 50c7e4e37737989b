#include "unisa/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "unisa/error.hpp"

namespace unisa {

std::string shape_str(const std::vector<std::size_t>& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(std::vector<std::size_t> shape, double fill) : shape_(std::move(shape)) {
  validate();
  std::size_t n = std::accumulate(shape_.begin(), shape_.end(), std::size_t{1}, std::multiplies<>());
  data_.assign(n, fill);
}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  validate();
  std::size_t n = std::accumulate(shape_.begin(), shape_.end(), std::size_t{1}, std::multiplies<>());
  if (n != data_.size()) {
    throw DimensionError("tensor shape " + unisa::shape_str(shape_) + " needs " + std::to_string(n) +
                         " values, got " + std::to_string(data_.size()));
  }
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::initializer_list<double> values) {
  return Tensor({rows, cols}, std::vector<double>(values));
}

void Tensor::validate() {
  if (shape_.empty()) throw DimensionError("tensor shape must have at least one extent");
  for (auto e : shape_) {
    if (e == 0) throw DimensionError("tensor extents must be positive, got " + unisa::shape_str(shape_));
  }
  cols_ = shape_.back();
}

std::size_t Tensor::rows() const { return cols_ == 0 ? 0 : data_.size() / cols_; }
std::size_t Tensor::cols() const { return cols_; }

double Tensor::item() const {
  if (data_.size() != 1) throw ContractError("item() on tensor of shape " + shape_str());
  return data_[0];
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

std::string Tensor::shape_str() const { return unisa::shape_str(shape_); }

}  // namespace unisa
