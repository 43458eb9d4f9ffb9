#include "seizurecast/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <stdexcept>

namespace seizurecast {

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += " x ";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), values_(shape_size(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> values) : shape_(std::move(shape)), values_(std::move(values)) {
  if (values_.size() != shape_size(shape_)) {
    throw std::invalid_argument("tensor value count " + std::to_string(values_.size()) +
                                " does not match shape " + shape_string(shape_));
  }
}

std::size_t Tensor::slice_size() const { return shape_.empty() ? 0 : values_.size() / shape_[0]; }

std::span<double> Tensor::slice(std::size_t i) {
  const std::size_t n = slice_size();
  return std::span<double>(values_).subspan(i * n, n);
}

std::span<const double> Tensor::slice(std::size_t i) const {
  const std::size_t n = slice_size();
  return std::span<const double>(values_).subspan(i * n, n);
}

void Tensor::reshape(Shape shape) {
  if (shape_size(shape) != values_.size()) {
    throw std::invalid_argument("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
  }
  shape_ = std::move(shape);
}

void Tensor::fill(double v) { std::fill(values_.begin(), values_.end(), v); }

bool Tensor::all_finite() const {
  return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

Tensor stack(std::span<const Tensor* const> items) {
  if (items.empty()) throw std::invalid_argument("stack of zero tensors");
  const Shape& inner = items.front()->shape();
  Shape shape{items.size()};
  shape.insert(shape.end(), inner.begin(), inner.end());
  Tensor out(shape);
  const std::size_t n = items.front()->size();
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (items[i]->shape() != inner) {
      throw std::invalid_argument("stack: shape mismatch " + shape_string(items[i]->shape()) + " vs " +
                                  shape_string(inner));
    }
    std::copy(items[i]->data(), items[i]->data() + n, out.data() + i * n);
  }
  return out;
}

}  // namespace seizurecast
