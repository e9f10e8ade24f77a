#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "tsdf/error.hpp"

namespace tsdf::nn {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

// Dense row-major array. Rank >= 1; every dimension is positive.
template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T{0}) : shape_(std::move(shape)) {
    check_shape();
    data_.assign(shape_size(shape_), fill);
  }

  Tensor(Shape shape, std::vector<T> values) : shape_(std::move(shape)), data_(std::move(values)) {
    check_shape();
    if (data_.size() != shape_size(shape_)) {
      throw DimensionError("tensor: shape " + shape_string(shape_) + " needs " +
                           std::to_string(shape_size(shape_)) + " values, got " +
                           std::to_string(data_.size()));
    }
  }

  static Tensor identity(std::size_t n) {
    Tensor out({n, n});
    for (std::size_t i = 0; i < n; ++i) out(i, i) = T{1};
    return out;
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  // Leading dimensions flattened; the last axis is the row.
  std::size_t rows() const noexcept { return shape_.empty() ? 0 : data_.size() / shape_.back(); }
  std::size_t cols() const noexcept { return shape_.empty() ? 0 : shape_.back(); }

  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }
  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }
  std::span<T> row(std::size_t r) { return {data_.data() + r * cols(), cols()}; }
  std::span<const T> row(std::size_t r) const { return {data_.data() + r * cols(), cols()}; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }
  T& operator()(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  const T& operator()(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  Tensor reshaped(Shape shape) const& {
    Tensor out(*this);
    out.reshape(std::move(shape));
    return out;
  }
  Tensor reshaped(Shape shape) && {
    reshape(std::move(shape));
    return std::move(*this);
  }
  void reshape(Shape shape) {
    if (shape_size(shape) != data_.size()) {
      throw DimensionError("reshape: cannot view " + shape_string(shape_) + " as " +
                           shape_string(shape));
    }
    shape_ = std::move(shape);
    check_shape();
  }

  void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
  }

  template <class U>
  Tensor<U> cast() const {
    return Tensor<U>(shape_, std::vector<U>(data_.begin(), data_.end()));
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  void check_shape() const {
    if (shape_.empty()) throw DimensionError("tensor: rank must be at least 1");
    for (std::size_t d : shape_) {
      if (d == 0) throw DimensionError("tensor: zero-sized dimension in " + shape_string(shape_));
    }
  }

  Shape shape_;
  std::vector<T> data_;
};

template <class T>
T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("max_abs_diff: " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
  T worst{0};
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

}  // namespace tsdf::nn
