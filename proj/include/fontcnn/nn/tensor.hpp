#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "fontcnn/error.hpp"

namespace fontcnn::nn {

/// Dense row-major array. Activations use (batch, channels, height, width).
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape, T fill = T(0)) : shape_(std::move(shape)) {
    data_.assign(count(shape_), fill);
  }

  static std::size_t count(const std::vector<std::size_t>& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
  }

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return i < shape_.size() ? shape_[i] : 1; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  /// Reshapes (reallocating only if the element count changes). Contents are
  /// unspecified afterwards unless the count is unchanged.
  void resize(std::vector<std::size_t> shape) {
    const std::size_t n = count(shape);
    shape_ = std::move(shape);
    if (data_.size() != n) data_.assign(n, T(0));
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> span() { return data_; }
  std::span<const T> span() const { return data_; }
  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  /// Pointer to sample `n` of a batch tensor.
  T* sample(std::size_t n) { return data_.data() + n * (data_.size() / dim(0)); }
  const T* sample(std::size_t n) const { return data_.data() + n * (data_.size() / dim(0)); }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(shape_);
    std::transform(data_.begin(), data_.end(), out.data(), [](T v) { return static_cast<U>(v); });
    return out;
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  std::vector<std::size_t> shape_;
  std::vector<T> data_;
};

inline std::string shape_string(const std::vector<std::size_t>& s) {
  std::string out = "(";
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
  return out + ")";
}

/// Per-sample feature-map shape (channels, height, width).
struct FeatureShape {
  std::size_t c = 0;
  std::size_t h = 0;
  std::size_t w = 0;

  std::size_t size() const { return c * h * w; }
  std::string str() const { return "(" + std::to_string(c) + "," + std::to_string(h) + "," + std::to_string(w) + ")"; }
  friend bool operator==(const FeatureShape&, const FeatureShape&) = default;
};

inline FeatureShape feature_shape(const std::vector<std::size_t>& s) {
  return {s.size() > 1 ? s[1] : 1, s.size() > 2 ? s[2] : 1, s.size() > 3 ? s[3] : 1};
}

}  // namespace fontcnn::nn
