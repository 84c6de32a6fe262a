#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <random>
#include <type_traits>
#include <vector>

#include "hypermae/common.hpp"
#include "hypermae/kernels.hpp"

namespace hypermae {

/// Dense row-major tensor. Immutable by convention once handed to the tape.
template <class T>
class Tensor {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);

 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape)
      : shape_(std::move(shape)), data_(shape_numel(shape_), T(0)) {}
  Tensor(std::vector<std::size_t> shape, std::vector<T> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    check(data_.size() == shape_numel(shape_),
          "tensor data length " + std::to_string(data_.size()) + " does not match shape " +
              shape_str(shape_));
  }

  static constexpr DType dtype() { return std::is_same_v<T, float> ? DType::f32 : DType::f64; }

  static Tensor zeros(std::vector<std::size_t> shape) { return Tensor(std::move(shape)); }

  static Tensor full(std::vector<std::size_t> shape, T value) {
    Tensor t(std::move(shape));
    std::fill(t.data_.begin(), t.data_.end(), value);
    return t;
  }

  static Tensor scalar(T value) { return Tensor({1}, {value}); }

  static Tensor randn(std::vector<std::size_t> shape, std::uint64_t seed, T stddev = T(1)) {
    Tensor t(std::move(shape));
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> dist(0.0, 1.0);
    for (auto& x : t.data_) x = static_cast<T>(dist(rng)) * stddev;
    return t;
  }

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t extent(std::size_t axis) const { return shape_.at(axis); }
  std::size_t numel() const { return data_.size(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  std::vector<T>& vec() { return data_; }
  const std::vector<T>& vec() const { return data_; }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  bool all_finite() const {
    for (const T& x : data_)
      if (!std::isfinite(static_cast<double>(x))) return false;
    return true;
  }

  template <class U>
  Tensor<U> cast() const {
    Tensor<U> out(shape_);
    for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
    return out;
  }

 private:
  std::vector<std::size_t> shape_;
  std::vector<T> data_;
};

inline std::vector<std::size_t> row_major_strides(const std::vector<std::size_t>& shape) {
  std::vector<std::size_t> s(shape.size(), 1);
  for (std::size_t i = shape.size(); i-- > 1;) s[i - 1] = s[i] * shape[i];
  return s;
}

// Trailing-axis broadcast result shape; throws naming the offending axis.
inline std::vector<std::size_t> broadcast_shape(const std::vector<std::size_t>& a,
                                                const std::vector<std::size_t>& b) {
  const std::size_t rank = std::max(a.size(), b.size());
  std::vector<std::size_t> out(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    const std::size_t ea = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
    const std::size_t eb = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
    if (ea != eb && ea != 1 && eb != 1)
      fail("broadcast mismatch at axis " + std::to_string(i) + ": " + shape_str(a) + " vs " +
           shape_str(b));
    out[i] = std::max(ea, eb);
  }
  return out;
}

// Strides for reading `shape` as if broadcast to `out_shape` (0 on broadcast axes).
inline std::vector<std::size_t> broadcast_strides(const std::vector<std::size_t>& shape,
                                                  const std::vector<std::size_t>& out_shape) {
  const auto natural = row_major_strides(shape);
  std::vector<std::size_t> s(out_shape.size(), 0);
  const std::size_t off = out_shape.size() - shape.size();
  for (std::size_t i = 0; i < shape.size(); ++i)
    s[off + i] = (shape[i] == 1 && out_shape[off + i] != 1) ? 0 : natural[i];
  return s;
}

}  // namespace hypermae
