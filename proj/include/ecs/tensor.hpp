#pragma once

#include <cmath>
#include <cstddef>
#include <numeric>
#include <string>
#include <vector>

#include "ecs/common.hpp"

namespace ecs {

// Dense row-major N-d array. Image layout convention is
// (batch, channel, height, width).
template <class T>
class tensor {
 public:
  tensor() = default;

  explicit tensor(std::vector<int> shape, T fill = T(0))
      : shape_(std::move(shape)), data_(checked_numel(shape_), fill) {}

  tensor(std::vector<int> shape, std::vector<T> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    check_shape(data_.size() == checked_numel(shape_),
                "tensor: data length does not match shape");
  }

  int ndim() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
  const std::vector<int>& shape() const { return shape_; }
  std::size_t numel() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::vector<T>& vec() { return data_; }
  const std::vector<T>& vec() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  // 4-d accessors for (B,C,H,W) tensors
  T& at4(int b, int c, int y, int x) {
    return data_[idx4(b, c, y, x)];
  }
  const T& at4(int b, int c, int y, int x) const {
    return data_[idx4(b, c, y, x)];
  }
  std::size_t idx4(int b, int c, int y, int x) const {
    return ((static_cast<std::size_t>(b) * shape_[1] + c) * shape_[2] + y) * shape_[3] + x;
  }

  bool same_shape(const tensor& o) const { return shape_ == o.shape_; }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  std::string shape_str() const {
    std::string s = "(";
    for (std::size_t i = 0; i < shape_.size(); ++i) {
      if (i) s += ",";
      s += std::to_string(shape_[i]);
    }
    return s + ")";
  }

 private:
  static std::size_t checked_numel(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (int d : shape) {
      check_shape(d > 0, "tensor: dimensions must be positive");
      n *= static_cast<std::size_t>(d);
    }
    return n;
  }

  std::vector<int> shape_;
  std::vector<T> data_;
};

using tensorf = tensor<float>;
using tensord = tensor<double>;

template <class U, class T>
tensor<U> cast(const tensor<T>& t) {
  tensor<U> out(t.shape());
  for (std::size_t i = 0; i < t.numel(); ++i) out[i] = static_cast<U>(t[i]);
  return out;
}

template <class T>
bool all_finite(const tensor<T>& t) {
  for (std::size_t i = 0; i < t.numel(); ++i)
    if (!std::isfinite(static_cast<double>(t[i]))) return false;
  return true;
}

template <class T>
void require_finite(const tensor<T>& t, const char* where) {
  if (!all_finite(t))
    throw value_error(std::string(where) + ": non-finite values");
}

}  // namespace ecs
