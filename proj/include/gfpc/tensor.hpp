#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <map>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "gfpc/errors.hpp"

namespace gfpc {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

/// Dense row-major array. T is double for gradient checks, float for training.
template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T(0)) : shape_(std::move(shape)) {
    check_shape();
    data_.assign(shape_size(shape_), fill);
  }

  Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    check_shape();
    if (data_.size() != shape_size(shape_))
      throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                           " does not match shape " + shape_str(shape_));
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor vector(std::initializer_list<T> values) {
    return Tensor({values.size()}, std::vector<T>(values));
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }
  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }
  std::vector<T>& storage() noexcept { return data_; }
  const std::vector<T>& storage() const noexcept { return data_; }

  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  T& at(std::size_t c, std::size_t r, std::size_t k) { return data_[(c * shape_[1] + r) * shape_[2] + k]; }
  const T& at(std::size_t c, std::size_t r, std::size_t k) const {
    return data_[(c * shape_[1] + r) * shape_[2] + k];
  }

  /// False if any element is NaN or infinite.
  bool is_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
  }

  Tensor reshaped(Shape shape) const {
    if (shape_size(shape) != size())
      throw DimensionError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
    return Tensor(std::move(shape), data_);
  }

  template <class U>
  Tensor<U> cast() const {
    return Tensor<U>(shape_, std::vector<U>(data_.begin(), data_.end()));
  }

  bool operator==(const Tensor& other) const = default;

 private:
  void check_shape() const {
    for (auto d : shape_)
      if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + shape_str(shape_));
  }

  Shape shape_;
  std::vector<T> data_;
};

/// Named parameter arrays. std::map keeps iteration order stable by name.
template <class T>
using ParameterSet = std::map<std::string, Tensor<T>>;

template <class T>
using Gradients = std::map<std::string, Tensor<T>>;

template <class U, class T>
ParameterSet<U> cast_params(const ParameterSet<T>& params) {
  ParameterSet<U> out;
  for (const auto& [name, t] : params) out.emplace(name, t.template cast<U>());
  return out;
}

inline void require_same_shape(const Shape& a, const Shape& b, const char* what) {
  if (a != b) throw DimensionError(std::string(what) + ": shape " + shape_str(a) + " vs " + shape_str(b));
}

}  // namespace gfpc
