#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "advlab/errors.hpp"

namespace advlab {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

/// Dense row-major array of real scalars. A rank-0 shape holds one scalar.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() : Tensor(Shape{}) {}
  explicit Tensor(Shape shape);
  Tensor(Shape shape, std::vector<T> data);
  Tensor(Shape shape, std::initializer_list<T> data)
      : Tensor(std::move(shape), std::vector<T>(data)) {}

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor full(Shape shape, T value);
  static Tensor scalar(T value) { return Tensor(Shape{}, std::vector<T>{value}); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const noexcept { return data_.size(); }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }
  const std::vector<T>& values() const noexcept { return data_; }

  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  /// Value of a one-element tensor.
  T item() const;

  Tensor reshaped(Shape shape) const;

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return Tensor<U>(shape_, std::move(out));
  }

  bool operator==(const Tensor& other) const = default;

 private:
  Shape shape_;
  std::vector<T> data_;
};

// Value-level elementwise helpers (no autodiff).
template <typename T>
Tensor<T> operator+(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> operator-(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> operator*(T s, const Tensor<T>& a);

template <typename T>
T max_abs(const Tensor<T>& a);

/// True when every scalar is finite.
template <typename T>
bool all_finite(const Tensor<T>& a);

/// Slice of rows [begin, end) along axis 0.
template <typename T>
Tensor<T> slice_rows(const Tensor<T>& a, std::size_t begin, std::size_t end);

/// Gathers rows along axis 0.
template <typename T>
Tensor<T> gather_rows(const Tensor<T>& a, std::span<const std::size_t> rows);

void require_same_shape(const Shape& a, const Shape& b, const char* what);

}  // namespace advlab
