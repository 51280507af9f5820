#include "advlab/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace advlab {

namespace {

#if defined(__GLIBC__)
// Activations of a training batch run to tens of megabytes. By default glibc
// serves such blocks with fresh mmap calls and unmaps them on free, so every
// op pays for page faults on zeroed memory. Keeping them in the heap lets the
// allocator recycle the same pages from batch to batch.
const bool kHeapTuned = [] {
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  return true;
}();
#endif

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

void require_same_shape(const Shape& a, const Shape& b, const char* what) {
  if (a != b) {
    throw ShapeError(std::string(what) + ": shape " + shape_to_string(a) + " vs " +
                     shape_to_string(b));
  }
}

template <typename T>
Tensor<T>::Tensor(Shape shape) : shape_(std::move(shape)), data_(shape_numel(shape_), T{0}) {}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_numel(shape_) != data_.size()) {
    throw ShapeError("tensor: shape " + shape_to_string(shape_) + " needs " +
                     std::to_string(shape_numel(shape_)) + " values, got " +
                     std::to_string(data_.size()));
  }
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value) {
  Tensor t(std::move(shape));
  std::fill(t.data_.begin(), t.data_.end(), value);
  return t;
}

template <typename T>
std::size_t Tensor<T>::dim(std::size_t axis) const {
  if (axis >= shape_.size()) {
    throw ShapeError("tensor: axis " + std::to_string(axis) + " out of range for shape " +
                     shape_to_string(shape_));
  }
  return shape_[axis];
}

template <typename T>
T Tensor<T>::item() const {
  if (data_.size() != 1) {
    throw ShapeError("tensor: item() on shape " + shape_to_string(shape_));
  }
  return data_[0];
}

template <typename T>
Tensor<T> Tensor<T>::reshaped(Shape shape) const {
  if (shape_numel(shape) != data_.size()) {
    throw ShapeError("reshape: " + shape_to_string(shape_) + " -> " + shape_to_string(shape));
  }
  return Tensor(std::move(shape), data_);
}

template <typename T>
Tensor<T> operator+(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a.shape(), b.shape(), "add");
  Tensor<T> out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i];
  return out;
}

template <typename T>
Tensor<T> operator-(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a.shape(), b.shape(), "sub");
  Tensor<T> out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b[i];
  return out;
}

template <typename T>
Tensor<T> operator*(T s, const Tensor<T>& a) {
  Tensor<T> out = a;
  for (auto& v : out.data()) v *= s;
  return out;
}

template <typename T>
T max_abs(const Tensor<T>& a) {
  T m{0};
  for (auto v : a.data()) m = std::max(m, std::abs(v));
  return m;
}

template <typename T>
bool all_finite(const Tensor<T>& a) {
  return std::all_of(a.data().begin(), a.data().end(), [](T v) { return std::isfinite(v); });
}

template <typename T>
Tensor<T> slice_rows(const Tensor<T>& a, std::size_t begin, std::size_t end) {
  if (a.rank() == 0 || begin > end || end > a.dim(0)) {
    throw ShapeError("slice_rows: bad range on shape " + shape_to_string(a.shape()));
  }
  Shape s = a.shape();
  const std::size_t row = a.size() / std::max<std::size_t>(s[0], 1);
  s[0] = end - begin;
  std::vector<T> out(a.data().begin() + begin * row, a.data().begin() + end * row);
  return Tensor<T>(std::move(s), std::move(out));
}

template <typename T>
Tensor<T> gather_rows(const Tensor<T>& a, std::span<const std::size_t> rows) {
  if (a.rank() == 0) throw ShapeError("gather_rows: rank-0 tensor");
  Shape s = a.shape();
  const std::size_t row = s[0] ? a.size() / s[0] : 0;
  s[0] = rows.size();
  std::vector<T> out;
  out.reserve(rows.size() * row);
  for (auto r : rows) {
    if (r >= a.dim(0)) throw ShapeError("gather_rows: row index out of range");
    out.insert(out.end(), a.data().begin() + r * row, a.data().begin() + (r + 1) * row);
  }
  return Tensor<T>(std::move(s), std::move(out));
}

#define ADVLAB_INSTANTIATE(T)                                                        \
  template class Tensor<T>;                                                          \
  template Tensor<T> operator+(const Tensor<T>&, const Tensor<T>&);                  \
  template Tensor<T> operator-(const Tensor<T>&, const Tensor<T>&);                  \
  template Tensor<T> operator*(T, const Tensor<T>&);                                 \
  template T max_abs(const Tensor<T>&);                                              \
  template bool all_finite(const Tensor<T>&);                                        \
  template Tensor<T> slice_rows(const Tensor<T>&, std::size_t, std::size_t);         \
  template Tensor<T> gather_rows(const Tensor<T>&, std::span<const std::size_t>);

ADVLAB_INSTANTIATE(float)
ADVLAB_INSTANTIATE(double)

}  // namespace advlab
