#include "advlab/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <Eigen/Core>

namespace advlab::ops {
namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMapMat = Eigen::Map<const RowMat<T>>;

template <typename T, typename F>
Tensor<T> map_values(const Tensor<T>& a, F f) {
  Tensor<T> out(a.shape());
  auto src = a.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = f(src[i]);
  return out;
}

template <typename T, typename F>
Tensor<T> zip_values(const Tensor<T>& a, const Tensor<T>& b, F f, const char* what) {
  require_same_shape(a.shape(), b.shape(), what);
  Tensor<T> out(a.shape());
  auto x = a.data();
  auto y = b.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < x.size(); ++i) dst[i] = f(x[i], y[i]);
  return out;
}

struct AxisSplit {
  std::size_t outer, extent, inner;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis) {
  if (axis >= shape.size()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_to_string(shape));
  }
  AxisSplit s{1, shape[axis], 1};
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

struct ConvDims {
  std::size_t batch, channels, height, width;
  std::size_t filters, kh, kw;
  std::size_t out_h, out_w;
  std::size_t stride, pad;

  std::size_t patch() const { return channels * kh * kw; }
  std::size_t positions() const { return out_h * out_w; }
};

ConvDims conv_dims(const Shape& input, const Shape& kernel, ConvGeometry geo) {
  if (input.size() != 4 || kernel.size() != 4) {
    throw ShapeError("conv2d: expected input [B,C,H,W] and kernel [F,C,kh,kw], got " +
                     shape_to_string(input) + " and " + shape_to_string(kernel));
  }
  if (input[1] != kernel[1]) {
    throw ShapeError("conv2d: input has " + std::to_string(input[1]) + " channels, kernel expects " +
                     std::to_string(kernel[1]));
  }
  if (geo.stride == 0) throw ContractError("conv2d: stride must be positive");
  const std::size_t ph = input[2] + 2 * geo.padding;
  const std::size_t pw = input[3] + 2 * geo.padding;
  if (kernel[2] > ph || kernel[3] > pw || kernel[2] == 0 || kernel[3] == 0) {
    throw ShapeError("conv2d: kernel " + shape_to_string(kernel) + " does not fit padded input " +
                     shape_to_string(input));
  }
  ConvDims d{};
  d.batch = input[0];
  d.channels = input[1];
  d.height = input[2];
  d.width = input[3];
  d.filters = kernel[0];
  d.kh = kernel[2];
  d.kw = kernel[3];
  d.out_h = (ph - d.kh) / geo.stride + 1;
  d.out_w = (pw - d.kw) / geo.stride + 1;
  d.stride = geo.stride;
  d.pad = geo.padding;
  return d;
}

// Output columns ox whose input column ox*stride + kj - pad lies inside the
// image form one contiguous range [lo, hi).
struct ColumnRange {
  std::size_t lo, hi;
};

ColumnRange valid_columns(const ConvDims& d, std::size_t kj) {
  const long off = static_cast<long>(kj) - static_cast<long>(d.pad);
  const long s = static_cast<long>(d.stride);
  const long w = static_cast<long>(d.width);
  const long n = static_cast<long>(d.out_w);
  long lo = off >= 0 ? 0 : (-off + s - 1) / s;
  long hi = w - off <= 0 ? 0 : (w - off - 1) / s + 1;
  lo = std::min(lo, n);
  hi = std::clamp(hi, lo, n);
  return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

// A compile-time stride lets the compiler vectorize the gather.
template <typename T, std::size_t Stride>
void gather_strided(const T* src, std::size_t n, T* dst) {
  for (std::size_t i = 0; i < n; ++i) dst[i] = src[i * Stride];
}

template <typename T, std::size_t Stride>
void scatter_add_strided(const T* src, std::size_t n, T* dst) {
  for (std::size_t i = 0; i < n; ++i) dst[i * Stride] += src[i];
}

// col is [C*kh*kw, out_h*out_w] row-major.
template <typename T>
void im2col(const T* img, const ConvDims& d, T* col) {
  const std::size_t positions = d.positions();
  std::size_t row = 0;
  for (std::size_t c = 0; c < d.channels; ++c) {
    const T* plane = img + c * d.height * d.width;
    for (std::size_t ki = 0; ki < d.kh; ++ki) {
      for (std::size_t kj = 0; kj < d.kw; ++kj, ++row) {
        T* dst = col + row * positions;
        const auto [lo, hi] = valid_columns(d, kj);
        for (std::size_t oy = 0; oy < d.out_h; ++oy) {
          const long iy = static_cast<long>(oy * d.stride + ki) - static_cast<long>(d.pad);
          T* line = dst + oy * d.out_w;
          if (iy < 0 || iy >= static_cast<long>(d.height)) {
            std::fill(line, line + d.out_w, T{0});
            continue;
          }
          std::fill(line, line + lo, T{0});
          std::fill(line + hi, line + d.out_w, T{0});
          if (hi == lo) continue;
          const T* src = plane + static_cast<std::size_t>(iy) * d.width + (lo * d.stride + kj - d.pad);
          if (d.stride == 1) {
            std::copy(src, src + (hi - lo), line + lo);
          } else if (d.stride == 2) {
            gather_strided<T, 2>(src, hi - lo, line + lo);
          } else {
            for (std::size_t ox = lo; ox < hi; ++ox) line[ox] = src[(ox - lo) * d.stride];
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* col, const ConvDims& d, T* img) {
  const std::size_t positions = d.positions();
  std::size_t row = 0;
  for (std::size_t c = 0; c < d.channels; ++c) {
    T* plane = img + c * d.height * d.width;
    for (std::size_t ki = 0; ki < d.kh; ++ki) {
      for (std::size_t kj = 0; kj < d.kw; ++kj, ++row) {
        const T* src = col + row * positions;
        const auto [lo, hi] = valid_columns(d, kj);
        if (hi == lo) continue;
        for (std::size_t oy = 0; oy < d.out_h; ++oy) {
          const long iy = static_cast<long>(oy * d.stride + ki) - static_cast<long>(d.pad);
          if (iy < 0 || iy >= static_cast<long>(d.height)) continue;
          T* dst = plane + static_cast<std::size_t>(iy) * d.width + (lo * d.stride + kj - d.pad);
          const T* line = src + oy * d.out_w;
          if (d.stride == 1) {
            scatter_add_strided<T, 1>(line + lo, hi - lo, dst);
          } else if (d.stride == 2) {
            scatter_add_strided<T, 2>(line + lo, hi - lo, dst);
          } else {
            for (std::size_t ox = lo; ox < hi; ++ox) dst[(ox - lo) * d.stride] += line[ox];
          }
        }
      }
    }
  }
}

template <typename T>
Tensor<T> conv_forward(const Tensor<T>& x, const Tensor<T>& w, const ConvDims& d) {
  Tensor<T> y({d.batch, d.filters, d.out_h, d.out_w});
  std::vector<T> col(d.patch() * d.positions());
  ConstMapMat<T> wm(w.data().data(), d.filters, d.patch());
  const std::size_t in_stride = d.channels * d.height * d.width;
  const std::size_t out_stride = d.filters * d.positions();
  for (std::size_t b = 0; b < d.batch; ++b) {
    im2col(x.data().data() + b * in_stride, d, col.data());
    ConstMapMat<T> cm(col.data(), d.patch(), d.positions());
    MapMat<T> ym(y.data().data() + b * out_stride, d.filters, d.positions());
    ym.noalias() = wm * cm;
  }
  return y;
}

template <typename T>
Tensor<T> conv_input_grad(const Tensor<T>& gy, const Tensor<T>& w, const ConvDims& d) {
  Tensor<T> gx({d.batch, d.channels, d.height, d.width});
  std::vector<T> col(d.patch() * d.positions());
  ConstMapMat<T> wm(w.data().data(), d.filters, d.patch());
  MapMat<T> cm(col.data(), d.patch(), d.positions());
  const std::size_t in_stride = d.channels * d.height * d.width;
  const std::size_t out_stride = d.filters * d.positions();
  for (std::size_t b = 0; b < d.batch; ++b) {
    ConstMapMat<T> gm(gy.data().data() + b * out_stride, d.filters, d.positions());
    cm.noalias() = wm.transpose() * gm;
    col2im_add(col.data(), d, gx.data().data() + b * in_stride);
  }
  return gx;
}

template <typename T>
Tensor<T> conv_weight_grad(const Tensor<T>& x, const Tensor<T>& gy, const ConvDims& d) {
  Tensor<T> gw({d.filters, d.channels, d.kh, d.kw});
  std::vector<T> col(d.patch() * d.positions());
  MapMat<T> gwm(gw.data().data(), d.filters, d.patch());
  ConstMapMat<T> cm(col.data(), d.patch(), d.positions());
  const std::size_t in_stride = d.channels * d.height * d.width;
  const std::size_t out_stride = d.filters * d.positions();
  for (std::size_t b = 0; b < d.batch; ++b) {
    im2col(x.data().data() + b * in_stride, d, col.data());
    ConstMapMat<T> gm(gy.data().data() + b * out_stride, d.filters, d.positions());
    gwm.noalias() += gm * cm.transpose();
  }
  return gw;
}

// out[i][j] = a[i] . b[j] with a fixed 16-lane accumulation order, so each
// output row depends only on its own input row (not on the batch size).
// Up to four columns share one pass over a[i]; the per-column arithmetic is
// the same whichever group a column lands in.
template <typename T, std::size_t J>
void dot_group(const T* ar, const T* b, std::size_t j0, std::size_t k, T* out) {
  constexpr std::size_t kLanes = 16;
  const std::size_t body = k - k % kLanes;
  T acc[J][kLanes] = {};
  for (std::size_t d = 0; d < body; d += kLanes) {
    for (std::size_t j = 0; j < J; ++j) {
      const T* br = b + (j0 + j) * k + d;
      for (std::size_t l = 0; l < kLanes; ++l) acc[j][l] += ar[d + l] * br[l];
    }
  }
  for (std::size_t j = 0; j < J; ++j) {
    T half[8];
    for (std::size_t l = 0; l < 8; ++l) half[l] = acc[j][l] + acc[j][l + 8];
    T total = ((half[0] + half[1]) + (half[2] + half[3])) + ((half[4] + half[5]) + (half[6] + half[7]));
    const T* br = b + (j0 + j) * k;
    for (std::size_t d = body; d < k; ++d) total += ar[d] * br[d];
    out[j0 + j] = total;
  }
}

template <typename T>
void rowwise_dot(const T* a, const T* b, std::size_t m, std::size_t n, std::size_t k, T* out) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* ar = a + i * k;
    T* row = out + i * n;
    std::size_t j = 0;
    for (; j + 4 <= n; j += 4) dot_group<T, 4>(ar, b, j, k, row);
    for (; j < n; ++j) dot_group<T, 1>(ar, b, j, k, row);
  }
}

template <typename T>
const Tensor<T>& val(const Graph<T>& g, Var v) {
  return g.value(v);
}

}  // namespace

Shape conv2d_output_shape(const Shape& input, const Shape& kernel, ConvGeometry geo) {
  const auto d = conv_dims(input, kernel, geo);
  return {d.batch, d.filters, d.out_h, d.out_w};
}

template <typename T>
Var add(Graph<T>& g, Var a, Var b) {
  auto out = zip_values(val(g, a), val(g, b), [](T x, T y) { return x + y; }, "add");
  return g.record(std::move(out), {a, b},
                  [](Graph<T>&, Var, Var grad, const std::vector<bool>&) -> std::vector<Var> {
                    return {grad, grad};
                  });
}

template <typename T>
Var sub(Graph<T>& g, Var a, Var b) {
  auto out = zip_values(val(g, a), val(g, b), [](T x, T y) { return x - y; }, "sub");
  return g.record(std::move(out), {a, b},
                  [](Graph<T>& gr, Var, Var grad, const std::vector<bool>& need) -> std::vector<Var> {
                    return {grad, need[1] ? scale(gr, grad, T{-1}) : Var{}};
                  });
}

template <typename T>
Var mul(Graph<T>& g, Var a, Var b) {
  auto out = zip_values(val(g, a), val(g, b), [](T x, T y) { return x * y; }, "mul");
  return g.record(std::move(out), {a, b},
                  [a, b](Graph<T>& gr, Var, Var grad, const std::vector<bool>& need) -> std::vector<Var> {
                    return {need[0] ? mul(gr, grad, b) : Var{}, need[1] ? mul(gr, grad, a) : Var{}};
                  });
}

template <typename T>
Var scale(Graph<T>& g, Var a, T factor) {
  auto out = map_values(val(g, a), [factor](T x) { return factor * x; });
  return g.record(std::move(out), {a},
                  [factor](Graph<T>& gr, Var, Var grad, const std::vector<bool>&) -> std::vector<Var> {
                    return {scale(gr, grad, factor)};
                  });
}

template <typename T>
Var add_scalar(Graph<T>& g, Var a, T offset) {
  auto out = map_values(val(g, a), [offset](T x) { return x + offset; });
  return g.record(std::move(out), {a},
                  [](Graph<T>&, Var, Var grad, const std::vector<bool>&) -> std::vector<Var> {
                    return {grad};
                  });
}

template <typename T>
Var exp(Graph<T>& g, Var a) {
  auto out = map_values(val(g, a), [](T x) { return std::exp(x); });
  return g.record(std::move(out), {a},
                  [](Graph<T>& gr, Var self, Var grad, const std::vector<bool>&) -> std::vector<Var> {
                    return {mul(gr, grad, self)};
                  });
}

template <typename T>
Var sqrt(Graph<T>& g, Var a) {
  auto out = map_values(val(g, a), [](T x) {
    if (x < T{0}) throw ContractError("sqrt: negative argument");
    return std::sqrt(x);
  });
  // d sqrt(x) = 1 / (2 sqrt(x)); taken as 0 at x == 0.
  return g.record(std::move(out), {a},
                  [](Graph<T>& gr, Var self, Var grad, const std::vector<bool>&) -> std::vector<Var> {
                    return {mul(gr, grad, scale(gr, reciprocal(gr, self), T{0.5}))};
                  });
}

template <typename T>
Var reciprocal(Graph<T>& g, Var a) {
  auto out = map_values(val(g, a), [](T x) { return x == T{0} ? T{0} : T{1} / x; });
  return g.record(std::move(out), {a},
                  [](Graph<T>& gr, Var self, Var grad, const std::vector<bool>&) -> std::vector<Var> {
                    return {scale(gr, mul(gr, grad, mul(gr, self, self)), T{-1})};
                  });
}

namespace {
// Passes grad where lo <= x <= hi.
template <typename T>
Var clamp_mask(Graph<T>& g, Var grad, Var x, T lo, T hi) {
  auto out = zip_values(val(g, grad), val(g, x),
                        [lo, hi](T gv, T xv) { return (xv >= lo && xv <= hi) ? gv : T{0}; }, "clamp_mask");
  return g.record(std::move(out), {grad, x},
                  [x, lo, hi](Graph<T>& gr, Var, Var gg, const std::vector<bool>& need) -> std::vector<Var> {
                    return {need[0] ? clamp_mask(gr, gg, x, lo, hi) : Var{}, Var{}};
                  });
}
}  // namespace

template <typename T>
Var clamp(Graph<T>& g, Var a, T lo, T hi) {
  auto out = map_values(val(g, a), [lo, hi](T x) { return std::clamp(x, lo, hi); });
  return g.record(std::move(out), {a},
                  [a, lo, hi](Graph<T>& gr, Var, Var grad, const std::vector<bool>&) -> std::vector<Var> {
                    return {clamp_mask(gr, grad, a, lo, hi)};
                  });
}

template <typename T>
Var sum(Graph<T>& g, Var a) {
  const auto& v = val(g, a);
  T total{0};
  for (auto x : v.data()) total += x;
  const Shape in_shape = v.shape();
  return g.record(Tensor<T>::scalar(total), {a},
                  [in_shape](Graph<T>& gr, Var, Var grad, const std::vector<bool>&) -> std::vector<Var> {
                    return {expand(gr, grad, in_shape)};
                  });
}

template <typename T>
Var mean(Graph<T>& g, Var a) {
  const auto n = val(g, a).size();
  if (n == 0) throw ContractError("mean: empty tensor");
  return scale(g, sum(g, a), T{1} / static_cast<T>(n));
}

template <typename T>
Var expand(Graph<T>& g, Var scalar, Shape shape) {
  const T v = val(g, scalar).item();
  const Shape src_shape = val(g, scalar).shape();
  return g.record(Tensor<T>::full(std::move(shape), v), {scalar},
                  [src_shape](Graph<T>& gr, Var, Var grad, const std::vector<bool>&) -> std::vector<Var> {
                    return {reshape(gr, sum(gr, grad), src_shape)};
                  });
}

template <typename T>
Var reshape(Graph<T>& g, Var a, Shape shape) {
  const Shape in_shape = val(g, a).shape();
  return g.record(val(g, a).reshaped(std::move(shape)), {a},
                  [in_shape](Graph<T>& gr, Var, Var grad, const std::vector<bool>&) -> std::vector<Var> {
                    return {reshape(gr, grad, in_shape)};
                  });
}

template <typename T>
Var reduce_axis(Graph<T>& g, Var a, std::size_t axis) {
  const auto& v = val(g, a);
  const auto s = split_axis(v.shape(), axis);
  Tensor<T> out({s.extent});
  auto src = v.data();
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t e = 0; e < s.extent; ++e) {
      const T* p = src.data() + (o * s.extent + e) * s.inner;
      T acc{0};
      for (std::size_t i = 0; i < s.inner; ++i) acc += p[i];
      out[e] += acc;
    }
  }
  const Shape in_shape = v.shape();
  return g.record(std::move(out), {a},
                  [in_shape, axis](Graph<T>& gr, Var, Var grad, const std::vector<bool>&) -> std::vector<Var> {
                    return {broadcast_axis(gr, grad, in_shape, axis)};
                  });
}

template <typename T>
Var broadcast_axis(Graph<T>& g, Var v, Shape shape, std::size_t axis) {
  const auto& src = val(g, v);
  const auto s = split_axis(shape, axis);
  if (src.size() != s.extent) {
    throw ShapeError("broadcast_axis: vector of " + std::to_string(src.size()) + " values for axis " +
                     std::to_string(axis) + " of " + shape_to_string(shape));
  }
  Tensor<T> out(shape);
  auto dst = out.data();
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t e = 0; e < s.extent; ++e) {
      T* p = dst.data() + (o * s.extent + e) * s.inner;
      std::fill(p, p + s.inner, src[e]);
    }
  }
  const Shape src_shape = src.shape();
  return g.record(std::move(out), {v},
                  [axis, src_shape](Graph<T>& gr, Var, Var grad, const std::vector<bool>&) -> std::vector<Var> {
                    return {reshape(gr, reduce_axis(gr, grad, axis), src_shape)};
                  });
}

template <typename T>
Var add_bias(Graph<T>& g, Var x, Var bias, std::size_t axis) {
  const auto& xv = val(g, x);
  const auto& bv = val(g, bias);
  const auto s = split_axis(xv.shape(), axis);
  if (bv.size() != s.extent) {
    throw ShapeError("add_bias: bias of " + std::to_string(bv.size()) + " values for axis " +
                     std::to_string(axis) + " of " + shape_to_string(xv.shape()));
  }
  Tensor<T> out = xv;
  auto dst = out.data();
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t e = 0; e < s.extent; ++e) {
      T* p = dst.data() + (o * s.extent + e) * s.inner;
      for (std::size_t i = 0; i < s.inner; ++i) p[i] += bv[e];
    }
  }
  const Shape bias_shape = bv.shape();
  return g.record(std::move(out), {x, bias},
                  [axis, bias_shape](Graph<T>& gr, Var, Var grad, const std::vector<bool>& need) -> std::vector<Var> {
                    return {grad, need[1] ? reshape(gr, reduce_axis(gr, grad, axis), bias_shape) : Var{}};
                  });
}

template <typename T>
Var relu(Graph<T>& g, Var x) {
  auto out = map_values(val(g, x), [](T v) { return v > T{0} ? v : T{0}; });
  return g.record(std::move(out), {x},
                  [x](Graph<T>& gr, Var, Var grad, const std::vector<bool>&) -> std::vector<Var> {
                    return {relu_mask(gr, grad, x)};
                  });
}

template <typename T>
Var relu_mask(Graph<T>& g, Var grad, Var x) {
  auto out = zip_values(val(g, grad), val(g, x), [](T gv, T xv) { return xv > T{0} ? gv : T{0}; },
                        "relu_mask");
  // The mask is piecewise constant in x, so only the grad input propagates.
  return g.record(std::move(out), {grad, x},
                  [x](Graph<T>& gr, Var, Var gg, const std::vector<bool>& need) -> std::vector<Var> {
                    return {need[0] ? relu_mask(gr, gg, x) : Var{}, Var{}};
                  });
}

template <typename T>
Var matmul(Graph<T>& g, Var a, Var b, bool ta, bool tb) {
  const auto& av = val(g, a);
  const auto& bv = val(g, b);
  if (av.rank() != 2 || bv.rank() != 2) {
    throw ShapeError("matmul: rank-2 operands required, got " + shape_to_string(av.shape()) + " and " +
                     shape_to_string(bv.shape()));
  }
  const std::size_t m = ta ? av.dim(1) : av.dim(0);
  const std::size_t k = ta ? av.dim(0) : av.dim(1);
  const std::size_t kb = tb ? bv.dim(1) : bv.dim(0);
  const std::size_t n = tb ? bv.dim(0) : bv.dim(1);
  if (k != kb) {
    throw ShapeError("matmul: inner extents differ (" + shape_to_string(av.shape()) + " vs " +
                     shape_to_string(bv.shape()) + ")");
  }
  Tensor<T> out({m, n});
  ConstMapMat<T> am(av.data().data(), av.dim(0), av.dim(1));
  ConstMapMat<T> bm(bv.data().data(), bv.dim(0), bv.dim(1));
  MapMat<T> om(out.data().data(), m, n);
  if (!ta && !tb) om.noalias() = am * bm;
  if (!ta && tb) rowwise_dot(av.data().data(), bv.data().data(), m, n, k, out.data().data());
  if (ta && !tb) om.noalias() = am.transpose() * bm;
  if (ta && tb) om.noalias() = am.transpose() * bm.transpose();
  return g.record(std::move(out), {a, b},
                  [a, b, ta, tb](Graph<T>& gr, Var, Var grad, const std::vector<bool>& need) -> std::vector<Var> {
                    Var da, db;
                    if (need[0]) da = ta ? matmul(gr, b, grad, tb, true) : matmul(gr, grad, b, false, !tb);
                    if (need[1]) db = tb ? matmul(gr, grad, a, true, ta) : matmul(gr, a, grad, !ta, false);
                    return {da, db};
                  });
}

template <typename T>
Var conv2d(Graph<T>& g, Var x, Var kernel, ConvGeometry geo) {
  const auto& xv = val(g, x);
  const auto& wv = val(g, kernel);
  const auto d = conv_dims(xv.shape(), wv.shape(), geo);
  auto out = conv_forward(xv, wv, d);
  const Shape xs = xv.shape();
  const Shape ws = wv.shape();
  return g.record(std::move(out), {x, kernel},
                  [x, kernel, xs, ws, geo](Graph<T>& gr, Var, Var grad,
                                           const std::vector<bool>& need) -> std::vector<Var> {
                    return {need[0] ? conv2d_input_grad(gr, grad, kernel, xs, geo) : Var{},
                            need[1] ? conv2d_weight_grad(gr, x, grad, ws, geo) : Var{}};
                  });
}

template <typename T>
Var conv2d_input_grad(Graph<T>& g, Var grad_out, Var kernel, Shape input_shape, ConvGeometry geo) {
  const auto& gv = val(g, grad_out);
  const auto& wv = val(g, kernel);
  const auto d = conv_dims(input_shape, wv.shape(), geo);
  if (gv.shape() != Shape{d.batch, d.filters, d.out_h, d.out_w}) {
    throw ShapeError("conv2d_input_grad: upstream gradient shape " + shape_to_string(gv.shape()));
  }
  auto out = conv_input_grad(gv, wv, d);
  const Shape ws = wv.shape();
  return g.record(std::move(out), {grad_out, kernel},
                  [grad_out, kernel, ws, geo](Graph<T>& gr, Var, Var gg,
                                              const std::vector<bool>& need) -> std::vector<Var> {
                    return {need[0] ? conv2d(gr, gg, kernel, geo) : Var{},
                            need[1] ? conv2d_weight_grad(gr, gg, grad_out, ws, geo) : Var{}};
                  });
}

template <typename T>
Var conv2d_weight_grad(Graph<T>& g, Var x, Var grad_out, Shape kernel_shape, ConvGeometry geo) {
  const auto& xv = val(g, x);
  const auto& gv = val(g, grad_out);
  const auto d = conv_dims(xv.shape(), kernel_shape, geo);
  if (gv.shape() != Shape{d.batch, d.filters, d.out_h, d.out_w}) {
    throw ShapeError("conv2d_weight_grad: upstream gradient shape " + shape_to_string(gv.shape()));
  }
  auto out = conv_weight_grad(xv, gv, d);
  const Shape xs = xv.shape();
  return g.record(std::move(out), {x, grad_out},
                  [x, grad_out, xs, geo](Graph<T>& gr, Var, Var gg,
                                         const std::vector<bool>& need) -> std::vector<Var> {
                    return {need[0] ? conv2d_input_grad(gr, grad_out, gg, xs, geo) : Var{},
                            need[1] ? conv2d(gr, x, gg, geo) : Var{}};
                  });
}

template <typename T>
Var linear(Graph<T>& g, Var x, Var weight, Var bias) {
  const Shape xs = g.shape(x);
  if (xs.empty()) throw ShapeError("linear: rank-0 input");
  const std::size_t batch = xs[0];
  const std::size_t features = batch ? g.value(x).size() / batch : 0;
  const Shape ws = g.shape(weight);
  if (ws.size() != 2 || ws[1] != features) {
    throw ShapeError("linear: input " + shape_to_string(xs) + " does not match weight " + shape_to_string(ws));
  }
  Var flat = xs.size() == 2 ? x : reshape(g, x, Shape{batch, features});
  return add_bias(g, matmul(g, flat, weight, false, true), bias, 1);
}

template <typename T>
Var log_softmax(Graph<T>& g, Var logits) {
  const auto& z = val(g, logits);
  if (z.rank() != 2) throw ShapeError("log_softmax: expected [B,C], got " + shape_to_string(z.shape()));
  const std::size_t rows = z.dim(0);
  const std::size_t cols = z.dim(1);
  Tensor<T> out(z.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* src = z.data().data() + r * cols;
    T* dst = out.data().data() + r * cols;
    const T peak = *std::max_element(src, src + cols);
    T acc{0};
    for (std::size_t c = 0; c < cols; ++c) acc += std::exp(src[c] - peak);
    const T lse = peak + std::log(acc);
    for (std::size_t c = 0; c < cols; ++c) dst[c] = src[c] - lse;
  }
  const Shape shape = z.shape();
  // d/dz = grad - softmax * rowsum(grad)
  return g.record(std::move(out), {logits},
                  [shape](Graph<T>& gr, Var self, Var grad, const std::vector<bool>&) -> std::vector<Var> {
                    Var row_sums = broadcast_axis(gr, reduce_axis(gr, grad, 0), shape, 0);
                    return {sub(gr, grad, mul(gr, exp(gr, self), row_sums))};
                  });
}

template <typename T>
void check_probability_rows(const Tensor<T>& target, std::size_t classes) {
  if (target.rank() != 2 || target.dim(1) != classes) {
    throw ShapeError("target: expected [B," + std::to_string(classes) + "], got " +
                     shape_to_string(target.shape()));
  }
  for (std::size_t r = 0; r < target.dim(0); ++r) {
    double total = 0;
    for (std::size_t c = 0; c < classes; ++c) {
      const T v = target[r * classes + c];
      if (!(v >= T{0})) throw ContractError("target: negative or non-finite probability in row " + std::to_string(r));
      total += static_cast<double>(v);
    }
    if (std::abs(total - 1.0) > 1e-6) {
      throw ContractError("target: row " + std::to_string(r) + " sums to " + std::to_string(total));
    }
  }
}

template <typename T>
Var cross_entropy_rows(Graph<T>& g, Var logits, const Tensor<T>& target) {
  const Shape zs = g.shape(logits);
  if (zs.size() != 2) throw ShapeError("cross_entropy: expected [B,C] logits, got " + shape_to_string(zs));
  check_probability_rows(target, zs[1]);
  require_same_shape(zs, target.shape(), "cross_entropy");
  Var t = g.constant(target);
  return scale(g, reduce_axis(g, mul(g, t, log_softmax(g, logits)), 0), T{-1});
}

template <typename T>
Var softmax_cross_entropy(Graph<T>& g, Var logits, const Tensor<T>& target) {
  const Shape zs = g.shape(logits);
  if (zs.size() != 2 || zs[0] == 0) throw ShapeError("cross_entropy: expected non-empty [B,C] logits");
  check_probability_rows(target, zs[1]);
  require_same_shape(zs, target.shape(), "cross_entropy");
  Var t = g.constant(target);
  return scale(g, sum(g, mul(g, t, log_softmax(g, logits))), T{-1} / static_cast<T>(zs[0]));
}

template <typename T>
Var kl_divergence(Graph<T>& g, Var p_logits, Var q_logits) {
  require_same_shape(g.shape(p_logits), g.shape(q_logits), "kl_divergence");
  const Shape ps = g.shape(p_logits);
  if (ps.size() != 2 || ps[0] == 0) throw ShapeError("kl_divergence: expected non-empty [B,C] logits");
  Var lp = log_softmax(g, p_logits);
  Var lq = log_softmax(g, q_logits);
  Var terms = mul(g, exp(g, lp), sub(g, lp, lq));
  return scale(g, sum(g, terms), T{1} / static_cast<T>(ps[0]));
}

template <typename T>
Var cosine_rows(Graph<T>& g, Var a, Var b) {
  require_same_shape(g.shape(a), g.shape(b), "cosine_rows");
  if (g.shape(a).empty()) throw ShapeError("cosine_rows: rank-0 input");
  Var dot = reduce_axis(g, mul(g, a, b), 0);
  Var na = sqrt(g, reduce_axis(g, mul(g, a, a), 0));
  Var nb = sqrt(g, reduce_axis(g, mul(g, b, b), 0));
  Var denom = add_scalar(g, mul(g, na, nb), static_cast<T>(kCosineStabilizer));
  return clamp(g, mul(g, dot, reciprocal(g, denom)), T{-1}, T{1});
}

template <typename T>
Tensor<T> one_hot(std::span<const int> labels, std::size_t classes) {
  Tensor<T> out({labels.size(), classes});
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= classes) {
      throw ContractError("one_hot: label " + std::to_string(labels[i]) + " out of range");
    }
    out[i * classes + static_cast<std::size_t>(labels[i])] = T{1};
  }
  return out;
}

#define ADVLAB_OPS_INSTANTIATE(T)                                                            \
  template Var add(Graph<T>&, Var, Var);                                                     \
  template Var sub(Graph<T>&, Var, Var);                                                     \
  template Var mul(Graph<T>&, Var, Var);                                                     \
  template Var scale(Graph<T>&, Var, T);                                                     \
  template Var add_scalar(Graph<T>&, Var, T);                                                \
  template Var exp(Graph<T>&, Var);                                                          \
  template Var sqrt(Graph<T>&, Var);                                                         \
  template Var reciprocal(Graph<T>&, Var);                                                   \
  template Var clamp(Graph<T>&, Var, T, T);                                                  \
  template Var sum(Graph<T>&, Var);                                                          \
  template Var mean(Graph<T>&, Var);                                                         \
  template Var expand(Graph<T>&, Var, Shape);                                                \
  template Var reshape(Graph<T>&, Var, Shape);                                               \
  template Var reduce_axis(Graph<T>&, Var, std::size_t);                                     \
  template Var broadcast_axis(Graph<T>&, Var, Shape, std::size_t);                           \
  template Var add_bias(Graph<T>&, Var, Var, std::size_t);                                   \
  template Var relu(Graph<T>&, Var);                                                         \
  template Var relu_mask(Graph<T>&, Var, Var);                                               \
  template Var matmul(Graph<T>&, Var, Var, bool, bool);                                      \
  template Var conv2d(Graph<T>&, Var, Var, ConvGeometry);                                    \
  template Var conv2d_input_grad(Graph<T>&, Var, Var, Shape, ConvGeometry);                  \
  template Var conv2d_weight_grad(Graph<T>&, Var, Var, Shape, ConvGeometry);                 \
  template Var linear(Graph<T>&, Var, Var, Var);                                             \
  template Var log_softmax(Graph<T>&, Var);                                                  \
  template Var cross_entropy_rows(Graph<T>&, Var, const Tensor<T>&);                         \
  template Var softmax_cross_entropy(Graph<T>&, Var, const Tensor<T>&);                      \
  template Var kl_divergence(Graph<T>&, Var, Var);                                           \
  template Var cosine_rows(Graph<T>&, Var, Var);                                             \
  template void check_probability_rows(const Tensor<T>&, std::size_t);                       \
  template Tensor<T> one_hot(std::span<const int>, std::size_t);

ADVLAB_OPS_INSTANTIATE(float)
ADVLAB_OPS_INSTANTIATE(double)

}  // namespace advlab::ops

namespace advlab {

template <typename T>
T cosine_similarity(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a.shape(), b.shape(), "cosine_similarity");
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += static_cast<double>(a[i]) * b[i];
    na += static_cast<double>(a[i]) * a[i];
    nb += static_cast<double>(b[i]) * b[i];
  }
  if (na == 0 || nb == 0) return T{0};
  // sqrt(na * nb) rather than sqrt(na) * sqrt(nb): identical inputs then give
  // exactly 1.
  return static_cast<T>(std::clamp(dot / std::sqrt(na * nb), -1.0, 1.0));
}

template <typename T>
Tensor<T> finite_diff_grad(const std::function<T(const Tensor<T>&)>& f, const Tensor<T>& point, T h) {
  if (!(h > T{0})) throw ContractError("finite_diff_grad: step must be positive");
  Tensor<T> out(point.shape());
  Tensor<T> probe = point;
  for (std::size_t i = 0; i < point.size(); ++i) {
    const T orig = probe[i];
    probe[i] = orig + h;
    const T up = f(probe);
    probe[i] = orig - h;
    const T down = f(probe);
    probe[i] = orig;
    out[i] = (up - down) / (T{2} * h);
  }
  return out;
}

template float cosine_similarity(const Tensor<float>&, const Tensor<float>&);
template double cosine_similarity(const Tensor<double>&, const Tensor<double>&);
template Tensor<float> finite_diff_grad(const std::function<float(const Tensor<float>&)>&, const Tensor<float>&,
                                        float);
template Tensor<double> finite_diff_grad(const std::function<double(const Tensor<double>&)>&,
                                         const Tensor<double>&, double);

}  // namespace advlab
