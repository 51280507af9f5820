#pragma once

#include <functional>

#include "advlab/graph.hpp"

// Differentiable primitives. Every backward rule is written in terms of these
// same primitives, so gradients can be differentiated again (create_graph).
namespace advlab::ops {

inline constexpr double kCosineStabilizer = 1e-12;

template <typename T> Var add(Graph<T>& g, Var a, Var b);
template <typename T> Var sub(Graph<T>& g, Var a, Var b);
template <typename T> Var mul(Graph<T>& g, Var a, Var b);
template <typename T> Var scale(Graph<T>& g, Var a, T factor);
template <typename T> Var add_scalar(Graph<T>& g, Var a, T offset);
template <typename T> Var exp(Graph<T>& g, Var a);
template <typename T> Var sqrt(Graph<T>& g, Var a);
/// 1/x, with 0 where x == 0.
template <typename T> Var reciprocal(Graph<T>& g, Var a);
template <typename T> Var clamp(Graph<T>& g, Var a, T lo, T hi);

/// Sum of all elements; rank-0 result.
template <typename T> Var sum(Graph<T>& g, Var a);
template <typename T> Var mean(Graph<T>& g, Var a);
/// Broadcasts a one-element tensor to `shape`.
template <typename T> Var expand(Graph<T>& g, Var scalar, Shape shape);
template <typename T> Var reshape(Graph<T>& g, Var a, Shape shape);

/// Sums over every axis except `axis`; result has shape [shape[axis]].
template <typename T> Var reduce_axis(Graph<T>& g, Var a, std::size_t axis);
/// Replicates v (shape [shape[axis]]) along all other axes of `shape`.
template <typename T> Var broadcast_axis(Graph<T>& g, Var v, Shape shape, std::size_t axis);
template <typename T> Var add_bias(Graph<T>& g, Var x, Var bias, std::size_t axis);

template <typename T> Var relu(Graph<T>& g, Var x);
/// Passes `grad` where `x > 0`, zero elsewhere (relu backward).
template <typename T> Var relu_mask(Graph<T>& g, Var grad, Var x);

/// op(a) * op(b) for rank-2 operands, op = transpose when the flag is set.
template <typename T> Var matmul(Graph<T>& g, Var a, Var b, bool transpose_a, bool transpose_b);

struct ConvGeometry {
  std::size_t stride = 1;
  std::size_t padding = 0;
};

Shape conv2d_output_shape(const Shape& input, const Shape& kernel, ConvGeometry geo);

/// Cross-correlation of x [B,C,H,W] with kernel [F,C,kh,kw].
template <typename T> Var conv2d(Graph<T>& g, Var x, Var kernel, ConvGeometry geo);
/// Adjoint of conv2d in its input.
template <typename T>
Var conv2d_input_grad(Graph<T>& g, Var grad_out, Var kernel, Shape input_shape, ConvGeometry geo);
/// Adjoint of conv2d in its kernel.
template <typename T>
Var conv2d_weight_grad(Graph<T>& g, Var x, Var grad_out, Shape kernel_shape, ConvGeometry geo);

/// x [B,...] flattened to [B,D], times weight [O,D] transposed, plus bias [O].
template <typename T> Var linear(Graph<T>& g, Var x, Var weight, Var bias);

/// Row-wise log-softmax of [B,C] logits, max-shifted.
template <typename T> Var log_softmax(Graph<T>& g, Var logits);

/// Per-example cross-entropy against probability rows, shape [B].
template <typename T> Var cross_entropy_rows(Graph<T>& g, Var logits, const Tensor<T>& target);
/// Batch mean of cross_entropy_rows.
template <typename T> Var softmax_cross_entropy(Graph<T>& g, Var logits, const Tensor<T>& target);
/// Batch mean of KL(softmax(p) || softmax(q)).
template <typename T> Var kl_divergence(Graph<T>& g, Var p_logits, Var q_logits);

/// Per-example cosine similarity of rows (all non-batch axes flattened),
/// a.b / (|a||b| + 1e-12), clamped to [-1, 1]. Shape [B].
template <typename T> Var cosine_rows(Graph<T>& g, Var a, Var b);

/// Throws ContractError unless every row is a probability vector.
template <typename T> void check_probability_rows(const Tensor<T>& target, std::size_t classes);

template <typename T> Tensor<T> one_hot(std::span<const int> labels, std::size_t classes);

}  // namespace advlab::ops

namespace advlab {

/// Cosine of two flattened tensors, accumulated in double; 0 when either is
/// exactly zero.
template <typename T> T cosine_similarity(const Tensor<T>& a, const Tensor<T>& b);

/// Central differences (f(x + h e_i) - f(x - h e_i)) / 2h for every coordinate.
template <typename T>
Tensor<T> finite_diff_grad(const std::function<T(const Tensor<T>&)>& f, const Tensor<T>& point, T h);

}  // namespace advlab
