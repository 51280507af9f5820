#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "advlab/graph.hpp"

namespace advlab {

struct ConvLayer {
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t kernel = 3;
  std::size_t stride = 1;
  std::size_t padding = 1;
  bool operator==(const ConvLayer&) const = default;
};

struct ReluLayer {
  bool operator==(const ReluLayer&) const = default;
};

/// Flattens its input to [B, in_features] before the affine map.
struct LinearLayer {
  std::size_t in_features = 0;
  std::size_t out_features = 0;
  bool operator==(const LinearLayer&) const = default;
};

using Layer = std::variant<ConvLayer, ReluLayer, LinearLayer>;

template <typename T>
struct NamedTensor {
  std::string name;
  Tensor<T> value;
};

/// Sequential classifier over [B,C,H,W] images. Parameters are stored in
/// layer order as "<kind><index>.weight" / "<kind><index>.bias".
template <typename T>
class Model {
 public:
  Model(std::vector<Layer> layers, Shape input_shape, std::size_t num_classes);

  const std::vector<Layer>& layers() const noexcept { return layers_; }
  const Shape& input_shape() const noexcept { return input_shape_; }
  std::size_t num_classes() const noexcept { return num_classes_; }

  std::vector<NamedTensor<T>>& params() noexcept { return params_; }
  const std::vector<NamedTensor<T>>& params() const noexcept { return params_; }
  Tensor<T>& param(const std::string& name);
  const Tensor<T>& param(const std::string& name) const;
  std::size_t parameter_count() const;

  /// Puts the parameters into `g`: as parameter leaves when trainable,
  /// otherwise as constants (attack graphs never need weight gradients).
  std::vector<Var> bind(Graph<T>& g, bool trainable) const;

  /// Activation after every layer, in order; the last one is the logits.
  std::vector<Var> apply(Graph<T>& g, std::span<const Var> params, Var x) const;
  Var forward(Graph<T>& g, std::span<const Var> params, Var x) const { return apply(g, params, x).back(); }

  /// Gradient-free conveniences.
  Tensor<T> logits(const Tensor<T>& x) const;
  std::vector<Tensor<T>> features(const Tensor<T>& x) const;

  template <typename U>
  Model<U> cast() const {
    Model<U> out(layers_, input_shape_, num_classes_);
    for (std::size_t i = 0; i < params_.size(); ++i) out.params()[i].value = params_[i].value.template cast<U>();
    return out;
  }

 private:
  void check_input(const Shape& shape) const;

  std::vector<Layer> layers_;
  Shape input_shape_;
  std::size_t num_classes_;
  std::vector<NamedTensor<T>> params_;
};

/// conv(3x3, stride 1, pad 1) -> relu -> linear.
template <typename T>
Model<T> build_toy_cnn(std::size_t num_filters = 4, Shape input_shape = {3, 32, 32}, std::size_t num_classes = 10,
                       std::uint64_t seed = 0);

/// One conv(3x3, pad 1)+relu block per width, stride 2 on every second block,
/// then a linear classifier.
template <typename T>
Model<T> build_small_cnn(std::span<const std::size_t> widths, Shape input_shape = {3, 32, 32},
                         std::size_t num_classes = 10, std::uint64_t seed = 0);

/// linear(+relu) stack over the flattened image; empty `hidden` is a linear model.
template <typename T>
Model<T> build_mlp(std::span<const std::size_t> hidden, Shape input_shape, std::size_t num_classes,
                   std::uint64_t seed = 0);

/// Fills weights and biases uniformly in [-1/sqrt(fan_in), 1/sqrt(fan_in)].
template <typename T>
void init_uniform_fan_in(Model<T>& model, std::uint64_t seed);

template <typename T>
struct FilterKernel {
  std::string name;
  Tensor<T> kernel;  // [C, kh, kw]
  std::vector<T> channel_min;
  std::vector<T> channel_max;
};

/// Kernels of the first convolution layer, one entry per output filter.
template <typename T>
std::vector<FilterKernel<T>> dump_filters(const Model<T>& model);

std::string layer_label(const Layer& layer, std::size_t index);

}  // namespace advlab
