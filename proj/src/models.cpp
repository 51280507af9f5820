#include "advlab/models.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "advlab/ops.hpp"

namespace advlab {

std::string layer_label(const Layer& layer, std::size_t index) {
  const char* kind = std::visit(
      [](const auto& l) -> const char* {
        using L = std::decay_t<decltype(l)>;
        if constexpr (std::is_same_v<L, ConvLayer>) return "conv";
        if constexpr (std::is_same_v<L, ReluLayer>) return "relu";
        return "fc";
      },
      layer);
  return std::string(kind) + std::to_string(index);
}

template <typename T>
Model<T>::Model(std::vector<Layer> layers, Shape input_shape, std::size_t num_classes)
    : layers_(std::move(layers)), input_shape_(std::move(input_shape)), num_classes_(num_classes) {
  if (input_shape_.size() != 3) throw ShapeError("model: input shape must be [C,H,W]");
  if (layers_.empty()) throw ContractError("model: no layers");
  Shape cur = input_shape_;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto label = layer_label(layers_[i], i);
    if (const auto* conv = std::get_if<ConvLayer>(&layers_[i])) {
      if (cur.size() != 3 || cur[0] != conv->in_channels) {
        throw ShapeError("model: " + label + " expects " + std::to_string(conv->in_channels) +
                         " channels, gets " + shape_to_string(cur));
      }
      const Shape out = ops::conv2d_output_shape({1, cur[0], cur[1], cur[2]},
                                                 {conv->out_channels, conv->in_channels, conv->kernel, conv->kernel},
                                                 {conv->stride, conv->padding});
      cur = {out[1], out[2], out[3]};
      params_.push_back({label + ".weight", Tensor<T>({conv->out_channels, conv->in_channels, conv->kernel, conv->kernel})});
      params_.push_back({label + ".bias", Tensor<T>({conv->out_channels})});
    } else if (const auto* fc = std::get_if<LinearLayer>(&layers_[i])) {
      if (shape_numel(cur) != fc->in_features) {
        throw ShapeError("model: " + label + " expects " + std::to_string(fc->in_features) + " features, gets " +
                         shape_to_string(cur));
      }
      cur = {fc->out_features};
      params_.push_back({label + ".weight", Tensor<T>({fc->out_features, fc->in_features})});
      params_.push_back({label + ".bias", Tensor<T>({fc->out_features})});
    }
  }
  if (cur != Shape{num_classes_}) {
    throw ShapeError("model: final layer produces " + shape_to_string(cur) + ", expected [" +
                     std::to_string(num_classes_) + "]");
  }
}

template <typename T>
Tensor<T>& Model<T>::param(const std::string& name) {
  for (auto& p : params_) {
    if (p.name == name) return p.value;
  }
  throw ContractError("model: no parameter named '" + name + "'");
}

template <typename T>
const Tensor<T>& Model<T>::param(const std::string& name) const {
  return const_cast<Model*>(this)->param(name);
}

template <typename T>
std::size_t Model<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

template <typename T>
std::vector<Var> Model<T>::bind(Graph<T>& g, bool trainable) const {
  std::vector<Var> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back(trainable ? g.parameter(p.name, p.value) : g.constant(p.value));
  return out;
}

template <typename T>
void Model<T>::check_input(const Shape& shape) const {
  if (shape.size() != 4 || !std::equal(input_shape_.begin(), input_shape_.end(), shape.begin() + 1)) {
    throw ShapeError("model: input " + shape_to_string(shape) + " does not match [B," +
                     shape_to_string(input_shape_).substr(1));
  }
}

template <typename T>
std::vector<Var> Model<T>::apply(Graph<T>& g, std::span<const Var> params, Var x) const {
  check_input(g.shape(x));
  if (params.size() != params_.size()) throw ContractError("model: parameter binding has the wrong size");
  std::vector<Var> acts;
  acts.reserve(layers_.size());
  Var cur = x;
  std::size_t p = 0;
  for (const auto& layer : layers_) {
    if (const auto* conv = std::get_if<ConvLayer>(&layer)) {
      cur = ops::add_bias(g, ops::conv2d(g, cur, params[p], {conv->stride, conv->padding}), params[p + 1], 1);
      p += 2;
    } else if (std::holds_alternative<ReluLayer>(layer)) {
      cur = ops::relu(g, cur);
    } else {
      cur = ops::linear(g, cur, params[p], params[p + 1]);
      p += 2;
    }
    acts.push_back(cur);
  }
  return acts;
}

template <typename T>
Tensor<T> Model<T>::logits(const Tensor<T>& x) const {
  Graph<T> g(false);
  const auto params = bind(g, false);
  return g.value(forward(g, params, g.constant(x)));
}

template <typename T>
std::vector<Tensor<T>> Model<T>::features(const Tensor<T>& x) const {
  Graph<T> g(false);
  const auto params = bind(g, false);
  std::vector<Tensor<T>> out;
  for (auto v : apply(g, params, g.constant(x))) out.push_back(g.value(v));
  return out;
}

template <typename T>
void init_uniform_fan_in(Model<T>& model, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto& params = model.params();
  for (std::size_t i = 0; i + 1 < params.size(); i += 2) {
    auto& w = params[i].value;
    auto& b = params[i + 1].value;
    const std::size_t fan_in = w.size() / w.dim(0);
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (auto& v : w.data()) v = static_cast<T>(dist(rng));
    for (auto& v : b.data()) v = static_cast<T>(dist(rng));
  }
}

template <typename T>
Model<T> build_small_cnn(std::span<const std::size_t> widths, Shape input_shape, std::size_t num_classes,
                         std::uint64_t seed) {
  if (widths.empty()) throw ContractError("build_small_cnn: widths must be non-empty");
  if (input_shape.size() != 3) throw ShapeError("build_small_cnn: input shape must be [C,H,W]");
  std::vector<Layer> layers;
  std::size_t channels = input_shape[0];
  std::size_t h = input_shape[1];
  std::size_t w = input_shape[2];
  for (std::size_t i = 0; i < widths.size(); ++i) {
    if (widths[i] == 0) throw ContractError("build_small_cnn: zero width");
    const std::size_t stride = (i % 2 == 1) ? 2 : 1;
    if (h < stride || w < stride || h == 0 || w == 0) {
      throw ContractError("build_small_cnn: spatial size " + std::to_string(h) + "x" + std::to_string(w) +
                          " too small for block " + std::to_string(i));
    }
    layers.emplace_back(ConvLayer{channels, widths[i], 3, stride, 1});
    layers.emplace_back(ReluLayer{});
    channels = widths[i];
    h = (h - 1) / stride + 1;
    w = (w - 1) / stride + 1;
  }
  layers.emplace_back(LinearLayer{channels * h * w, num_classes});
  Model<T> model(std::move(layers), std::move(input_shape), num_classes);
  init_uniform_fan_in(model, seed);
  return model;
}

template <typename T>
Model<T> build_toy_cnn(std::size_t num_filters, Shape input_shape, std::size_t num_classes, std::uint64_t seed) {
  if (num_filters == 0) throw ContractError("build_toy_cnn: need at least one filter");
  const std::size_t widths[] = {num_filters};
  return build_small_cnn<T>(widths, std::move(input_shape), num_classes, seed);
}

template <typename T>
Model<T> build_mlp(std::span<const std::size_t> hidden, Shape input_shape, std::size_t num_classes,
                   std::uint64_t seed) {
  std::vector<Layer> layers;
  std::size_t features = shape_numel(input_shape);
  for (auto width : hidden) {
    layers.emplace_back(LinearLayer{features, width});
    layers.emplace_back(ReluLayer{});
    features = width;
  }
  layers.emplace_back(LinearLayer{features, num_classes});
  Model<T> model(std::move(layers), std::move(input_shape), num_classes);
  init_uniform_fan_in(model, seed);
  return model;
}

template <typename T>
std::vector<FilterKernel<T>> dump_filters(const Model<T>& model) {
  const auto& layers = model.layers();
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto* conv = std::get_if<ConvLayer>(&layers[i]);
    if (!conv) continue;
    const auto& w = model.param(layer_label(layers[i], i) + ".weight");
    const std::size_t per_channel = conv->kernel * conv->kernel;
    const std::size_t per_filter = conv->in_channels * per_channel;
    std::vector<FilterKernel<T>> out;
    for (std::size_t f = 0; f < conv->out_channels; ++f) {
      FilterKernel<T> k;
      k.name = "w" + std::to_string(f + 1);
      std::vector<T> values(w.data().begin() + f * per_filter, w.data().begin() + (f + 1) * per_filter);
      for (std::size_t c = 0; c < conv->in_channels; ++c) {
        auto first = values.begin() + c * per_channel;
        auto [lo, hi] = std::minmax_element(first, first + per_channel);
        k.channel_min.push_back(*lo);
        k.channel_max.push_back(*hi);
      }
      k.kernel = Tensor<T>({conv->in_channels, conv->kernel, conv->kernel}, std::move(values));
      out.push_back(std::move(k));
    }
    return out;
  }
  throw ContractError("dump_filters: model has no convolution layer");
}

#define ADVLAB_MODELS_INSTANTIATE(T)                                                                     \
  template class Model<T>;                                                                               \
  template Model<T> build_toy_cnn(std::size_t, Shape, std::size_t, std::uint64_t);                       \
  template Model<T> build_small_cnn(std::span<const std::size_t>, Shape, std::size_t, std::uint64_t);    \
  template Model<T> build_mlp(std::span<const std::size_t>, Shape, std::size_t, std::uint64_t);          \
  template void init_uniform_fan_in(Model<T>&, std::uint64_t);                                           \
  template std::vector<FilterKernel<T>> dump_filters(const Model<T>&);

ADVLAB_MODELS_INSTANTIATE(float)
ADVLAB_MODELS_INSTANTIATE(double)

}  // namespace advlab
