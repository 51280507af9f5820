#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "advlab/tensor.hpp"

namespace advlab {

/// Handle to a node of a Graph. Only meaningful together with its graph.
struct Var {
  static constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();
  std::size_t id = kNone;

  explicit operator bool() const noexcept { return id != kNone; }
  bool operator==(const Var&) const = default;
};

enum class LeafKind : std::uint8_t { kOperation, kParameter, kInput, kConstant };

/// Wengert list of primitive operations. Nodes are appended in evaluation
/// order, so the node vector is always topologically sorted.
///
/// Gradients are computed by `grad`/`backward`. With `create_graph` the
/// backward pass is itself recorded, which is how input gradients become
/// differentiable functions of the parameters.
template <typename T>
class Graph {
 public:
  /// Computes gradients for the inputs of node `self` given its upstream
  /// gradient. Entries for inputs whose `needed` flag is false may be empty.
  using BackwardFn =
      std::function<std::vector<Var>(Graph&, Var self, Var grad, const std::vector<bool>& needed)>;

  explicit Graph(bool grad_enabled = true) : grad_enabled_(grad_enabled), recording_(grad_enabled) {}

  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;
  Graph(Graph&&) noexcept = default;
  Graph& operator=(Graph&&) noexcept = default;

  Var parameter(std::string name, Tensor<T> value);
  Var input(Tensor<T> value, std::string name = {});
  Var constant(Tensor<T> value);

  /// Appends an operation result. When the graph is not recording, or none of
  /// the inputs requires a gradient, the result is stored as a constant.
  Var record(Tensor<T> value, std::vector<Var> inputs, BackwardFn backward);

  const Tensor<T>& value(Var v) const { return node(v).value; }
  const Shape& shape(Var v) const { return node(v).value.shape(); }
  bool requires_grad(Var v) const { return node(v).requires_grad; }
  LeafKind kind(Var v) const { return node(v).kind; }
  const std::string& name(Var v) const { return node(v).name; }
  std::span<const Var> inputs(Var v) const { return node(v).inputs; }

  std::size_t size() const noexcept { return nodes_.size(); }
  bool grad_enabled() const noexcept { return grad_enabled_; }
  bool recording() const noexcept { return recording_; }

  /// All leaves of the given kind, in creation order.
  std::vector<Var> leaves(LeafKind kind) const;

  /// d loss / d wrt[i]. Unreachable targets get a zero constant.
  /// Accumulation order is fixed, so results are bitwise reproducible.
  std::vector<Var> grad(Var loss, std::span<const Var> wrt, bool create_graph = false);

 private:
  struct Node {
    Tensor<T> value;
    std::vector<Var> inputs;
    BackwardFn backward;
    LeafKind kind = LeafKind::kOperation;
    bool requires_grad = false;
    std::string name;
  };

  const Node& node(Var v) const;
  Var push(Node n);

  std::vector<Node> nodes_;
  bool grad_enabled_;
  bool recording_;
};

template <typename T>
struct GradEntry {
  Var leaf;
  LeafKind kind;
  std::string name;
  Tensor<T> grad;
};

/// Gradients of a scalar loss for every parameter and input leaf.
template <typename T>
class GradTable {
 public:
  GradTable() = default;
  explicit GradTable(std::vector<GradEntry<T>> entries) : entries_(std::move(entries)) {}

  const Tensor<T>& operator[](Var leaf) const;
  const Tensor<T>& by_name(const std::string& name) const;
  bool contains(Var leaf) const;

  std::span<const GradEntry<T>> entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

 private:
  std::vector<GradEntry<T>> entries_;
};

template <typename T>
GradTable<T> backward(Graph<T>& graph, Var loss);

}  // namespace advlab
