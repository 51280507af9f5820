#include "advlab/graph.hpp"

#include <algorithm>

#include "advlab/ops.hpp"

namespace advlab {

template <typename T>
const typename Graph<T>::Node& Graph<T>::node(Var v) const {
  if (!v || v.id >= nodes_.size()) throw ContractError("graph: invalid variable handle");
  return nodes_[v.id];
}

template <typename T>
Var Graph<T>::push(Node n) {
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

template <typename T>
Var Graph<T>::parameter(std::string name, Tensor<T> value) {
  Node n;
  n.value = std::move(value);
  n.kind = LeafKind::kParameter;
  n.requires_grad = grad_enabled_;
  n.name = std::move(name);
  return push(std::move(n));
}

template <typename T>
Var Graph<T>::input(Tensor<T> value, std::string name) {
  Node n;
  n.value = std::move(value);
  n.kind = LeafKind::kInput;
  n.requires_grad = grad_enabled_;
  n.name = std::move(name);
  return push(std::move(n));
}

template <typename T>
Var Graph<T>::constant(Tensor<T> value) {
  Node n;
  n.value = std::move(value);
  n.kind = LeafKind::kConstant;
  return push(std::move(n));
}

template <typename T>
Var Graph<T>::record(Tensor<T> value, std::vector<Var> inputs, BackwardFn backward) {
  bool any = false;
  if (recording_) {
    for (auto v : inputs) any = any || node(v).requires_grad;
  }
  if (!any) return constant(std::move(value));
  Node n;
  n.value = std::move(value);
  n.inputs = std::move(inputs);
  n.backward = std::move(backward);
  n.requires_grad = true;
  return push(std::move(n));
}

template <typename T>
std::vector<Var> Graph<T>::leaves(LeafKind kind) const {
  std::vector<Var> out;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (nodes_[i].kind == kind) out.push_back(Var{i});
  }
  return out;
}

template <typename T>
std::vector<Var> Graph<T>::grad(Var loss, std::span<const Var> wrt, bool create_graph) {
  if (!grad_enabled_) throw ContractError("grad: graph was built with gradients disabled");
  if (node(loss).value.size() != 1) {
    throw ContractError("grad: loss must be a scalar, got shape " +
                        shape_to_string(node(loss).value.shape()));
  }
  const std::size_t end = loss.id + 1;

  // needed[i]: node i lies on a path from some target to the loss.
  std::vector<bool> needed(end, false);
  for (auto w : wrt) {
    if (w.id < end) needed[w.id] = true;
  }
  for (std::size_t i = 0; i < end; ++i) {
    if (needed[i] || !nodes_[i].requires_grad) continue;
    for (auto in : nodes_[i].inputs) {
      if (needed[in.id]) {
        needed[i] = true;
        break;
      }
    }
  }

  const bool saved = recording_;
  recording_ = create_graph;
  std::vector<Var> adj(end);
  try {
    adj[loss.id] = constant(Tensor<T>::full(node(loss).value.shape(), T{1}));
    for (std::size_t i = end; i-- > 0;) {
      if (!adj[i] || !needed[i] || !nodes_[i].backward) continue;
      // Copy: the callback may append nodes and reallocate nodes_.
      const std::vector<Var> ins = nodes_[i].inputs;
      std::vector<bool> need_in(ins.size());
      bool any = false;
      for (std::size_t k = 0; k < ins.size(); ++k) {
        need_in[k] = needed[ins[k].id];
        any = any || need_in[k];
      }
      if (!any) continue;
      BackwardFn fn = nodes_[i].backward;
      std::vector<Var> grads = fn(*this, Var{i}, adj[i], need_in);
      for (std::size_t k = 0; k < ins.size(); ++k) {
        if (!need_in[k] || k >= grads.size() || !grads[k]) continue;
        auto& slot = adj[ins[k].id];
        slot = slot ? ops::add(*this, slot, grads[k]) : grads[k];
      }
    }
  } catch (...) {
    recording_ = saved;
    throw;
  }
  recording_ = saved;

  std::vector<Var> out;
  out.reserve(wrt.size());
  for (auto w : wrt) {
    if (w.id < end && adj[w.id]) {
      out.push_back(adj[w.id]);
    } else {
      out.push_back(constant(Tensor<T>::zeros(node(w).value.shape())));
    }
  }
  return out;
}

template <typename T>
const Tensor<T>& GradTable<T>::operator[](Var leaf) const {
  for (const auto& e : entries_) {
    if (e.leaf == leaf) return e.grad;
  }
  throw ContractError("grad table: no entry for leaf");
}

template <typename T>
const Tensor<T>& GradTable<T>::by_name(const std::string& name) const {
  for (const auto& e : entries_) {
    if (e.name == name) return e.grad;
  }
  throw ContractError("grad table: no entry named '" + name + "'");
}

template <typename T>
bool GradTable<T>::contains(Var leaf) const {
  return std::any_of(entries_.begin(), entries_.end(), [&](const auto& e) { return e.leaf == leaf; });
}

template <typename T>
GradTable<T> backward(Graph<T>& graph, Var loss) {
  std::vector<Var> leaves = graph.leaves(LeafKind::kParameter);
  const auto inputs = graph.leaves(LeafKind::kInput);
  leaves.insert(leaves.end(), inputs.begin(), inputs.end());
  const auto grads = graph.grad(loss, leaves, false);
  std::vector<GradEntry<T>> entries;
  entries.reserve(leaves.size());
  for (std::size_t i = 0; i < leaves.size(); ++i) {
    entries.push_back({leaves[i], graph.kind(leaves[i]), graph.name(leaves[i]), graph.value(grads[i])});
  }
  return GradTable<T>(std::move(entries));
}

template class Graph<float>;
template class Graph<double>;
template class GradTable<float>;
template class GradTable<double>;
template GradTable<float> backward(Graph<float>&, Var);
template GradTable<double> backward(Graph<double>&, Var);

}  // namespace advlab
