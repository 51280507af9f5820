#include "advlab/diagnostics.hpp"

#include <algorithm>
#include <numeric>

#include "advlab/ops.hpp"

namespace advlab {

namespace {

// Mean over rows of cosine(a_b, b_b), all non-batch axes flattened.
template <typename T>
double sum_row_cosines(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a.shape(), b.shape(), "row cosine");
  const std::size_t rows = a.dim(0);
  const std::size_t width = a.size() / rows;
  double total = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    const Tensor<T> ra({width}, std::vector<T>(a.data().begin() + r * width, a.data().begin() + (r + 1) * width));
    const Tensor<T> rb({width}, std::vector<T>(b.data().begin() + r * width, b.data().begin() + (r + 1) * width));
    total += cosine_similarity(ra, rb);
  }
  return total;
}

template <typename T>
Tensor<T> batch_x(const Dataset& data, std::span<const std::size_t> idx) {
  return gather_rows(data.images, idx).template cast<T>();
}

std::vector<int> batch_y(const Dataset& data, std::span<const std::size_t> idx) {
  std::vector<int> y;
  y.reserve(idx.size());
  for (auto i : idx) y.push_back(data.labels.at(i));
  return y;
}

}  // namespace

template <typename T>
double local_linearity(const ExampleLoss<T>& loss, const Tensor<T>& x, double eps, int n_noise, Rng& rng) {
  if (n_noise < 1) throw ContractError("local_linearity: n_noise must be at least 1");
  if (x.rank() == 0 || x.dim(0) == 0) throw ContractError("local_linearity: empty sample set");
  const auto clean = input_gradient(loss, x);
  double total = 0;
  for (int k = 0; k < n_noise; ++k) {
    const auto eta = rand_init(x.shape(), static_cast<T>(eps), rng);
    total += sum_row_cosines(clean, input_gradient(loss, x + eta));
  }
  return total / (static_cast<double>(x.dim(0)) * n_noise);
}

template <typename T>
double local_linearity(const Model<T>& model, const Tensor<T>& x, std::span<const int> labels, double eps, int n_noise,
                       Rng& rng) {
  const auto targets = ops::one_hot<T>(labels, model.num_classes());
  return local_linearity(model_loss(model, targets), x, eps, n_noise, rng);
}

template <typename T>
double local_linearity(const Model<T>& model, const Dataset& data, double eps, int n_noise, Rng& rng,
                       std::size_t batch_size) {
  if (data.size() == 0) throw ContractError("local_linearity: empty sample set");
  double total = 0;
  for (const auto& idx : epoch_batches(data.size(), batch_size, false, 0, 0)) {
    const auto y = batch_y(data, idx);
    total += local_linearity(model, batch_x<T>(data, idx), y, eps, n_noise, rng) * static_cast<double>(idx.size());
  }
  return total / static_cast<double>(data.size());
}

template <typename T>
SensitivityProfile noise_sensitivity_profile(const Model<T>& model, const Tensor<T>& x, std::span<const int> labels,
                                             double eps, Rng& rng) {
  const auto targets = ops::one_hot<T>(labels, model.num_classes());
  const auto eta = rand_init(x.shape(), static_cast<T>(eps), rng);

  struct Pass {
    std::vector<Tensor<T>> acts;
    std::vector<Tensor<T>> grads;
  };
  auto run = [&](const Tensor<T>& input) {
    Graph<T> g;
    const Var in = g.input(input);
    const auto params = model.bind(g, false);
    std::vector<Var> nodes{in};
    const auto acts = model.apply(g, params, in);
    nodes.insert(nodes.end(), acts.begin(), acts.end());
    const Var loss = ops::sum(g, ops::cross_entropy_rows(g, acts.back(), targets));
    const auto grads = g.grad(loss, nodes);
    Pass p;
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      p.acts.push_back(g.value(nodes[i]));
      p.grads.push_back(g.value(grads[i]));
    }
    return p;
  };
  const Pass a = run(x);
  const Pass b = run(x + eta);

  SensitivityProfile out;
  const double rows = static_cast<double>(x.dim(0));
  for (std::size_t i = 0; i < a.acts.size(); ++i) {
    out.forward_cos.push_back(sum_row_cosines(a.acts[i], b.acts[i]) / rows);
    out.backward_cos.push_back(sum_row_cosines(a.grads[i], b.grads[i]) / rows);
    out.boundaries.push_back(i == 0 ? std::string("input") : layer_label(model.layers()[i - 1], i - 1));
  }
  return out;
}

template <typename T>
std::size_t count_correct(const Model<T>& model, const Tensor<T>& x, std::span<const int> labels,
                          const std::optional<AttackSpec>& attack, Rng& rng) {
  Tensor<T> input = x;
  if (attack) {
    const auto targets = ops::one_hot<T>(labels, model.num_classes());
    input = x + advlab::attack(model_loss(model, targets), x, *attack, rng);
  }
  const auto logits = model.logits(input);
  const std::size_t classes = logits.dim(1);
  std::size_t correct = 0;
  for (std::size_t b = 0; b < labels.size(); ++b) {
    const auto row = logits.data().subspan(b * classes, classes);
    const auto pred = std::max_element(row.begin(), row.end()) - row.begin();
    if (pred == labels[b]) ++correct;
  }
  return correct;
}

template <typename T>
double evaluate(const Model<T>& model, const Dataset& data, const std::optional<AttackSpec>& attack, Rng& rng,
                std::size_t batch_size) {
  if (data.size() == 0) throw ContractError("evaluate: empty dataset");
  std::size_t correct = 0;
  for (const auto& idx : epoch_batches(data.size(), batch_size, false, 0, 0)) {
    const auto y = batch_y(data, idx);
    correct += count_correct(model, batch_x<T>(data, idx), y, attack, rng);
  }
  return 100.0 * static_cast<double>(correct) / static_cast<double>(data.size());
}

CoVerdict detect_co(const RunHistory& history, const CoThresholds& th) {
  if (history.empty()) throw ContractError("detect_co: empty history");
  const auto& e = history.epochs;
  CoVerdict v;
  v.final_pgd_acc = e.back().pgd_acc;
  double running_max = e.front().pgd_acc;
  v.peak_pgd_acc = running_max;
  for (std::size_t t = 1; t < e.size(); ++t) {
    if (!v.epoch && running_max - e[t].pgd_acc >= th.drop_pts) v.epoch = e[t].epoch;
    running_max = std::max(running_max, e[t].pgd_acc);
  }
  v.peak_pgd_acc = running_max;

  if (e.back().pgd_acc <= th.floor_pts && e.back().fgsm_acc >= th.fgsm_min) {
    // Start of the final stretch spent at or below the floor.
    std::size_t t = e.size() - 1;
    while (t > 0 && e[t - 1].pgd_acc <= th.floor_pts) --t;
    v.epoch = v.epoch ? std::min(*v.epoch, e[t].epoch) : e[t].epoch;
  }
  v.detected = v.epoch.has_value();
  return v;
}

#define ADVLAB_DIAGNOSTICS_INSTANTIATE(T)                                                                       \
  template double local_linearity(const ExampleLoss<T>&, const Tensor<T>&, double, int, Rng&);                 \
  template double local_linearity(const Model<T>&, const Tensor<T>&, std::span<const int>, double, int, Rng&); \
  template double local_linearity(const Model<T>&, const Dataset&, double, int, Rng&, std::size_t);            \
  template SensitivityProfile noise_sensitivity_profile(const Model<T>&, const Tensor<T>&,                     \
                                                        std::span<const int>, double, Rng&);                   \
  template std::size_t count_correct(const Model<T>&, const Tensor<T>&, std::span<const int>,                  \
                                     const std::optional<AttackSpec>&, Rng&);                                  \
  template double evaluate(const Model<T>&, const Dataset&, const std::optional<AttackSpec>&, Rng&, std::size_t);

ADVLAB_DIAGNOSTICS_INSTANTIATE(float)
ADVLAB_DIAGNOSTICS_INSTANTIATE(double)

}  // namespace advlab
