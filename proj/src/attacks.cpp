#include "advlab/attacks.hpp"

#include <algorithm>
#include <cmath>

#include "advlab/ops.hpp"

namespace advlab {

void AttackSpec::validate() const {
  if (!(eps >= 0) || !(alpha >= 0)) throw ContractError("attack: eps and alpha must be non-negative");
  if (steps < 1 || restarts < 1) throw ContractError("attack: steps and restarts must be at least 1");
  if (family == AttackFamily::kFgsm && steps != 1) throw ContractError("attack: FGSM takes exactly one step");
  if (!(init_scale >= 0)) throw ContractError("attack: init_scale must be non-negative");
}

AttackSpec AttackSpec::fgsm_training(double eps) {
  return {AttackFamily::kFgsm, eps, 1.25 * eps, 1, 1, InitMode::kZero, false};
}

AttackSpec AttackSpec::pgd_training(double eps, int steps) {
  return {AttackFamily::kPgd, eps, eps / 2, steps, 1, InitMode::kRandom, false};
}

AttackSpec AttackSpec::fgsm_eval(double eps) {
  return {AttackFamily::kFgsm, eps, eps, 1, 1, InitMode::kZero, true};
}

AttackSpec AttackSpec::pgd_eval(double eps, int steps, int restarts) {
  return {AttackFamily::kPgd, eps, eps / 4, steps, restarts, InitMode::kRandom, true};
}

std::string to_string(AttackFamily family) { return family == AttackFamily::kFgsm ? "fgsm" : "pgd"; }
std::string to_string(InitMode init) { return init == InitMode::kZero ? "zero" : "random"; }

template <typename T>
ExampleLoss<T> model_loss(const Model<T>& model, const Tensor<T>& targets) {
  return [&model, &targets](Graph<T>& g, Var input) {
    const auto params = model.bind(g, false);
    return ops::cross_entropy_rows(g, model.forward(g, params, input), targets);
  };
}

template <typename T>
Tensor<T> rand_init(const Shape& shape, T eps, Rng& rng) {
  if (!(eps >= T{0})) throw ContractError("rand_init: eps must be non-negative");
  Tensor<T> out(shape);
  std::uniform_real_distribution<double> dist(-static_cast<double>(eps), static_cast<double>(eps));
  for (auto& v : out.data()) v = static_cast<T>(dist(rng));
  return out;
}

template <typename T>
Tensor<T> project_linf(const Tensor<T>& delta, T eps) {
  Tensor<T> out = delta;
  for (auto& v : out.data()) v = std::clamp(v, -eps, eps);
  return out;
}

template <typename T>
Tensor<T> clamp_to_image(const Tensor<T>& delta, const Tensor<T>& x) {
  require_same_shape(delta.shape(), x.shape(), "clamp_to_image");
  Tensor<T> out = delta;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::clamp(out[i], -x[i], T{1} - x[i]);
  return out;
}

template <typename T>
Tensor<T> input_gradient(const ExampleLoss<T>& loss, const Tensor<T>& x) {
  Graph<T> g;
  const Var in = g.input(x);
  const Var total = ops::sum(g, loss(g, in));
  const Var wrt[] = {in};
  return g.value(g.grad(total, wrt)[0]);
}

namespace {

template <typename T>
T sign(T v) {
  return v > T{0} ? T{1} : (v < T{0} ? T{-1} : T{0});
}

template <typename T>
Tensor<T> initial_delta(const Tensor<T>& x, const AttackSpec& spec, Rng& rng) {
  const T radius = static_cast<T>(spec.eps * spec.init_scale);
  Tensor<T> delta = spec.init == InitMode::kRandom ? rand_init(x.shape(), radius, rng) : Tensor<T>(x.shape());
  if (spec.clip_image_range) delta = clamp_to_image(delta, x);
  return delta;
}

template <typename T>
void signed_step(const ExampleLoss<T>& loss, const Tensor<T>& x, Tensor<T>& delta, const AttackSpec& spec) {
  const auto grad = input_gradient(loss, x + delta);
  const T alpha = static_cast<T>(spec.alpha);
  const T eps = static_cast<T>(spec.eps);
  for (std::size_t i = 0; i < delta.size(); ++i) {
    delta[i] = std::clamp(delta[i] + alpha * sign(grad[i]), -eps, eps);
  }
  if (spec.clip_image_range) delta = clamp_to_image(delta, x);
}

template <typename T>
Tensor<T> example_losses(const ExampleLoss<T>& loss, const Tensor<T>& x) {
  Graph<T> g(false);
  return g.value(loss(g, g.constant(x)));
}

void check_input(const Shape& shape) {
  if (shape.empty() || shape[0] == 0) throw ShapeError("attack: input must be a non-empty batch");
}

}  // namespace

template <typename T>
Tensor<T> fgsm(const ExampleLoss<T>& loss, const Tensor<T>& x, const AttackSpec& spec, Rng& rng) {
  spec.validate();
  if (spec.family != AttackFamily::kFgsm) throw ContractError("fgsm: spec family must be FGSM");
  check_input(x.shape());
  Tensor<T> delta = initial_delta(x, spec, rng);
  signed_step(loss, x, delta, spec);
  return delta;
}

template <typename T>
Tensor<T> pgd(const ExampleLoss<T>& loss, const Tensor<T>& x, const AttackSpec& spec, Rng& rng) {
  spec.validate();
  if (spec.family != AttackFamily::kPgd) throw ContractError("pgd: spec family must be PGD");
  check_input(x.shape());
  const std::size_t batch = x.dim(0);
  const std::size_t row = x.size() / batch;
  Tensor<T> best(x.shape());
  std::vector<T> best_loss(batch);
  for (int r = 0; r < spec.restarts; ++r) {
    Tensor<T> delta = initial_delta(x, spec, rng);
    for (int s = 0; s < spec.steps; ++s) signed_step(loss, x, delta, spec);
    if (spec.restarts == 1) return delta;
    const auto losses = example_losses(loss, x + delta);
    if (losses.size() != batch) throw ShapeError("pgd: loss must have one entry per example");
    for (std::size_t b = 0; b < batch; ++b) {
      if (r == 0 || losses[b] > best_loss[b]) {
        best_loss[b] = losses[b];
        std::copy_n(delta.data().begin() + b * row, row, best.data().begin() + b * row);
      }
    }
  }
  return best;
}

template <typename T>
Tensor<T> attack(const ExampleLoss<T>& loss, const Tensor<T>& x, const AttackSpec& spec, Rng& rng) {
  return spec.family == AttackFamily::kFgsm ? fgsm(loss, x, spec, rng) : pgd(loss, x, spec, rng);
}

#define ADVLAB_ATTACKS_INSTANTIATE(T)                                                               \
  template ExampleLoss<T> model_loss(const Model<T>&, const Tensor<T>&);                            \
  template Tensor<T> rand_init(const Shape&, T, Rng&);                                              \
  template Tensor<T> project_linf(const Tensor<T>&, T);                                             \
  template Tensor<T> clamp_to_image(const Tensor<T>&, const Tensor<T>&);                            \
  template Tensor<T> input_gradient(const ExampleLoss<T>&, const Tensor<T>&);                       \
  template Tensor<T> fgsm(const ExampleLoss<T>&, const Tensor<T>&, const AttackSpec&, Rng&);        \
  template Tensor<T> pgd(const ExampleLoss<T>&, const Tensor<T>&, const AttackSpec&, Rng&);         \
  template Tensor<T> attack(const ExampleLoss<T>&, const Tensor<T>&, const AttackSpec&, Rng&);

ADVLAB_ATTACKS_INSTANTIATE(float)
ADVLAB_ATTACKS_INSTANTIATE(double)

}  // namespace advlab
