#pragma once

#include <functional>
#include <string>

#include "advlab/models.hpp"
#include "advlab/rng.hpp"

namespace advlab {

enum class AttackFamily { kFgsm, kPgd };
enum class InitMode { kZero, kRandom };

/// l-infinity attack parameters; eps and alpha are in [0,1] pixel units.
struct AttackSpec {
  AttackFamily family = AttackFamily::kFgsm;
  double eps = 8.0 / 255.0;
  double alpha = 10.0 / 255.0;
  int steps = 1;
  int restarts = 1;
  InitMode init = InitMode::kZero;
  bool clip_image_range = false;
  /// Random init draws from U[-init_scale*eps, init_scale*eps]. At 0 a random
  /// init start coincides with a zero start.
  double init_scale = 1.0;

  void validate() const;

  /// Training FGSM: alpha = 1.25 eps, zero init, no image clamp.
  static AttackSpec fgsm_training(double eps);
  /// Training PGD-N: alpha = eps / 2, random init.
  static AttackSpec pgd_training(double eps, int steps = 2);
  /// Evaluation FGSM: alpha = eps, zero init, image clamp.
  static AttackSpec fgsm_eval(double eps);
  /// Evaluation PGD-N-K: alpha = eps / 4, random init, image clamp.
  static AttackSpec pgd_eval(double eps, int steps = 50, int restarts = 10);
};

std::string to_string(AttackFamily family);
std::string to_string(InitMode init);

/// Per-example loss of a perturbed batch, shape [B]. Attacks ascend it.
template <typename T>
using ExampleLoss = std::function<Var(Graph<T>&, Var input)>;

/// Cross-entropy of a frozen model against probability rows.
template <typename T>
ExampleLoss<T> model_loss(const Model<T>& model, const Tensor<T>& targets);

template <typename T>
Tensor<T> rand_init(const Shape& shape, T eps, Rng& rng);

template <typename T>
Tensor<T> project_linf(const Tensor<T>& delta, T eps);

/// delta <- clamp(delta, -x, 1 - x), i.e. x + delta lands in [0,1] without
/// ever growing |delta|.
template <typename T>
Tensor<T> clamp_to_image(const Tensor<T>& delta, const Tensor<T>& x);

/// Gradient of sum(loss(x)) with respect to x.
template <typename T>
Tensor<T> input_gradient(const ExampleLoss<T>& loss, const Tensor<T>& x);

template <typename T>
Tensor<T> fgsm(const ExampleLoss<T>& loss, const Tensor<T>& x, const AttackSpec& spec, Rng& rng);

/// Keeps, per example, the restart with the highest final loss; ties go to
/// the earliest restart.
template <typename T>
Tensor<T> pgd(const ExampleLoss<T>& loss, const Tensor<T>& x, const AttackSpec& spec, Rng& rng);

/// Dispatches on spec.family.
template <typename T>
Tensor<T> attack(const ExampleLoss<T>& loss, const Tensor<T>& x, const AttackSpec& spec, Rng& rng);

template <typename T>
Tensor<T> fgsm(const Model<T>& model, const Tensor<T>& x, const Tensor<T>& targets, const AttackSpec& spec, Rng& rng) {
  return fgsm(model_loss(model, targets), x, spec, rng);
}

template <typename T>
Tensor<T> pgd(const Model<T>& model, const Tensor<T>& x, const Tensor<T>& targets, const AttackSpec& spec, Rng& rng) {
  return pgd(model_loss(model, targets), x, spec, rng);
}

}  // namespace advlab
