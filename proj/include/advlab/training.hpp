#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>

#include "advlab/attacks.hpp"
#include "advlab/augment.hpp"
#include "advlab/data.hpp"
#include "advlab/history.hpp"

namespace advlab {

enum class TrainMethod { kStandard, kFgsm, kPgd };

/// kNoiseAugMixed is the two-branch objective
/// (1 - lambda) CE(x + d1) + lambda CE(x + eta + d2).
enum class Regularizer { kNone, kNoiseAug, kNoiseAugMixed, kGradAlign, kLogitAlign };

/// Label-preserving or label-mixing batch augmentation applied before any
/// noise or attack.
enum class Augmentation { kNone, kCutout, kMixup, kCutmix };

std::string to_string(TrainMethod m);
std::string to_string(Regularizer r);
std::string to_string(Augmentation a);

/// Held-out measurements taken after every epoch.
struct ProbeSpec {
  bool enabled = true;
  std::size_t examples = 512;
  int pgd_steps = 10;
  int pgd_restarts = 1;
  int linearity_noise = 8;
};

struct TrainConfig {
  int epochs = 30;
  std::size_t batch_size = 128;
  double max_lr = 0.3;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  Regularizer regularizer = Regularizer::kNone;
  double lambda = 0.0;
  NoiseSpec noise;
  AttackSpec attack = AttackSpec::fgsm_training(8.0 / 255.0);
  std::uint64_t seed = 0;
  Augmentation augmentation = Augmentation::kNone;
  std::size_t cutout_patch = 16;
  double mix_alpha = 1.0;
  /// LogitAlign only: treat the clean-branch logits as constants inside KL.
  bool detach_clean_logits = false;
  bool shuffle = true;
  bool drop_last = false;
  ProbeSpec probe;

  /// Checks ranges and method/regularizer compatibility; ConfigError on failure.
  void validate(TrainMethod method) const;
};

/// Triangular schedule: 0 -> max_lr over the first half of total_steps, back
/// to 0 over the second. Real-valued step so callers can sample midpoints.
double cyclic_lr(double step, double total_steps, double max_lr);

/// v <- momentum v + (g + wd theta); theta <- theta - lr v.
/// An empty velocity is initialised to zeros.
template <typename T>
void sgd_momentum_step(std::vector<NamedTensor<T>>& params, const std::vector<NamedTensor<T>>& grads,
                       std::vector<NamedTensor<T>>& velocity, T lr, T momentum, T weight_decay);

/// Independent random streams of one training run. Each branch of an
/// objective draws from its own stream so that degenerate settings of one
/// method replay another method exactly.
struct TrainStreams {
  Rng clean_attack;
  Rng noisy_attack;
  Rng noise;
  Rng augment;

  static TrainStreams from_seed(std::uint64_t seed);
};

/// Mean CE(f(adv_clean)) + KL(softmax f(adv_clean) || softmax f(adv_noisy)).
template <typename T>
Var logit_align_objective(Graph<T>& g, const Model<T>& model, std::span<const Var> params, const Tensor<T>& adv_clean,
                          const Tensor<T>& adv_noisy, const Tensor<T>& targets, bool detach_clean);

/// (1 - lambda) mean CE(f(adv_clean)) + lambda mean CE(f(adv_noisy)).
template <typename T>
Var noiseaug_mixed_objective(Graph<T>& g, const Model<T>& model, std::span<const Var> params,
                             const Tensor<T>& adv_clean, const Tensor<T>& adv_noisy, const Tensor<T>& targets,
                             T lambda);

/// 1 - mean_b cos(grad_x loss_b(x), grad_x loss_b(x + eta)). Both input
/// gradients stay in the graph, so the result can be differentiated with
/// respect to whatever parameters `loss` closes over.
template <typename T>
Var grad_align_penalty(Graph<T>& g, const ExampleLoss<T>& loss, const Tensor<T>& x, const Tensor<T>& eta);

/// Value of the GradAlign penalty with eta ~ U[-eps, eps].
template <typename T>
T grad_align_penalty(const Model<T>& model, const Tensor<T>& x, std::span<const int> labels, double eps, Rng& rng);

/// Records the full per-batch training objective of `method` into `g`
/// (attacks, noise and augmentation included) and returns the scalar loss.
/// `params` must be the trainable binding of `model` in `g`.
template <typename T>
Var batch_objective(Graph<T>& g, const Model<T>& model, std::span<const Var> params, const Tensor<T>& x,
                    const Tensor<T>& targets, TrainMethod method, const TrainConfig& cfg, TrainStreams& streams);

/// Value of batch_objective; for inspection and tests.
template <typename T>
T objective_value(const Model<T>& model, const Tensor<T>& x, std::span<const int> labels, TrainMethod method,
                  const TrainConfig& cfg, TrainStreams& streams);

using EpochCallback = std::function<void(const EpochRecord&, double seconds)>;

/// Runs cfg.epochs epochs of `method`. Probes use `probe_data` when given,
/// otherwise the first cfg.probe.examples training examples.
template <typename T>
RunHistory train(Model<T>& model, const Dataset& data, const TrainConfig& cfg, TrainMethod method,
                 const Dataset* probe_data = nullptr, const EpochCallback& on_epoch = {});

template <typename T>
RunHistory train_standard(Model<T>& model, const Dataset& data, const TrainConfig& cfg,
                          const Dataset* probe_data = nullptr) {
  return train(model, data, cfg, TrainMethod::kStandard, probe_data);
}

template <typename T>
RunHistory train_fgsm_at(Model<T>& model, const Dataset& data, const TrainConfig& cfg,
                         const Dataset* probe_data = nullptr) {
  return train(model, data, cfg, TrainMethod::kFgsm, probe_data);
}

template <typename T>
RunHistory train_pgd_at(Model<T>& model, const Dataset& data, const TrainConfig& cfg,
                        const Dataset* probe_data = nullptr) {
  return train(model, data, cfg, TrainMethod::kPgd, probe_data);
}

}  // namespace advlab
