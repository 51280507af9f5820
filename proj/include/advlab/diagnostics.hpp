#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "advlab/attacks.hpp"
#include "advlab/data.hpp"
#include "advlab/history.hpp"

namespace advlab {

/// Mean per-example cosine between input gradients at x and at x + eta,
/// eta ~ U[-eps, eps]^d, over every example and n_noise draws.
template <typename T>
double local_linearity(const ExampleLoss<T>& loss, const Tensor<T>& x, double eps, int n_noise, Rng& rng);

template <typename T>
double local_linearity(const Model<T>& model, const Tensor<T>& x, std::span<const int> labels, double eps, int n_noise,
                       Rng& rng);

/// Dataset version, processed in chunks of batch_size examples.
template <typename T>
double local_linearity(const Model<T>& model, const Dataset& data, double eps, int n_noise, Rng& rng,
                       std::size_t batch_size = 128);

/// Entry 0 is the input itself; entry i >= 1 is the output of layer i-1, so the
/// last entry compares logits. Values are batch means of per-example cosines.
struct SensitivityProfile {
  std::vector<double> forward_cos;
  std::vector<double> backward_cos;
  std::vector<std::string> boundaries;
};

/// One eta ~ U[-eps, eps] shared by the whole batch.
template <typename T>
SensitivityProfile noise_sensitivity_profile(const Model<T>& model, const Tensor<T>& x, std::span<const int> labels,
                                             double eps, Rng& rng);

/// Top-1 correct count on x + delta (delta = 0 without an attack).
template <typename T>
std::size_t count_correct(const Model<T>& model, const Tensor<T>& x, std::span<const int> labels,
                          const std::optional<AttackSpec>& attack, Rng& rng);

/// Accuracy in percent over the dataset. Never touches the model.
template <typename T>
double evaluate(const Model<T>& model, const Dataset& data, const std::optional<AttackSpec>& attack, Rng& rng,
                std::size_t batch_size = 256);

struct CoThresholds {
  double drop_pts = 20;
  double floor_pts = 5;
  double fgsm_min = 50;
};

struct CoVerdict {
  bool detected = false;
  std::optional<int> epoch;  // 1-based first violating epoch
  double peak_pgd_acc = 0;
  double final_pgd_acc = 0;
};

/// Fires when PGD accuracy falls by at least drop_pts below its running maximum
/// from one epoch to the next, or when the final PGD accuracy is at most
/// floor_pts while FGSM accuracy is at least fgsm_min.
CoVerdict detect_co(const RunHistory& history, const CoThresholds& thresholds = {});

}  // namespace advlab
