#include "advlab/training.hpp"

#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>

#include "advlab/diagnostics.hpp"
#include "advlab/ops.hpp"

namespace advlab {

std::string to_string(TrainMethod m) {
  switch (m) {
    case TrainMethod::kStandard: return "standard";
    case TrainMethod::kFgsm: return "fgsm";
    case TrainMethod::kPgd: return "pgd";
  }
  return "?";
}

std::string to_string(Regularizer r) {
  switch (r) {
    case Regularizer::kNone: return "none";
    case Regularizer::kNoiseAug: return "noiseaug";
    case Regularizer::kNoiseAugMixed: return "noiseaug_mixed";
    case Regularizer::kGradAlign: return "gradalign";
    case Regularizer::kLogitAlign: return "logitalign";
  }
  return "?";
}

std::string to_string(Augmentation a) {
  switch (a) {
    case Augmentation::kNone: return "none";
    case Augmentation::kCutout: return "cutout";
    case Augmentation::kMixup: return "mixup";
    case Augmentation::kCutmix: return "cutmix";
  }
  return "?";
}

void TrainConfig::validate(TrainMethod method) const {
  auto fail = [](const std::string& msg) { throw ConfigError("train config: " + msg); };
  if (epochs < 0) fail("epochs must be >= 0");
  if (batch_size < 1) fail("batch_size must be >= 1");
  if (!(max_lr >= 0)) fail("max_lr must be >= 0");
  if (!(momentum >= 0 && momentum < 1)) fail("momentum must lie in [0,1)");
  if (!(weight_decay >= 0)) fail("weight_decay must be >= 0");
  if (!(lambda >= 0)) fail("lambda must be >= 0");
  if (regularizer == Regularizer::kNoiseAugMixed && lambda > 1) fail("noiseaug_mixed needs lambda in [0,1]");
  if (!(noise.scale >= 0) || !(noise.eps >= 0)) fail("noise scale and eps must be >= 0");
  if (augmentation == Augmentation::kCutout && cutout_patch < 1) fail("cutout_patch must be >= 1");
  if ((augmentation == Augmentation::kMixup || augmentation == Augmentation::kCutmix) && !(mix_alpha > 0)) {
    fail("mix_alpha must be > 0");
  }
  if (probe.enabled && (probe.examples < 1 || probe.pgd_steps < 1 || probe.pgd_restarts < 1 ||
                        probe.linearity_noise < 1)) {
    fail("probe sizes must be >= 1");
  }
  try {
    attack.validate();
  } catch (const ContractError& e) {
    fail(e.what());
  }
  switch (method) {
    case TrainMethod::kStandard:
      if (regularizer != Regularizer::kNone) fail("standard training takes no regularizer");
      break;
    case TrainMethod::kFgsm:
      if (attack.family != AttackFamily::kFgsm) fail("FGSM training needs an FGSM attack");
      break;
    case TrainMethod::kPgd:
      if (attack.family != AttackFamily::kPgd) fail("PGD training needs a PGD attack");
      if (regularizer != Regularizer::kNone && regularizer != Regularizer::kNoiseAug) {
        fail("PGD training supports only the none and noiseaug regularizers");
      }
      break;
  }
}

double cyclic_lr(double step, double total_steps, double max_lr) {
  if (!(step >= 0 && step <= total_steps)) throw ContractError("cyclic_lr: step outside [0, total_steps]");
  if (total_steps <= 0) return 0.0;
  const double half = total_steps / 2;
  return step <= half ? max_lr * step / half : max_lr * (total_steps - step) / half;
}

template <typename T>
void sgd_momentum_step(std::vector<NamedTensor<T>>& params, const std::vector<NamedTensor<T>>& grads,
                       std::vector<NamedTensor<T>>& velocity, T lr, T momentum, T weight_decay) {
  if (velocity.empty()) {
    for (const auto& p : params) velocity.push_back({p.name, Tensor<T>(p.value.shape())});
  }
  if (grads.size() != params.size() || velocity.size() != params.size()) {
    throw ContractError("sgd: parameter, gradient and velocity lists differ in length");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    const auto& g = grads[i];
    auto& v = velocity[i];
    if (g.name != p.name || v.name != p.name) {
      throw ContractError("sgd: key mismatch at '" + p.name + "' ('" + g.name + "', '" + v.name + "')");
    }
    require_same_shape(p.value.shape(), g.value.shape(), ("sgd gradient " + p.name).c_str());
    require_same_shape(p.value.shape(), v.value.shape(), ("sgd velocity " + p.name).c_str());
    for (std::size_t k = 0; k < p.value.size(); ++k) {
      v.value[k] = momentum * v.value[k] + (g.value[k] + weight_decay * p.value[k]);
      p.value[k] -= lr * v.value[k];
    }
  }
}

TrainStreams TrainStreams::from_seed(std::uint64_t seed) {
  return {make_rng(seed, {1}), make_rng(seed, {2}), make_rng(seed, {3}), make_rng(seed, {4})};
}

template <typename T>
Var logit_align_objective(Graph<T>& g, const Model<T>& model, std::span<const Var> params, const Tensor<T>& adv_clean,
                          const Tensor<T>& adv_noisy, const Tensor<T>& targets, bool detach_clean) {
  const Var za = model.forward(g, params, g.constant(adv_clean));
  const Var zb = model.forward(g, params, g.constant(adv_noisy));
  const Var p = detach_clean ? g.constant(g.value(za)) : za;
  return ops::add(g, ops::softmax_cross_entropy(g, za, targets), ops::kl_divergence(g, p, zb));
}

template <typename T>
Var noiseaug_mixed_objective(Graph<T>& g, const Model<T>& model, std::span<const Var> params,
                             const Tensor<T>& adv_clean, const Tensor<T>& adv_noisy, const Tensor<T>& targets,
                             T lambda) {
  if (!(lambda >= T{0} && lambda <= T{1})) throw ContractError("noiseaug_mixed: lambda must lie in [0,1]");
  const Var ce_clean = ops::softmax_cross_entropy(g, model.forward(g, params, g.constant(adv_clean)), targets);
  const Var ce_noisy = ops::softmax_cross_entropy(g, model.forward(g, params, g.constant(adv_noisy)), targets);
  return ops::add(g, ops::scale(g, ce_clean, T{1} - lambda), ops::scale(g, ce_noisy, lambda));
}

template <typename T>
Var grad_align_penalty(Graph<T>& g, const ExampleLoss<T>& loss, const Tensor<T>& x, const Tensor<T>& eta) {
  const Var x0 = g.input(x);
  const Var x1 = g.input(x + eta);
  const Var l0 = ops::sum(g, loss(g, x0));
  const Var l1 = ops::sum(g, loss(g, x1));
  const Var w0[] = {x0};
  const Var w1[] = {x1};
  const Var g0 = g.grad(l0, w0, true)[0];
  const Var g1 = g.grad(l1, w1, true)[0];
  const Var cos = ops::mean(g, ops::cosine_rows(g, g0, g1));
  return ops::add_scalar(g, ops::scale(g, cos, T{-1}), T{1});
}

template <typename T>
T grad_align_penalty(const Model<T>& model, const Tensor<T>& x, std::span<const int> labels, double eps, Rng& rng) {
  const auto targets = ops::one_hot<T>(labels, model.num_classes());
  const auto eta = rand_init(x.shape(), static_cast<T>(eps), rng);
  Graph<T> g;
  const auto params = model.bind(g, false);
  ExampleLoss<T> loss = [&](Graph<T>& gg, Var in) {
    return ops::cross_entropy_rows(gg, model.forward(gg, params, in), targets);
  };
  return g.value(grad_align_penalty(g, loss, x, eta)).item();
}

namespace {

template <typename T>
Tensor<T> permute_rows(const Tensor<T>& a, std::span<const std::size_t> perm) {
  return gather_rows(a, perm);
}

template <typename T>
void apply_augmentation(Tensor<T>& x, Tensor<T>& targets, const TrainConfig& cfg, Rng& rng) {
  switch (cfg.augmentation) {
    case Augmentation::kNone:
      return;
    case Augmentation::kCutout:
      x = cutout(x, std::min({cfg.cutout_patch, x.dim(2), x.dim(3)}), rng);
      return;
    case Augmentation::kMixup:
    case Augmentation::kCutmix: {
      std::vector<std::size_t> perm(x.dim(0));
      std::iota(perm.begin(), perm.end(), std::size_t{0});
      std::shuffle(perm.begin(), perm.end(), rng);
      const auto lam = static_cast<T>(sample_beta(cfg.mix_alpha, cfg.mix_alpha, rng));
      const auto x2 = permute_rows(x, perm);
      const auto y2 = permute_rows(targets, perm);
      auto mixed = cfg.augmentation == Augmentation::kMixup ? mixup(x, targets, x2, y2, lam)
                                                            : cutmix(x, targets, x2, y2, lam, rng);
      x = std::move(mixed.x);
      targets = std::move(mixed.y);
      return;
    }
  }
}

}  // namespace

template <typename T>
Var batch_objective(Graph<T>& g, const Model<T>& model, std::span<const Var> params, const Tensor<T>& x_in,
                    const Tensor<T>& targets_in, TrainMethod method, const TrainConfig& cfg, TrainStreams& s) {
  Tensor<T> x = x_in;
  Tensor<T> targets = targets_in;
  apply_augmentation(x, targets, cfg, s.augment);

  auto ce_on = [&](const Tensor<T>& input) {
    return ops::softmax_cross_entropy(g, model.forward(g, params, g.constant(input)), targets);
  };
  if (method == TrainMethod::kStandard) return ce_on(x);

  // Attacks see the current weights as constants.
  const auto frozen = model_loss(model, targets);
  auto adversarial = [&](const Tensor<T>& base, Rng& rng) { return base + attack(frozen, base, cfg.attack, rng); };

  switch (cfg.regularizer) {
    case Regularizer::kNone:
      return ce_on(adversarial(x, s.clean_attack));
    case Regularizer::kNoiseAug: {
      const auto noisy = noise_aug(x, cfg.noise, s.noise);
      return ce_on(adversarial(noisy, s.noisy_attack));
    }
    case Regularizer::kNoiseAugMixed: {
      const auto adv_clean = adversarial(x, s.clean_attack);
      const auto noisy = noise_aug(x, cfg.noise, s.noise);
      const auto adv_noisy = adversarial(noisy, s.noisy_attack);
      return noiseaug_mixed_objective(g, model, params, adv_clean, adv_noisy, targets, static_cast<T>(cfg.lambda));
    }
    case Regularizer::kGradAlign: {
      const Var ce = ce_on(adversarial(x, s.clean_attack));
      const auto eta = rand_init(x.shape(), static_cast<T>(cfg.attack.eps), s.noise);
      ExampleLoss<T> live = [&](Graph<T>& gg, Var in) {
        return ops::cross_entropy_rows(gg, model.forward(gg, params, in), targets);
      };
      const Var penalty = grad_align_penalty(g, live, x, eta);
      return ops::add(g, ce, ops::scale(g, penalty, static_cast<T>(cfg.lambda)));
    }
    case Regularizer::kLogitAlign: {
      const auto adv_clean = adversarial(x, s.clean_attack);
      const auto noisy = noise_aug(x, cfg.noise, s.noise);
      const auto adv_noisy = adversarial(noisy, s.noisy_attack);
      return logit_align_objective(g, model, params, adv_clean, adv_noisy, targets, cfg.detach_clean_logits);
    }
  }
  throw ContractError("batch_objective: unknown regularizer");
}

template <typename T>
T objective_value(const Model<T>& model, const Tensor<T>& x, std::span<const int> labels, TrainMethod method,
                  const TrainConfig& cfg, TrainStreams& streams) {
  Graph<T> g;
  const auto params = model.bind(g, true);
  const auto targets = ops::one_hot<T>(labels, model.num_classes());
  return g.value(batch_objective(g, model, params, x, targets, method, cfg, streams)).item();
}

namespace {

template <typename T>
void probe_epoch(const Model<T>& model, const Dataset& probe, const TrainConfig& cfg, EpochRecord& rec) {
  if (!cfg.probe.enabled) {
    const double nan = std::numeric_limits<double>::quiet_NaN();
    rec.std_acc = rec.fgsm_acc = rec.pgd_acc = rec.local_linearity = nan;
    return;
  }
  const double eps = cfg.attack.eps;
  // Same probe draws every epoch, so epoch-to-epoch changes reflect the model only.
  Rng rng = make_rng(cfg.seed, {5});
  rec.std_acc = evaluate(model, probe, std::nullopt, rng);
  rec.fgsm_acc = evaluate(model, probe, AttackSpec::fgsm_eval(eps), rng);
  rec.pgd_acc = evaluate(model, probe, AttackSpec::pgd_eval(eps, cfg.probe.pgd_steps, cfg.probe.pgd_restarts), rng);
  rec.local_linearity = local_linearity(model, probe, eps, cfg.probe.linearity_noise, rng);
}

Dataset head(const Dataset& data, std::size_t n) {
  std::vector<std::size_t> idx(std::min(n, data.size()));
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  return take(data, idx);
}

}  // namespace

template <typename T>
RunHistory train(Model<T>& model, const Dataset& data, const TrainConfig& cfg, TrainMethod method,
                 const Dataset* probe_data, const EpochCallback& on_epoch) {
  cfg.validate(method);
  RunHistory history;
  if (cfg.epochs == 0) return history;
  if (data.size() == 0) throw ContractError("train: empty dataset");
  data.validate();
  if (data.num_classes != model.num_classes()) throw ContractError("train: dataset and model disagree on classes");

  const Dataset probe = cfg.probe.enabled ? head(probe_data ? *probe_data : data, cfg.probe.examples) : Dataset{};
  TrainStreams streams = TrainStreams::from_seed(cfg.seed);
  std::vector<NamedTensor<T>> velocity;
  const std::size_t per_epoch = epoch_batches(data.size(), cfg.batch_size, false, 0, 0, cfg.drop_last).size();
  const double total_steps = static_cast<double>(per_epoch) * cfg.epochs;
  std::size_t step = 0;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    double loss_sum = 0;
    std::size_t seen = 0;
    double lr = 0;
    for (const auto& idx : epoch_batches(data.size(), cfg.batch_size, cfg.shuffle, cfg.seed, epoch, cfg.drop_last)) {
      const auto x = gather_rows(data.images, idx).template cast<T>();
      std::vector<int> y;
      y.reserve(idx.size());
      for (auto i : idx) y.push_back(data.labels[i]);
      const auto targets = ops::one_hot<T>(y, model.num_classes());
      lr = cyclic_lr(static_cast<double>(step) + 0.5, total_steps, cfg.max_lr);
      ++step;

      Graph<T> g;
      const auto params = model.bind(g, true);
      const Var loss = batch_objective(g, model, params, x, targets, method, cfg, streams);
      const auto grad_vars = g.grad(loss, params);
      std::vector<NamedTensor<T>> grads;
      grads.reserve(params.size());
      for (std::size_t i = 0; i < params.size(); ++i) grads.push_back({model.params()[i].name, g.value(grad_vars[i])});
      loss_sum += static_cast<double>(g.value(loss).item()) * static_cast<double>(idx.size());
      seen += idx.size();
      sgd_momentum_step(model.params(), grads, velocity, static_cast<T>(lr), static_cast<T>(cfg.momentum),
                        static_cast<T>(cfg.weight_decay));
    }
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = seen ? loss_sum / static_cast<double>(seen) : 0.0;
    rec.lr = lr;
    probe_epoch(model, probe, cfg, rec);
    history.epochs.push_back(rec);
    history.epoch_seconds.push_back(seconds);
    if (on_epoch) on_epoch(rec, seconds);
  }
  return history;
}

#define ADVLAB_TRAINING_INSTANTIATE(T)                                                                              \
  template void sgd_momentum_step(std::vector<NamedTensor<T>>&, const std::vector<NamedTensor<T>>&,                \
                                  std::vector<NamedTensor<T>>&, T, T, T);                                          \
  template Var logit_align_objective(Graph<T>&, const Model<T>&, std::span<const Var>, const Tensor<T>&,           \
                                     const Tensor<T>&, const Tensor<T>&, bool);                                    \
  template Var noiseaug_mixed_objective(Graph<T>&, const Model<T>&, std::span<const Var>, const Tensor<T>&,        \
                                        const Tensor<T>&, const Tensor<T>&, T);                                    \
  template Var grad_align_penalty(Graph<T>&, const ExampleLoss<T>&, const Tensor<T>&, const Tensor<T>&);           \
  template T grad_align_penalty(const Model<T>&, const Tensor<T>&, std::span<const int>, double, Rng&);            \
  template Var batch_objective(Graph<T>&, const Model<T>&, std::span<const Var>, const Tensor<T>&,                 \
                               const Tensor<T>&, TrainMethod, const TrainConfig&, TrainStreams&);                  \
  template T objective_value(const Model<T>&, const Tensor<T>&, std::span<const int>, TrainMethod,                 \
                             const TrainConfig&, TrainStreams&);                                                   \
  template RunHistory train(Model<T>&, const Dataset&, const TrainConfig&, TrainMethod, const Dataset*,            \
                            const EpochCallback&);

ADVLAB_TRAINING_INSTANTIATE(float)
ADVLAB_TRAINING_INSTANTIATE(double)

}  // namespace advlab
