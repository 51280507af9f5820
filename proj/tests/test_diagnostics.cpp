#include <cmath>
#include <random>

#include "advlab/diagnostics.hpp"
#include "advlab/ops.hpp"
#include "doctest.h"
#include "test_support.hpp"

using namespace advlab;
using advlab::testing::random_tensor;

namespace {

RunHistory history_of(const std::vector<double>& pgd, double fgsm = 60.0) {
  RunHistory h;
  for (std::size_t i = 0; i < pgd.size(); ++i) {
    EpochRecord r;
    r.epoch = static_cast<int>(i) + 1;
    r.pgd_acc = pgd[i];
    r.fgsm_acc = fgsm;
    h.epochs.push_back(r);
  }
  return h;
}

std::vector<int> cycle_labels(std::size_t n, int classes) {
  std::vector<int> y(n);
  for (std::size_t i = 0; i < n; ++i) y[i] = static_cast<int>(i) % classes;
  return y;
}

double row_cosine_oracle(const Tensor<double>& a, const Tensor<double>& b, std::size_t row, std::size_t width) {
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = row * width; i < (row + 1) * width; ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return dot / std::sqrt(na * nb);
}

}  // namespace

TEST_CASE("local linearity limits") {
  auto model = build_toy_cnn<double>(4, {3, 8, 8}, 10, 3);
  std::mt19937_64 gen(1);
  auto x = random_tensor<double>({6, 3, 8, 8}, gen, 0, 1);
  auto y = cycle_labels(6, 10);
  Rng rng(5);
  CHECK(local_linearity(model, x, y, 0.0, 3, rng) == 1.0);

  const double value = local_linearity(model, x, y, 8 / 255.0, 4, rng);
  CHECK(value >= -1.0);
  CHECK(value <= 1.0);

  // Affine loss in x: constant input gradient.
  ExampleLoss<double> affine = [](Graph<double>& g, Var in) {
    Tensor<double> w(g.shape(in));
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = std::sin(static_cast<double>(i));
    return ops::add_scalar(g, ops::reduce_axis(g, ops::mul(g, in, g.constant(w)), 0), 3.0);
  };
  CHECK(local_linearity(affine, x, 0.3, 4, rng) == doctest::Approx(1.0).epsilon(1e-6));
  CHECK_THROWS_AS(local_linearity(model, x, y, 0.1, 0, rng), ContractError);
}

TEST_CASE("local linearity matches a finite-difference recomputation") {
  auto model = build_toy_cnn<double>(4, {3, 6, 6}, 10, 11);
  std::mt19937_64 gen(2);
  auto x = random_tensor<double>({4, 3, 6, 6}, gen, 0, 1);
  auto y = cycle_labels(4, 10);
  const auto targets = ops::one_hot<double>(y, 10);
  const double eps = 8 / 255.0;
  const int n_noise = 8;

  Rng rng(77);
  Rng replay = rng;
  const double measured = local_linearity(model, x, y, eps, n_noise, rng);

  std::function<double(const Tensor<double>&)> total_loss = [&](const Tensor<double>& p) {
    const auto logits = model.logits(p);
    double s = 0;
    for (std::size_t b = 0; b < 4; ++b) {
      double mx = -1e300;
      for (std::size_t c = 0; c < 10; ++c) mx = std::max(mx, logits[b * 10 + c]);
      double z = 0;
      for (std::size_t c = 0; c < 10; ++c) z += std::exp(logits[b * 10 + c] - mx);
      s += mx + std::log(z) - logits[b * 10 + static_cast<std::size_t>(y[b])];
    }
    return s;
  };
  const std::size_t width = 3 * 6 * 6;
  const auto clean = finite_diff_grad(total_loss, x, 1e-6);
  double oracle = 0;
  for (int k = 0; k < n_noise; ++k) {
    const auto eta = rand_init(x.shape(), eps, replay);
    const auto noisy = finite_diff_grad(total_loss, x + eta, 1e-6);
    for (std::size_t b = 0; b < 4; ++b) oracle += row_cosine_oracle(clean, noisy, b, width);
  }
  oracle /= 4.0 * n_noise;
  CHECK(std::abs(measured - oracle) < 0.05);
}

TEST_CASE("noise sensitivity profile") {
  auto model = build_small_cnn<double>(std::vector<std::size_t>{4, 6}, {3, 8, 8}, 10, 4);
  std::mt19937_64 gen(3);
  auto x = random_tensor<double>({5, 3, 8, 8}, gen, 0, 1);
  auto y = cycle_labels(5, 10);

  Rng rng(1);
  auto flat = noise_sensitivity_profile(model, x, y, 0.0, rng);
  CHECK(flat.forward_cos.size() == model.layers().size() + 1);
  CHECK(flat.boundaries.front() == "input");
  for (double c : flat.forward_cos) CHECK(c == 1.0);
  for (double c : flat.backward_cos) CHECK(c == 1.0);

  const double eps = 8 / 255.0;
  Rng a(9), b(9), c(9);
  auto prof = noise_sensitivity_profile(model, x, y, eps, a);
  auto again = noise_sensitivity_profile(model, x, y, eps, b);
  CHECK(prof.forward_cos == again.forward_cos);
  CHECK(prof.backward_cos == again.backward_cos);
  for (double v : prof.forward_cos) CHECK((v >= -1 && v <= 1));
  for (double v : prof.backward_cos) CHECK((v >= -1 && v <= 1));

  const auto eta = rand_init(x.shape(), eps, c);
  const auto l0 = model.logits(x);
  const auto l1 = model.logits(x + eta);
  double logit_cos = 0;
  for (std::size_t r = 0; r < 5; ++r) logit_cos += row_cosine_oracle(l0, l1, r, 10);
  CHECK(prof.forward_cos.back() == doctest::Approx(logit_cos / 5).epsilon(1e-12));

  Rng d(9);
  CHECK(prof.backward_cos.front() == doctest::Approx(local_linearity(model, x, y, eps, 1, d)).epsilon(1e-12));
}

TEST_CASE("evaluate") {
  auto data = synth_blobs(500, {3, 8, 8}, 10, 3.0, 1);
  double mean = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto model = build_toy_cnn<float>(4, {3, 8, 8}, 10, seed);
    Rng rng(seed);
    mean += evaluate(model, data, std::nullopt, rng) / 5;
  }
  CHECK(mean == doctest::Approx(10.0).epsilon(0.3));

  auto model = build_small_cnn<float>(std::vector<std::size_t>{8, 8}, {3, 8, 8}, 10, 2);
  const auto before = model.params();
  Rng rng(3);
  const double std_acc = evaluate(model, data, std::nullopt, rng);
  CHECK(evaluate(model, data, AttackSpec::pgd_eval(0.0, 3, 2), rng) == std_acc);
  CHECK(evaluate(model, data, AttackSpec::fgsm_eval(0.0), rng) == std_acc);
  const double fgsm = evaluate(model, data, AttackSpec::fgsm_eval(8 / 255.0), rng);
  const double pgd = evaluate(model, data, AttackSpec::pgd_eval(8 / 255.0, 10, 2), rng);
  CHECK(fgsm >= pgd);
  CHECK(std_acc >= fgsm);
  for (std::size_t i = 0; i < before.size(); ++i) CHECK(before[i].value == model.params()[i].value);
}

TEST_CASE("detect_co") {
  auto v = detect_co(history_of({30, 32, 33, 2, 0}));
  CHECK(v.detected);
  CHECK(v.epoch == 4);
  CHECK(v.peak_pgd_acc == 33);
  CHECK(v.final_pgd_acc == 0);

  CHECK_FALSE(detect_co(history_of({1, 5, 9, 20, 40})).detected);
  CHECK_FALSE(detect_co(history_of({30, 30, 30})).detected);

  auto flat = detect_co(history_of({0, 0, 0, 0}, 87.8));
  CHECK(flat.detected);
  CHECK(flat.epoch == 1);

  CHECK_FALSE(detect_co(history_of({0, 0, 0}, 20.0)).detected);
  auto late = detect_co(history_of({10, 12, 8, 4, 3}));
  CHECK(late.detected);
  CHECK(late.epoch == 4);

  CoThresholds strict{50, 0, 50};
  CHECK_FALSE(detect_co(history_of({30, 32, 33, 2, 1}), strict).detected);
  CHECK_THROWS_AS(detect_co(RunHistory{}), ContractError);
}

TEST_CASE("detect_co never fires on non-decreasing robustness above the floor") {
  std::mt19937_64 gen(8);
  std::uniform_real_distribution<double> step(0, 10);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> pgd{6 + step(gen)};
    for (int i = 0; i < 10; ++i) pgd.push_back(std::min(100.0, pgd.back() + step(gen)));
    REQUIRE_FALSE(detect_co(history_of(pgd, 90)).detected);
  }
}

TEST_CASE("history csv") {
  auto h = history_of({1.5, 2.25});
  h.epochs[0].lr = 0.1234567890123;
  const auto text = history_to_csv(h);
  CHECK(text.rfind(kHistoryCsvHeader, 0) == 0);
  CHECK(history_from_csv(text).epochs == h.epochs);
  CHECK(history_to_csv(RunHistory{}) == std::string(kHistoryCsvHeader) + "\n");
  CHECK_THROWS_AS(history_from_csv("epoch,x\n"), FormatError);
  CHECK_THROWS_AS(history_from_csv(std::string(kHistoryCsvHeader) + "\n1,2,3\n"), FormatError);
}
