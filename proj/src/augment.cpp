#include "advlab/augment.hpp"

#include <algorithm>
#include <cmath>

namespace advlab {

std::string to_string(NoiseDist dist) { return dist == NoiseDist::kUniform ? "uniform" : "gaussian"; }

template <typename T>
Tensor<T> noise_aug(const Tensor<T>& x, const NoiseSpec& spec, Rng& rng) {
  if (!(spec.scale >= 0) || !(spec.eps >= 0)) throw ContractError("noise_aug: scale and eps must be non-negative");
  const double m = spec.magnitude();
  Tensor<T> out = x;
  if (spec.dist == NoiseDist::kUniform) {
    std::uniform_real_distribution<double> dist(-m, m);
    for (auto& v : out.data()) v += static_cast<T>(dist(rng));
  } else {
    std::normal_distribution<double> dist(0.0, 1.0);
    for (auto& v : out.data()) v += static_cast<T>(m * dist(rng));
  }
  if (spec.clip_image_range) {
    for (auto& v : out.data()) v = std::clamp(v, T{0}, T{1});
  }
  return out;
}

namespace {

struct ImageDims {
  std::size_t batch, channels, height, width;
};

ImageDims image_dims(const Shape& s, const char* what) {
  if (s.size() != 4) throw ShapeError(std::string(what) + ": expected [B,C,H,W], got " + shape_to_string(s));
  return {s[0], s[1], s[2], s[3]};
}

template <typename T>
void check_pair(const Tensor<T>& x1, const Tensor<T>& y1, const Tensor<T>& x2, const Tensor<T>& y2, T lam,
                const char* what) {
  require_same_shape(x1.shape(), x2.shape(), what);
  require_same_shape(y1.shape(), y2.shape(), what);
  if (y1.rank() != 2 || y1.dim(0) != x1.dim(0)) throw ShapeError(std::string(what) + ": labels must be [B,classes]");
  if (!(lam >= T{0} && lam <= T{1})) throw ContractError(std::string(what) + ": lam must lie in [0,1]");
}

}  // namespace

template <typename T>
Tensor<T> cutout(const Tensor<T>& x, std::size_t patch, Rng& rng) {
  const auto d = image_dims(x.shape(), "cutout");
  if (patch > std::min(d.height, d.width)) throw ContractError("cutout: patch larger than the image");
  Tensor<T> out = x;
  if (patch == 0) return out;
  std::uniform_int_distribution<std::size_t> top(0, d.height - patch);
  std::uniform_int_distribution<std::size_t> left(0, d.width - patch);
  for (std::size_t b = 0; b < d.batch; ++b) {
    const std::size_t y0 = top(rng);
    const std::size_t x0 = left(rng);
    for (std::size_t c = 0; c < d.channels; ++c) {
      T* plane = out.data().data() + (b * d.channels + c) * d.height * d.width;
      for (std::size_t i = y0; i < y0 + patch; ++i) std::fill_n(plane + i * d.width + x0, patch, T{0});
    }
  }
  return out;
}

template <typename T>
MixedBatch<T> mixup(const Tensor<T>& x1, const Tensor<T>& y1, const Tensor<T>& x2, const Tensor<T>& y2, T lam) {
  check_pair(x1, y1, x2, y2, lam, "mixup");
  MixedBatch<T> out{x1, y1};
  const T rest = T{1} - lam;
  for (std::size_t i = 0; i < out.x.size(); ++i) out.x[i] = lam * x1[i] + rest * x2[i];
  for (std::size_t i = 0; i < out.y.size(); ++i) out.y[i] = lam * y1[i] + rest * y2[i];
  return out;
}

template <typename T>
MixedBatch<T> cutmix(const Tensor<T>& x1, const Tensor<T>& y1, const Tensor<T>& x2, const Tensor<T>& y2, T lam,
                     Rng& rng, double* pasted_fraction) {
  check_pair(x1, y1, x2, y2, lam, "cutmix");
  const auto d = image_dims(x1.shape(), "cutmix");
  const double side = std::sqrt(1.0 - static_cast<double>(lam));
  const auto cut_h = std::min(d.height, static_cast<std::size_t>(std::lround(side * static_cast<double>(d.height))));
  const auto cut_w = std::min(d.width, static_cast<std::size_t>(std::lround(side * static_cast<double>(d.width))));
  MixedBatch<T> out{x1, y1};
  const double fraction = static_cast<double>(cut_h * cut_w) / static_cast<double>(d.height * d.width);
  if (pasted_fraction) *pasted_fraction = fraction;
  if (cut_h == 0 || cut_w == 0) return out;
  std::uniform_int_distribution<std::size_t> top(0, d.height - cut_h);
  std::uniform_int_distribution<std::size_t> left(0, d.width - cut_w);
  for (std::size_t b = 0; b < d.batch; ++b) {
    const std::size_t y0 = top(rng);
    const std::size_t x0 = left(rng);
    for (std::size_t c = 0; c < d.channels; ++c) {
      const std::size_t base = (b * d.channels + c) * d.height * d.width;
      for (std::size_t i = y0; i < y0 + cut_h; ++i) {
        std::copy_n(x2.data().begin() + base + i * d.width + x0, cut_w, out.x.data().begin() + base + i * d.width + x0);
      }
    }
  }
  const T w2 = static_cast<T>(fraction);
  const T w1 = T{1} - w2;
  for (std::size_t i = 0; i < out.y.size(); ++i) out.y[i] = w1 * y1[i] + w2 * y2[i];
  return out;
}

double sample_beta(double a, double b, Rng& rng) {
  if (!(a > 0) || !(b > 0)) throw ContractError("sample_beta: parameters must be positive");
  std::gamma_distribution<double> ga(a, 1.0);
  std::gamma_distribution<double> gb(b, 1.0);
  const double u = ga(rng);
  const double v = gb(rng);
  return (u + v) > 0 ? u / (u + v) : 0.5;
}

#define ADVLAB_AUGMENT_INSTANTIATE(T)                                                                          \
  template Tensor<T> noise_aug(const Tensor<T>&, const NoiseSpec&, Rng&);                                      \
  template Tensor<T> cutout(const Tensor<T>&, std::size_t, Rng&);                                              \
  template MixedBatch<T> mixup(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);      \
  template MixedBatch<T> cutmix(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T, Rng&, \
                                double*);

ADVLAB_AUGMENT_INSTANTIATE(float)
ADVLAB_AUGMENT_INSTANTIATE(double)

}  // namespace advlab
