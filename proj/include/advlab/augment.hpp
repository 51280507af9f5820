#pragma once

#include <cstddef>
#include <string>

#include "advlab/rng.hpp"
#include "advlab/tensor.hpp"

namespace advlab {

enum class NoiseDist { kUniform, kGaussian };

/// Image-space noise: uniform on [-scale*eps, scale*eps] or scale*eps*N(0,1).
struct NoiseSpec {
  NoiseDist dist = NoiseDist::kUniform;
  double scale = 3.0;
  double eps = 8.0 / 255.0;
  bool clip_image_range = false;

  double magnitude() const { return scale * eps; }
};

std::string to_string(NoiseDist dist);

/// x + eta with fresh eta for every element of every call.
template <typename T>
Tensor<T> noise_aug(const Tensor<T>& x, const NoiseSpec& spec, Rng& rng);

/// Zeroes one patch x patch square per image across all channels; the patch
/// always lies fully inside the image.
template <typename T>
Tensor<T> cutout(const Tensor<T>& x, std::size_t patch, Rng& rng);

template <typename T>
struct MixedBatch {
  Tensor<T> x;
  Tensor<T> y;
};

template <typename T>
MixedBatch<T> mixup(const Tensor<T>& x1, const Tensor<T>& y1, const Tensor<T>& x2, const Tensor<T>& y2, T lam);

/// Pastes a box of relative area (1 - lam) from x2 into x1. Labels mix by the
/// realised pasted-pixel fraction, which is returned alongside.
template <typename T>
MixedBatch<T> cutmix(const Tensor<T>& x1, const Tensor<T>& y1, const Tensor<T>& x2, const Tensor<T>& y2, T lam,
                     Rng& rng, double* pasted_fraction = nullptr);

/// Beta(a, b) via two Gamma draws.
double sample_beta(double a, double b, Rng& rng);

}  // namespace advlab
