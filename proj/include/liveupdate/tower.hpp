// Copyright 2026 The liveupdate Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace liveupdate {

// Frozen two-layer perceptron: logit = w2 . relu(W1 z + b1) + b2.
struct DenseTower {
  std::size_t input_dim = 0;
  std::size_t hidden = 0;
  std::vector<float> w1;  // hidden x input_dim, row-major
  std::vector<float> b1;  // hidden
  std::vector<float> w2;  // hidden
  float b2 = 0.0f;

  static DenseTower zeros(std::size_t input_dim, std::size_t hidden);
  // Gaussian weights, W1 ~ N(0, gain1^2 / input_dim), w2 ~ N(0, gain2^2 / hidden).
  static DenseTower random(std::size_t input_dim, std::size_t hidden,
                           std::uint64_t seed, double gain1 = 1.5,
                           double gain2 = 1.5);

  double logit(std::span<const double> z) const;
  // d logit / dz scaled by `dlogit`, written into `dz`.
  void backward(std::span<const double> z, double dlogit,
                std::span<double> dz) const;
};

inline double sigmoid(double x) {
  return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

// Numerically stable binary cross-entropy in terms of the logit.
inline double bce_from_logit(double logit, int label) {
  const double softplus =
      logit > 0 ? logit + std::log1p(std::exp(-logit)) : std::log1p(std::exp(logit));
  return softplus - (label ? logit : 0.0);
}

}  // namespace liveupdate
