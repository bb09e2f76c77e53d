// Copyright 2026 The liveupdate Authors
// SPDX-License-Identifier: Apache-2.0

#include "liveupdate/tower.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

namespace liveupdate {

DenseTower DenseTower::zeros(std::size_t input_dim, std::size_t hidden) {
  DenseTower t;
  t.input_dim = input_dim;
  t.hidden = hidden;
  t.w1.assign(hidden * input_dim, 0.0f);
  t.b1.assign(hidden, 0.0f);
  t.w2.assign(hidden, 0.0f);
  return t;
}

DenseTower DenseTower::random(std::size_t input_dim, std::size_t hidden,
                              std::uint64_t seed, double gain1, double gain2) {
  DenseTower t = zeros(input_dim, hidden);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n01(0.0, 1.0);
  const double s1 = gain1 / std::sqrt(static_cast<double>(input_dim));
  const double s2 = gain2 / std::sqrt(static_cast<double>(hidden));
  for (auto& w : t.w1) w = static_cast<float>(s1 * n01(rng));
  for (auto& b : t.b1) b = static_cast<float>(0.1 * n01(rng));
  for (auto& w : t.w2) w = static_cast<float>(s2 * n01(rng));
  return t;
}

double DenseTower::logit(std::span<const double> z) const {
  if (z.size() != input_dim) throw std::invalid_argument("tower input size mismatch");
  double out = b2;
  for (std::size_t h = 0; h < hidden; ++h) {
    double pre = b1[h];
    const float* row = w1.data() + h * input_dim;
    for (std::size_t i = 0; i < input_dim; ++i) pre += static_cast<double>(row[i]) * z[i];
    if (pre > 0.0) out += static_cast<double>(w2[h]) * pre;
  }
  return out;
}

void DenseTower::backward(std::span<const double> z, double dlogit,
                          std::span<double> dz) const {
  if (z.size() != input_dim || dz.size() != input_dim) {
    throw std::invalid_argument("tower input size mismatch");
  }
  std::fill(dz.begin(), dz.end(), 0.0);
  for (std::size_t h = 0; h < hidden; ++h) {
    double pre = b1[h];
    const float* row = w1.data() + h * input_dim;
    for (std::size_t i = 0; i < input_dim; ++i) pre += static_cast<double>(row[i]) * z[i];
    if (pre <= 0.0) continue;
    const double g = dlogit * static_cast<double>(w2[h]);
    for (std::size_t i = 0; i < input_dim; ++i) dz[i] += g * static_cast<double>(row[i]);
  }
}

}  // namespace liveupdate
