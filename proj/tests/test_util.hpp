// Copyright 2026 The Harmony Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "harmony/tensor.hpp"

namespace harmony::testing {

template <typename Real = double>
Tensor<Real> random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<Real> values(shape.numel());
  for (auto& v : values) v = static_cast<Real>(dist(rng));
  return Tensor<Real>(shape, std::move(values));
}

/// Binary (n, 1, h, w) mask with roughly `density` ones; every sample gets at
/// least one 1 and one 0 when the plane allows it.
template <typename Real = double>
Tensor<Real> random_mask(int n, int h, int w, std::mt19937_64& rng, double density = 0.4) {
  std::bernoulli_distribution coin(density);
  Tensor<Real> mask(Shape{n, 1, h, w});
  const int plane = h * w;
  for (int s = 0; s < n; ++s) {
    Real* m = mask.data() + static_cast<std::size_t>(s) * plane;
    for (int i = 0; i < plane; ++i) m[i] = coin(rng) ? Real(1) : Real(0);
    if (plane >= 2) {
      std::uniform_int_distribution<int> pick(0, plane - 1);
      const int one = pick(rng);
      int zero = pick(rng);
      while (zero == one) zero = pick(rng);
      m[one] = Real(1);
      m[zero] = Real(0);
    }
  }
  return mask;
}

template <typename Real>
double max_abs_diff(const Tensor<Real>& a, const Tensor<Real>& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i)
    worst = std::max(worst, std::abs(static_cast<double>(a.values()[i]) - b.values()[i]));
  return worst;
}

/// Bit-exact equality of shape and every stored value.
template <typename Real>
bool identical(const Tensor<Real>& a, const Tensor<Real>& b) {
  if (!(a.shape() == b.shape())) return false;
  return std::equal(a.values().begin(), a.values().end(), b.values().begin());
}

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

}  // namespace harmony::testing
