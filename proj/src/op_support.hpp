// Copyright 2026 The Harmony Authors
// SPDX-License-Identifier: Apache-2.0

// Shared plumbing for translation units that define differentiable ops.

#pragma once

#include <initializer_list>
#include <utility>

#include "harmony/tensor.hpp"

namespace harmony::detail {

/// True when a tape is active and some input needs a gradient.
template <typename Real>
bool tracking(std::initializer_list<const Tensor<Real>*> inputs) {
  if (GradTape<Real>::active() == nullptr) return false;
  for (const Tensor<Real>* t : inputs) {
    if (t->requires_grad()) return true;
  }
  return false;
}

template <typename Real, typename Fn>
void record(Tensor<Real>& out, Fn&& backward) {
  out.set_requires_grad(true);
  GradTape<Real>::active()->record(std::forward<Fn>(backward));
}

}  // namespace harmony::detail
