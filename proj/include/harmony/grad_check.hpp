// Copyright 2026 The Harmony Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <string>

#include "harmony/params.hpp"

namespace harmony {

struct GradCheckOptions {
  double step = 1e-4;
  /// Coordinates probed per parameter tensor; 0 probes every element.
  /// Larger tensors are sampled with a seeded generator.
  std::size_t max_coords_per_param = 0;
  std::uint64_t seed = 0;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  std::size_t coords_checked = 0;
};

/// Compares reverse-mode gradients of the scalar `loss` against central
/// differences over every parameter of `params`. Error per coordinate is
/// |analytic - numeric| / max(1, |numeric|). `loss` must rebuild the graph
/// from the current parameter values on every call.
GradCheckResult grad_check(const std::function<Tensor<double>()>& loss, ParamStore<double>& params,
                           const GradCheckOptions& options = {});

}  // namespace harmony
