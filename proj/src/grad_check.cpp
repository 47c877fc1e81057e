// Copyright 2026 The Harmony Authors
// SPDX-License-Identifier: Apache-2.0

#include "harmony/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

namespace harmony {
namespace {

double evaluate(const std::function<Tensor<double>()>& loss) {
  NoGradScope<double> no_grad;
  const double v = loss().item();
  if (!std::isfinite(v)) throw NumericError("grad_check: loss evaluated to a non-finite value");
  return v;
}

}  // namespace

GradCheckResult grad_check(const std::function<Tensor<double>()>& loss, ParamStore<double>& params,
                           const GradCheckOptions& options) {
  params.zero_grad();
  {
    GradTape<double> tape;
    Tensor<double> value = loss();
    if (!std::isfinite(value.item())) {
      throw NumericError("grad_check: loss evaluated to a non-finite value");
    }
    tape.backward(value);
  }

  GradCheckResult result;
  std::mt19937_64 rng(options.seed);
  for (auto& param : params) {
    Tensor<double>& t = param.value;
    std::vector<double> analytic(t.numel(), 0.0);
    if (t.has_grad()) std::copy(t.grad().begin(), t.grad().end(), analytic.begin());

    std::vector<std::size_t> coords(t.numel());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (options.max_coords_per_param > 0 && coords.size() > options.max_coords_per_param) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(options.max_coords_per_param);
      std::sort(coords.begin(), coords.end());
    }
    for (std::size_t idx : coords) {
      double& slot = t.values()[idx];
      const double saved = slot;
      slot = saved + options.step;
      const double up = evaluate(loss);
      slot = saved - options.step;
      const double down = evaluate(loss);
      slot = saved;
      const double numeric = (up - down) / (2.0 * options.step);
      const double err = std::abs(analytic[idx] - numeric) / std::max(1.0, std::abs(numeric));
      ++result.coords_checked;
      if (err > result.max_rel_error || result.worst_param.empty()) {
        result.max_rel_error = err;
        result.worst_param = param.name;
        result.worst_index = idx;
      }
    }
  }
  return result;
}

}  // namespace harmony
