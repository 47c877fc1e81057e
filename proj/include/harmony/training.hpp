// Copyright 2026 The Harmony Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "harmony/data.hpp"
#include "harmony/generator.hpp"

namespace harmony {

/// Denominator floor of the foreground loss, in pixels.
inline constexpr double kAreaFloor = 100.0;

/// Mean over the batch of sum ||pred - target||^2 / max(area_floor, sum M),
/// on [0, 1] values. Sums run over every pixel and channel; through the
/// composition step the off-mask terms are zero. Differentiable in pred.
template <typename Real>
Tensor<Real> foreground_mse_loss(const Tensor<Real>& pred, const Tensor<Real>& target, const Tensor<Real>& mask,
                                 double area_floor = kAreaFloor);

// --- optimizer -----------------------------------------------------------------

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Bias-corrected Adam over every tensor of a ParamStore.
template <typename Real>
class Adam {
 public:
  Adam(ParamStore<Real>& params, const AdamOptions& options);

  /// One update at lr * lr_factor. Checks every gradient first and throws
  /// NumericError naming the parameter on a non-finite value; nothing is
  /// modified in that case. Tensors without a gradient count as zero.
  void step(double lr_factor = 1.0);

  [[nodiscard]] std::int64_t steps() const noexcept { return t_; }
  [[nodiscard]] const AdamOptions& options() const noexcept { return options_; }

 private:
  ParamStore<Real>* params_;
  AdamOptions options_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  std::int64_t t_ = 0;
};

/// Step decay: the learning rate is multiplied by decay_factor from epoch
/// decay_epoch on (epochs counted from 0).
struct Schedule {
  int total_epochs = 140;
  int decay_epoch = 120;
  double decay_factor = 0.1;

  void validate() const;
  [[nodiscard]] double factor(int epoch) const { return epoch >= decay_epoch ? decay_factor : 1.0; }
};

// --- metrics -------------------------------------------------------------------

/// All values on the 0-255 scale. psnr is +infinity when mse is 0.
struct MetricsReport {
  double psnr = 0.0;
  double mse = 0.0;
  double fmse = 0.0;
};

/// pred, gt (1, 3, h, w) in [0, 1]; mask (1, 1, h, w). With quantize both
/// images are first rounded to 8-bit levels as in encode_png. Throws
/// EmptyRegionError when the mask is empty.
MetricsReport compute_metrics(const Tensor<float>& pred, const Tensor<float>& gt, const Tensor<float>& mask,
                              bool quantize = false);

/// Per-field means. The psnr mean is infinite if any sample's is.
MetricsReport mean_metrics(std::span<const MetricsReport> reports);

double psnr_from_mse(double mse);

/// "inf" for an infinite psnr, otherwise the shortest round-trip decimal.
std::string format_psnr(double psnr);

// --- training loop -------------------------------------------------------------

struct TrainOptions {
  Schedule schedule;
  AdamOptions adam;
  int batch_size = 4;
  double area_floor = kAreaFloor;
  bool augment = true;
  double resize_factor = 1.125;  // resize before the random crop
  double flip_probability = 0.5;
  std::int64_t max_steps = 0;    // 0: no cap
  std::uint64_t seed = 0;
  bool quantize_metrics = false;
  /// wall_ms is written as 0 unless enabled, so logs of equal runs match.
  bool log_wall_ms = false;
  std::string checkpoint_path;   // written at the end and on a halt
  int checkpoint_every = 0;      // epochs between extra saves; 0: none
  std::string log_path;          // JSON lines, one per epoch
  int prefetch_depth = 2;        // batches prepared ahead of the step

  void validate() const;
};

struct EpochLog {
  int epoch = 0;
  double lr = 0.0;
  double loss = 0.0;
  MetricsReport metrics;  // of the training outputs seen during the epoch
  double wall_ms = 0.0;
};

/// One JSON object, keys in the order epoch, lr, loss, psnr, mse, fmse,
/// wall_ms.
std::string format_epoch_log(const EpochLog& log);

struct TrainResult {
  std::vector<EpochLog> epochs;
  std::int64_t steps = 0;
  bool halted = false;       // stopped on a non-finite loss or gradient
  std::string halt_reason;
  MetricsReport final_metrics;     // clean outputs on the training set
  MetricsReport baseline_metrics;  // raw composites on the training set
};

/// Resizes a sample to size x size (nearest) without augmentation.
CompositeSample fit_sample(const CompositeSample& sample, int size);

/// Resize to round(resize_factor * size), random size x size crop and
/// horizontal flip with the given probability, all drawn from rng.
CompositeSample augment_sample(const CompositeSample& sample, int size, double resize_factor,
                               double flip_probability, std::mt19937_64& rng);

/// Clean metrics of the generator's outputs (and of the raw composites when
/// baseline is set) over samples fitted to the input size.
MetricsReport evaluate(const Generator<float>& generator, std::span<const CompositeSample> samples,
                       bool quantize, MetricsReport* baseline = nullptr);

/// Trains in place. A non-finite loss or gradient halts the run with the
/// last parameters whose loss was finite: a bad loss rolls back the latest
/// update, a bad gradient blocks the pending one. Those values are saved
/// when a checkpoint path is set and the result is marked halted.
TrainResult train(Generator<float>& generator, std::span<const CompositeSample> samples,
                  const TrainOptions& options);

}  // namespace harmony
