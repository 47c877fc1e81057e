// Copyright 2026 The Harmony Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <vector>

#include "harmony/layers.hpp"

namespace harmony {

/// Sliding-window layout of background blocks on a feature map.
struct PatchGeometry {
  int patch_h = 1;
  int patch_w = 1;
  int stride_h = 1;
  int stride_w = 1;

  /// Patch extent = size / patch_divisor, stride = size / stride_divisor,
  /// each clamped to at least one pixel.
  static PatchGeometry from_divisors(int h, int w, int patch_divisor, int stride_divisor);
};

/// Every window origin in raster order, before any coverage filtering.
std::vector<PatchOrigin> candidate_origins(int h, int w, const PatchGeometry& g);

/// Background blocks of one sample with their statistics and content tokens.
template <typename Real>
struct PatchSet {
  std::vector<PatchOrigin> origins;  // retained windows only
  Tensor<Real> blocks;               // (K, C, ph, pw), background-only features
  Tensor<Real> masks;                // (K, 1, ph, pw)
  Tensor<Real> mean;                 // K x C
  Tensor<Real> std;                  // K x C
  Tensor<Real> content;              // K x C

  [[nodiscard]] int size() const { return static_cast<int>(origins.size()); }
};

/// Cuts the background features of one (1, C, h, w) sample into blocks and
/// computes per-block moments and projected content tokens. Windows without
/// any background pixel are dropped; an empty set comes back with K = 0.
template <typename Real>
PatchSet<Real> extract_patches(const Tensor<Real>& f, const Tensor<Real>& background,
                               const PatchGeometry& g, const LinearLayer<Real>& projection,
                               Real eps = Real(kNormEpsilon));

struct PtlOptions {
  int patch_divisor = 8;
  int stride_divisor = 32;
  /// When positive these override the divisor-derived geometry.
  int patch_size = 0;
  int stride = 0;
  double attn_scale = 1.0;
  double eps = kNormEpsilon;
};

template <typename Real>
struct PtlTrace {
  /// L_f x K attention of each sample (undefined when nothing was matched).
  std::vector<Tensor<Real>> attention;
  std::vector<std::vector<PatchOrigin>> origins;
  /// (1, 1, h, w) per sample: attention mass of all foreground rows summed
  /// onto the background pixels of each block's footprint.
  std::vector<Tensor<Real>> contribution;
};

/// Patch-to-location translation: each foreground location takes the
/// appearance (mean, std) of the background blocks whose content resembles
/// its own, and re-styles its normalized content with it.
template <typename Real>
class PtlModule {
 public:
  PtlModule() = default;
  /// `feature_size` fixes the block layout and hence the projection width.
  PtlModule(ParamStore<Real>& store, const std::string& name, int channels, int feature_size,
            Rng& rng, PtlOptions options = {});

  [[nodiscard]] Tensor<Real> operator()(const Tensor<Real>& f, const Tensor<Real>& mask,
                                        PtlTrace<Real>* trace = nullptr) const;

  [[nodiscard]] const PatchGeometry& geometry() const { return geometry_; }
  [[nodiscard]] const LinearLayer<Real>& projection() const { return projection_; }

 private:
  Tensor<Real> translate(const Tensor<Real>& f, const Tensor<Real>& mask, PtlTrace<Real>* trace) const;

  int channels_ = 0;
  int feature_size_ = 0;
  PtlOptions options_;
  PatchGeometry geometry_;
  LinearLayer<Real> projection_;
};

extern template class PtlModule<float>;
extern template class PtlModule<double>;

}  // namespace harmony
