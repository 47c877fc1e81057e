// Copyright 2026 The Harmony Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <vector>

#include "harmony/layers.hpp"

namespace harmony {

/// Foreground and background flat locations of one sample. Together they
/// cover the grid exactly once.
struct TokenSplit {
  std::vector<int> fg_index;
  std::vector<int> bg_index;
};

/// Splits a (1, 1, h, w) binary mask into foreground (>= 0.5) and
/// background location lists, both in raster order.
template <typename Real>
TokenSplit split_tokens(const Tensor<Real>& mask);

struct LtlOptions {
  double attn_scale = 1.0;
  /// Normalize foreground and background separately instead of the whole
  /// frame before matching.
  bool masked_norm = false;
  double eps = kNormEpsilon;
};

/// Per-sample record of the last forward pass, for visualization.
template <typename Real>
struct LtlTrace {
  std::vector<TokenSplit> splits;
  /// L_f x L_b attention of each sample; undefined when either side is empty.
  std::vector<Tensor<Real>> attention;
};

/// Location-to-location translation. Every foreground token of the
/// normalized feature map attends over the background tokens; the attended
/// mix is fused with the token through a linear map 2C -> C and written back
/// at the foreground locations. Background locations keep their normalized
/// features.
template <typename Real>
class LtlModule {
 public:
  LtlModule() = default;
  LtlModule(ParamStore<Real>& store, const std::string& name, int channels, Rng& rng,
            LtlOptions options = {});

  /// f is (n, C, h, w); mask is (n, 1, H, W) at any resolution.
  [[nodiscard]] Tensor<Real> operator()(const Tensor<Real>& f, const Tensor<Real>& mask,
                                        LtlTrace<Real>* trace = nullptr) const;

  /// Self-attention followed by the configured instance norm.
  [[nodiscard]] Tensor<Real> normalize(const Tensor<Real>& f, const Tensor<Real>& mask) const;

  [[nodiscard]] const LtlOptions& options() const { return options_; }

 private:
  int channels_ = 0;
  LtlOptions options_;
  SelfAttentionLayer<Real> attention_;
  LinearLayer<Real> fuse_;
};

extern template class LtlModule<float>;
extern template class LtlModule<double>;

}  // namespace harmony
