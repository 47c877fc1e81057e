// Copyright 2026 The Harmony Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <random>
#include <string>

#include "harmony/ops.hpp"
#include "harmony/params.hpp"

namespace harmony {

using Rng = std::mt19937_64;

/// Kaiming-uniform fill for a layer followed by a leaky rectifier of the
/// given negative slope: U(-b, b), b = sqrt(6 / ((1 + slope^2) fan_in)).
template <typename Real>
void kaiming_uniform(Tensor<Real>& weight, int fan_in, double slope, Rng& rng);

/// x W^T + b on token matrices. Registers "<name>.weight" (out x in) and
/// "<name>.bias" (out).
template <typename Real>
class LinearLayer {
 public:
  LinearLayer() = default;
  LinearLayer(ParamStore<Real>& store, const std::string& name, int in, int out, Rng& rng,
              bool with_bias = true);

  [[nodiscard]] Tensor<Real> operator()(const Tensor<Real>& x) const;
  [[nodiscard]] int in_features() const { return in_; }
  [[nodiscard]] int out_features() const { return out_; }
  [[nodiscard]] const Tensor<Real>& weight() const { return weight_; }
  [[nodiscard]] const Tensor<Real>& bias() const { return bias_; }

 private:
  int in_ = 0;
  int out_ = 0;
  Tensor<Real> weight_;
  Tensor<Real> bias_;
};

template <typename Real>
class Conv2dLayer {
 public:
  Conv2dLayer() = default;
  Conv2dLayer(ParamStore<Real>& store, const std::string& name, int in, int out, int kernel,
              int stride, Rng& rng);

  [[nodiscard]] Tensor<Real> operator()(const Tensor<Real>& x) const;
  [[nodiscard]] const Tensor<Real>& weight() const { return weight_; }
  [[nodiscard]] const Tensor<Real>& bias() const { return bias_; }

 private:
  int stride_ = 1;
  int pad_ = 0;
  Tensor<Real> weight_;
  Tensor<Real> bias_;
};

/// Instance norm followed by a learned per-channel scale and shift; used in
/// the backbone only.
template <typename Real>
class AffineInstanceNorm {
 public:
  AffineInstanceNorm() = default;
  AffineInstanceNorm(ParamStore<Real>& store, const std::string& name, int channels);

  [[nodiscard]] Tensor<Real> operator()(const Tensor<Real>& x) const;

 private:
  Tensor<Real> gamma_;
  Tensor<Real> beta_;
};

/// Single-head scaled dot-product self-attention over the h*w spatial tokens
/// of each sample, with a residual connection: y = x + out(attn(q, k) v).
template <typename Real>
class SelfAttentionLayer {
 public:
  SelfAttentionLayer() = default;
  SelfAttentionLayer(ParamStore<Real>& store, const std::string& name, int channels, Rng& rng);

  [[nodiscard]] Tensor<Real> operator()(const Tensor<Real>& x) const;

  /// Attention matrix (h*w x h*w) of one sample; for inspection only.
  [[nodiscard]] Tensor<Real> attention(const Tensor<Real>& sample) const;

 private:
  int channels_ = 0;
  LinearLayer<Real> query_;
  LinearLayer<Real> key_;
  LinearLayer<Real> value_;
  LinearLayer<Real> out_;
};

/// softmax(scale * query key^T) value for token matrices. The attention
/// matrix (rows of query x rows of key) is stored in *weights when given.
template <typename Real>
Tensor<Real> attend(const Tensor<Real>& query, const Tensor<Real>& key, const Tensor<Real>& value,
                    Real scale_factor, Tensor<Real>* weights = nullptr);

/// Flat locations 0..plane-1.
std::vector<int> all_locations(int plane);

/// Nearest-neighbour resample of an (n, 1, H, W) mask to (n, 1, h, w),
/// sampling source index floor((i + 0.5) * H / h) and thresholding at 0.5 so
/// the result stays binary. Not differentiable; masks are constants.
template <typename Real>
Tensor<Real> resize_mask(const Tensor<Real>& mask, int h, int w);

/// 1 - mask.
template <typename Real>
Tensor<Real> complement_mask(const Tensor<Real>& mask);

extern template class LinearLayer<float>;
extern template class LinearLayer<double>;
extern template class Conv2dLayer<float>;
extern template class Conv2dLayer<double>;
extern template class AffineInstanceNorm<float>;
extern template class AffineInstanceNorm<double>;
extern template class SelfAttentionLayer<float>;
extern template class SelfAttentionLayer<double>;

}  // namespace harmony
