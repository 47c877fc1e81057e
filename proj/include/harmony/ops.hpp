// Copyright 2026 The Harmony Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <span>
#include <vector>

#include "harmony/tensor.hpp"

// Differentiable operations. Each op records a backward closure on the
// thread's active GradTape when any input requires grad. Masks are plain
// constants: they are never differentiated.

namespace harmony {

inline constexpr double kNormEpsilon = 1e-5;

// --- elementwise -----------------------------------------------------------

template <typename Real> Tensor<Real> add(const Tensor<Real>& a, const Tensor<Real>& b);
template <typename Real> Tensor<Real> sub(const Tensor<Real>& a, const Tensor<Real>& b);
template <typename Real> Tensor<Real> mul(const Tensor<Real>& a, const Tensor<Real>& b);
template <typename Real> Tensor<Real> scale(const Tensor<Real>& a, Real factor);
template <typename Real> Tensor<Real> leaky_relu(const Tensor<Real>& x, Real slope);

/// x * mask with mask (n, 1, h, w) broadcast over channels.
template <typename Real>
Tensor<Real> mul_mask(const Tensor<Real>& x, const Tensor<Real>& mask);

/// Sum of all elements, as a (1, 1, 1, 1) tensor.
template <typename Real> Tensor<Real> sum(const Tensor<Real>& x);

// --- matrices ----------------------------------------------------------------
// Matrix operands use the (n*c*h) x w view of their shape.

template <typename Real>
Tensor<Real> matmul(const Tensor<Real>& a, const Tensor<Real>& b);

template <typename Real> Tensor<Real> transpose(const Tensor<Real>& a);

/// Row-wise softmax with per-row max subtraction. Throws EmptyRegionError
/// when there are no columns.
template <typename Real> Tensor<Real> softmax_rows(const Tensor<Real>& a);

/// x (rows x in) . weight(out x in)^T + bias(out)
template <typename Real>
Tensor<Real> linear(const Tensor<Real>& x, const Tensor<Real>& weight, const Tensor<Real>& bias);

/// [a | b] for matrices with equal row counts.
template <typename Real>
Tensor<Real> concat_cols(const Tensor<Real>& a, const Tensor<Real>& b);

// --- image layout ------------------------------------------------------------

template <typename Real>
Tensor<Real> concat_channels(const Tensor<Real>& a, const Tensor<Real>& b);

/// Square-kernel 2-D convolution. weight (out_c, in_c, k, k), bias holds
/// out_c values (any shape). Output extent floor((h + 2 pad - k)/stride) + 1.
template <typename Real>
Tensor<Real> conv2d(const Tensor<Real>& x, const Tensor<Real>& weight, const Tensor<Real>& bias,
                    int stride, int pad);

template <typename Real>
Tensor<Real> upsample_nearest(const Tensor<Real>& x, int factor);

/// Per-channel affine y = gamma[c] * x + beta[c].
template <typename Real>
Tensor<Real> channel_affine(const Tensor<Real>& x, const Tensor<Real>& gamma,
                            const Tensor<Real>& beta);

/// (1, c, h, w) slice of a batch.
template <typename Real> Tensor<Real> batch_slice(const Tensor<Real>& x, int index);
template <typename Real> Tensor<Real> batch_stack(std::span<const Tensor<Real>> parts);

/// Rows of an (1, c, h, w) map at flat locations y*w + x, as an L x c matrix.
template <typename Real>
Tensor<Real> gather_rows(const Tensor<Real>& x, std::span<const int> locations);

/// Copy of base (1, c, h, w) with the given locations replaced by the rows of
/// tokens (L x c).
template <typename Real>
Tensor<Real> scatter_rows(const Tensor<Real>& base, std::span<const int> locations,
                          const Tensor<Real>& tokens);

/// Windows of an (1, c, h, w) map at the given top-left origins, stacked as
/// (K, c, patch_h, patch_w).
struct PatchOrigin {
  int y = 0;
  int x = 0;
  friend bool operator==(const PatchOrigin&, const PatchOrigin&) = default;
};

template <typename Real>
Tensor<Real> unfold_patches(const Tensor<Real>& x, std::span<const PatchOrigin> origins,
                            int patch_h, int patch_w);

/// Reinterprets the element order of x under a new shape of equal size.
template <typename Real> Tensor<Real> reshape(const Tensor<Real>& x, Shape shape);

// --- statistics --------------------------------------------------------------

template <typename Real>
struct Moments {
  Tensor<Real> mean;  // (1, 1, n, c)
  Tensor<Real> std;   // (1, 1, n, c)
};

/// Per-(n, c) mean and sqrt(var + eps) over locations where mask = 1; mask is
/// (n, 1, h, w). Throws EmptyRegionError if some sample has an empty mask.
template <typename Real>
Moments<Real> masked_moments(const Tensor<Real>& x, const Tensor<Real>& mask,
                             Real eps = Real(kNormEpsilon));

/// Per-(n, c) normalization over the whole plane; no affine.
template <typename Real>
Tensor<Real> instance_norm(const Tensor<Real>& x, Real eps = Real(kNormEpsilon));

/// Normalizes by the masked moments inside the mask and passes every value
/// outside the mask through untouched. Samples with an empty mask are
/// returned unchanged.
template <typename Real>
Tensor<Real> masked_instance_norm(const Tensor<Real>& x, const Tensor<Real>& mask,
                                  Real eps = Real(kNormEpsilon));

}  // namespace harmony
