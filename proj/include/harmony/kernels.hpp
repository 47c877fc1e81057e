// Copyright 2026 The Harmony Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Dense building blocks shared by the differentiable ops. Row-major,
// explicit leading dimensions, no aliasing between inputs and outputs.

namespace harmony::kernels {

/// C[m x n] += A[m x k] * B[k x n]. Every C element accumulates over k in
/// increasing order, so results are reproducible run to run.
template <typename Real>
void gemm_accumulate(int m, int n, int k, const Real* a, int lda, const Real* b, int ldb,
                     Real* c, int ldc);

/// dst[cols x rows] = src[rows x cols]^T
template <typename Real>
void transpose(int rows, int cols, const Real* src, Real* dst);

/// Unfolds one (channels, h, w) image into a (channels*k*k) x (oh*ow)
/// column matrix for a square kernel.
template <typename Real>
void im2col(const Real* image, int channels, int h, int w, int kernel, int stride, int pad,
            int oh, int ow, Real* columns);

/// Adjoint of im2col: scatters-adds columns back into the image.
template <typename Real>
void col2im(const Real* columns, int channels, int h, int w, int kernel, int stride, int pad,
            int oh, int ow, Real* image);

}  // namespace harmony::kernels
