// Copyright 2026 The Harmony Authors
// SPDX-License-Identifier: Apache-2.0

#include "harmony/kernels.hpp"

#include <algorithm>
#include <cstdlib>
#include <string>
#include <utility>
#include <vector>

#include "harmony/parallel.hpp"

namespace harmony {

int worker_threads() {
  static const int cached = [] {
    if (const char* env = std::getenv("HARMONY_THREADS")) {
      try {
        const int v = std::stoi(env);
        if (v > 0) return v;
      } catch (...) {
      }
    }
    return std::max(1, static_cast<int>(std::thread::hardware_concurrency()));
  }();
  return cached;
}

namespace kernels {
namespace {

constexpr int kBlockK = 256;
constexpr int kTileRows = 6;

#if defined(__AVX512F__)
#define HARMONY_VECTOR_BYTES 64
#else
#define HARMONY_VECTOR_BYTES 32
#endif

template <typename Real>
struct VecOf;
template <>
struct VecOf<float> {
  typedef float type __attribute__((vector_size(HARMONY_VECTOR_BYTES)));
};
template <>
struct VecOf<double> {
  typedef double type __attribute__((vector_size(HARMONY_VECTOR_BYTES)));
};
template <typename Real>
using Vec = typename VecOf<Real>::type;

template <typename Real>
constexpr int kLanes = HARMONY_VECTOR_BYTES / static_cast<int>(sizeof(Real));

template <typename Real>
inline Vec<Real> load(const Real* p) {
  Vec<Real> v;
  __builtin_memcpy(&v, p, sizeof(v));
  return v;
}

template <typename Real>
inline void store(Real* p, Vec<Real> v) {
  __builtin_memcpy(p, &v, sizeof(v));
}

// Rows x (2 vectors) register tile over one packed k block. `packed` holds
// kb rows of 2*lanes values; `scratch` is used when the tile is ragged.
template <typename Real, int Rows>
inline void tile(int kb, const Real* a, int lda, const Real* packed, Real* c, int ldc, int valid) {
  constexpr int lanes = kLanes<Real>;
  constexpr int width = 2 * lanes;
  Real edge[Rows][width];
  Real* base = c;
  int stride = ldc;
  if (valid < width) {
    for (int r = 0; r < Rows; ++r)
      for (int j = 0; j < width; ++j) edge[r][j] = j < valid ? c[r * ldc + j] : Real(0);
    base = &edge[0][0];
    stride = width;
  }
  Vec<Real> lo[Rows];
  Vec<Real> hi[Rows];
  for (int r = 0; r < Rows; ++r) {
    lo[r] = load(base + r * stride);
    hi[r] = load(base + r * stride + lanes);
  }
  for (int p = 0; p < kb; ++p) {
    const Vec<Real> b0 = load(packed + p * width);
    const Vec<Real> b1 = load(packed + p * width + lanes);
    for (int r = 0; r < Rows; ++r) {
      const Real ar = a[static_cast<std::ptrdiff_t>(r) * lda + p];
      lo[r] += ar * b0;
      hi[r] += ar * b1;
    }
  }
  for (int r = 0; r < Rows; ++r) {
    store(base + r * stride, lo[r]);
    store(base + r * stride + lanes, hi[r]);
  }
  if (valid < width) {
    for (int r = 0; r < Rows; ++r)
      for (int j = 0; j < valid; ++j) c[r * ldc + j] = edge[r][j];
  }
}

template <typename Real, int Rows>
inline void tile_rows(int rows, int kb, const Real* a, int lda, const Real* packed, Real* c,
                      int ldc, int valid) {
  if constexpr (Rows > 0) {
    if (rows == Rows) {
      tile<Real, Rows>(kb, a, lda, packed, c, ldc, valid);
    } else {
      tile_rows<Real, Rows - 1>(rows, kb, a, lda, packed, c, ldc, valid);
    }
  }
}

}  // namespace

template <typename Real>
void gemm_accumulate(int m, int n, int k, const Real* a, int lda, const Real* b, int ldb,
                     Real* c, int ldc) {
  constexpr int width = 2 * kLanes<Real>;
  std::vector<Real> packed(static_cast<std::size_t>(kBlockK) * width);
  for (int k0 = 0; k0 < k; k0 += kBlockK) {
    const int kb = std::min(kBlockK, k - k0);
    for (int j0 = 0; j0 < n; j0 += width) {
      const int valid = std::min(width, n - j0);
      for (int p = 0; p < kb; ++p) {
        const Real* src = b + static_cast<std::ptrdiff_t>(k0 + p) * ldb + j0;
        Real* dst = packed.data() + static_cast<std::ptrdiff_t>(p) * width;
        for (int j = 0; j < valid; ++j) dst[j] = src[j];
        for (int j = valid; j < width; ++j) dst[j] = Real(0);
      }
      for (int i = 0; i < m; i += kTileRows) {
        const int rows = std::min(kTileRows, m - i);
        tile_rows<Real, kTileRows>(rows, kb, a + static_cast<std::ptrdiff_t>(i) * lda + k0, lda,
                                   packed.data(), c + static_cast<std::ptrdiff_t>(i) * ldc + j0,
                                   ldc, valid);
      }
    }
  }
}

template <typename Real>
void transpose(int rows, int cols, const Real* src, Real* dst) {
  constexpr int kBlock = 32;
  for (int i0 = 0; i0 < rows; i0 += kBlock) {
    for (int j0 = 0; j0 < cols; j0 += kBlock) {
      const int i1 = std::min(rows, i0 + kBlock);
      const int j1 = std::min(cols, j0 + kBlock);
      for (int i = i0; i < i1; ++i)
        for (int j = j0; j < j1; ++j)
          dst[static_cast<std::ptrdiff_t>(j) * rows + i] = src[static_cast<std::ptrdiff_t>(i) * cols + j];
    }
  }
}

template <typename Real>
void im2col(const Real* image, int channels, int h, int w, int kernel, int stride, int pad,
            int oh, int ow, Real* columns) {
  const std::ptrdiff_t plane = static_cast<std::ptrdiff_t>(oh) * ow;
  for (int ch = 0; ch < channels; ++ch) {
    const Real* src = image + static_cast<std::ptrdiff_t>(ch) * h * w;
    for (int ky = 0; ky < kernel; ++ky) {
      for (int kx = 0; kx < kernel; ++kx) {
        Real* dst = columns + ((static_cast<std::ptrdiff_t>(ch) * kernel + ky) * kernel + kx) * plane;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * stride - pad + ky;
          Real* drow = dst + static_cast<std::ptrdiff_t>(oy) * ow;
          if (iy < 0 || iy >= h) {
            std::fill(drow, drow + ow, Real(0));
            continue;
          }
          const Real* srow = src + static_cast<std::ptrdiff_t>(iy) * w;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * stride - pad + kx;
            drow[ox] = (ix >= 0 && ix < w) ? srow[ix] : Real(0);
          }
        }
      }
    }
  }
}

template <typename Real>
void col2im(const Real* columns, int channels, int h, int w, int kernel, int stride, int pad,
            int oh, int ow, Real* image) {
  const std::ptrdiff_t plane = static_cast<std::ptrdiff_t>(oh) * ow;
  for (int ch = 0; ch < channels; ++ch) {
    Real* dst = image + static_cast<std::ptrdiff_t>(ch) * h * w;
    for (int ky = 0; ky < kernel; ++ky) {
      for (int kx = 0; kx < kernel; ++kx) {
        const Real* src =
            columns + ((static_cast<std::ptrdiff_t>(ch) * kernel + ky) * kernel + kx) * plane;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) continue;
          const Real* srow = src + static_cast<std::ptrdiff_t>(oy) * ow;
          Real* drow = dst + static_cast<std::ptrdiff_t>(iy) * w;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * stride - pad + kx;
            if (ix >= 0 && ix < w) drow[ix] += srow[ox];
          }
        }
      }
    }
  }
}

#define HARMONY_INSTANTIATE(Real)                                                            \
  template void gemm_accumulate<Real>(int, int, int, const Real*, int, const Real*, int,     \
                                      Real*, int);                                           \
  template void transpose<Real>(int, int, const Real*, Real*);                               \
  template void im2col<Real>(const Real*, int, int, int, int, int, int, int, int, Real*);    \
  template void col2im<Real>(const Real*, int, int, int, int, int, int, int, int, Real*);

HARMONY_INSTANTIATE(float)
HARMONY_INSTANTIATE(double)
#undef HARMONY_INSTANTIATE

}  // namespace kernels
}  // namespace harmony
