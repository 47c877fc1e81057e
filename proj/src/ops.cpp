// Copyright 2026 The Harmony Authors
// SPDX-License-Identifier: Apache-2.0

#include "harmony/ops.hpp"

#include <algorithm>
#include <cmath>
#include <initializer_list>
#include <limits>
#include <string>

#include "harmony/kernels.hpp"
#include "harmony/log.hpp"
#include "harmony/parallel.hpp"
#include "op_support.hpp"

namespace harmony {
namespace {

using detail::record;
using detail::tracking;

[[noreturn]] void shape_mismatch(const char* op, const Shape& a, const Shape& b) {
  throw DimensionError(std::string(op) + ": incompatible shapes " + a.str() + " and " + b.str());
}

void require_same(const char* op, const Shape& a, const Shape& b) {
  if (a != b) shape_mismatch(op, a, b);
}

void require_mask_shape(const char* op, const Shape& x, const Shape& mask) {
  if (mask.n != x.n || mask.c != 1 || mask.h != x.h || mask.w != x.w) shape_mismatch(op, x, mask);
}

void require_single(const char* op, const Shape& x) {
  if (x.n != 1) throw DimensionError(std::string(op) + ": expects a single sample, got " + x.str());
}

template <typename Real, typename Fn>
Tensor<Real> binary(const char* op, const Tensor<Real>& a, const Tensor<Real>& b, Fn fn) {
  require_same(op, a.shape(), b.shape());
  Tensor<Real> out(a.shape());
  const Real* pa = a.data();
  const Real* pb = b.data();
  Real* po = out.data();
  for (std::size_t i = 0; i < out.numel(); ++i) po[i] = fn(pa[i], pb[i]);
  return out;
}

}  // namespace

// --- elementwise -----------------------------------------------------------

template <typename Real>
Tensor<Real> add(const Tensor<Real>& a, const Tensor<Real>& b) {
  Tensor<Real> out = binary("add", a, b, [](Real x, Real y) { return x + y; });
  if (tracking<Real>({&a, &b})) {
    record(out, [a, b, out]() mutable {
      if (!out.has_grad()) return;
      const auto g = out.grad();
      if (a.requires_grad()) {
        auto ga = a.grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (b.requires_grad()) {
        auto gb = b.grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
      }
    });
  }
  return out;
}

template <typename Real>
Tensor<Real> sub(const Tensor<Real>& a, const Tensor<Real>& b) {
  Tensor<Real> out = binary("sub", a, b, [](Real x, Real y) { return x - y; });
  if (tracking<Real>({&a, &b})) {
    record(out, [a, b, out]() mutable {
      if (!out.has_grad()) return;
      const auto g = out.grad();
      if (a.requires_grad()) {
        auto ga = a.grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (b.requires_grad()) {
        auto gb = b.grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
      }
    });
  }
  return out;
}

template <typename Real>
Tensor<Real> mul(const Tensor<Real>& a, const Tensor<Real>& b) {
  Tensor<Real> out = binary("mul", a, b, [](Real x, Real y) { return x * y; });
  if (tracking<Real>({&a, &b})) {
    record(out, [a, b, out]() mutable {
      if (!out.has_grad()) return;
      const auto g = out.grad();
      if (a.requires_grad()) {
        auto ga = a.grad_buffer();
        const auto vb = b.values();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * vb[i];
      }
      if (b.requires_grad()) {
        auto gb = b.grad_buffer();
        const auto va = a.values();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * va[i];
      }
    });
  }
  return out;
}

template <typename Real>
Tensor<Real> scale(const Tensor<Real>& a, Real factor) {
  Tensor<Real> out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out.data()[i] = a.data()[i] * factor;
  if (tracking<Real>({&a})) {
    record(out, [a, out, factor]() mutable {
      if (!out.has_grad()) return;
      const auto g = out.grad();
      auto ga = a.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * factor;
    });
  }
  return out;
}

template <typename Real>
Tensor<Real> leaky_relu(const Tensor<Real>& x, Real slope) {
  Tensor<Real> out(x.shape());
  const Real* px = x.data();
  Real* po = out.data();
  for (std::size_t i = 0; i < out.numel(); ++i) po[i] = px[i] > Real(0) ? px[i] : px[i] * slope;
  if (tracking<Real>({&x})) {
    record(out, [x, out, slope]() mutable {
      if (!out.has_grad()) return;
      const auto g = out.grad();
      const auto v = x.values();
      auto gx = x.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += v[i] > Real(0) ? g[i] : g[i] * slope;
    });
  }
  return out;
}

template <typename Real>
Tensor<Real> mul_mask(const Tensor<Real>& x, const Tensor<Real>& mask) {
  const Shape s = x.shape();
  require_mask_shape("mul_mask", s, mask.shape());
  Tensor<Real> out(s);
  const std::size_t plane = static_cast<std::size_t>(s.plane());
  for (int n = 0; n < s.n; ++n) {
    const Real* m = mask.data() + n * plane;
    for (int c = 0; c < s.c; ++c) {
      const std::size_t base = (static_cast<std::size_t>(n) * s.c + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) out.data()[base + i] = x.data()[base + i] * m[i];
    }
  }
  if (tracking<Real>({&x})) {
    record(out, [x, mask, out, s, plane]() mutable {
      if (!out.has_grad()) return;
      const auto g = out.grad();
      auto gx = x.grad_buffer();
      for (int n = 0; n < s.n; ++n) {
        const Real* m = mask.data() + n * plane;
        for (int c = 0; c < s.c; ++c) {
          const std::size_t base = (static_cast<std::size_t>(n) * s.c + c) * plane;
          for (std::size_t i = 0; i < plane; ++i) gx[base + i] += g[base + i] * m[i];
        }
      }
    });
  }
  return out;
}

template <typename Real>
Tensor<Real> sum(const Tensor<Real>& x) {
  double total = 0.0;
  for (Real v : x.values()) total += static_cast<double>(v);
  Tensor<Real> out = Tensor<Real>::scalar(static_cast<Real>(total));
  if (tracking<Real>({&x})) {
    record(out, [x, out]() mutable {
      if (!out.has_grad()) return;
      const Real g = out.grad()[0];
      for (Real& v : x.grad_buffer()) v += g;
    });
  }
  return out;
}

// --- matrices ----------------------------------------------------------------

template <typename Real>
Tensor<Real> matmul(const Tensor<Real>& a, const Tensor<Real>& b) {
  const int rows = a.shape().rows();
  const int inner = a.shape().cols();
  const int cols = b.shape().cols();
  if (b.shape().rows() != inner) {
    throw DimensionError("matmul: inner dimensions disagree: " + a.shape().str() + " x " +
                         b.shape().str());
  }
  Tensor<Real> out(Shape::matrix(rows, cols));
  kernels::gemm_accumulate(rows, cols, inner, a.data(), inner, b.data(), cols, out.data(), cols);
  if (tracking<Real>({&a, &b})) {
    record(out, [a, b, out, rows, inner, cols]() mutable {
      if (!out.has_grad()) return;
      const Real* g = out.grad().data();
      if (a.requires_grad()) {
        std::vector<Real> bt(static_cast<std::size_t>(inner) * cols);
        kernels::transpose(inner, cols, b.data(), bt.data());
        kernels::gemm_accumulate(rows, inner, cols, g, cols, bt.data(), inner,
                                 a.grad_buffer().data(), inner);
      }
      if (b.requires_grad()) {
        std::vector<Real> at(static_cast<std::size_t>(rows) * inner);
        kernels::transpose(rows, inner, a.data(), at.data());
        kernels::gemm_accumulate(inner, cols, rows, at.data(), rows, g, cols,
                                 b.grad_buffer().data(), cols);
      }
    });
  }
  return out;
}

template <typename Real>
Tensor<Real> transpose(const Tensor<Real>& a) {
  const int rows = a.shape().rows();
  const int cols = a.shape().cols();
  Tensor<Real> out(Shape::matrix(cols, rows));
  kernels::transpose(rows, cols, a.data(), out.data());
  if (tracking<Real>({&a})) {
    record(out, [a, out, rows, cols]() mutable {
      if (!out.has_grad()) return;
      std::vector<Real> gt(static_cast<std::size_t>(rows) * cols);
      kernels::transpose(cols, rows, out.grad().data(), gt.data());
      auto ga = a.grad_buffer();
      for (std::size_t i = 0; i < gt.size(); ++i) ga[i] += gt[i];
    });
  }
  return out;
}

template <typename Real>
Tensor<Real> softmax_rows(const Tensor<Real>& a) {
  const int rows = a.shape().rows();
  const int cols = a.shape().cols();
  if (cols == 0) throw EmptyRegionError("softmax_rows: no columns to attend over");
  Tensor<Real> out(Shape::matrix(rows, cols));
  for (int r = 0; r < rows; ++r) {
    const Real* src = a.data() + static_cast<std::size_t>(r) * cols;
    Real* dst = out.data() + static_cast<std::size_t>(r) * cols;
    const Real peak = *std::max_element(src, src + cols);
    Real total = 0;
    for (int j = 0; j < cols; ++j) {
      dst[j] = std::exp(src[j] - peak);
      total += dst[j];
    }
    for (int j = 0; j < cols; ++j) dst[j] /= total;
  }
  if (tracking<Real>({&a})) {
    record(out, [a, out, rows, cols]() mutable {
      if (!out.has_grad()) return;
      const Real* g = out.grad().data();
      const Real* y = out.data();
      Real* ga = a.grad_buffer().data();
      for (int r = 0; r < rows; ++r) {
        const std::size_t base = static_cast<std::size_t>(r) * cols;
        Real dot = 0;
        for (int j = 0; j < cols; ++j) dot += g[base + j] * y[base + j];
        for (int j = 0; j < cols; ++j) ga[base + j] += y[base + j] * (g[base + j] - dot);
      }
    });
  }
  return out;
}

template <typename Real>
Tensor<Real> linear(const Tensor<Real>& x, const Tensor<Real>& weight, const Tensor<Real>& bias) {
  const int rows = x.shape().rows();
  const int in = x.shape().cols();
  const int out_dim = weight.shape().rows();
  if (weight.shape().cols() != in) {
    throw DimensionError("linear: input " + x.shape().str() + " does not match weight " +
                         weight.shape().str());
  }
  if (bias.numel() != static_cast<std::size_t>(out_dim)) {
    throw DimensionError("linear: bias " + bias.shape().str() + " does not match weight " +
                         weight.shape().str());
  }
  Tensor<Real> out(Shape::matrix(rows, out_dim));
  for (int r = 0; r < rows; ++r)
    std::copy(bias.data(), bias.data() + out_dim, out.data() + static_cast<std::size_t>(r) * out_dim);
  std::vector<Real> wt(static_cast<std::size_t>(in) * out_dim);
  kernels::transpose(out_dim, in, weight.data(), wt.data());
  kernels::gemm_accumulate(rows, out_dim, in, x.data(), in, wt.data(), out_dim, out.data(), out_dim);
  if (tracking<Real>({&x, &weight, &bias})) {
    record(out, [x, weight, bias, out, rows, in, out_dim]() mutable {
      if (!out.has_grad()) return;
      const Real* g = out.grad().data();
      if (x.requires_grad()) {
        kernels::gemm_accumulate(rows, in, out_dim, g, out_dim, weight.data(), in,
                                 x.grad_buffer().data(), in);
      }
      if (weight.requires_grad()) {
        std::vector<Real> gt(static_cast<std::size_t>(rows) * out_dim);
        kernels::transpose(rows, out_dim, g, gt.data());
        kernels::gemm_accumulate(out_dim, in, rows, gt.data(), rows, x.data(), in,
                                 weight.grad_buffer().data(), in);
      }
      if (bias.requires_grad()) {
        Real* gb = bias.grad_buffer().data();
        for (int r = 0; r < rows; ++r)
          for (int j = 0; j < out_dim; ++j) gb[j] += g[static_cast<std::size_t>(r) * out_dim + j];
      }
    });
  }
  return out;
}

template <typename Real>
Tensor<Real> concat_cols(const Tensor<Real>& a, const Tensor<Real>& b) {
  const int rows = a.shape().rows();
  if (b.shape().rows() != rows) shape_mismatch("concat_cols", a.shape(), b.shape());
  const int ca = a.shape().cols();
  const int cb = b.shape().cols();
  const int cols = ca + cb;
  Tensor<Real> out(Shape::matrix(rows, cols));
  for (int r = 0; r < rows; ++r) {
    Real* dst = out.data() + static_cast<std::size_t>(r) * cols;
    std::copy_n(a.data() + static_cast<std::size_t>(r) * ca, ca, dst);
    std::copy_n(b.data() + static_cast<std::size_t>(r) * cb, cb, dst + ca);
  }
  if (tracking<Real>({&a, &b})) {
    record(out, [a, b, out, rows, ca, cb, cols]() mutable {
      if (!out.has_grad()) return;
      const Real* g = out.grad().data();
      if (a.requires_grad()) {
        Real* ga = a.grad_buffer().data();
        for (int r = 0; r < rows; ++r)
          for (int j = 0; j < ca; ++j)
            ga[static_cast<std::size_t>(r) * ca + j] += g[static_cast<std::size_t>(r) * cols + j];
      }
      if (b.requires_grad()) {
        Real* gb = b.grad_buffer().data();
        for (int r = 0; r < rows; ++r)
          for (int j = 0; j < cb; ++j)
            gb[static_cast<std::size_t>(r) * cb + j] +=
                g[static_cast<std::size_t>(r) * cols + ca + j];
      }
    });
  }
  return out;
}

// --- image layout ------------------------------------------------------------

template <typename Real>
Tensor<Real> concat_channels(const Tensor<Real>& a, const Tensor<Real>& b) {
  const Shape sa = a.shape();
  const Shape sb = b.shape();
  if (sa.n != sb.n || sa.h != sb.h || sa.w != sb.w) shape_mismatch("concat_channels", sa, sb);
  const Shape so{sa.n, sa.c + sb.c, sa.h, sa.w};
  const std::size_t ba = static_cast<std::size_t>(sa.c) * sa.plane();
  const std::size_t bb = static_cast<std::size_t>(sb.c) * sb.plane();
  Tensor<Real> out(so);
  for (int n = 0; n < so.n; ++n) {
    Real* dst = out.data() + n * (ba + bb);
    std::copy_n(a.data() + n * ba, ba, dst);
    std::copy_n(b.data() + n * bb, bb, dst + ba);
  }
  if (tracking<Real>({&a, &b})) {
    record(out, [a, b, out, ba, bb, so]() mutable {
      if (!out.has_grad()) return;
      const Real* g = out.grad().data();
      for (int n = 0; n < so.n; ++n) {
        const Real* src = g + n * (ba + bb);
        if (a.requires_grad()) {
          Real* ga = a.grad_buffer().data() + n * ba;
          for (std::size_t i = 0; i < ba; ++i) ga[i] += src[i];
        }
        if (b.requires_grad()) {
          Real* gb = b.grad_buffer().data() + n * bb;
          for (std::size_t i = 0; i < bb; ++i) gb[i] += src[ba + i];
        }
      }
    });
  }
  return out;
}

template <typename Real>
Tensor<Real> conv2d(const Tensor<Real>& x, const Tensor<Real>& weight, const Tensor<Real>& bias,
                    int stride, int pad) {
  const Shape sx = x.shape();
  const Shape sw = weight.shape();
  if (sw.h != sw.w || sw.h % 2 == 0) {
    throw DimensionError("conv2d: kernel must be square with odd extent, got " + sw.str());
  }
  if (sw.c != sx.c) {
    throw DimensionError("conv2d: input " + sx.str() + " has " + std::to_string(sx.c) +
                         " channels but weight " + sw.str() + " expects " + std::to_string(sw.c));
  }
  if (bias.numel() != static_cast<std::size_t>(sw.n)) {
    throw DimensionError("conv2d: bias " + bias.shape().str() + " does not match weight " +
                         sw.str());
  }
  if (stride < 1 || pad < 0) throw ArgumentError("conv2d: stride must be >= 1 and pad >= 0");
  const int k = sw.h;
  const int oh = (sx.h + 2 * pad - k) / stride + 1;
  const int ow = (sx.w + 2 * pad - k) / stride + 1;
  if (oh < 1 || ow < 1) throw DimensionError("conv2d: kernel larger than padded input " + sx.str());
  const int out_c = sw.n;
  const int patch = sx.c * k * k;
  const int opix = oh * ow;
  const bool pointwise = (k == 1 && stride == 1 && pad == 0);
  const std::size_t in_stride = static_cast<std::size_t>(sx.c) * sx.plane();
  const std::size_t out_stride = static_cast<std::size_t>(out_c) * opix;

  Tensor<Real> out(Shape{sx.n, out_c, oh, ow});
  parallel_for(static_cast<std::size_t>(sx.n), [&](std::size_t n) {
    const Real* image = x.data() + n * in_stride;
    std::vector<Real> columns;
    const Real* cols = image;
    if (!pointwise) {
      columns.resize(static_cast<std::size_t>(patch) * opix);
      kernels::im2col(image, sx.c, sx.h, sx.w, k, stride, pad, oh, ow, columns.data());
      cols = columns.data();
    }
    Real* dst = out.data() + n * out_stride;
    for (int o = 0; o < out_c; ++o) std::fill_n(dst + static_cast<std::size_t>(o) * opix, opix, bias.data()[o]);
    kernels::gemm_accumulate(out_c, opix, patch, weight.data(), patch, cols, opix, dst, opix);
  });

  if (tracking<Real>({&x, &weight, &bias})) {
    record(out, [=]() mutable {
      if (!out.has_grad()) return;
      const Real* g = out.grad().data();
      const bool need_w = weight.requires_grad();
      const bool need_b = bias.requires_grad();
      const bool need_x = x.requires_grad();
      std::vector<Real> wt;
      if (need_x) {
        wt.resize(static_cast<std::size_t>(patch) * out_c);
        kernels::transpose(out_c, patch, weight.data(), wt.data());
      }
      // Per-sample weight gradients, reduced below in sample order.
      std::vector<std::vector<Real>> partial_w(need_w ? sx.n : 0);
      Real* gx = need_x ? x.grad_buffer().data() : nullptr;
      parallel_for(static_cast<std::size_t>(sx.n), [&](std::size_t n) {
        const Real* gn = g + n * out_stride;
        const Real* image = x.data() + n * in_stride;
        if (need_w) {
          std::vector<Real> columns_t(static_cast<std::size_t>(opix) * patch);
          if (pointwise) {
            kernels::transpose(patch, opix, image, columns_t.data());
          } else {
            std::vector<Real> columns(static_cast<std::size_t>(patch) * opix);
            kernels::im2col(image, sx.c, sx.h, sx.w, k, stride, pad, oh, ow, columns.data());
            kernels::transpose(patch, opix, columns.data(), columns_t.data());
          }
          partial_w[n].assign(static_cast<std::size_t>(out_c) * patch, Real(0));
          kernels::gemm_accumulate(out_c, patch, opix, gn, opix, columns_t.data(), patch,
                                   partial_w[n].data(), patch);
        }
        if (need_x) {
          Real* gimage = gx + n * in_stride;
          if (pointwise) {
            kernels::gemm_accumulate(patch, opix, out_c, wt.data(), out_c, gn, opix, gimage, opix);
          } else {
            std::vector<Real> dcols(static_cast<std::size_t>(patch) * opix, Real(0));
            kernels::gemm_accumulate(patch, opix, out_c, wt.data(), out_c, gn, opix, dcols.data(),
                                     opix);
            kernels::col2im(dcols.data(), sx.c, sx.h, sx.w, k, stride, pad, oh, ow, gimage);
          }
        }
      });
      if (need_w) {
        Real* gw = weight.grad_buffer().data();
        for (const auto& part : partial_w)
          for (std::size_t i = 0; i < part.size(); ++i) gw[i] += part[i];
      }
      if (need_b) {
        Real* gb = bias.grad_buffer().data();
        for (int n = 0; n < sx.n; ++n)
          for (int o = 0; o < out_c; ++o) {
            const Real* gp = g + n * out_stride + static_cast<std::size_t>(o) * opix;
            Real acc = 0;
            for (int i = 0; i < opix; ++i) acc += gp[i];
            gb[o] += acc;
          }
      }
    });
  }
  return out;
}

template <typename Real>
Tensor<Real> upsample_nearest(const Tensor<Real>& x, int factor) {
  if (factor < 1) throw ArgumentError("upsample_nearest: factor must be >= 1, got " + std::to_string(factor));
  const Shape s = x.shape();
  const Shape so{s.n, s.c, s.h * factor, s.w * factor};
  Tensor<Real> out(so);
  const int planes = s.n * s.c;
  for (int p = 0; p < planes; ++p) {
    const Real* src = x.data() + static_cast<std::size_t>(p) * s.plane();
    Real* dst = out.data() + static_cast<std::size_t>(p) * so.plane();
    for (int y = 0; y < so.h; ++y)
      for (int xx = 0; xx < so.w; ++xx) dst[y * so.w + xx] = src[(y / factor) * s.w + xx / factor];
  }
  if (tracking<Real>({&x})) {
    record(out, [x, out, s, so, planes, factor]() mutable {
      if (!out.has_grad()) return;
      const Real* g = out.grad().data();
      Real* gx = x.grad_buffer().data();
      for (int p = 0; p < planes; ++p) {
        const Real* src = g + static_cast<std::size_t>(p) * so.plane();
        Real* dst = gx + static_cast<std::size_t>(p) * s.plane();
        for (int y = 0; y < so.h; ++y)
          for (int xx = 0; xx < so.w; ++xx) dst[(y / factor) * s.w + xx / factor] += src[y * so.w + xx];
      }
    });
  }
  return out;
}

template <typename Real>
Tensor<Real> channel_affine(const Tensor<Real>& x, const Tensor<Real>& gamma,
                            const Tensor<Real>& beta) {
  const Shape s = x.shape();
  if (gamma.numel() != static_cast<std::size_t>(s.c) || beta.numel() != static_cast<std::size_t>(s.c)) {
    throw DimensionError("channel_affine: scale/shift do not match channels of " + s.str());
  }
  Tensor<Real> out(s);
  const std::size_t plane = static_cast<std::size_t>(s.plane());
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c) {
      const std::size_t base = (static_cast<std::size_t>(n) * s.c + c) * plane;
      const Real ga = gamma.data()[c];
      const Real be = beta.data()[c];
      for (std::size_t i = 0; i < plane; ++i) out.data()[base + i] = ga * x.data()[base + i] + be;
    }
  if (tracking<Real>({&x, &gamma, &beta})) {
    record(out, [x, gamma, beta, out, s, plane]() mutable {
      if (!out.has_grad()) return;
      const Real* g = out.grad().data();
      Real* gx = x.requires_grad() ? x.grad_buffer().data() : nullptr;
      Real* gg = gamma.requires_grad() ? gamma.grad_buffer().data() : nullptr;
      Real* gb = beta.requires_grad() ? beta.grad_buffer().data() : nullptr;
      for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c) {
          const std::size_t base = (static_cast<std::size_t>(n) * s.c + c) * plane;
          Real sg = 0;
          Real sgx = 0;
          for (std::size_t i = 0; i < plane; ++i) {
            sg += g[base + i];
            sgx += g[base + i] * x.data()[base + i];
            if (gx) gx[base + i] += g[base + i] * gamma.data()[c];
          }
          if (gg) gg[c] += sgx;
          if (gb) gb[c] += sg;
        }
    });
  }
  return out;
}

template <typename Real>
Tensor<Real> batch_slice(const Tensor<Real>& x, int index) {
  const Shape s = x.shape();
  if (index < 0 || index >= s.n) {
    throw ArgumentError("batch_slice: index " + std::to_string(index) + " outside " + s.str());
  }
  const std::size_t len = static_cast<std::size_t>(s.c) * s.plane();
  Tensor<Real> out(Shape{1, s.c, s.h, s.w});
  std::copy_n(x.data() + index * len, len, out.data());
  if (tracking<Real>({&x})) {
    record(out, [x, out, index, len]() mutable {
      if (!out.has_grad()) return;
      const Real* g = out.grad().data();
      Real* gx = x.grad_buffer().data() + index * len;
      for (std::size_t i = 0; i < len; ++i) gx[i] += g[i];
    });
  }
  return out;
}

template <typename Real>
Tensor<Real> batch_stack(std::span<const Tensor<Real>> parts) {
  if (parts.empty()) throw ArgumentError("batch_stack: no parts");
  const Shape first = parts.front().shape();
  int total = 0;
  for (const auto& p : parts) {
    const Shape s = p.shape();
    if (s.c != first.c || s.h != first.h || s.w != first.w) shape_mismatch("batch_stack", first, s);
    total += s.n;
  }
  Tensor<Real> out(Shape{total, first.c, first.h, first.w});
  std::size_t offset = 0;
  bool any = false;
  for (const auto& p : parts) {
    std::copy_n(p.data(), p.numel(), out.data() + offset);
    offset += p.numel();
    any = any || p.requires_grad();
  }
  if (any && GradTape<Real>::active() != nullptr) {
    std::vector<Tensor<Real>> held(parts.begin(), parts.end());
    record(out, [held, out]() mutable {
      if (!out.has_grad()) return;
      const Real* g = out.grad().data();
      std::size_t off = 0;
      for (auto& p : held) {
        if (p.requires_grad()) {
          auto gp = p.grad_buffer();
          for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += g[off + i];
        }
        off += p.numel();
      }
    });
  }
  return out;
}

template <typename Real>
Tensor<Real> gather_rows(const Tensor<Real>& x, std::span<const int> locations) {
  const Shape s = x.shape();
  require_single("gather_rows", s);
  const int plane = s.plane();
  for (int loc : locations) {
    if (loc < 0 || loc >= plane) throw ArgumentError("gather_rows: location outside the map");
  }
  const int rows = static_cast<int>(locations.size());
  Tensor<Real> out(Shape::matrix(rows, s.c));
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < s.c; ++c)
      out.data()[static_cast<std::size_t>(r) * s.c + c] =
          x.data()[static_cast<std::size_t>(c) * plane + locations[r]];
  if (tracking<Real>({&x})) {
    std::vector<int> locs(locations.begin(), locations.end());
    record(out, [x, out, locs, s, plane]() mutable {
      if (!out.has_grad()) return;
      const Real* g = out.grad().data();
      Real* gx = x.grad_buffer().data();
      for (std::size_t r = 0; r < locs.size(); ++r)
        for (int c = 0; c < s.c; ++c)
          gx[static_cast<std::size_t>(c) * plane + locs[r]] += g[r * s.c + c];
    });
  }
  return out;
}

template <typename Real>
Tensor<Real> scatter_rows(const Tensor<Real>& base, std::span<const int> locations,
                          const Tensor<Real>& tokens) {
  const Shape s = base.shape();
  require_single("scatter_rows", s);
  const int plane = s.plane();
  const int rows = static_cast<int>(locations.size());
  if (tokens.shape().rows() != rows || tokens.shape().cols() != s.c) {
    shape_mismatch("scatter_rows", s, tokens.shape());
  }
  std::vector<char> replaced(static_cast<std::size_t>(plane), 0);
  for (int loc : locations) {
    if (loc < 0 || loc >= plane) throw ArgumentError("scatter_rows: location outside the map");
    if (replaced[loc]) throw ArgumentError("scatter_rows: duplicate location");
    replaced[loc] = 1;
  }
  Tensor<Real> out = base.clone();
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < s.c; ++c)
      out.data()[static_cast<std::size_t>(c) * plane + locations[r]] =
          tokens.data()[static_cast<std::size_t>(r) * s.c + c];
  if (tracking<Real>({&base, &tokens})) {
    std::vector<int> locs(locations.begin(), locations.end());
    record(out, [base, tokens, out, locs, replaced, s, plane]() mutable {
      if (!out.has_grad()) return;
      const Real* g = out.grad().data();
      if (base.requires_grad()) {
        Real* gb = base.grad_buffer().data();
        for (int c = 0; c < s.c; ++c)
          for (int i = 0; i < plane; ++i)
            if (!replaced[i]) gb[static_cast<std::size_t>(c) * plane + i] += g[static_cast<std::size_t>(c) * plane + i];
      }
      if (tokens.requires_grad()) {
        Real* gt = tokens.grad_buffer().data();
        for (std::size_t r = 0; r < locs.size(); ++r)
          for (int c = 0; c < s.c; ++c)
            gt[r * s.c + c] += g[static_cast<std::size_t>(c) * plane + locs[r]];
      }
    });
  }
  return out;
}

template <typename Real>
Tensor<Real> unfold_patches(const Tensor<Real>& x, std::span<const PatchOrigin> origins,
                            int patch_h, int patch_w) {
  const Shape s = x.shape();
  require_single("unfold_patches", s);
  if (patch_h < 1 || patch_w < 1 || patch_h > s.h || patch_w > s.w) {
    throw ArgumentError("unfold_patches: patch " + std::to_string(patch_h) + "x" +
                        std::to_string(patch_w) + " does not fit map " + s.str());
  }
  for (const auto& o : origins) {
    if (o.y < 0 || o.x < 0 || o.y + patch_h > s.h || o.x + patch_w > s.w) {
      throw ArgumentError("unfold_patches: window outside the map");
    }
  }
  const int count = static_cast<int>(origins.size());
  Tensor<Real> out(Shape{count, s.c, patch_h, patch_w});
  for (int p = 0; p < count; ++p)
    for (int c = 0; c < s.c; ++c)
      for (int y = 0; y < patch_h; ++y) {
        const Real* src = x.data() + (static_cast<std::size_t>(c) * s.h + origins[p].y + y) * s.w + origins[p].x;
        Real* dst = out.data() + ((static_cast<std::size_t>(p) * s.c + c) * patch_h + y) * patch_w;
        std::copy_n(src, patch_w, dst);
      }
  if (tracking<Real>({&x})) {
    std::vector<PatchOrigin> held(origins.begin(), origins.end());
    record(out, [x, out, held, s, patch_h, patch_w]() mutable {
      if (!out.has_grad()) return;
      const Real* g = out.grad().data();
      Real* gx = x.grad_buffer().data();
      for (std::size_t p = 0; p < held.size(); ++p)
        for (int c = 0; c < s.c; ++c)
          for (int y = 0; y < patch_h; ++y) {
            Real* dst = gx + (static_cast<std::size_t>(c) * s.h + held[p].y + y) * s.w + held[p].x;
            const Real* src = g + ((p * s.c + c) * patch_h + y) * patch_w;
            for (int xx = 0; xx < patch_w; ++xx) dst[xx] += src[xx];
          }
    });
  }
  return out;
}

template <typename Real>
Tensor<Real> reshape(const Tensor<Real>& x, Shape shape) {
  if (shape.numel() != x.numel()) shape_mismatch("reshape", x.shape(), shape);
  Tensor<Real> out(shape, std::vector<Real>(x.values().begin(), x.values().end()));
  if (tracking<Real>({&x})) {
    record(out, [x, out]() mutable {
      if (!out.has_grad()) return;
      const auto g = out.grad();
      auto gx = x.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    });
  }
  return out;
}

// --- statistics --------------------------------------------------------------

namespace {

struct GroupStats {
  double mean = 0.0;
  double inv_std = 0.0;
  double std = 0.0;
  double count = 0.0;
};

// Moments of every (n, c) plane restricted to mask (or the full plane when
// mask is null). Accumulates in double regardless of Real.
template <typename Real>
std::vector<GroupStats> plane_stats(const Tensor<Real>& x, const Tensor<Real>* mask, double eps) {
  const Shape s = x.shape();
  const std::size_t plane = static_cast<std::size_t>(s.plane());
  std::vector<GroupStats> stats(static_cast<std::size_t>(s.n) * s.c);
  for (int n = 0; n < s.n; ++n) {
    const Real* m = mask ? mask->data() + n * plane : nullptr;
    double count = 0.0;
    if (m) {
      for (std::size_t i = 0; i < plane; ++i) count += static_cast<double>(m[i]);
    } else {
      count = static_cast<double>(plane);
    }
    for (int c = 0; c < s.c; ++c) {
      GroupStats& st = stats[static_cast<std::size_t>(n) * s.c + c];
      st.count = count;
      if (count <= 0.0) continue;
      const Real* v = x.data() + (static_cast<std::size_t>(n) * s.c + c) * plane;
      double total = 0.0;
      for (std::size_t i = 0; i < plane; ++i) total += m ? static_cast<double>(v[i]) * m[i] : v[i];
      st.mean = total / count;
      double sq = 0.0;
      for (std::size_t i = 0; i < plane; ++i) {
        const double d = static_cast<double>(v[i]) - st.mean;
        sq += m ? d * d * m[i] : d * d;
      }
      st.std = std::sqrt(sq / count + eps);
      st.inv_std = 1.0 / st.std;
    }
  }
  return stats;
}

template <typename Real>
Tensor<Real> normalize_planes(const Tensor<Real>& x, const Tensor<Real>* mask, Real eps) {
  const Shape s = x.shape();
  if (s.plane() < 1) throw DimensionError("instance_norm: empty plane in " + s.str());
  if (mask) require_mask_shape("masked_instance_norm", s, mask->shape());
  const std::size_t plane = static_cast<std::size_t>(s.plane());
  std::vector<GroupStats> stats = plane_stats(x, mask, static_cast<double>(eps));
  Tensor<Real> out = x.clone();
  for (int n = 0; n < s.n; ++n) {
    const Real* m = mask ? mask->data() + n * plane : nullptr;
    if (stats[static_cast<std::size_t>(n) * s.c].count <= 0.0) {
      log::debug("masked_instance_norm: empty mask for sample " + std::to_string(n) + ", identity");
      continue;
    }
    for (int c = 0; c < s.c; ++c) {
      const GroupStats& st = stats[static_cast<std::size_t>(n) * s.c + c];
      const std::size_t base = (static_cast<std::size_t>(n) * s.c + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        if (m && m[i] == Real(0)) continue;
        out.data()[base + i] = static_cast<Real>((static_cast<double>(x.data()[base + i]) - st.mean) * st.inv_std);
      }
    }
  }
  if (tracking<Real>({&x})) {
    Tensor<Real> held_mask = mask ? *mask : Tensor<Real>();
    record(out, [x, out, held_mask, stats, s, plane]() mutable {
      if (!out.has_grad()) return;
      const Real* g = out.grad().data();
      const Real* y = out.data();
      Real* gx = x.grad_buffer().data();
      for (int n = 0; n < s.n; ++n) {
        const Real* m = held_mask.defined() ? held_mask.data() + n * plane : nullptr;
        for (int c = 0; c < s.c; ++c) {
          const GroupStats& st = stats[static_cast<std::size_t>(n) * s.c + c];
          const std::size_t base = (static_cast<std::size_t>(n) * s.c + c) * plane;
          if (st.count <= 0.0) {
            for (std::size_t i = 0; i < plane; ++i) gx[base + i] += g[base + i];
            continue;
          }
          double mean_g = 0.0;
          double mean_gy = 0.0;
          for (std::size_t i = 0; i < plane; ++i) {
            if (m && m[i] == Real(0)) continue;
            mean_g += g[base + i];
            mean_gy += static_cast<double>(g[base + i]) * y[base + i];
          }
          mean_g /= st.count;
          mean_gy /= st.count;
          for (std::size_t i = 0; i < plane; ++i) {
            if (m && m[i] == Real(0)) {
              gx[base + i] += g[base + i];
            } else {
              gx[base + i] += static_cast<Real>(st.inv_std * (g[base + i] - mean_g - y[base + i] * mean_gy));
            }
          }
        }
      }
    });
  }
  return out;
}

}  // namespace

template <typename Real>
Moments<Real> masked_moments(const Tensor<Real>& x, const Tensor<Real>& mask, Real eps) {
  const Shape s = x.shape();
  require_mask_shape("masked_moments", s, mask.shape());
  const std::size_t plane = static_cast<std::size_t>(s.plane());
  std::vector<GroupStats> stats = plane_stats(x, &mask, static_cast<double>(eps));
  Moments<Real> out{Tensor<Real>(Shape::matrix(s.n, s.c)), Tensor<Real>(Shape::matrix(s.n, s.c))};
  for (int n = 0; n < s.n; ++n) {
    if (stats[static_cast<std::size_t>(n) * s.c].count <= 0.0) {
      throw EmptyRegionError("masked_moments: empty mask for sample " + std::to_string(n));
    }
  }
  for (std::size_t i = 0; i < stats.size(); ++i) {
    out.mean.data()[i] = static_cast<Real>(stats[i].mean);
    out.std.data()[i] = static_cast<Real>(stats[i].std);
  }
  if (tracking<Real>({&x})) {
    Tensor<Real> mean = out.mean;
    Tensor<Real> std_dev = out.std;
    mean.set_requires_grad(true);
    std_dev.set_requires_grad(true);
    GradTape<Real>::active()->record([x, mask, mean, std_dev, stats, s, plane]() mutable {
      if (!mean.has_grad() && !std_dev.has_grad()) return;
      Real* gx = x.grad_buffer().data();
      for (int n = 0; n < s.n; ++n) {
        const Real* m = mask.data() + n * plane;
        for (int c = 0; c < s.c; ++c) {
          const std::size_t idx = static_cast<std::size_t>(n) * s.c + c;
          const GroupStats& st = stats[idx];
          const double gm = mean.has_grad() ? mean.grad()[idx] : 0.0;
          const double gs = std_dev.has_grad() ? std_dev.grad()[idx] : 0.0;
          const Real* v = x.data() + idx * plane;
          Real* dst = gx + idx * plane;
          for (std::size_t i = 0; i < plane; ++i) {
            if (m[i] == Real(0)) continue;
            const double d = static_cast<double>(v[i]) - st.mean;
            dst[i] += static_cast<Real>(m[i] * (gm + gs * d * st.inv_std) / st.count);
          }
        }
      }
    });
  }
  return out;
}

template <typename Real>
Tensor<Real> instance_norm(const Tensor<Real>& x, Real eps) {
  return normalize_planes<Real>(x, nullptr, eps);
}

template <typename Real>
Tensor<Real> masked_instance_norm(const Tensor<Real>& x, const Tensor<Real>& mask, Real eps) {
  return normalize_planes<Real>(x, &mask, eps);
}

#define HARMONY_INSTANTIATE(Real)                                                               \
  template Tensor<Real> add(const Tensor<Real>&, const Tensor<Real>&);                          \
  template Tensor<Real> sub(const Tensor<Real>&, const Tensor<Real>&);                          \
  template Tensor<Real> mul(const Tensor<Real>&, const Tensor<Real>&);                          \
  template Tensor<Real> scale(const Tensor<Real>&, Real);                                       \
  template Tensor<Real> leaky_relu(const Tensor<Real>&, Real);                                  \
  template Tensor<Real> mul_mask(const Tensor<Real>&, const Tensor<Real>&);                     \
  template Tensor<Real> sum(const Tensor<Real>&);                                               \
  template Tensor<Real> matmul(const Tensor<Real>&, const Tensor<Real>&);                       \
  template Tensor<Real> transpose(const Tensor<Real>&);                                         \
  template Tensor<Real> softmax_rows(const Tensor<Real>&);                                      \
  template Tensor<Real> linear(const Tensor<Real>&, const Tensor<Real>&, const Tensor<Real>&);  \
  template Tensor<Real> concat_cols(const Tensor<Real>&, const Tensor<Real>&);                  \
  template Tensor<Real> concat_channels(const Tensor<Real>&, const Tensor<Real>&);              \
  template Tensor<Real> conv2d(const Tensor<Real>&, const Tensor<Real>&, const Tensor<Real>&,   \
                               int, int);                                                       \
  template Tensor<Real> upsample_nearest(const Tensor<Real>&, int);                             \
  template Tensor<Real> channel_affine(const Tensor<Real>&, const Tensor<Real>&,                \
                                       const Tensor<Real>&);                                    \
  template Tensor<Real> batch_slice(const Tensor<Real>&, int);                                  \
  template Tensor<Real> batch_stack(std::span<const Tensor<Real>>);                             \
  template Tensor<Real> gather_rows(const Tensor<Real>&, std::span<const int>);                 \
  template Tensor<Real> scatter_rows(const Tensor<Real>&, std::span<const int>,                 \
                                     const Tensor<Real>&);                                      \
  template Tensor<Real> unfold_patches(const Tensor<Real>&, std::span<const PatchOrigin>, int,  \
                                       int);                                                    \
  template Tensor<Real> reshape(const Tensor<Real>&, Shape);                                    \
  template Moments<Real> masked_moments(const Tensor<Real>&, const Tensor<Real>&, Real);        \
  template Tensor<Real> instance_norm(const Tensor<Real>&, Real);                               \
  template Tensor<Real> masked_instance_norm(const Tensor<Real>&, const Tensor<Real>&, Real);

HARMONY_INSTANTIATE(float)
HARMONY_INSTANTIATE(double)
#undef HARMONY_INSTANTIATE

}  // namespace harmony
