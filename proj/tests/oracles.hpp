// Copyright 2026 The Harmony Authors
// SPDX-License-Identifier: Apache-2.0

// Straight-line reference implementations shared by the unit tests and the
// acceptance runner. Each one recomputes a module with explicit loops and no
// library kernels beyond the parameter values it reads.

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "harmony/grad_check.hpp"
#include "harmony/ltl.hpp"
#include "harmony/ops.hpp"
#include "harmony/ptl.hpp"
#include "test_util.hpp"

namespace harmony::oracles {

using testing::random_mask;
using testing::random_tensor;
using T = Tensor<double>;
using Matrix = std::vector<std::vector<double>>;

constexpr double kEps = 1e-5;

// --- location attention --------------------------------------------------------

inline const T& param(const ParamStore<double>& store, const std::string& name) {
  const Parameter<double>* p = store.find(name);
  if (!p) throw std::runtime_error("missing parameter " + name);
  return p->value;
}

// y = W x + b for each row of x.
inline Matrix affine_rows(const Matrix& x, const T& w, const T& b) {
  const int out = w.shape().rows(), in = w.shape().cols();
  Matrix y(x.size(), std::vector<double>(out));
  for (std::size_t r = 0; r < x.size(); ++r)
    for (int o = 0; o < out; ++o) {
      double acc = b.values()[o];
      for (int i = 0; i < in; ++i) acc += w.values()[o * in + i] * x[r][i];
      y[r][o] = acc;
    }
  return y;
}

inline std::vector<double> softmax(std::vector<double> v) {
  const double top = *std::max_element(v.begin(), v.end());
  double total = 0.0;
  for (double& e : v) total += (e = std::exp(e - top));
  for (double& e : v) e /= total;
  return v;
}

// Normalizes the rows of `tokens` whose index is in `rows`, per channel.
inline void normalize_rows(Matrix& tokens, const std::vector<int>& rows, double eps) {
  if (rows.empty()) return;
  const std::size_t channels = tokens[0].size();
  for (std::size_t c = 0; c < channels; ++c) {
    double mean = 0.0, var = 0.0;
    for (int r : rows) mean += tokens[r][c];
    mean /= static_cast<double>(rows.size());
    for (int r : rows) var += std::pow(tokens[r][c] - mean, 2);
    const double inv = 1.0 / std::sqrt(var / static_cast<double>(rows.size()) + eps);
    for (int r : rows) tokens[r][c] = (tokens[r][c] - mean) * inv;
  }
}

// Straight-line evaluation of the module on one sample: token self-attention,
// instance norm, then for every foreground row its own softmax over the
// background rows and the fusion linear.
inline T ltl_oracle(const T& f, const T& mask, const ParamStore<double>& store, const LtlOptions& opt) {
  const int channels = f.c(), plane = f.h() * f.w();
  Matrix x(plane, std::vector<double>(channels));
  for (int i = 0; i < plane; ++i)
    for (int c = 0; c < channels; ++c) x[i][c] = f.values()[c * plane + i];
  std::vector<int> fg, bg, all;
  for (int i = 0; i < plane; ++i) {
    (mask.values()[i] > 0.5 ? fg : bg).push_back(i);
    all.push_back(i);
  }
  if (fg.empty()) return f.clone();

  const Matrix q = affine_rows(x, param(store, "ltl.attention.query.weight"), param(store, "ltl.attention.query.bias"));
  const Matrix k = affine_rows(x, param(store, "ltl.attention.key.weight"), param(store, "ltl.attention.key.bias"));
  const Matrix v = affine_rows(x, param(store, "ltl.attention.value.weight"), param(store, "ltl.attention.value.bias"));
  Matrix mixed(plane, std::vector<double>(channels, 0.0));
  for (int i = 0; i < plane; ++i) {
    std::vector<double> logits(plane);
    for (int j = 0; j < plane; ++j) {
      double dot = 0.0;
      for (int c = 0; c < channels; ++c) dot += q[i][c] * k[j][c];
      logits[j] = dot / std::sqrt(static_cast<double>(channels));
    }
    const std::vector<double> a = softmax(logits);
    for (int j = 0; j < plane; ++j)
      for (int c = 0; c < channels; ++c) mixed[i][c] += a[j] * v[j][c];
  }
  Matrix y = affine_rows(mixed, param(store, "ltl.attention.out.weight"), param(store, "ltl.attention.out.bias"));
  for (int i = 0; i < plane; ++i)
    for (int c = 0; c < channels; ++c) y[i][c] += x[i][c];

  if (opt.masked_norm) {
    normalize_rows(y, fg, opt.eps);
    normalize_rows(y, bg, opt.eps);
  } else {
    normalize_rows(y, all, opt.eps);
  }

  Matrix out = y;
  if (!bg.empty()) {
    const T& wf = param(store, "ltl.fuse.weight");
    const T& bf = param(store, "ltl.fuse.bias");
    for (int i : fg) {
      std::vector<double> logits;
      for (int j : bg) {
        double dot = 0.0;
        for (int c = 0; c < channels; ++c) dot += y[i][c] * y[j][c];
        logits.push_back(opt.attn_scale * dot);
      }
      const std::vector<double> a = softmax(logits);
      std::vector<double> joined(y[i]);
      joined.resize(2 * channels, 0.0);
      for (std::size_t j = 0; j < bg.size(); ++j)
        for (int c = 0; c < channels; ++c) joined[channels + c] += a[j] * y[bg[j]][c];
      out[i] = affine_rows({joined}, wf, bf)[0];
    }
  }
  T result(f.shape());
  for (int i = 0; i < plane; ++i)
    for (int c = 0; c < channels; ++c) result.values()[c * plane + i] = out[i][c];
  return result;
}

// --- patch attention -----------------------------------------------------------

struct Stats {
  std::vector<double> mean, std;
};

// Moments of each channel of sample 0 over pixels where keep(y, x) holds.
template <typename Keep>
Stats region_stats(const T& f, Keep keep) {
  Stats s;
  for (int c = 0; c < f.c(); ++c) {
    double total = 0.0, count = 0.0;
    for (int y = 0; y < f.h(); ++y)
      for (int x = 0; x < f.w(); ++x)
        if (keep(y, x)) {
          total += f.at(0, c, y, x);
          count += 1.0;
        }
    const double mean = total / count;
    double sq = 0.0;
    for (int y = 0; y < f.h(); ++y)
      for (int x = 0; x < f.w(); ++x)
        if (keep(y, x)) sq += std::pow(f.at(0, c, y, x) - mean, 2);
    s.mean.push_back(mean);
    s.std.push_back(std::sqrt(sq / count + kEps));
  }
  return s;
}

// Global AdaIN: foreground normalized by its own moments and re-styled with
// the moments of the whole background.
inline T adain_reference(const T& f, const T& mask) {
  auto fg = [&](int y, int x) { return mask.at(0, 0, y, x) > 0.5; };
  auto bg = [&](int y, int x) { return mask.at(0, 0, y, x) < 0.5; };
  const Stats sf = region_stats(f, fg), sb = region_stats(f, bg);
  T out = f.clone();
  for (int c = 0; c < f.c(); ++c)
    for (int y = 0; y < f.h(); ++y)
      for (int x = 0; x < f.w(); ++x)
        if (fg(y, x)) out.at(0, c, y, x) = (f.at(0, c, y, x) - sf.mean[c]) / sf.std[c] * sb.std[c] + sb.mean[c];
  return out;
}

// Direct evaluation: scan windows, keep covered ones, compute block moments
// and projected content by loops, then for every foreground location its own
// softmax over blocks.
inline T ptl_oracle(const T& f, const T& mask, const PatchGeometry& g, const T& weight, const T& bias) {
  const int channels = f.c(), h = f.h(), w = f.w();
  auto is_bg = [&](int y, int x) { return mask.at(0, 0, y, x) < 0.5; };
  struct Block {
    std::vector<double> mean, std, content;
  };
  std::vector<Block> blocks;
  for (int oy = 0; oy + g.patch_h <= h; oy += g.stride_h)
    for (int ox = 0; ox + g.patch_w <= w; ox += g.stride_w) {
      auto inside = [&](int y, int x) {
        return y >= oy && y < oy + g.patch_h && x >= ox && x < ox + g.patch_w && is_bg(y, x);
      };
      bool any = false;
      for (int y = oy; y < oy + g.patch_h; ++y)
        for (int x = ox; x < ox + g.patch_w; ++x) any = any || is_bg(y, x);
      if (!any) continue;
      Block b;
      const Stats s = region_stats(f, inside);
      b.mean = s.mean;
      b.std = s.std;
      std::vector<double> flat;
      for (int c = 0; c < channels; ++c)
        for (int y = oy; y < oy + g.patch_h; ++y)
          for (int x = ox; x < ox + g.patch_w; ++x)
            flat.push_back(inside(y, x) ? (f.at(0, c, y, x) - s.mean[c]) / s.std[c] : 0.0);
      const int in = static_cast<int>(flat.size());
      for (int o = 0; o < channels; ++o) {
        double acc = bias.values()[o];
        for (int i = 0; i < in; ++i) acc += weight.values()[o * in + i] * flat[i];
        b.content.push_back(acc);
      }
      blocks.push_back(b);
    }

  auto is_fg = [&](int y, int x) { return !is_bg(y, x); };
  const Stats sf = region_stats(f, is_fg);
  T out = f.clone();
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      if (!is_fg(y, x)) continue;
      std::vector<double> content(channels), logits;
      for (int c = 0; c < channels; ++c) content[c] = (f.at(0, c, y, x) - sf.mean[c]) / sf.std[c];
      for (const Block& b : blocks) {
        double dot = 0.0;
        for (int c = 0; c < channels; ++c) dot += content[c] * b.content[c];
        logits.push_back(dot);
      }
      const double top = *std::max_element(logits.begin(), logits.end());
      double total = 0.0;
      for (double& l : logits) total += (l = std::exp(l - top));
      for (int c = 0; c < channels; ++c) {
        double a = 0.0, v = 0.0;
        for (std::size_t k = 0; k < blocks.size(); ++k) {
          a += logits[k] / total * blocks[k].mean[c];
          v += logits[k] / total * blocks[k].std[c];
        }
        out.at(0, c, y, x) = content[c] * v + a;
      }
    }
  return out;
}

/// PTL module with a random projection bias so the logits are not symmetric.
inline PtlModule<double> make_ptl_module(ParamStore<double>& store, int channels, int size, PtlOptions opt = {},
                                  std::uint64_t seed = 5) {
  Rng rng(seed);
  PtlModule<double> module(store, "ptl", channels, size, rng, opt);
  std::uniform_real_distribution<double> dist(-0.2, 0.2);
  for (double& v : store.find("ptl.projection.bias")->value.values()) v = dist(rng);
  return module;
}

/// Windows of `g` that contain at least one background pixel, found by
/// scanning every window and summing the background indicator.
inline std::vector<PatchOrigin> covered_origins(const T& background, const PatchGeometry& g) {
  std::vector<PatchOrigin> kept;
  for (int y = 0; y + g.patch_h <= background.h(); y += g.stride_h)
    for (int x = 0; x + g.patch_w <= background.w(); x += g.stride_w) {
      double area = 0.0;
      for (int dy = 0; dy < g.patch_h; ++dy)
        for (int dx = 0; dx < g.patch_w; ++dx) area += background.at(0, 0, y + dy, x + dx);
      if (area > 0) kept.push_back({y, x});
    }
  return kept;
}

// --- op gradients --------------------------------------------------------------

// Every differentiable op on a random shape. A random weighting turns each
// output into a scalar so no gradient is trivially uniform.
struct OpHarness {
  ParamStore<double> params;
  std::mt19937_64 rng;
  explicit OpHarness(int seed) : rng(static_cast<std::uint64_t>(seed)) {}
  T input(const std::string& name, Shape s, double lo = -1, double hi = 1) {
    T t = params.add(name, {s.n, s.c, s.h, s.w});
    std::uniform_real_distribution<double> dist(lo, hi);
    for (auto& v : t.values()) v = dist(rng);
    return t;
  }
  T weights_for(const T& out) { return random_tensor(out.shape(), rng); }
  double check(const std::function<T()>& f) {
    T probe;
    {
      NoGradScope<double> off;
      probe = weights_for(f());
    }
    return grad_check([&] { return sum(mul(f(), probe)); }, params).max_rel_error;
  }
};

struct OpCheck {
  std::string name;
  Shape shape;
  double error = 0.0;
};

/// Max relative finite-difference error of each op; `seed` picks the shape.
inline std::vector<OpCheck> op_gradient_errors(int seed) {
  std::mt19937_64 shapes(static_cast<std::uint64_t>(seed) * 7919u);
  std::uniform_int_distribution<int> d(1, 4);
  std::uniform_int_distribution<int> sp(3, 6);
  const int n = d(shapes), c = d(shapes), h = sp(shapes), w = sp(shapes);
  const Shape s{n, c, h, w};

  std::vector<OpCheck> results;
  auto run = [&](const char* name, auto build) {
    OpHarness hx(seed);
    results.push_back({name, s, build(hx)});
  };

  run("add", [&](OpHarness& H) { T a = H.input("a", s), b = H.input("b", s); return H.check([&] { return add(a, b); }); });
  run("sub", [&](OpHarness& H) { T a = H.input("a", s), b = H.input("b", s); return H.check([&] { return sub(a, b); }); });
  run("mul", [&](OpHarness& H) { T a = H.input("a", s), b = H.input("b", s); return H.check([&] { return mul(a, b); }); });
  run("scale", [&](OpHarness& H) { T a = H.input("a", s); return H.check([&] { return scale(a, -1.7); }); });
  run("leaky_relu", [&](OpHarness& H) {
    T a = H.input("a", s);
    for (auto& v : a.values()) v += v > 0 ? 0.05 : -0.05;  // keep clear of the kink
    return H.check([&] { return leaky_relu(a, 0.2); });
  });
  run("mul_mask", [&](OpHarness& H) {
    T a = H.input("a", s);
    T m = random_mask(n, h, w, H.rng);
    return H.check([&] { return mul_mask(a, m); });
  });
  run("matmul", [&](OpHarness& H) {
    T a = H.input("a", Shape::matrix(h, w)), b = H.input("b", Shape::matrix(w, c + 2));
    return H.check([&] { return matmul(a, b); });
  });
  run("transpose", [&](OpHarness& H) { T a = H.input("a", Shape::matrix(h, w)); return H.check([&] { return transpose(a); }); });
  run("softmax_rows", [&](OpHarness& H) { T a = H.input("a", Shape::matrix(h, w), -3, 3); return H.check([&] { return softmax_rows(a); }); });
  run("linear", [&](OpHarness& H) {
    T x = H.input("x", Shape::matrix(h, w)), wt = H.input("w", Shape::matrix(c + 1, w)),
      b = H.input("b", Shape::matrix(1, c + 1));
    return H.check([&] { return linear(x, wt, b); });
  });
  run("concat_cols", [&](OpHarness& H) {
    T a = H.input("a", Shape::matrix(h, w)), b = H.input("b", Shape::matrix(h, c));
    return H.check([&] { return concat_cols(a, b); });
  });
  run("concat_channels", [&](OpHarness& H) {
    T a = H.input("a", s), b = H.input("b", Shape{n, c + 1, h, w});
    return H.check([&] { return concat_channels(a, b); });
  });
  run("conv2d", [&](OpHarness& H) {
    T x = H.input("x", s), wt = H.input("w", Shape{c + 1, c, 3, 3}), b = H.input("b", Shape::matrix(1, c + 1));
    return H.check([&] { return conv2d(x, wt, b, 1 + seed % 2, 1); });
  });
  run("conv2d_pointwise", [&](OpHarness& H) {
    T x = H.input("x", s), wt = H.input("w", Shape{2, c, 1, 1}), b = H.input("b", Shape::matrix(1, 2));
    return H.check([&] { return conv2d(x, wt, b, 1, 0); });
  });
  run("upsample_nearest", [&](OpHarness& H) { T a = H.input("a", s); return H.check([&] { return upsample_nearest(a, 2); }); });
  run("channel_affine", [&](OpHarness& H) {
    T x = H.input("x", s), g = H.input("g", Shape::matrix(1, c)), b = H.input("b", Shape::matrix(1, c));
    return H.check([&] { return channel_affine(x, g, b); });
  });
  run("batch_slice_stack", [&](OpHarness& H) {
    T x = H.input("x", s);
    return H.check([&] {
      std::vector<T> parts;
      for (int i = n - 1; i >= 0; --i) parts.push_back(scale(batch_slice(x, i), 1.0 + i));
      return batch_stack<double>(parts);
    });
  });
  run("gather_scatter", [&](OpHarness& H) {
    T base = H.input("base", Shape{1, c, h, w});
    std::vector<int> locs;
    for (int i = 0; i < h * w; i += 2) locs.push_back(i);
    T tok = H.input("tok", Shape::matrix(static_cast<int>(locs.size()), c));
    return H.check([&] { return scatter_rows(base, locs, mul(tok, gather_rows(base, locs))); });
  });
  run("unfold_patches", [&](OpHarness& H) {
    T x = H.input("x", Shape{1, c, h, w});
    std::vector<PatchOrigin> origins;
    for (int y = 0; y + 2 <= h; ++y)
      for (int xx = 0; xx + 2 <= w; xx += 2) origins.push_back({y, xx});
    return H.check([&] { return unfold_patches(x, origins, 2, 2); });
  });
  run("reshape", [&](OpHarness& H) { T a = H.input("a", s); return H.check([&] { return reshape(a, Shape::matrix(n * c, h * w)); }); });
  run("masked_moments", [&](OpHarness& H) {
    T x = H.input("x", s);
    T m = random_mask(n, h, w, H.rng);
    return H.check([&] {
      Moments<double> mo = masked_moments(x, m);
      return concat_cols(mo.mean, mo.std);
    });
  });
  run("instance_norm", [&](OpHarness& H) { T a = H.input("a", s); return H.check([&] { return instance_norm(a); }); });
  run("masked_instance_norm", [&](OpHarness& H) {
    T x = H.input("x", s);
    T m = random_mask(n, h, w, H.rng);
    return H.check([&] { return masked_instance_norm(x, m); });
  });
  return results;
}

}  // namespace harmony::oracles
