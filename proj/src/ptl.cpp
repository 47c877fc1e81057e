// Copyright 2026 The Harmony Authors
// SPDX-License-Identifier: Apache-2.0

#include "harmony/ptl.hpp"

#include <algorithm>

#include "harmony/log.hpp"

namespace harmony {

PatchGeometry PatchGeometry::from_divisors(int h, int w, int patch_divisor, int stride_divisor) {
  if (patch_divisor < 1 || stride_divisor < 1) throw ArgumentError("patch geometry: divisors must be >= 1");
  return {std::max(1, h / patch_divisor), std::max(1, w / patch_divisor),
          std::max(1, h / stride_divisor), std::max(1, w / stride_divisor)};
}

std::vector<PatchOrigin> candidate_origins(int h, int w, const PatchGeometry& g) {
  if (g.patch_h > h || g.patch_w > w || g.patch_h < 1 || g.patch_w < 1) {
    throw ArgumentError("patch " + std::to_string(g.patch_h) + "x" + std::to_string(g.patch_w) +
                        " does not fit a " + std::to_string(h) + "x" + std::to_string(w) + " map");
  }
  if (g.stride_h < 1 || g.stride_w < 1) throw ArgumentError("patch stride must be >= 1");
  std::vector<PatchOrigin> origins;
  for (int y = 0; y + g.patch_h <= h; y += g.stride_h)
    for (int x = 0; x + g.patch_w <= w; x += g.stride_w) origins.push_back({y, x});
  return origins;
}

template <typename Real>
PatchSet<Real> extract_patches(const Tensor<Real>& f, const Tensor<Real>& background,
                               const PatchGeometry& g, const LinearLayer<Real>& projection,
                               Real eps) {
  if (f.n() != 1 || background.n() != 1 || background.c() != 1 || background.h() != f.h() ||
      background.w() != f.w()) {
    throw DimensionError("extract_patches: need one sample, got " + f.shape().str() + " and mask " +
                         background.shape().str());
  }
  PatchSet<Real> set;
  const int w = f.w();
  const Real* bg = background.data();
  for (const PatchOrigin& o : candidate_origins(f.h(), w, g)) {
    bool covered = false;
    for (int y = 0; y < g.patch_h && !covered; ++y)
      for (int x = 0; x < g.patch_w; ++x)
        if (bg[(o.y + y) * w + o.x + x] > Real(0)) {
          covered = true;
          break;
        }
    if (covered) set.origins.push_back(o);
  }
  if (set.origins.empty()) return set;

  const int k = set.size(), c = f.c();
  set.blocks = unfold_patches(mul_mask(f, background), set.origins, g.patch_h, g.patch_w);
  set.masks = unfold_patches(background, set.origins, g.patch_h, g.patch_w);
  Moments<Real> stats = masked_moments(set.blocks, set.masks, eps);
  set.mean = reshape(stats.mean, Shape::matrix(k, c));
  set.std = reshape(stats.std, Shape::matrix(k, c));
  const Tensor<Real> normed = masked_instance_norm(set.blocks, set.masks, eps);
  set.content = projection(reshape(normed, Shape::matrix(k, c * g.patch_h * g.patch_w)));
  return set;
}

template <typename Real>
PtlModule<Real>::PtlModule(ParamStore<Real>& store, const std::string& name, int channels,
                           int feature_size, Rng& rng, PtlOptions options)
    : channels_(channels), feature_size_(feature_size), options_(options) {
  geometry_ = PatchGeometry::from_divisors(feature_size, feature_size, options.patch_divisor,
                                           options.stride_divisor);
  if (options.patch_size > 0) geometry_.patch_h = geometry_.patch_w = options.patch_size;
  if (options.stride > 0) geometry_.stride_h = geometry_.stride_w = options.stride;
  (void)candidate_origins(feature_size, feature_size, geometry_);
  projection_ = LinearLayer<Real>(store, name + ".projection",
                                  channels * geometry_.patch_h * geometry_.patch_w, channels, rng);
}

template <typename Real>
Tensor<Real> PtlModule<Real>::operator()(const Tensor<Real>& f, const Tensor<Real>& mask,
                                         PtlTrace<Real>* trace) const {
  if (f.c() != channels_ || f.h() != feature_size_ || f.w() != feature_size_) {
    throw DimensionError("ptl: expected " + std::to_string(channels_) + " channels at " +
                         std::to_string(feature_size_) + "x" + std::to_string(feature_size_) +
                         ", got " + f.shape().str());
  }
  const Tensor<Real> m = resize_mask(mask, f.h(), f.w());
  if (m.n() != f.n()) throw DimensionError("ptl: mask batch does not match " + f.shape().str());
  if (trace) *trace = {};
  std::vector<Tensor<Real>> out;
  for (int n = 0; n < f.n(); ++n) {
    out.push_back(translate(f.n() == 1 ? f : batch_slice(f, n), f.n() == 1 ? m : batch_slice(m, n), trace));
  }
  return out.size() == 1 ? out.front() : batch_stack<Real>(out);
}

template <typename Real>
Tensor<Real> PtlModule<Real>::translate(const Tensor<Real>& f, const Tensor<Real>& mask,
                                        PtlTrace<Real>* trace) const {
  const Real eps = static_cast<Real>(options_.eps);
  const int plane = f.shape().plane();
  std::vector<int> fg;
  for (int i = 0; i < plane; ++i)
    if (mask.data()[i] >= Real(0.5)) fg.push_back(i);
  if (trace) {
    trace->attention.emplace_back();
    trace->origins.emplace_back();
    trace->contribution.emplace_back(Shape{1, 1, f.h(), f.w()});
  }
  if (fg.empty()) return f;
  if (static_cast<int>(fg.size()) == plane) {
    log::debug("ptl: no background, features passed through");
    return f;
  }

  const Tensor<Real> background = complement_mask(mask);
  const Tensor<Real> content = gather_rows(masked_instance_norm(f, mask, eps), fg);
  const PatchSet<Real> patches = extract_patches(f, background, geometry_, projection_, eps);

  Tensor<Real> mean_rows;
  Tensor<Real> std_rows;
  if (patches.size() == 0) {
    // The background lies entirely between windows; fall back to its global
    // appearance as a single pseudo-block.
    log::debug("ptl: no block covers the background, using global moments");
    const Moments<Real> global = masked_moments(f, background, eps);
    const Tensor<Real> ones(Shape::matrix(static_cast<int>(fg.size()), 1), Real(1));
    mean_rows = matmul(ones, global.mean);
    std_rows = matmul(ones, global.std);
    if (trace) {
      trace->attention.back() = ones;
      for (int i = 0; i < plane; ++i) trace->contribution.back().values()[i] = background.data()[i] * fg.size();
    }
  } else {
    Tensor<Real> attn;
    mean_rows = attend(content, patches.content, patches.mean, static_cast<Real>(options_.attn_scale), &attn);
    std_rows = matmul(attn, patches.std);
    if (trace) {
      trace->attention.back() = attn;
      trace->origins.back() = patches.origins;
      Tensor<Real>& map = trace->contribution.back();
      const int k = patches.size(), w = f.w();
      for (int p = 0; p < k; ++p) {
        double mass = 0.0;
        for (std::size_t r = 0; r < fg.size(); ++r) mass += attn.values()[r * k + p];
        const PatchOrigin o = patches.origins[p];
        for (int y = 0; y < geometry_.patch_h; ++y)
          for (int x = 0; x < geometry_.patch_w; ++x) {
            const int i = (o.y + y) * w + o.x + x;
            map.values()[i] += static_cast<Real>(mass * background.data()[i]);
          }
      }
    }
  }
  return scatter_rows(f, fg, add(mul(content, std_rows), mean_rows));
}

template PatchSet<float> extract_patches(const Tensor<float>&, const Tensor<float>&,
                                         const PatchGeometry&, const LinearLayer<float>&, float);
template PatchSet<double> extract_patches(const Tensor<double>&, const Tensor<double>&,
                                          const PatchGeometry&, const LinearLayer<double>&, double);
template class PtlModule<float>;
template class PtlModule<double>;

}  // namespace harmony
