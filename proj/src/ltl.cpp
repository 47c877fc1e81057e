// Copyright 2026 The Harmony Authors
// SPDX-License-Identifier: Apache-2.0

#include "harmony/ltl.hpp"

namespace harmony {

template <typename Real>
TokenSplit split_tokens(const Tensor<Real>& mask) {
  const Shape s = mask.shape();
  if (s.n != 1 || s.c != 1) throw DimensionError("split_tokens: expected (1, 1, h, w), got " + s.str());
  TokenSplit split;
  const Real* m = mask.data();
  for (int i = 0; i < s.plane(); ++i) (m[i] >= Real(0.5) ? split.fg_index : split.bg_index).push_back(i);
  return split;
}

template <typename Real>
LtlModule<Real>::LtlModule(ParamStore<Real>& store, const std::string& name, int channels, Rng& rng,
                           LtlOptions options)
    : channels_(channels),
      options_(options),
      attention_(store, name + ".attention", channels, rng),
      fuse_(store, name + ".fuse", 2 * channels, channels, rng) {}

template <typename Real>
Tensor<Real> LtlModule<Real>::normalize(const Tensor<Real>& f, const Tensor<Real>& mask) const {
  const Real eps = static_cast<Real>(options_.eps);
  const Tensor<Real> mixed = attention_(f);
  if (!options_.masked_norm) return instance_norm(mixed, eps);
  // The two passes touch disjoint locations, so their order does not matter.
  return masked_instance_norm(masked_instance_norm(mixed, mask, eps), complement_mask(mask), eps);
}

template <typename Real>
Tensor<Real> LtlModule<Real>::operator()(const Tensor<Real>& f, const Tensor<Real>& mask,
                                         LtlTrace<Real>* trace) const {
  const Tensor<Real> m = resize_mask(mask, f.h(), f.w());
  if (m.n() != f.n()) throw DimensionError("ltl: mask batch does not match " + f.shape().str());
  const Tensor<Real> normed = normalize(f, m);
  if (trace) *trace = {};

  std::vector<Tensor<Real>> out;
  for (int n = 0; n < f.n(); ++n) {
    const TokenSplit split = split_tokens(f.n() == 1 ? m : batch_slice(m, n));
    const Tensor<Real> sample = f.n() == 1 ? normed : batch_slice(normed, n);
    if (trace) {
      trace->splits.push_back(split);
      trace->attention.emplace_back();
    }
    if (split.fg_index.empty()) {
      out.push_back(f.n() == 1 ? f : batch_slice(f, n));
      continue;
    }
    if (split.bg_index.empty()) {
      out.push_back(sample);
      continue;
    }
    const Tensor<Real> fg = gather_rows(sample, split.fg_index);
    const Tensor<Real> bg = gather_rows(sample, split.bg_index);
    Tensor<Real> attn;
    const Tensor<Real> related = attend(fg, bg, bg, static_cast<Real>(options_.attn_scale), &attn);
    out.push_back(scatter_rows(sample, split.fg_index, fuse_(concat_cols(fg, related))));
    if (trace) trace->attention.back() = attn;
  }
  return out.size() == 1 ? out.front() : batch_stack<Real>(out);
}

template TokenSplit split_tokens(const Tensor<float>&);
template TokenSplit split_tokens(const Tensor<double>&);
template class LtlModule<float>;
template class LtlModule<double>;

}  // namespace harmony
