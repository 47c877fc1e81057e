// Copyright 2026 The Harmony Authors
// SPDX-License-Identifier: Apache-2.0

#include "harmony/layers.hpp"

#include <cmath>
#include <numeric>
#include <vector>

namespace harmony {

template <typename Real>
void kaiming_uniform(Tensor<Real>& weight, int fan_in, double slope, Rng& rng) {
  const double bound = std::sqrt(6.0 / ((1.0 + slope * slope) * std::max(1, fan_in)));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (Real& v : weight.values()) v = static_cast<Real>(dist(rng));
}

std::vector<int> all_locations(int plane) {
  std::vector<int> locs(static_cast<std::size_t>(plane));
  std::iota(locs.begin(), locs.end(), 0);
  return locs;
}

template <typename Real>
Tensor<Real> attend(const Tensor<Real>& query, const Tensor<Real>& key, const Tensor<Real>& value,
                    Real scale_factor, Tensor<Real>* weights) {
  Tensor<Real> logits = matmul(query, transpose(key));
  if (scale_factor != Real(1)) logits = scale(logits, scale_factor);
  const Tensor<Real> attn = softmax_rows(logits);
  if (weights) *weights = attn;
  return matmul(attn, value);
}

template <typename Real>
Tensor<Real> resize_mask(const Tensor<Real>& mask, int h, int w) {
  const Shape s = mask.shape();
  if (s.c != 1) throw DimensionError("resize_mask: expected one channel, got " + s.str());
  if (h < 1 || w < 1) throw ArgumentError("resize_mask: empty target size");
  Tensor<Real> out(Shape{s.n, 1, h, w});
  for (int n = 0; n < s.n; ++n)
    for (int y = 0; y < h; ++y) {
      const int sy = std::min(s.h - 1, static_cast<int>((y + 0.5) * s.h / h));
      for (int x = 0; x < w; ++x) {
        const int sx = std::min(s.w - 1, static_cast<int>((x + 0.5) * s.w / w));
        out.at(n, 0, y, x) = mask.at(n, 0, sy, sx) >= Real(0.5) ? Real(1) : Real(0);
      }
    }
  return out;
}

template <typename Real>
Tensor<Real> complement_mask(const Tensor<Real>& mask) {
  Tensor<Real> out(mask.shape());
  for (std::size_t i = 0; i < mask.numel(); ++i) out.values()[i] = Real(1) - mask.values()[i];
  return out;
}

// The leaky slope used for initialization throughout.
constexpr double kInitSlope = 0.2;

template <typename Real>
LinearLayer<Real>::LinearLayer(ParamStore<Real>& store, const std::string& name, int in, int out,
                               Rng& rng, bool with_bias)
    : in_(in), out_(out) {
  weight_ = store.add(name + ".weight", {out, in});
  kaiming_uniform(weight_, in, kInitSlope, rng);
  if (with_bias) {
    bias_ = store.add(name + ".bias", {out});
  } else {
    bias_ = Tensor<Real>(Shape::matrix(1, out));
  }
}

template <typename Real>
Tensor<Real> LinearLayer<Real>::operator()(const Tensor<Real>& x) const {
  return linear(x, weight_, bias_);
}

template <typename Real>
Conv2dLayer<Real>::Conv2dLayer(ParamStore<Real>& store, const std::string& name, int in, int out,
                               int kernel, int stride, Rng& rng)
    : stride_(stride), pad_(kernel / 2) {
  weight_ = store.add(name + ".weight", {out, in, kernel, kernel});
  kaiming_uniform(weight_, in * kernel * kernel, kInitSlope, rng);
  bias_ = store.add(name + ".bias", {out});
}

template <typename Real>
Tensor<Real> Conv2dLayer<Real>::operator()(const Tensor<Real>& x) const {
  return conv2d(x, weight_, bias_, stride_, pad_);
}

template <typename Real>
AffineInstanceNorm<Real>::AffineInstanceNorm(ParamStore<Real>& store, const std::string& name,
                                             int channels) {
  gamma_ = store.add(name + ".gamma", {channels});
  for (Real& v : gamma_.values()) v = Real(1);
  beta_ = store.add(name + ".beta", {channels});
}

template <typename Real>
Tensor<Real> AffineInstanceNorm<Real>::operator()(const Tensor<Real>& x) const {
  return channel_affine(instance_norm(x), gamma_, beta_);
}

template <typename Real>
SelfAttentionLayer<Real>::SelfAttentionLayer(ParamStore<Real>& store, const std::string& name,
                                             int channels, Rng& rng)
    : channels_(channels),
      query_(store, name + ".query", channels, channels, rng),
      key_(store, name + ".key", channels, channels, rng),
      value_(store, name + ".value", channels, channels, rng),
      out_(store, name + ".out", channels, channels, rng) {}

template <typename Real>
Tensor<Real> SelfAttentionLayer<Real>::attention(const Tensor<Real>& sample) const {
  const std::vector<int> locs = all_locations(sample.shape().plane());
  const Tensor<Real> tokens = gather_rows(sample, locs);
  const Real inv_sqrt_c = Real(1) / std::sqrt(static_cast<Real>(channels_));
  Tensor<Real> weights;
  (void)attend(query_(tokens), key_(tokens), tokens, inv_sqrt_c, &weights);
  return weights;
}

template <typename Real>
Tensor<Real> SelfAttentionLayer<Real>::operator()(const Tensor<Real>& x) const {
  if (x.c() != channels_) {
    throw DimensionError("self_attention: expected " + std::to_string(channels_) +
                         " channels, got " + x.shape().str());
  }
  const std::vector<int> locs = all_locations(x.shape().plane());
  const Real inv_sqrt_c = Real(1) / std::sqrt(static_cast<Real>(channels_));
  std::vector<Tensor<Real>> samples;
  samples.reserve(static_cast<std::size_t>(x.n()));
  for (int n = 0; n < x.n(); ++n) {
    const Tensor<Real> sample = x.n() == 1 ? x : batch_slice(x, n);
    const Tensor<Real> tokens = gather_rows(sample, locs);
    const Tensor<Real> mixed =
        out_(attend(query_(tokens), key_(tokens), value_(tokens), inv_sqrt_c));
    samples.push_back(scatter_rows(sample, locs, add(tokens, mixed)));
  }
  return samples.size() == 1 ? samples.front() : batch_stack<Real>(samples);
}

template void kaiming_uniform<float>(Tensor<float>&, int, double, Rng&);
template void kaiming_uniform<double>(Tensor<double>&, int, double, Rng&);
template Tensor<float> attend(const Tensor<float>&, const Tensor<float>&, const Tensor<float>&,
                              float, Tensor<float>*);
template Tensor<double> attend(const Tensor<double>&, const Tensor<double>&,
                               const Tensor<double>&, double, Tensor<double>*);
template Tensor<float> resize_mask(const Tensor<float>&, int, int);
template Tensor<double> resize_mask(const Tensor<double>&, int, int);
template Tensor<float> complement_mask(const Tensor<float>&);
template Tensor<double> complement_mask(const Tensor<double>&);
template class LinearLayer<float>;
template class LinearLayer<double>;
template class Conv2dLayer<float>;
template class Conv2dLayer<double>;
template class AffineInstanceNorm<float>;
template class AffineInstanceNorm<double>;
template class SelfAttentionLayer<float>;
template class SelfAttentionLayer<double>;

}  // namespace harmony
