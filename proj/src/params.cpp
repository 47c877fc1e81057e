// Copyright 2026 The Harmony Authors
// SPDX-License-Identifier: Apache-2.0

#include "harmony/params.hpp"

namespace harmony {

Shape shape_from_dims(const std::vector<int>& dims) {
  if (dims.empty() || dims.size() > 4) {
    throw DimensionError("parameter rank must be 1..4, got " + std::to_string(dims.size()));
  }
  int extent[4] = {1, 1, 1, 1};
  const std::size_t offset = 4 - dims.size();
  for (std::size_t i = 0; i < dims.size(); ++i) {
    if (dims[i] < 1) throw DimensionError("parameter extent must be positive");
    extent[offset + i] = dims[i];
  }
  return Shape{extent[0], extent[1], extent[2], extent[3]};
}

template <typename Real>
Tensor<Real>& ParamStore<Real>::add(std::string name, std::vector<int> dims) {
  if (find(name) != nullptr) throw ArgumentError("duplicate parameter name: " + name);
  Tensor<Real> value(shape_from_dims(dims));
  value.set_requires_grad(true);
  params_.push_back({std::move(name), std::move(dims), std::move(value)});
  return params_.back().value;
}

template <typename Real>
std::size_t ParamStore<Real>::element_count() const noexcept {
  std::size_t total = 0;
  for (const auto& p : params_) total += p.value.numel();
  return total;
}

template <typename Real>
const Parameter<Real>* ParamStore<Real>::find(const std::string& name) const {
  for (const auto& p : params_)
    if (p.name == name) return &p;
  return nullptr;
}

template <typename Real>
Parameter<Real>* ParamStore<Real>::find(const std::string& name) {
  for (auto& p : params_)
    if (p.name == name) return &p;
  return nullptr;
}

template <typename Real>
void ParamStore<Real>::zero_grad() {
  for (auto& p : params_) p.value.zero_grad();
}

template class ParamStore<float>;
template class ParamStore<double>;

}  // namespace harmony
