// Copyright 2026 The Harmony Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "harmony/tensor.hpp"

namespace harmony {

/// One learnable tensor. dims is the logical extent (rank 1..4) used by the
/// checkpoint format; the tensor stores it right-aligned in (n, c, h, w).
template <typename Real>
struct Parameter {
  std::string name;
  std::vector<int> dims;
  Tensor<Real> value;
};

/// Shape of a logical extent, right-aligned into rank 4.
Shape shape_from_dims(const std::vector<int>& dims);

/// Named, insertion-ordered collection of learnable tensors.
template <typename Real>
class ParamStore {
 public:
  /// Registers a zero-filled parameter; names must be unique. The returned
  /// reference is invalidated by the next add; copy the handle to keep it.
  Tensor<Real>& add(std::string name, std::vector<int> dims);

  [[nodiscard]] std::size_t size() const noexcept { return params_.size(); }
  [[nodiscard]] std::size_t element_count() const noexcept;

  [[nodiscard]] Parameter<Real>& operator[](std::size_t i) { return params_[i]; }
  [[nodiscard]] const Parameter<Real>& operator[](std::size_t i) const { return params_[i]; }
  [[nodiscard]] const Parameter<Real>* find(const std::string& name) const;
  [[nodiscard]] Parameter<Real>* find(const std::string& name);

  [[nodiscard]] auto begin() { return params_.begin(); }
  [[nodiscard]] auto end() { return params_.end(); }
  [[nodiscard]] auto begin() const { return params_.begin(); }
  [[nodiscard]] auto end() const { return params_.end(); }

  void zero_grad();

 private:
  std::vector<Parameter<Real>> params_;
};

extern template class ParamStore<float>;
extern template class ParamStore<double>;

}  // namespace harmony
