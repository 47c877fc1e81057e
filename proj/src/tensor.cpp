// Copyright 2026 The Harmony Authors
// SPDX-License-Identifier: Apache-2.0

#include "harmony/tensor.hpp"

#include <algorithm>
#include <ranges>
#include <sstream>

namespace harmony {

std::string Shape::str() const {
  std::ostringstream os;
  os << '(' << n << ", " << c << ", " << h << ", " << w << ')';
  return os.str();
}

namespace {

template <typename Real>
GradTape<Real>*& active_slot() {
  thread_local GradTape<Real>* slot = nullptr;
  return slot;
}

void check_extent(const Shape& s) {
  if (s.n < 0 || s.c < 0 || s.h < 0 || s.w < 0) {
    throw DimensionError("negative extent in shape " + s.str());
  }
}

}  // namespace

template <typename Real>
Tensor<Real>::Tensor(Shape shape, Real fill) {
  check_extent(shape);
  impl_ = std::make_shared<detail::TensorImpl<Real>>();
  impl_->shape = shape;
  impl_->data.assign(shape.numel(), fill);
}

template <typename Real>
Tensor<Real>::Tensor(Shape shape, std::vector<Real> values) {
  check_extent(shape);
  if (values.size() != shape.numel()) {
    throw DimensionError("tensor of shape " + shape.str() + " needs " +
                         std::to_string(shape.numel()) + " values, got " +
                         std::to_string(values.size()));
  }
  impl_ = std::make_shared<detail::TensorImpl<Real>>();
  impl_->shape = shape;
  impl_->data = std::move(values);
}

template <typename Real>
Tensor<Real> Tensor<Real>::matrix(int rows, int cols, std::vector<Real> values) {
  return Tensor(Shape::matrix(rows, cols), std::move(values));
}

template <typename Real>
Tensor<Real> Tensor<Real>::scalar(Real value) {
  return Tensor(Shape{}, std::vector<Real>{value});
}

template <typename Real>
Real& Tensor<Real>::at(int n, int c, int h, int w) {
  const Shape& s = impl_->shape;
  return impl_->data[((static_cast<std::size_t>(n) * s.c + c) * s.h + h) * s.w + w];
}

template <typename Real>
Real Tensor<Real>::at(int n, int c, int h, int w) const {
  const Shape& s = impl_->shape;
  return impl_->data[((static_cast<std::size_t>(n) * s.c + c) * s.h + h) * s.w + w];
}

template <typename Real>
Real Tensor<Real>::item() const {
  if (numel() != 1) {
    throw DimensionError("item() on tensor of shape " + shape().str());
  }
  return impl_->data[0];
}

template <typename Real>
Tensor<Real>& Tensor<Real>::set_requires_grad(bool on) {
  impl_->requires_grad = on;
  return *this;
}

template <typename Real>
std::span<Real> Tensor<Real>::grad_buffer() const {
  if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), Real(0));
  return impl_->grad;
}

template <typename Real>
void Tensor<Real>::zero_grad() {
  std::ranges::fill(impl_->grad, Real(0));
}

template <typename Real>
Tensor<Real> Tensor<Real>::clone() const {
  return Tensor(impl_->shape, impl_->data);
}

template <typename Real>
GradTape<Real>::GradTape() : previous_(active_slot<Real>()) {
  active_slot<Real>() = this;
}

template <typename Real>
GradTape<Real>::~GradTape() {
  if (active_slot<Real>() == this) active_slot<Real>() = previous_;
}

template <typename Real>
GradTape<Real>* GradTape<Real>::active() noexcept {
  return active_slot<Real>();
}

template <typename Real>
void GradTape<Real>::record(std::function<void()> backward) {
  if (consumed_) throw std::logic_error("recording onto a consumed tape");
  nodes_.push_back(std::move(backward));
}

template <typename Real>
void GradTape<Real>::backward(Tensor<Real>& loss) {
  if (consumed_) throw std::logic_error("tape already consumed by backward()");
  if (loss.numel() != 1) {
    throw DimensionError("backward() needs a scalar loss, got " + loss.shape().str());
  }
  if (!loss.requires_grad()) {
    throw std::logic_error("backward() on a loss that does not require grad");
  }
  consumed_ = true;
  loss.grad_buffer()[0] += Real(1);
  for (auto& node : std::views::reverse(nodes_)) node();
}

template <typename Real>
NoGradScope<Real>::NoGradScope() : saved_(active_slot<Real>()) {
  active_slot<Real>() = nullptr;
}

template <typename Real>
NoGradScope<Real>::~NoGradScope() {
  active_slot<Real>() = saved_;
}

template class Tensor<float>;
template class Tensor<double>;
template class GradTape<float>;
template class GradTape<double>;
template class NoGradScope<float>;
template class NoGradScope<double>;

}  // namespace harmony
