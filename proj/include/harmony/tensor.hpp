// Copyright 2026 The Harmony Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace harmony {

class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class ArgumentError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when a reduction is asked for over an empty region (empty mask,
/// zero-column attention).
class EmptyRegionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed serialized data (checkpoints, images). The message names the
/// byte offset where decoding stopped.
class DecodeError : public std::runtime_error {
 public:
  DecodeError(const std::string& what, std::size_t offset)
      : std::runtime_error(what + " at byte " + std::to_string(offset)), offset_(offset) {}
  [[nodiscard]] std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

/// Rank-4 (n, c, h, w) extent. Matrices are stored as (1, 1, rows, cols);
/// the matrix view of any shape is rows = n*c*h, cols = w.
struct Shape {
  int n = 1;
  int c = 1;
  int h = 1;
  int w = 1;

  [[nodiscard]] constexpr std::size_t numel() const noexcept {
    return static_cast<std::size_t>(n) * c * h * w;
  }
  [[nodiscard]] constexpr int rows() const noexcept { return n * c * h; }
  [[nodiscard]] constexpr int cols() const noexcept { return w; }
  [[nodiscard]] constexpr int plane() const noexcept { return h * w; }
  [[nodiscard]] std::string str() const;

  friend constexpr bool operator==(const Shape&, const Shape&) = default;

  static constexpr Shape matrix(int rows, int cols) { return {1, 1, rows, cols}; }
};

namespace detail {

template <typename Real>
struct TensorImpl {
  Shape shape;
  std::vector<Real> data;
  std::vector<Real> grad;  // empty until the first accumulation
  bool requires_grad = false;
};

}  // namespace detail

/// Shared handle to a dense row-major (n, c, h, w) buffer with an optional
/// gradient. Copies alias the same storage; use clone() for a deep copy.
template <typename Real>
class Tensor {
 public:
  using value_type = Real;

  Tensor() = default;
  explicit Tensor(Shape shape, Real fill = Real(0));
  Tensor(Shape shape, std::vector<Real> values);

  static Tensor matrix(int rows, int cols, std::vector<Real> values);
  static Tensor scalar(Real value);

  [[nodiscard]] bool defined() const noexcept { return impl_ != nullptr; }
  [[nodiscard]] const Shape& shape() const { return impl_->shape; }
  [[nodiscard]] int n() const { return impl_->shape.n; }
  [[nodiscard]] int c() const { return impl_->shape.c; }
  [[nodiscard]] int h() const { return impl_->shape.h; }
  [[nodiscard]] int w() const { return impl_->shape.w; }
  [[nodiscard]] std::size_t numel() const { return impl_->data.size(); }

  [[nodiscard]] std::span<Real> values() { return impl_->data; }
  [[nodiscard]] std::span<const Real> values() const { return impl_->data; }
  [[nodiscard]] Real* data() { return impl_->data.data(); }
  [[nodiscard]] const Real* data() const { return impl_->data.data(); }

  [[nodiscard]] Real& at(int n, int c, int h, int w);
  [[nodiscard]] Real at(int n, int c, int h, int w) const;
  /// Value of a single-element tensor.
  [[nodiscard]] Real item() const;

  [[nodiscard]] bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool on);

  [[nodiscard]] bool has_grad() const { return !impl_->grad.empty(); }
  [[nodiscard]] std::span<const Real> grad() const { return impl_->grad; }
  /// Gradient buffer, zero-filled on first access. Backward functions
  /// accumulate into it.
  [[nodiscard]] std::span<Real> grad_buffer() const;
  void zero_grad();

  /// Deep copy of the values; the copy does not require grad.
  [[nodiscard]] Tensor clone() const;
  template <typename Other>
  [[nodiscard]] Tensor<Other> cast() const;

  [[nodiscard]] bool same_storage(const Tensor& other) const noexcept {
    return impl_ == other.impl_;
  }

 private:
  std::shared_ptr<detail::TensorImpl<Real>> impl_;
};

/// Ordered record of backward closures. Constructing a tape makes it the
/// active tape of the calling thread until it is destroyed; differentiable
/// ops record onto the active tape when any input requires grad.
template <typename Real>
class GradTape {
 public:
  GradTape();
  ~GradTape();
  GradTape(const GradTape&) = delete;
  GradTape& operator=(const GradTape&) = delete;

  [[nodiscard]] static GradTape* active() noexcept;

  void record(std::function<void()> backward);
  [[nodiscard]] std::size_t size() const noexcept { return nodes_.size(); }

  /// Seeds d(loss)/d(loss) = 1 and runs every recorded closure once, in
  /// reverse recording order. A tape can be consumed once.
  void backward(Tensor<Real>& loss);

 private:
  std::vector<std::function<void()>> nodes_;
  GradTape* previous_ = nullptr;
  bool consumed_ = false;
};

/// Suspends recording on this thread for its lifetime.
template <typename Real>
class NoGradScope {
 public:
  NoGradScope();
  ~NoGradScope();
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  GradTape<Real>* saved_;
};

template <typename Real>
template <typename Other>
Tensor<Other> Tensor<Real>::cast() const {
  std::vector<Other> out(numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<Other>(impl_->data[i]);
  return Tensor<Other>(shape(), std::move(out));
}

extern template class Tensor<float>;
extern template class Tensor<double>;
extern template class GradTape<float>;
extern template class GradTape<double>;
extern template class NoGradScope<float>;
extern template class NoGradScope<double>;

}  // namespace harmony
