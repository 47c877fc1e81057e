// Copyright 2026 The Harmony Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "harmony/grad_check.hpp"
#include "harmony/ops.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

namespace harmony {
namespace {

using testing::max_abs_diff;
using testing::random_mask;
using testing::random_tensor;
using T = Tensor<double>;

constexpr double kEps = 1e-5;

// Triple-loop product of the matrix views.
std::vector<double> matmul_oracle(const T& a, const T& b) {
  const int rows = a.shape().rows(), inner = a.shape().cols(), cols = b.shape().cols();
  std::vector<double> out(static_cast<std::size_t>(rows) * cols, 0.0);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) {
      double acc = 0.0;
      for (int k = 0; k < inner; ++k) acc += a.values()[i * inner + k] * b.values()[k * cols + j];
      out[i * cols + j] = acc;
    }
  return out;
}

// Direct nested-loop convolution.
std::vector<double> conv_oracle(const T& x, const T& w, const T& b, int stride, int pad) {
  const Shape sx = x.shape(), sw = w.shape();
  const int k = sw.h;
  const int oh = (sx.h + 2 * pad - k) / stride + 1;
  const int ow = (sx.w + 2 * pad - k) / stride + 1;
  std::vector<double> out(static_cast<std::size_t>(sx.n) * sw.n * oh * ow);
  for (int n = 0; n < sx.n; ++n)
    for (int o = 0; o < sw.n; ++o)
      for (int y = 0; y < oh; ++y)
        for (int xo = 0; xo < ow; ++xo) {
          double acc = b.values()[o];
          for (int c = 0; c < sx.c; ++c)
            for (int ky = 0; ky < k; ++ky)
              for (int kx = 0; kx < k; ++kx) {
                const int iy = y * stride - pad + ky, ix = xo * stride - pad + kx;
                if (iy < 0 || ix < 0 || iy >= sx.h || ix >= sx.w) continue;
                acc += x.at(n, c, iy, ix) * w.at(o, c, ky, kx);
              }
          out[((static_cast<std::size_t>(n) * sw.n + o) * oh + y) * ow + xo] = acc;
        }
  return out;
}

std::vector<double> as_vector(const T& t) { return {t.values().begin(), t.values().end()}; }

// ---------------------------------------------------------------------------

TEST(Tensor, StorageInvariants) {
  T t(Shape{2, 3, 4, 5}, 1.5);
  EXPECT_EQ(t.numel(), 120u);
  EXPECT_FALSE(t.has_grad());
  EXPECT_EQ(t.grad_buffer().size(), t.numel());
  EXPECT_THROW(T(Shape{1, 1, 2, 2}, std::vector<double>{1, 2, 3}), DimensionError);
  T copy = t;
  EXPECT_TRUE(copy.same_storage(t));
  EXPECT_FALSE(t.clone().same_storage(t));
}

TEST(Matmul, IdentityLeavesMatrixUnchanged) {
  T eye = T::matrix(2, 2, {1, 0, 0, 1});
  T a = T::matrix(2, 2, {0.3, -1.2, 4.0, 2.5});
  EXPECT_EQ(as_vector(matmul(eye, a)), as_vector(a));
}

TEST(Matmul, HandArithmetic) {
  T a = T::matrix(2, 2, {1, 2, 3, 4});
  T b = T::matrix(2, 1, {1, 1});
  T c = matmul(a, b);
  EXPECT_EQ(c.shape(), Shape::matrix(2, 1));
  EXPECT_EQ(as_vector(c), (std::vector<double>{3, 7}));
}

TEST(Matmul, MatchesTripleLoop) {
  std::mt19937_64 rng(11);
  T a = random_tensor(Shape::matrix(5, 7), rng);
  T b = random_tensor(Shape::matrix(7, 3), rng);
  EXPECT_LT(max_abs_diff(as_vector(matmul(a, b)), matmul_oracle(a, b)), 1e-12);
  for (int trial = 0; trial < 4; ++trial) {
    std::uniform_int_distribution<int> dim(1, 70);
    const int r = dim(rng), k = dim(rng), c = dim(rng);
    T x = random_tensor(Shape::matrix(r, k), rng);
    T y = random_tensor(Shape::matrix(k, c), rng);
    EXPECT_LT(max_abs_diff(as_vector(matmul(x, y)), matmul_oracle(x, y)), 1e-10);
  }
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
  T a(Shape::matrix(2, 3));
  T b(Shape::matrix(4, 2));
  try {
    (void)matmul(a, b);
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find(a.shape().str()), std::string::npos);
    EXPECT_NE(msg.find(b.shape().str()), std::string::npos);
  }
}

TEST(Softmax, ClosedFormRows) {
  T s = softmax_rows(T::matrix(3, 2, {0.0, 0.0, std::log(2.0), 0.0, 1000.0, 0.0}));
  EXPECT_DOUBLE_EQ(s.values()[0], 0.5);
  EXPECT_DOUBLE_EQ(s.values()[1], 0.5);
  EXPECT_NEAR(s.values()[2], 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(s.values()[3], 1.0 / 3.0, 1e-15);
  EXPECT_TRUE(std::isfinite(s.values()[4]));
  EXPECT_NEAR(s.values()[4], 1.0, 1e-15);
  EXPECT_NEAR(s.values()[5], 0.0, 1e-15);
}

TEST(Softmax, RowsSumToOneAndPermutationEquivariant) {
  std::mt19937_64 rng(3);
  T x = random_tensor(Shape::matrix(6, 9), rng, -20, 20);
  T y = softmax_rows(x);
  for (int r = 0; r < 6; ++r) {
    double total = 0;
    for (int j = 0; j < 9; ++j) {
      EXPECT_GE(y.values()[r * 9 + j], 0.0);
      total += y.values()[r * 9 + j];
    }
    EXPECT_NEAR(total, 1.0, 1e-6);
  }
  std::vector<int> perm(9);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  T xp(x.shape());
  for (int r = 0; r < 6; ++r)
    for (int j = 0; j < 9; ++j) xp.values()[r * 9 + j] = x.values()[r * 9 + perm[j]];
  T yp = softmax_rows(xp);
  for (int r = 0; r < 6; ++r)
    for (int j = 0; j < 9; ++j) EXPECT_NEAR(yp.values()[r * 9 + j], y.values()[r * 9 + perm[j]], 1e-15);
}

TEST(Softmax, NoColumnsIsEmptyAttention) {
  EXPECT_THROW((void)softmax_rows(T(Shape::matrix(3, 0))), EmptyRegionError);
}

TEST(Conv2d, PointwiseIdentityKernel) {
  std::mt19937_64 rng(5);
  T x = random_tensor(Shape{2, 3, 5, 4}, rng);
  T w(Shape{3, 3, 1, 1});
  for (int i = 0; i < 3; ++i) w.at(i, i, 0, 0) = 1.0;
  T b(Shape::matrix(1, 3));
  EXPECT_EQ(as_vector(conv2d(x, w, b, 1, 0)), as_vector(x));
}

TEST(Conv2d, OnesKernelOnConstantField) {
  const double c = 0.7;
  T x(Shape{1, 1, 6, 6}, c);
  T w(Shape{1, 1, 3, 3}, 1.0);
  T b(Shape::matrix(1, 1));
  T y = conv2d(x, w, b, 1, 1);
  ASSERT_EQ(y.shape(), (Shape{1, 1, 6, 6}));
  for (int i = 1; i < 5; ++i)
    for (int j = 1; j < 5; ++j) EXPECT_NEAR(y.at(0, 0, i, j), 9 * c, 1e-14);
  EXPECT_NEAR(y.at(0, 0, 0, 0), 4 * c, 1e-14);
}

TEST(Conv2d, MatchesNestedLoopOracle) {
  std::mt19937_64 rng(17);
  struct Case { Shape x; int out, k, stride, pad; };
  for (const Case& cs : {Case{{2, 3, 16, 16}, 5, 3, 1, 1}, Case{{1, 4, 16, 13}, 3, 3, 2, 1},
                         Case{{3, 2, 9, 9}, 4, 5, 1, 2}, Case{{1, 6, 7, 8}, 2, 1, 1, 0},
                         Case{{2, 3, 11, 16}, 4, 3, 2, 0}}) {
    T x = random_tensor(cs.x, rng);
    T w = random_tensor(Shape{cs.out, cs.x.c, cs.k, cs.k}, rng);
    T b = random_tensor(Shape::matrix(1, cs.out), rng);
    T y = conv2d(x, w, b, cs.stride, cs.pad);
    EXPECT_EQ(y.h(), (cs.x.h + 2 * cs.pad - cs.k) / cs.stride + 1);
    EXPECT_EQ(y.w(), (cs.x.w + 2 * cs.pad - cs.k) / cs.stride + 1);
    EXPECT_LT(max_abs_diff(as_vector(y), conv_oracle(x, w, b, cs.stride, cs.pad)), 1e-10);
  }
}

TEST(Conv2d, ChannelMismatchIsDimensionError) {
  T x(Shape{1, 3, 4, 4});
  T w(Shape{2, 2, 3, 3});
  T b(Shape::matrix(1, 2));
  EXPECT_THROW((void)conv2d(x, w, b, 1, 1), DimensionError);
}

TEST(MaskedMoments, ConstantField) {
  std::mt19937_64 rng(1);
  T x(Shape{1, 2, 4, 4}, 5.0);
  T mask = random_mask(1, 4, 4, rng);
  Moments<double> m = masked_moments(x, mask);
  for (int c = 0; c < 2; ++c) {
    EXPECT_NEAR(m.mean.values()[c], 5.0, 1e-12);
    EXPECT_NEAR(m.std.values()[c], std::sqrt(kEps), 1e-12);
  }
}

TEST(MaskedMoments, HandArithmetic) {
  T x(Shape{1, 1, 1, 4}, std::vector<double>{1, 2, 3, 4});
  T mask(Shape{1, 1, 1, 4}, std::vector<double>{1, 1, 0, 0});
  Moments<double> m = masked_moments(x, mask);
  EXPECT_NEAR(m.mean.item(), 1.5, 1e-15);
  EXPECT_NEAR(m.std.item(), std::sqrt(0.25 + kEps), 1e-15);
}

TEST(MaskedMoments, FullMaskEqualsPlainMoments) {
  std::mt19937_64 rng(2);
  T x = random_tensor(Shape{2, 3, 5, 5}, rng);
  Moments<double> m = masked_moments(x, T(Shape{2, 1, 5, 5}, 1.0));
  for (int n = 0; n < 2; ++n)
    for (int c = 0; c < 3; ++c) {
      double mean = 0, sq = 0;
      for (int i = 0; i < 25; ++i) mean += x.values()[(n * 3 + c) * 25 + i];
      mean /= 25;
      for (int i = 0; i < 25; ++i) sq += std::pow(x.values()[(n * 3 + c) * 25 + i] - mean, 2);
      EXPECT_NEAR(m.mean.values()[n * 3 + c], mean, 1e-14);
      EXPECT_NEAR(m.std.values()[n * 3 + c], std::sqrt(sq / 25 + kEps), 1e-14);
    }
}

TEST(MaskedMoments, EmptyMaskIsSignalled) {
  T x(Shape{2, 1, 2, 2}, 1.0);
  T mask(Shape{2, 1, 2, 2}, 1.0);
  for (int i = 4; i < 8; ++i) mask.values()[i] = 0.0;
  EXPECT_THROW((void)masked_moments(x, mask), EmptyRegionError);
}

TEST(Upsample, FactorOneIsIdentityAndReplicates) {
  std::mt19937_64 rng(4);
  T x = random_tensor(Shape{1, 2, 3, 3}, rng);
  EXPECT_EQ(as_vector(upsample_nearest(x, 1)), as_vector(x));
  T y = upsample_nearest(T(Shape{1, 1, 1, 1}, 0.25), 2);
  EXPECT_EQ(y.shape(), (Shape{1, 1, 2, 2}));
  EXPECT_EQ(as_vector(y), (std::vector<double>(4, 0.25)));
  EXPECT_THROW((void)upsample_nearest(x, 0), ArgumentError);
}

TEST(Upsample, BackwardCountsReplicas) {
  for (int factor : {1, 2, 3}) {
    T x(Shape{1, 2, 3, 2}, 0.0);
    x.set_requires_grad(true);
    GradTape<double> tape;
    T loss = sum(upsample_nearest(x, factor));
    tape.backward(loss);
    for (double g : x.grad()) EXPECT_EQ(g, factor * factor);
  }
}

// --- gradients ---------------------------------------------------------------

TEST(GradCheck, QuadraticHasExactGradient) {
  std::mt19937_64 rng(9);
  ParamStore<double> params;
  T x = params.add("x", {3, 4});
  x.values()[0] = 0.0;
  for (auto& v : x.values()) v = std::uniform_real_distribution<double>(-2, 2)(rng);
  GradCheckResult r = grad_check([&] { return scale(sum(mul(x, x)), 0.5); }, params);
  EXPECT_LT(r.max_rel_error, 1e-8);
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_DOUBLE_EQ(x.grad()[i], x.values()[i]);
}

TEST(GradCheck, ConvSumLoss) {
  std::mt19937_64 rng(21);
  ParamStore<double> params;
  T x = params.add("x", {2, 3, 6, 6});
  T w = params.add("w", {4, 3, 3, 3});
  T b = params.add("b", {4});
  for (T* t : {&x, &w, &b})
    for (auto& v : t->values()) v = std::uniform_real_distribution<double>(-1, 1)(rng);
  GradCheckResult r = grad_check([&] { return sum(conv2d(x, w, b, 2, 1)); }, params);
  EXPECT_LT(r.max_rel_error, 1e-5) << r.worst_param;
}

TEST(GradCheck, NonFiniteLossIsEvaluationError) {
  ParamStore<double> params;
  T x = params.add("x", {2});
  x.values()[0] = std::numeric_limits<double>::infinity();
  EXPECT_THROW((void)grad_check([&] { return sum(x); }, params), NumericError);
}

// Every differentiable op, on three random shapes.
class OpGradients : public ::testing::TestWithParam<int> {};

TEST_P(OpGradients, AllOpsAgreeWithFiniteDifferences) {
  for (const oracles::OpCheck& op : oracles::op_gradient_errors(GetParam()))
    EXPECT_LT(op.error, 1e-4) << op.name << " on " << op.shape.str();
}

INSTANTIATE_TEST_SUITE_P(RandomShapes, OpGradients, ::testing::Values(1, 2, 3));

TEST(GradTape, ReplayIsBitIdentical) {
  std::mt19937_64 rng(31);
  T x0 = random_tensor(Shape{2, 3, 8, 8}, rng);
  T w0 = random_tensor(Shape{4, 3, 3, 3}, rng);
  T b0 = random_tensor(Shape::matrix(1, 4), rng);
  auto gradients = [&] {
    T x = x0.clone(), w = w0.clone(), b = b0.clone();
    w.set_requires_grad(true);
    x.set_requires_grad(true);
    GradTape<double> tape;
    T y = instance_norm(leaky_relu(conv2d(x, w, b, 1, 1), 0.2));
    T loss = sum(mul(y, y));
    tape.backward(loss);
    std::vector<double> g(w.grad().begin(), w.grad().end());
    g.insert(g.end(), x.grad().begin(), x.grad().end());
    return g;
  };
  EXPECT_EQ(gradients(), gradients());
}

TEST(GradTape, RecordsOnlyWhenActiveAndNeeded) {
  T a(Shape::matrix(2, 2), 1.0);
  a.set_requires_grad(true);
  T b(Shape::matrix(2, 2), 2.0);
  {
    GradTape<double> tape;
    (void)add(b, b);
    EXPECT_EQ(tape.size(), 0u);
    (void)add(a, b);
    EXPECT_EQ(tape.size(), 1u);
    {
      NoGradScope<double> off;
      (void)add(a, b);
    }
    EXPECT_EQ(tape.size(), 1u);
  }
  EXPECT_EQ(GradTape<double>::active(), nullptr);
  EXPECT_FALSE(add(a, b).requires_grad());
}

}  // namespace
}  // namespace harmony
