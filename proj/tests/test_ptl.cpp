// Copyright 2026 The Harmony Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "harmony/grad_check.hpp"
#include "harmony/ptl.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

namespace harmony {
namespace {

using testing::identical;
using testing::max_abs_diff;
using testing::random_mask;
using testing::random_tensor;
using oracles::adain_reference;
using oracles::covered_origins;
using oracles::ptl_oracle;
using oracles::region_stats;
using oracles::Stats;
using T = Tensor<double>;

PtlModule<double> make_module(ParamStore<double>& store, int channels, int size, PtlOptions opt = {},
                              std::uint64_t seed = 5) {
  return oracles::make_ptl_module(store, channels, size, opt, seed);
}

constexpr double kEps = 1e-5;

TEST(PatchGeometry, DivisorsAtFeatureResolution) {
  const PatchGeometry g = PatchGeometry::from_divisors(128, 128, 8, 32);
  EXPECT_EQ(g.patch_h, 16);
  EXPECT_EQ(g.stride_w, 4);
  EXPECT_EQ(candidate_origins(128, 128, g).size(), 841u);
  const PatchGeometry small = PatchGeometry::from_divisors(16, 16, 8, 32);
  EXPECT_EQ(small.patch_h, 2);
  EXPECT_EQ(small.stride_h, 1);
  EXPECT_THROW(candidate_origins(8, 8, PatchGeometry{9, 9, 1, 1}), ArgumentError);
}

TEST(ExtractPatches, FilteringMatchesScanningOracle) {
  const PatchGeometry g = PatchGeometry::from_divisors(128, 128, 8, 32);
  ParamStore<double> store;
  Rng rng(1);
  LinearLayer<double> projection(store, "p", g.patch_h * g.patch_w, 1, rng);
  std::mt19937_64 gen(2);
  const T f = random_tensor(Shape{1, 1, 128, 128}, gen);
  // A large foreground rectangle so that some windows fall entirely inside it.
  T mask(Shape{1, 1, 128, 128}, 0.0);
  for (int y = 10; y < 90; ++y)
    for (int x = 30; x < 120; ++x) mask.at(0, 0, y, x) = 1.0;
  const T background = complement_mask(mask);
  const std::vector<PatchOrigin> expected = covered_origins(background, g);
  const PatchSet<double> set = extract_patches(f, background, g, projection);
  EXPECT_LT(expected.size(), 841u);
  EXPECT_EQ(set.origins, expected);
  EXPECT_EQ(set.blocks.shape(), (Shape{set.size(), 1, 16, 16}));
  EXPECT_EQ(set.content.shape(), Shape::matrix(set.size(), 1));
  for (double s : set.std.values()) EXPECT_GE(s, std::sqrt(kEps));
}

TEST(ExtractPatches, SingleWindowGivesWholeFrameMoments) {
  ParamStore<double> store;
  Rng rng(1);
  LinearLayer<double> projection(store, "p", 3 * 36, 3, rng);
  std::mt19937_64 gen(3);
  const T f = random_tensor(Shape{1, 3, 6, 6}, gen);
  const PatchSet<double> set =
      extract_patches(f, T(Shape{1, 1, 6, 6}, 1.0), PatchGeometry{6, 6, 6, 6}, projection);
  ASSERT_EQ(set.size(), 1);
  const Stats s = region_stats(f, [](int, int) { return true; });
  for (int c = 0; c < 3; ++c) {
    EXPECT_NEAR(set.mean.values()[c], s.mean[c], 1e-12);
    EXPECT_NEAR(set.std.values()[c], s.std[c], 1e-12);
  }
}

TEST(ExtractPatches, ConstantBackground) {
  ParamStore<double> store;
  Rng rng(1);
  LinearLayer<double> projection(store, "p", 2 * 4, 2, rng);
  std::mt19937_64 gen(4);
  const T mask = random_mask(1, 8, 8, gen);
  const T f(Shape{1, 2, 8, 8}, -0.75);
  const PatchSet<double> set = extract_patches(f, complement_mask(mask), PatchGeometry{2, 2, 1, 1}, projection);
  ASSERT_GT(set.size(), 0);
  for (double m : set.mean.values()) EXPECT_NEAR(m, -0.75, 1e-12);
  for (double s : set.std.values()) EXPECT_NEAR(s, std::sqrt(kEps), 1e-12);
}

TEST(Ptl, SingleFrameBlockIsGlobalAdain) {
  PtlOptions opt;
  opt.patch_size = 8;
  opt.stride = 8;
  for (int trial = 0; trial < 100; ++trial) {
    ParamStore<double> store;
    const PtlModule<double> module = make_module(store, 3, 8, opt, static_cast<std::uint64_t>(trial));
    std::mt19937_64 gen(static_cast<std::uint64_t>(1000 + trial));
    const T f = random_tensor(Shape{1, 3, 8, 8}, gen, -2.0, 3.0);
    const T mask = random_mask(1, 8, 8, gen, 0.4);
    ASSERT_LT(max_abs_diff(module(f, mask), adain_reference(f, mask)), 1e-6) << "trial " << trial;
  }
}

TEST(Ptl, EqualContentTokensAverageAppearance) {
  ParamStore<double> store;
  PtlModule<double> module = make_module(store, 3, 16);
  for (auto& p : store)
    for (double& v : p.value.values()) v = 0.0;
  std::mt19937_64 gen(6);
  const T f = random_tensor(Shape{1, 3, 16, 16}, gen);
  const T mask = random_mask(1, 16, 16, gen);
  const PatchSet<double> set = extract_patches(f, complement_mask(mask), module.geometry(), module.projection());
  std::vector<double> mu(3, 0.0), sigma(3, 0.0);
  for (int k = 0; k < set.size(); ++k)
    for (int c = 0; c < 3; ++c) {
      mu[c] += set.mean.values()[k * 3 + c] / set.size();
      sigma[c] += set.std.values()[k * 3 + c] / set.size();
    }
  const T out = module(f, mask);
  auto fg = [&](int y, int x) { return mask.at(0, 0, y, x) > 0.5; };
  const Stats sf = region_stats(f, fg);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < 16; ++y)
      for (int x = 0; x < 16; ++x)
        if (fg(y, x)) {
          const double content = (f.at(0, c, y, x) - sf.mean[c]) / sf.std[c];
          EXPECT_NEAR(out.at(0, c, y, x), content * sigma[c] + mu[c], 1e-10);
        }
}

TEST(Ptl, MatchesLocationPatchLoopOracle) {
  ParamStore<double> store;
  const PtlModule<double> module = make_module(store, 4, 32);
  EXPECT_EQ(module.geometry().patch_h, 4);
  EXPECT_EQ(module.geometry().stride_h, 1);
  const T& weight = store.find("ptl.projection.weight")->value;
  const T& bias = store.find("ptl.projection.bias")->value;
  for (int seed = 0; seed < 3; ++seed) {
    std::mt19937_64 gen(static_cast<std::uint64_t>(70 + seed));
    const T f = random_tensor(Shape{1, 4, 32, 32}, gen, -1.0, 2.0);
    const T mask = random_mask(1, 32, 32, gen, 0.3);
    EXPECT_LT(max_abs_diff(module(f, mask), ptl_oracle(f, mask, module.geometry(), weight, bias)), 1e-5);
  }
}

TEST(Ptl, AppearanceStaysInConvexHullOfBlockStatistics) {
  ParamStore<double> store;
  const PtlModule<double> module = make_module(store, 3, 16);
  std::mt19937_64 gen(8);
  const T f = random_tensor(Shape{1, 3, 16, 16}, gen, -2.0, 2.0);
  const T mask = random_mask(1, 16, 16, gen);
  const PatchSet<double> set = extract_patches(f, complement_mask(mask), module.geometry(), module.projection());
  std::vector<int> fg;
  for (int i = 0; i < 256; ++i)
    if (mask.values()[i] > 0.5) fg.push_back(i);
  const T content = gather_rows(masked_instance_norm(f, mask), fg);
  T attn;
  const T a = attend(content, set.content, set.mean, 1.0, &attn);
  const T v = matmul(attn, set.std);
  for (int c = 0; c < 3; ++c) {
    double lo_m = 1e300, hi_m = -1e300, lo_s = 1e300, hi_s = -1e300;
    for (int k = 0; k < set.size(); ++k) {
      lo_m = std::min(lo_m, set.mean.values()[k * 3 + c]);
      hi_m = std::max(hi_m, set.mean.values()[k * 3 + c]);
      lo_s = std::min(lo_s, set.std.values()[k * 3 + c]);
      hi_s = std::max(hi_s, set.std.values()[k * 3 + c]);
    }
    for (std::size_t r = 0; r < fg.size(); ++r) {
      EXPECT_GE(a.values()[r * 3 + c], lo_m - 1e-12);
      EXPECT_LE(a.values()[r * 3 + c], hi_m + 1e-12);
      EXPECT_GE(v.values()[r * 3 + c], lo_s - 1e-12);
      EXPECT_LE(v.values()[r * 3 + c], hi_s + 1e-12);
      EXPECT_GT(v.values()[r * 3 + c], 0.0);
    }
  }
}

TEST(Ptl, BackgroundPassesThroughBitExact) {
  ParamStore<double> store;
  const PtlModule<double> module = make_module(store, 3, 16);
  std::mt19937_64 gen(9);
  const T f = random_tensor(Shape{2, 3, 16, 16}, gen);
  const T mask = random_mask(2, 16, 16, gen);
  const T out = module(f, mask);
  for (int n = 0; n < 2; ++n)
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 16; ++x)
          if (mask.at(n, 0, y, x) < 0.5) {
            ASSERT_EQ(out.at(n, c, y, x), f.at(n, c, y, x));
          }
}

TEST(Ptl, DegenerateMasks) {
  ParamStore<double> store;
  const PtlModule<double> module = make_module(store, 2, 8);
  std::mt19937_64 gen(10);
  const T f = random_tensor(Shape{1, 2, 8, 8}, gen);
  EXPECT_TRUE(identical(module(f, T(Shape{1, 1, 8, 8}, 0.0)), f));
  EXPECT_TRUE(identical(module(f, T(Shape{1, 1, 8, 8}, 1.0)), f));
}

TEST(Ptl, UncoveredBackgroundFallsBackToGlobalMoments) {
  PtlOptions opt;
  opt.patch_size = 3;
  opt.stride = 3;
  ParamStore<double> store;
  const PtlModule<double> module = make_module(store, 2, 8, opt);
  std::mt19937_64 gen(11);
  const T f = random_tensor(Shape{1, 2, 8, 8}, gen);
  // Windows cover rows and columns 0..5; the background sits outside them.
  T mask(Shape{1, 1, 8, 8}, 1.0);
  mask.at(0, 0, 7, 7) = 0.0;
  mask.at(0, 0, 6, 7) = 0.0;
  PtlTrace<double> trace;
  const T out = module(f, mask, &trace);
  EXPECT_TRUE(trace.origins[0].empty());
  EXPECT_LT(max_abs_diff(out, adain_reference(f, mask)), 1e-9);
}

TEST(Ptl, ContributionMapLivesOnBackground) {
  ParamStore<double> store;
  const PtlModule<double> module = make_module(store, 3, 16);
  std::mt19937_64 gen(12);
  const T f = random_tensor(Shape{1, 3, 16, 16}, gen);
  const T mask = random_mask(1, 16, 16, gen);
  PtlTrace<double> trace;
  (void)module(f, mask, &trace);
  const T& map = trace.contribution[0];
  double total = 0.0;
  for (int i = 0; i < 256; ++i) {
    if (mask.values()[i] > 0.5) {
      EXPECT_EQ(map.values()[i], 0.0);
    }
    EXPECT_GE(map.values()[i], 0.0);
    total += map.values()[i];
  }
  EXPECT_GT(total, 0.0);

  PtlOptions whole;
  whole.patch_size = 16;
  whole.stride = 16;
  ParamStore<double> store1;
  const PtlModule<double> single = make_module(store1, 3, 16, whole);
  (void)single(f, mask, &trace);
  double expected = -1.0;
  for (int i = 0; i < 256; ++i) {
    if (mask.values()[i] > 0.5) continue;
    if (expected < 0) expected = trace.contribution[0].values()[i];
    EXPECT_EQ(trace.contribution[0].values()[i], expected);
  }
  EXPECT_GT(expected, 0.0);
}

class PtlGradient : public ::testing::Test {
 protected:
  void build(int size) {
    store = ParamStore<double>();
    module = make_module(store, 3, size);
    std::mt19937_64 gen(13);
    const T f0 = random_tensor(Shape{1, 3, size, size}, gen);
    feature = store.add("input", {1, 3, size, size});
    std::copy(f0.values().begin(), f0.values().end(), feature.data());
    probe = random_tensor(f0.shape(), gen);
  }

  GradCheckResult check(const T& mask, double step) {
    GradCheckOptions options;
    options.max_coords_per_param = 200;
    options.step = step;
    return grad_check([&] { return sum(mul(module(feature, mask), probe)); }, store, options);
  }

  ParamStore<double> store;
  PtlModule<double> module;
  T feature;
  T probe;
};

TEST_F(PtlGradient, MatchesFiniteDifferences) {
  // 32x32 features: 4x4 blocks at stride 1.
  build(32);
  T mask(Shape{1, 1, 32, 32}, 0.0);
  for (int y = 6; y < 22; ++y)
    for (int x = 10; x < 27; ++x) mask.at(0, 0, y, x) = 1.0;
  const GradCheckResult r = check(mask, 1e-4);
  EXPECT_LT(r.max_rel_error, 1e-4) << r.worst_param << "[" << r.worst_index << "]";
}

TEST_F(PtlGradient, TwoPixelBlocksConvergeQuadratically) {
  // At 16x16 the blocks are 2x2. A block holding two nearly equal background
  // pixels has a std close to sqrt(eps), which makes the loss sharply curved
  // there; the central difference then carries an O(step^2) bias that can
  // exceed 1e-4 at step 1e-4. Shrinking the step tenfold must cut the
  // discrepancy roughly a hundredfold, which rules out an analytic error.
  build(16);
  std::mt19937_64 gen(14);
  const T mask = random_mask(1, 16, 16, gen, 0.35);
  const double coarse = check(mask, 1e-4).max_rel_error;
  const double fine = check(mask, 1e-5).max_rel_error;
  EXPECT_LT(fine, 1e-5);
  EXPECT_LT(fine, coarse / 30.0);
}

}  // namespace
}  // namespace harmony
