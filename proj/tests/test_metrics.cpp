#include <algorithm>
#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "dcekit/metrics.hpp"

using namespace dcekit;

namespace {

VoxelMask mask_of(Dims d, std::initializer_list<std::size_t> on) {
  VoxelMask m(d);
  for (auto i : on) m.set(i);
  return m;
}

VoxelMask random_mask(Dims d, std::mt19937& rng, double p) {
  std::bernoulli_distribution b(p);
  VoxelMask m(d);
  for (std::size_t i = 0; i < d.count(); ++i) m.set(i, b(rng));
  return m;
}

}  // namespace

TEST(Confusion, Examples) {
  const Dims d{2, 1, 1};
  const auto c = confusion(mask_of(d, {0}), mask_of(d, {0, 1}));
  EXPECT_EQ(c, (ConfusionCounts{1, 0, 1, 0}));

  std::mt19937 rng(3);
  const Dims big{7, 5, 3};
  const auto a = random_mask(big, rng, 0.4);
  const auto same = confusion(a, a);
  EXPECT_EQ(same.fp, 0u);
  EXPECT_EQ(same.fn, 0u);
  VoxelMask complement(big);
  for (std::size_t i = 0; i < big.count(); ++i) complement.set(i, !a[i]);
  const auto comp = confusion(complement, a);
  EXPECT_EQ(comp.tp, 0u);
  EXPECT_EQ(comp.tn, 0u);
  EXPECT_EQ(comp.total(), big.count());
  EXPECT_THROW(confusion(VoxelMask(Dims{2, 1, 1}), VoxelMask(Dims{1, 2, 1})), ValidationError);
}

TEST(Dice, Examples) {
  const Dims d{20, 1, 1};
  const auto a = mask_of(d, {0, 1, 2, 3, 4, 5, 6, 7, 8, 9});
  EXPECT_EQ(dice(a, a), 1.0);
  EXPECT_EQ(dice(a, mask_of(d, {10, 11})), 0.0);
  const auto b = mask_of(d, {4, 5, 6, 7, 8, 9, 10, 11, 12, 13});  // overlap 6
  EXPECT_DOUBLE_EQ(*dice(a, b), 0.6);
  EXPECT_FALSE(dice(VoxelMask(d), VoxelMask(d)).has_value());
}

TEST(Scores, UndefinedDenominatorsAndRange) {
  EXPECT_FALSE(sensitivity({0, 3, 0, 5}).has_value());
  EXPECT_FALSE(specificity({2, 0, 1, 0}).has_value());
  EXPECT_FALSE(precision({0, 0, 4, 1}).has_value());
  EXPECT_DOUBLE_EQ(*specificity({1, 1, 1, 3}), 0.75);

  std::mt19937 rng(5);
  for (int n = 0; n < 50; ++n) {
    const Dims d{6, 6, 2};
    const auto c = confusion(random_mask(d, rng, 0.3), random_mask(d, rng, 0.5));
    for (auto s : {sensitivity(c), specificity(c), precision(c), dice(c)})
      if (s) {
        EXPECT_GE(*s, 0.0);
        EXPECT_LE(*s, 1.0);
      }
  }
}

TEST(FnFrameRate, Examples) {
  const Dims d{2, 2, 5};
  auto slice_voxel = [&](std::size_t z) { return d.index(0, 0, z); };
  VoxelMask truth(d);
  for (std::size_t z = 0; z < 5; ++z) truth.set(slice_voxel(z));
  EXPECT_EQ(fn_frame_rate(truth, truth), 0.0);
  EXPECT_EQ(fn_frame_rate(VoxelMask(d), truth), 1.0);

  VoxelMask four(d), pred(d);
  for (std::size_t z : {0u, 1u, 2u, 3u}) four.set(slice_voxel(z));
  for (std::size_t z : {0u, 1u, 3u}) pred.set(d.index(1, 1, z));  // overlap not required, only presence
  EXPECT_EQ(fn_frame_rate(pred, four), 0.25);
  EXPECT_FALSE(fn_frame_rate(pred, VoxelMask(d)).has_value());
}

TEST(HistogramFeatures, GoldenAndSymmetric) {
  const std::vector<double> skewed{0, 0, 0, 0, 10};
  const auto f = histogram_features(skewed);
  EXPECT_DOUBLE_EQ(f.mean, 2.0);
  EXPECT_DOUBLE_EQ(f.std, 4.0);
  EXPECT_NEAR(*f.skewness, 1.5, 1e-15);
  EXPECT_NEAR(*f.kurtosis, 0.25, 1e-15);

  EXPECT_NEAR(*histogram_features(std::vector<double>{1, 2, 3}).skewness, 0.0, 1e-12);
  std::mt19937 rng(9);
  std::normal_distribution<double> g(3.0, 2.0);
  for (int n = 0; n < 20; ++n) {
    std::vector<double> v;
    for (int i = 0; i < 50; ++i) {
      const double x = g(rng);
      v.push_back(3.0 + x);
      v.push_back(3.0 - x);
    }
    std::shuffle(v.begin(), v.end(), rng);
    EXPECT_NEAR(*histogram_features(v).skewness, 0.0, 1e-12);
  }
}

TEST(HistogramFeatures, ConstantAndTooFew) {
  const auto f = histogram_features(std::vector<double>{0.3, 0.3, 0.3, 0.3});
  EXPECT_FALSE(f.skewness.has_value());
  EXPECT_FALSE(f.kurtosis.has_value());
  EXPECT_THROW(histogram_features(std::vector<double>{1, 2}), ValidationError);
}

TEST(HistogramFeatures, InvariantUnderReordering) {
  std::vector<double> v{0.1, 0.7, 0.2, 0.05, 0.9, 0.33, 0.41};
  const auto a = histogram_features(v);
  std::reverse(v.begin(), v.end());
  const auto b = histogram_features(v);
  EXPECT_NEAR(a.mean, b.mean, 1e-15);
  EXPECT_NEAR(*a.skewness, *b.skewness, 1e-12);
  EXPECT_NEAR(*a.kurtosis, *b.kurtosis, 1e-12);
}

TEST(HistogramFeatures, OverMaskedParameterMap) {
  const Dims d{3, 2, 1};
  ParameterMap map(d);
  const double ks[] = {0.1, 0.2, 0.3, 0.4};
  for (std::size_t i = 0; i < 4; ++i) map[i] = {TissueParams::from_ktrans_ve(ks[i], 0.5), 0.0, true};
  VoxelMask mask(d, true);  // voxels 4 and 5 are NaN and skipped
  mask.set(3, false);
  const auto f = histogram_features(map, MapField::Ktrans, mask);
  EXPECT_EQ(f.count, 3u);
  EXPECT_NEAR(f.mean, 0.2, 1e-15);
  EXPECT_EQ(masked_values(map, MapField::Kep, mask), (std::vector<double>{0.2, 0.4, 0.6}));
  EXPECT_EQ(parse_map_field("ve"), MapField::Ve);
  EXPECT_THROW(parse_map_field("vp"), ValidationError);
}

TEST(HistogramCounts, EqualWidthBins) {
  EXPECT_EQ(histogram_counts(std::vector<double>{0, 1, 2, 3, 4}, 2), (std::vector<std::size_t>{2, 3}));
  EXPECT_EQ(histogram_counts(std::vector<double>{5, 5}, 3), (std::vector<std::size_t>{2, 0, 0}));
}

TEST(RmsCurveDifference, Examples) {
  const std::vector<double> a{0, 3}, b{4, 3};
  EXPECT_DOUBLE_EQ(rms_curve_difference(a, a), 0.0);
  EXPECT_DOUBLE_EQ(rms_curve_difference(a, b), std::sqrt(8.0));
  const std::vector<double> c{1.5, 4.5};
  EXPECT_DOUBLE_EQ(rms_curve_difference(a, c), 1.5);
  EXPECT_THROW(rms_curve_difference(a, std::vector<double>{1.0}), ValidationError);
}
