#include <cmath>

#include <gtest/gtest.h>

#include "dcekit/fitting.hpp"
#include "test_support.hpp"

using namespace dcekit;
using dcekit::test::rel_err;

namespace {

std::vector<double> minutes(std::size_t n, double dt_min) {
  std::vector<double> t(n);
  for (std::size_t i = 0; i < n; ++i) t[i] = dt_min * static_cast<double>(i);
  return t;
}

std::vector<double> vif_curve(VifModelKind kind, const VifParams& p, const std::vector<double>& t) {
  std::vector<double> y(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) y[i] = eval_vif(kind, p, t[i]);
  return y;
}

const VifParams kVif{2.0, 0.8, 1.5, 0.05};

}  // namespace

TEST(FitVif, CubicRoundTrip) {
  const auto t = minutes(120, 0.05);
  const auto y = vif_curve(VifModelKind::Cubic, kVif, t);
  const auto fit = fit_vif(y, t, VifModelKind::Cubic, FitConfig{});
  EXPECT_LT(fit.mse, 1e-12);
  double max_err = 0.0;
  for (std::size_t i = 0; i < t.size(); ++i)
    max_err = std::max(max_err, std::abs(eval_vif(VifModelKind::Cubic, fit.params, t[i]) - y[i]));
  EXPECT_LT(max_err, 1e-6);
}

TEST(FitVif, EachKindRecoversItsOwnCurve) {
  const auto t = minutes(90, 0.1);
  for (auto kind : {VifModelKind::BiExponential, VifModelKind::Linear, VifModelKind::Cubic}) {
    const VifParams p = kind == VifModelKind::BiExponential ? VifParams{3.0, 1.0, 2.0, 0.1} : kVif;
    const auto fit = fit_vif(vif_curve(kind, p, t), t, kind, FitConfig{});
    EXPECT_LT(fit.mse, 1e-12) << to_string(kind);
  }
}

TEST(FitVif, ZeroCurve) {
  const auto t = minutes(40, 0.1);
  const auto fit = fit_vif(std::vector<double>(t.size(), 0.0), t, VifModelKind::Cubic, FitConfig{});
  EXPECT_EQ(fit.params.a, 0.0);
  EXPECT_EQ(fit.params.b, 0.0);
  EXPECT_EQ(fit.mse, 0.0);
}

TEST(FitVif, CubicBeatsLinearOnCubicData) {
  const auto t = minutes(120, 0.05);
  const auto y = vif_curve(VifModelKind::Cubic, kVif, t);
  const auto cubic = fit_vif(y, t, VifModelKind::Cubic, FitConfig{});
  const auto linear = fit_vif(y, t, VifModelKind::Linear, FitConfig{});
  EXPECT_LT(cubic.mse, linear.mse);
}

TEST(FitVif, BestMseNotWorseThanHeuristicStart) {
  const auto t = minutes(120, 0.05);
  const auto y = vif_curve(VifModelKind::Cubic, kVif, t);
  const FitConfig cfg;
  for (auto kind : {VifModelKind::BiExponential, VifModelKind::Linear, VifModelKind::Cubic}) {
    const auto heuristic = fit_vif_from(fit_detail::heuristic_vif_start(kind, y, t, cfg), y, t, kind, cfg);
    EXPECT_LE(fit_vif(y, t, kind, cfg).mse, heuristic.mse) << to_string(kind);
  }
}

TEST(FitVif, DeterministicAndSeedDependentStarts) {
  const auto t = minutes(60, 0.1);
  const auto y = vif_curve(VifModelKind::Cubic, kVif, t);
  FitConfig cfg;
  const auto a = fit_vif(y, t, VifModelKind::Linear, cfg);
  const auto b = fit_vif(y, t, VifModelKind::Linear, cfg);
  EXPECT_EQ(a.params, b.params);
  EXPECT_EQ(a.mse, b.mse);
  cfg.rng_seed = 7;
  EXPECT_NE(vif_starts(VifModelKind::Linear, y, t, cfg)[1], vif_starts(VifModelKind::Linear, y, t, FitConfig{})[1]);
}

TEST(FitVif, Preconditions) {
  const auto t = minutes(7, 0.1);
  EXPECT_THROW(fit_vif(std::vector<double>(7, 1.0), t, VifModelKind::Cubic, FitConfig{}), ValidationError);
  auto t8 = minutes(8, 0.1);
  t8[3] = t8[2];
  EXPECT_THROW(fit_vif(std::vector<double>(8, 1.0), t8, VifModelKind::Cubic, FitConfig{}), ValidationError);
}

TEST(FitVif, ParametersWithinBounds) {
  const auto t = minutes(60, 0.1);
  auto y = vif_curve(VifModelKind::Cubic, {300.0, 0.8, 1.5, 0.05}, t);  // a above amp_max
  FitConfig cfg;
  const auto fit = fit_vif(y, t, VifModelKind::Cubic, cfg);
  EXPECT_LE(fit.params.a, cfg.amp_max);
  EXPECT_GE(fit.params.b, cfg.amp_min);
  EXPECT_GE(fit.params.alpha, cfg.rate_min);
  EXPECT_LE(fit.params.beta, cfg.rate_max);
}

TEST(FitTissueVoxel, RecoversKnownParameters) {
  const auto t = minutes(120, 0.05);
  const auto ct = tissue_response_analytic(VifModelKind::Cubic, kVif, TissueParams::from_ktrans_ve(0.10, 0.20), t);
  const auto fit = fit_tissue_voxel(ct, t, VifModelKind::Cubic, kVif, FitConfig{});
  EXPECT_TRUE(fit.converged);
  EXPECT_LT(rel_err(fit.params.ktrans, 0.10), 1e-3);
  EXPECT_LT(rel_err(fit.params.ve, 0.20), 1e-3);
  EXPECT_LT(rel_err(fit.params.kep, 0.5), 1e-3);
}

TEST(FitTissueVoxel, ZeroCurve) {
  const auto t = minutes(30, 0.1);
  const auto fit = fit_tissue_voxel(std::vector<double>(t.size(), 0.0), t, VifModelKind::Cubic, kVif, FitConfig{});
  EXPECT_TRUE(fit.converged);
  EXPECT_EQ(fit.params.ktrans, 0.0);
}

TEST(FitTissueVoxel, ScalingCurveScalesKtransOnly) {
  const auto t = minutes(120, 0.05);
  auto ct = tissue_response_analytic(VifModelKind::Cubic, kVif, TissueParams::from_ktrans_ve(0.05, 0.3), t);
  const auto one = fit_tissue_voxel(ct, t, VifModelKind::Cubic, kVif, FitConfig{});
  for (double& v : ct) v *= 2.0;
  const auto two = fit_tissue_voxel(ct, t, VifModelKind::Cubic, kVif, FitConfig{});
  EXPECT_LT(rel_err(two.params.ktrans, 2.0 * one.params.ktrans), 1e-6);
  EXPECT_LT(rel_err(two.params.ve, 2.0 * one.params.ve), 1e-6);  // kep unchanged
  EXPECT_LT(rel_err(two.params.kep, one.params.kep), 1e-6);
}

TEST(FitTissueVoxel, IdentifiableOverReferenceGrid) {
  const auto t = minutes(120, 0.05);
  for (double k : {0.01, 0.02, 0.05, 0.10, 0.20, 0.35})
    for (double ve : {0.01, 0.05, 0.10, 0.20, 0.50}) {
      const auto ct = tissue_response_analytic(VifModelKind::Cubic, kVif, TissueParams::from_ktrans_ve(k, ve), t);
      const auto fit = fit_tissue_voxel(ct, t, VifModelKind::Cubic, kVif, FitConfig{});
      EXPECT_LT(rel_err(fit.params.ktrans, k), 1e-3) << k << "," << ve;
      EXPECT_LT(rel_err(fit.params.ve, ve), 1e-3) << k << "," << ve;
    }
}

namespace {

ConcentrationCurves synthetic_curves(Dims d, const std::vector<double>& t) {
  ConcentrationCurves c{d, t, std::vector<double>(d.count() * t.size()), {}};
  c.flags.assign(c.values.size(), ConversionFlag::Ok);
  for (std::size_t i = 0; i < d.count(); ++i) {
    const double k = 0.01 + 0.3 * static_cast<double>(i % 7) / 6.0;
    const double ve = 0.05 + 0.45 * static_cast<double>(i % 5) / 4.0;
    const auto ct = tissue_response_analytic(VifModelKind::Cubic, kVif, TissueParams::from_ktrans_ve(k, ve), t);
    std::copy(ct.begin(), ct.end(), c.values.begin() + static_cast<std::ptrdiff_t>(i * t.size()));
  }
  return c;
}

}  // namespace

TEST(FitTissueMap, EmptyMaskGivesAllNaN) {
  const Dims d{4, 3, 1};
  const auto t = minutes(20, 0.2);
  const auto map = fit_tissue_map(synthetic_curves(d, t), VoxelMask(d), VifModelKind::Cubic, kVif, FitConfig{});
  for (std::size_t i = 0; i < map.size(); ++i) EXPECT_FALSE(map.fitted(i));
}

TEST(FitTissueMap, ThreadCountDoesNotChangeResults) {
  const Dims d{10, 6, 1};
  const auto t = minutes(40, 0.15);
  const auto conc = synthetic_curves(d, t);
  VoxelMask mask(d, true);
  mask.set(3, false);
  const auto one = fit_tissue_map(conc, mask, VifModelKind::Cubic, kVif, FitConfig{}, 1);
  const auto four = fit_tissue_map(conc, mask, VifModelKind::Cubic, kVif, FitConfig{}, 4);
  EXPECT_TRUE(one.identical(four));
  EXPECT_FALSE(one.fitted(3));
  for (std::size_t i = 0; i < one.size(); ++i) {
    if (i != 3) {
      EXPECT_TRUE(one[i].converged);
    }
  }
}

TEST(FitTissueMap, NaNSamplesAreDroppedAndShortCurvesSkipped) {
  const Dims d{2, 1, 1};
  const auto t = minutes(12, 0.5);
  auto conc = synthetic_curves(d, t);
  conc.values[2] = kNaN;  // voxel 0 keeps 11 samples
  for (std::size_t k = 0; k < 6; ++k) conc.values[t.size() + k] = kNaN;  // voxel 1 keeps 6
  const auto map = fit_tissue_map(conc, VoxelMask(d, true), VifModelKind::Cubic, kVif, FitConfig{});
  EXPECT_TRUE(map.fitted(0));
  EXPECT_FALSE(map.fitted(1));
}
