#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "dcekit/vif_models.hpp"
#include "test_support.hpp"

using namespace dcekit;
using dcekit::test::rel_err;

namespace {

constexpr VifModelKind kKinds[] = {VifModelKind::BiExponential, VifModelKind::Linear, VifModelKind::Cubic};

std::vector<double> grid(double t_end, std::size_t n) {
  std::vector<double> t(n + 1);
  for (std::size_t i = 0; i <= n; ++i) t[i] = t_end * static_cast<double>(i) / static_cast<double>(n);
  return t;
}

}  // namespace

TEST(ModelKind, ParseAndPrint) {
  for (auto k : kKinds) EXPECT_EQ(parse_vif_model(to_string(k)), k);
  EXPECT_THROW(parse_vif_model("quadratic"), ValidationError);
}

TEST(EvalVif, BoundaryValuesAtZero) {
  const VifParams p{3.7, 1.9, 0.8, 0.05};
  EXPECT_EQ(eval_vif(VifModelKind::Cubic, p, 0.0), 0.0);
  EXPECT_EQ(eval_vif(VifModelKind::Linear, p, 0.0), 0.0);
  EXPECT_EQ(eval_vif(VifModelKind::BiExponential, p, 0.0), p.a + p.b);
}

TEST(EvalVif, DirectSubstitution) {
  EXPECT_DOUBLE_EQ(eval_vif(VifModelKind::Cubic, {1.0, 0.0, 1.0, 1.0}, 1.0), std::exp(-1.0));
  EXPECT_THROW(eval_vif(VifModelKind::Cubic, {}, -1.0), ValidationError);
}

TEST(TissueResponse, ZeroKtransAndZeroTime) {
  const VifParams p{1.0, 0.5, 2.0, 0.1};
  for (auto k : kKinds) {
    EXPECT_EQ(tissue_response_analytic(k, p, TissueParams::from_ktrans_ve(0.0, 0.3), 4.0), 0.0);
    EXPECT_EQ(tissue_response_analytic(k, p, TissueParams::from_ktrans_ve(0.2, 0.3), 0.0), 0.0);
  }
}

TEST(TissueResponse, CubicGoldenValue) {
  // Adaptive quadrature in 40-digit arithmetic: 0.06008516257805211627190817862388033580301
  const double v = tissue_response_analytic(VifModelKind::Cubic, {1.0, 0.5, 2.0, 0.1},
                                            TissueParams::from_ktrans_ve(0.10, 0.20), 2.0);
  EXPECT_LT(rel_err(v, 0.060085162578052116), 1e-13);
  const std::vector<double> t{2.0};
  const auto num = tissue_response_numeric(VifModelKind::Cubic, {1.0, 0.5, 2.0, 0.1},
                                           TissueParams::from_ktrans_ve(0.10, 0.20), t);
  EXPECT_LT(rel_err(num[0], v), 1e-8);
}

TEST(TissueResponse, MatchesQuadratureIncludingSingularBranches) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto log_u = [&](double lo, double hi) { return lo * std::pow(hi / lo, u(rng)); };
  const auto t = grid(12.0, 48);
  for (auto kind : kKinds)
    for (int n = 0; n < 40; ++n) {
      const VifParams p{10 * u(rng), 5 * u(rng), log_u(0.01, 10), log_u(0.01, 10)};
      TissueParams tp{log_u(1e-3, 1), 0, log_u(0.01, 10)};
      if (n % 4 == 1) tp.kep = p.beta;
      if (n % 4 == 2) tp.kep = p.alpha;
      if (n % 4 == 3) tp.kep = p.alpha * (1 + 1e-7);
      tp.ve = tp.ktrans / tp.kep;
      const auto num = tissue_response_numeric(kind, p, tp, t);
      for (std::size_t i = 0; i < t.size(); ++i) {
        const double a = tissue_response_analytic(kind, p, tp, t[i]);
        EXPECT_LE(std::abs(a - num[i]), 1e-8 * std::max(std::abs(num[i]), 1e-12))
            << to_string(kind) << " draw " << n << " t=" << t[i];
      }
    }
}

TEST(TissueResponse, ConvolutionBranchesAgreeAcrossTheSwitch) {
  // |lambda - k| t just below and above the series threshold.
  for (int m = 0; m <= 3; ++m) {
    const double t = 1.0, k = 0.5;
    const double below = detail::exp_power_convolution(m, k + 2.0 - 1e-9, k, t);
    const double above = detail::exp_power_convolution(m, k + 2.0 + 1e-9, k, t);
    EXPECT_LT(rel_err(below, above), 1e-8) << "m=" << m;
    const double below_neg = detail::exp_power_convolution(m, k, k + 2.0 - 1e-9, t);
    const double above_neg = detail::exp_power_convolution(m, k, k + 2.0 + 1e-9, t);
    EXPECT_LT(rel_err(below_neg, above_neg), 1e-8) << "m=" << m;
  }
  // lambda == k: integral of tau^m exp(-k t) = t^(m+1)/(m+1) exp(-k t).
  for (int m = 0; m <= 3; ++m)
    EXPECT_LT(rel_err(detail::exp_power_convolution(m, 0.7, 0.7, 2.0), std::pow(2.0, m + 1) / (m + 1) * std::exp(-1.4)),
              1e-14);
}

TEST(TissueResponse, NonNegativeForNonNegativePlasma) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const auto t = grid(10.0, 100);
  for (auto kind : kKinds)
    for (int n = 0; n < 50; ++n) {
      const double alpha = 0.05 + 5 * u(rng);
      const VifParams p{5 * u(rng), 5 * u(rng), alpha, alpha * u(rng)};  // beta <= alpha keeps Cp >= 0
      const auto tp = TissueParams::from_ktrans_ve(u(rng), 0.01 + u(rng));
      for (double ti : t) EXPECT_GE(tissue_response_analytic(kind, p, tp, ti), 0.0);
    }
}

TEST(TissueResponse, LinearInKtransAtFixedKep) {
  const VifParams p{2.0, 0.8, 1.5, 0.05};
  for (auto kind : kKinds) {
    const TissueParams one{0.1, 0.2, 0.5}, two{0.2, 0.4, 0.5};
    EXPECT_LT(rel_err(tissue_response_analytic(kind, p, two, 3.0), 2 * tissue_response_analytic(kind, p, one, 3.0)),
              1e-14);
  }
}

TEST(ToftsKernel, AgreesWithAnalytic) {
  const VifParams p{2.0, 0.8, 1.5, 0.05};
  const auto t = grid(6.0, 60);
  for (auto kind : kKinds) {
    const ToftsKernel kernel(kind, p, t);
    for (const auto tp : {TissueParams::from_ktrans_ve(0.1, 0.2), TissueParams{0.3, 0.2, 1.5}}) {
      std::vector<double> out(t.size());
      kernel.evaluate(tp, out);
      const auto ref = tissue_response_analytic(kind, p, tp, t);
      for (std::size_t i = 0; i < t.size(); ++i) EXPECT_LE(std::abs(out[i] - ref[i]), 1e-15 * std::abs(ref[i]) + 1e-300);
    }
  }
}

TEST(TissueResponseNumeric, ZeroPlasmaAndStepLimit) {
  const auto t = grid(5.0, 10);
  const auto zero = tissue_response_numeric([](double) { return 0.0; }, {0.3, 0.5, 0.6}, t);
  for (double v : zero) EXPECT_EQ(v, 0.0);
  // Unit step with kep -> 0 gives Ktrans * t.
  const auto step = tissue_response_numeric([](double) { return 1.0; }, {0.3, 1.0, 1e-12}, t);
  for (std::size_t i = 0; i < t.size(); ++i) EXPECT_NEAR(step[i], 0.3 * t[i], 1e-10);
}

TEST(TissueResponseNumeric, SampledTrapezoidConverges) {
  const VifParams p{2.0, 0.8, 1.5, 0.05};
  const auto tp = TissueParams::from_ktrans_ve(0.1, 0.2);
  const auto t = grid(6.0, 6000);
  std::vector<double> cp(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) cp[i] = eval_vif(VifModelKind::Cubic, p, t[i]);
  const auto sampled = tissue_response_numeric(t, cp, tp);
  EXPECT_LT(rel_err(sampled.back(), tissue_response_analytic(VifModelKind::Cubic, p, tp, 6.0)), 1e-6);
  EXPECT_THROW(tissue_response_numeric(std::vector<double>{0.0, 1.0}, std::vector<double>{0.0}, tp), ValidationError);
}
