#include <cmath>
#include <limits>
#include <random>

#include <gtest/gtest.h>

#include "dcekit/fitting.hpp"
#include "dcekit/least_squares.hpp"

using namespace dcekit;

TEST(LeastSquares, LinearProblem) {
  auto residual = [](const ParamVector<1>& p, Eigen::VectorXd& r) { r[0] = p[0] - 3.0; };
  const auto fit = least_squares<1>(residual, 1, ParamVector<1>(0.0), Bounds{{-10}, {10}}, FitConfig{});
  EXPECT_TRUE(fit.converged);
  EXPECT_NEAR(fit.params[0], 3.0, 1e-9);
  EXPECT_LT(fit.mse, 1e-18);
}

TEST(LeastSquares, Rosenbrock) {
  auto residual = [](const ParamVector<2>& p, Eigen::VectorXd& r) {
    r[0] = 1.0 - p[0];
    r[1] = 10.0 * (p[1] - p[0] * p[0]);
  };
  const auto fit = least_squares<2>(residual, 2, ParamVector<2>(-1.2, 1.0), Bounds{{-5, -5}, {5, 5}}, FitConfig{});
  EXPECT_TRUE(fit.converged);
  EXPECT_NEAR(fit.params[0], 1.0, 1e-6);
  EXPECT_NEAR(fit.params[1], 1.0, 1e-6);
}

TEST(LeastSquares, VectorOverload) {
  auto residual = [](const std::vector<double>& p, std::vector<double>& r) {
    r[0] = p[0] - 1.5;
    r[1] = p[1] + 0.5;
    r[2] = p[0] + p[1] - 1.0;
  };
  const auto fit = least_squares(residual, 3, {0.0, 0.0}, Bounds{{-2, -2}, {2, 2}}, FitConfig{});
  EXPECT_NEAR(fit.params[0], 1.5, 1e-9);
  EXPECT_NEAR(fit.params[1], -0.5, 1e-9);
}

TEST(LeastSquares, InitOutsideBoundsIsAnError) {
  auto residual = [](const ParamVector<1>& p, Eigen::VectorXd& r) { r[0] = p[0]; };
  EXPECT_THROW(least_squares<1>(residual, 1, ParamVector<1>(2.0), Bounds{{0}, {1}}, FitConfig{}), ValidationError);
}

TEST(LeastSquares, NonFiniteInitialResidualIsAnError) {
  auto residual = [](const ParamVector<1>&, Eigen::VectorXd& r) { r[0] = std::numeric_limits<double>::quiet_NaN(); };
  EXPECT_THROW(least_squares<1>(residual, 1, ParamVector<1>(0.5), Bounds{{0}, {1}}, FitConfig{}), ValidationError);
}

TEST(LeastSquares, NonFiniteDuringIterationAbortsAsNonConverged) {
  // Finite only at the start point; every trial step lands in the NaN region.
  auto residual = [](const ParamVector<1>& p, Eigen::VectorXd& r) {
    r[0] = p[0] == 2.0 ? 1.0 : std::numeric_limits<double>::quiet_NaN();
  };
  const auto fit = least_squares<1>(residual, 1, ParamVector<1>(2.0), Bounds{{0}, {5}}, FitConfig{});
  EXPECT_FALSE(fit.converged);
  EXPECT_EQ(fit.params[0], 2.0);
}

TEST(LeastSquares, RespectsBounds) {
  auto residual = [](const ParamVector<2>& p, Eigen::VectorXd& r) {
    r[0] = p[0] - 3.0;
    r[1] = p[1] + 3.0;
  };
  const auto fit = least_squares<2>(residual, 2, ParamVector<2>(0.5, 0.5), Bounds{{0, 0}, {1, 1}}, FitConfig{});
  EXPECT_TRUE(fit.converged);
  EXPECT_EQ(fit.params[0], 1.0);
  EXPECT_EQ(fit.params[1], 0.0);
}

TEST(LeastSquares, Deterministic) {
  auto residual = [](const ParamVector<2>& p, Eigen::VectorXd& r) {
    for (int i = 0; i < 10; ++i) r[i] = p[0] * std::exp(-p[1] * i) - 2.0 * std::exp(-0.3 * i);
  };
  const auto a = least_squares<2>(residual, 10, ParamVector<2>(1, 1), Bounds{{0, 0}, {10, 10}}, FitConfig{});
  const auto b = least_squares<2>(residual, 10, ParamVector<2>(1, 1), Bounds{{0, 0}, {10, 10}}, FitConfig{});
  EXPECT_EQ(a.params, b.params);
  EXPECT_EQ(a.mse, b.mse);
}

TEST(FdJacobian, MatchesAnalyticDerivative) {
  auto residual = [](const ParamVector<2>& p, Eigen::VectorXd& r) {
    for (int i = 0; i < 5; ++i) r[i] = p[0] * std::exp(-p[1] * i);
  };
  const ParamVector<2> p(1.7, 0.4);
  Eigen::Matrix<double, Eigen::Dynamic, 2> jac;
  fd_jacobian<2>(residual, p, 5, jac);
  for (int i = 0; i < 5; ++i) {
    EXPECT_NEAR(jac(i, 0), std::exp(-p[1] * i), 1e-9);
    EXPECT_NEAR(jac(i, 1), -i * p[0] * std::exp(-p[1] * i), 1e-8);
  }
}

TEST(FitConfig, Validation) {
  FitConfig c;
  EXPECT_NO_THROW(c.validate());
  c.ve_min = 2.0;
  EXPECT_THROW(c.validate(), ValidationError);
  c = {};
  c.step_tol = 0.0;
  EXPECT_THROW(c.validate(), ValidationError);
}
