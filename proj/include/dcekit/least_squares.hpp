#pragma once

// Bound-constrained Levenberg-Marquardt with a central-difference Jacobian.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

#include <Eigen/Dense>

#include "dcekit/error.hpp"

namespace dcekit {

/// Box constraints on the parameter vector.
struct Bounds {
  std::vector<double> lower;
  std::vector<double> upper;

  [[nodiscard]] std::size_t size() const noexcept { return lower.size(); }
};

struct FitConfig {
  int max_iterations = 200;
  double gradient_tol = 1e-10;  // on the projected gradient J^T r (inf-norm)
  double step_tol = 1e-12;      // relative step length
  double residual_tol = 1e-12;  // on the RMS residual
  int multistart_count = 8;     // quasi-random starts for VIF fits
  unsigned rng_seed = 42;

  // Tissue bounds.
  double ktrans_min = 0.0, ktrans_max = 5.0;  // min^-1
  double ve_min = 1e-4, ve_max = 1.0;
  // VIF bounds.
  double rate_min = 1e-4, rate_max = 50.0;  // alpha, beta in min^-1
  double amp_min = 0.0, amp_max = 100.0;    // a, b

  void validate() const {
    detail::require(max_iterations > 0, "max_iterations must be > 0");
    detail::require(gradient_tol > 0 && step_tol > 0 && residual_tol > 0, "tolerances must be > 0");
    detail::require(multistart_count >= 0, "multistart_count must be >= 0");
    detail::require(ktrans_min < ktrans_max && ve_min < ve_max && rate_min < rate_max && amp_min < amp_max,
                    "bounds must be ordered");
    detail::require(ve_min > 0.0, "ve lower bound must be > 0");
  }
};

template <class Params>
struct FitResult {
  Params params{};
  double mse = std::numeric_limits<double>::infinity();
  int iterations = 0;
  bool converged = false;
};

template <int N>
using ParamVector = Eigen::Matrix<double, N, 1>;

/// Relative central-difference step used for Jacobian columns.
inline double fd_step(double p) { return 1e-6 * std::max(1.0, std::abs(p)); }

/// Central-difference Jacobian of `residual` at p. `residual(p, r)` fills r.
template <int N, class Residual>
void fd_jacobian(Residual& residual, const ParamVector<N>& p, Eigen::Index m,
                 Eigen::Matrix<double, Eigen::Dynamic, N>& jac) {
  jac.resize(m, p.size());
  Eigen::VectorXd rp(m), rm(m);
  ParamVector<N> q = p;
  for (Eigen::Index j = 0; j < p.size(); ++j) {
    const double h = fd_step(p[j]);
    q[j] = p[j] + h;
    residual(q, rp);
    q[j] = p[j] - h;
    residual(q, rm);
    q[j] = p[j];
    jac.col(j) = (rp - rm) / (2.0 * h);
  }
}

/// Minimises 0.5 |r(p)|^2 subject to bounds. `residual(p, r)` must fill the
/// m-vector r. Reports non-converged if the residual turns non-finite.
template <int N, class Residual>
FitResult<ParamVector<N>> least_squares(Residual&& residual, Eigen::Index m, ParamVector<N> p, const Bounds& bounds,
                                        const FitConfig& cfg) {
  const auto n = p.size();
  detail::require(bounds.size() == static_cast<std::size_t>(n), "bounds size does not match parameter count");
  for (Eigen::Index j = 0; j < n; ++j) {
    detail::require(bounds.lower[j] <= bounds.upper[j], "bounds must be ordered");
    detail::require(p[j] >= bounds.lower[j] && p[j] <= bounds.upper[j], "initial point outside bounds");
  }

  FitResult<ParamVector<N>> res;
  res.params = p;

  Eigen::VectorXd r(m), r_new(m);
  residual(p, r);
  detail::require(r.allFinite(), "residual is not finite at the initial point");
  double cost = 0.5 * r.squaredNorm();
  const double md = static_cast<double>(std::max<Eigen::Index>(m, 1));
  auto mse_of = [md](double c) { return 2.0 * c / md; };
  res.mse = mse_of(cost);

  auto clamp = [&](ParamVector<N>& q) {
    for (Eigen::Index j = 0; j < n; ++j) q[j] = std::clamp(q[j], bounds.lower[j], bounds.upper[j]);
  };

  Eigen::Matrix<double, Eigen::Dynamic, N> jac;
  double mu = -1.0;
  double nu = 2.0;

  for (int iter = 0; iter < cfg.max_iterations; ++iter) {
    res.iterations = iter;
    if (std::sqrt(res.mse) <= cfg.residual_tol) {
      res.converged = true;
      return res;
    }

    fd_jacobian<N>(residual, p, m, jac);
    if (!jac.allFinite()) return res;
    const Eigen::Matrix<double, N, N> a = jac.transpose() * jac;
    const ParamVector<N> g = jac.transpose() * r;

    // Gradient components pushing against an active bound do not count.
    ParamVector<N> gp = g;
    for (Eigen::Index j = 0; j < n; ++j) {
      if ((p[j] <= bounds.lower[j] && g[j] > 0.0) || (p[j] >= bounds.upper[j] && g[j] < 0.0)) gp[j] = 0.0;
    }
    if (gp.template lpNorm<Eigen::Infinity>() <= cfg.gradient_tol) {
      res.converged = true;
      return res;
    }
    if (mu < 0.0) mu = 1e-3 * std::max(a.diagonal().maxCoeff(), 1e-300);

    bool accepted = false;
    while (!accepted) {
      Eigen::Matrix<double, N, N> damped = a;
      for (Eigen::Index j = 0; j < n; ++j) damped(j, j) += mu * std::max(a(j, j), 1e-12);
      const ParamVector<N> delta = damped.ldlt().solve(-g);
      ParamVector<N> p_new = p + delta;
      clamp(p_new);
      const ParamVector<N> step = p_new - p;
      if (!step.allFinite()) return res;
      if (step.norm() <= cfg.step_tol * (p.norm() + cfg.step_tol)) {
        res.converged = true;
        return res;
      }

      residual(p_new, r_new);
      if (!r_new.allFinite()) return res;
      const double cost_new = 0.5 * r_new.squaredNorm();
      const double predicted = -g.dot(step) - 0.5 * step.dot(a * step);
      const double rho = predicted > 0.0 ? (cost - cost_new) / predicted : -1.0;

      if (cost_new < cost && rho > 0.0) {
        p = p_new;
        r.swap(r_new);
        cost = cost_new;
        res.params = p;
        res.mse = mse_of(cost);
        mu *= std::max(1.0 / 3.0, 1.0 - std::pow(2.0 * rho - 1.0, 3));
        nu = 2.0;
        accepted = true;
      } else {
        mu *= nu;
        nu *= 2.0;
        if (mu > 1e300 || !std::isfinite(mu)) {
          // No descent possible from here: a stationary point at working precision.
          res.converged = true;
          return res;
        }
      }
    }
  }
  res.iterations = cfg.max_iterations;
  return res;
}

/// Dynamic-size convenience overload over std::vector.
template <class Residual>
FitResult<std::vector<double>> least_squares(Residual&& residual, std::size_t m, const std::vector<double>& init,
                                             const Bounds& bounds, const FitConfig& cfg) {
  using Vec = ParamVector<Eigen::Dynamic>;
  Vec p = Eigen::Map<const Eigen::VectorXd>(init.data(), static_cast<Eigen::Index>(init.size()));
  auto wrapped = [&](const Vec& q, Eigen::VectorXd& r) {
    std::vector<double> qv(q.data(), q.data() + q.size());
    std::vector<double> rv(static_cast<std::size_t>(r.size()));
    residual(qv, rv);
    r = Eigen::Map<const Eigen::VectorXd>(rv.data(), r.size());
  };
  auto fit = least_squares<Eigen::Dynamic>(wrapped, static_cast<Eigen::Index>(m), p, bounds, cfg);
  FitResult<std::vector<double>> out;
  out.params.assign(fit.params.data(), fit.params.data() + fit.params.size());
  out.mse = fit.mse;
  out.iterations = fit.iterations;
  out.converged = fit.converged;
  return out;
}

}  // namespace dcekit
