#pragma once

// Vascular input function models and the Tofts tissue response
//
//   Ct(t) = Ktrans * (Cp * exp(-kep t))(t)
//
// evaluated in closed form for the three plasma models, plus a quadrature
// route that serves as an independent oracle. All times are in minutes.

#include <array>
#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "dcekit/error.hpp"
#include "dcekit/volume.hpp"

namespace dcekit {

enum class VifModelKind { BiExponential, Linear, Cubic };

inline std::string_view to_string(VifModelKind k) {
  switch (k) {
    case VifModelKind::BiExponential: return "biexp";
    case VifModelKind::Linear: return "linear";
    case VifModelKind::Cubic: return "cubic";
  }
  return "?";
}

inline VifModelKind parse_vif_model(std::string_view s) {
  if (s == "biexp" || s == "biexponential") return VifModelKind::BiExponential;
  if (s == "linear") return VifModelKind::Linear;
  if (s == "cubic") return VifModelKind::Cubic;
  throw ValidationError("unknown VIF model '" + std::string(s) + "' (expected biexp, linear or cubic)");
}

/// Coefficients shared by all three plasma models. Units of `a` depend on the
/// model: concentration (biexp), concentration/min (linear), concentration/min^3 (cubic).
struct VifParams {
  double a = 0.0;
  double b = 0.0;
  double alpha = 1.0;  // min^-1
  double beta = 1.0;   // min^-1

  friend bool operator==(const VifParams&, const VifParams&) = default;
};

inline double eval_vif(VifModelKind kind, const VifParams& p, double t) {
  detail::require(t >= 0.0, "eval_vif: t must be >= 0");
  const double ea = std::exp(-p.alpha * t);
  const double eb = std::exp(-p.beta * t);
  switch (kind) {
    case VifModelKind::BiExponential: return p.a * ea + p.b * eb;
    case VifModelKind::Linear: return p.a * t * ea + p.b * (eb - ea);
    case VifModelKind::Cubic: return p.a * t * t * t * ea + p.b * (eb - ea);
  }
  return 0.0;
}

namespace detail {

inline constexpr std::array<double, 4> kFactorial{1.0, 1.0, 2.0, 6.0};

/// Below this |(lambda - k) t| the power series is used; it also absorbs the
/// removable singularity at lambda == k.
inline constexpr double kSeriesBranch = 2.0;

/// I_m(lambda, k, t) = integral_0^t tau^m exp(-lambda tau) exp(-k (t - tau)) dtau, m in {0, 1, 2, 3},
/// given e_lt = exp(-lambda t) and e_kt = exp(-k t).
inline double exp_power_convolution(int m, double lambda, double k, double t, double e_lt, double e_kt) {
  if (t <= 0.0) return 0.0;
  const double d = lambda - k;
  const double x = d * t;
  const double fm = kFactorial[static_cast<std::size_t>(m)];
  double tp = t;  // t^(m+1)
  for (int j = 0; j < m; ++j) tp *= t;

  if (std::abs(x) <= kSeriesBranch) {
    // exp(-k t) t^(m+1) sum_n (-x)^n / (n! (n + m + 1))
    double term = 1.0;
    double sum = 1.0 / (m + 1);
    for (int n = 1; n < 60; ++n) {
      term *= -x / n;
      const double add = term / (n + m + 1);
      sum += add;
      if (std::abs(add) <= 1e-17 * std::abs(sum)) break;
    }
    return e_kt * tp * sum;
  }

  if (x > 0.0) {
    // lambda > k: m!/d^(m+1) (exp(-k t) - exp(-lambda t) sum_{j<=m} x^j/j!)
    double poly = 0.0, xp = 1.0, dp = d;
    for (int j = 0; j <= m; ++j) {
      poly += xp / kFactorial[static_cast<std::size_t>(j)];
      xp *= x;
      if (j < m) dp *= d;
    }
    return fm / dp * (e_kt - e_lt * poly);
  }

  // k > lambda, s = k - lambda:
  // exp(-lambda t) sum_j (-1)^j m!/(m-j)! t^(m-j) / s^(j+1) - (-1)^m m! exp(-k t) / s^(m+1)
  const double s = -d;
  double acc = 0.0;
  double sp = s;                // s^(j+1)
  double tpow = tp / t;         // t^(m-j)
  for (int j = 0; j <= m; ++j) {
    const double sign = (j % 2 == 0) ? 1.0 : -1.0;
    acc += sign * fm / kFactorial[static_cast<std::size_t>(m - j)] * tpow / sp;
    if (j < m) {
      sp *= s;
      tpow /= t;
    }
  }
  const double msign = (m % 2 == 0) ? 1.0 : -1.0;
  return e_lt * acc - msign * fm * e_kt / sp;
}

inline double exp_power_convolution(int m, double lambda, double k, double t) {
  return exp_power_convolution(m, lambda, k, t, std::exp(-lambda * t), std::exp(-k * t));
}

inline double plasma_convolution(VifModelKind kind, const VifParams& p, double kep, double t) {
  const int power = kind == VifModelKind::Cubic ? 3 : 1;
  switch (kind) {
    case VifModelKind::BiExponential:
      return p.a * exp_power_convolution(0, p.alpha, kep, t) + p.b * exp_power_convolution(0, p.beta, kep, t);
    case VifModelKind::Linear:
    case VifModelKind::Cubic:
      return p.a * exp_power_convolution(power, p.alpha, kep, t) +
             p.b * (exp_power_convolution(0, p.beta, kep, t) - exp_power_convolution(0, p.alpha, kep, t));
  }
  return 0.0;
}

}  // namespace detail

/// Closed-form Tofts response. For the cubic model this is
///   Ct = Ktrans [A D^-4 exp(-kep t) (6 - (x^3 + 3x^2 + 6x + 6) exp(-x))
///               + B ((e^-bt - e^-kt)/(k - b) - (e^-at - e^-kt)/(k - a))],
/// with D = alpha - kep and x = D t.
inline double tissue_response_analytic(VifModelKind kind, const VifParams& vif, const TissueParams& tissue,
                                       double t) {
  detail::require(t >= 0.0, "tissue response: t must be >= 0");
  if (tissue.ktrans == 0.0 || t == 0.0) return 0.0;
  return tissue.ktrans * detail::plasma_convolution(kind, vif, tissue.kep, t);
}

inline void tissue_response_analytic(VifModelKind kind, const VifParams& vif, const TissueParams& tissue,
                                     std::span<const double> t, std::span<double> out) {
  for (std::size_t i = 0; i < t.size(); ++i) out[i] = tissue_response_analytic(kind, vif, tissue, t[i]);
}

inline std::vector<double> tissue_response_analytic(VifModelKind kind, const VifParams& vif,
                                                    const TissueParams& tissue, std::span<const double> t) {
  std::vector<double> out(t.size());
  tissue_response_analytic(kind, vif, tissue, t, out);
  return out;
}

/// Tofts response on a fixed time grid for a fixed VIF. The VIF exponentials
/// are computed once, so each evaluation costs one exp per sample. Used by the
/// per-voxel fits; agrees with tissue_response_analytic to rounding.
class ToftsKernel {
 public:
  ToftsKernel(VifModelKind kind, const VifParams& vif, std::span<const double> t)
      : kind_(kind), vif_(vif), t_(t.begin(), t.end()), e_alpha_(t.size()), e_beta_(t.size()) {
    for (std::size_t i = 0; i < t_.size(); ++i) {
      detail::require(t_[i] >= 0.0, "tissue response: t must be >= 0");
      e_alpha_[i] = std::exp(-vif.alpha * t_[i]);
      e_beta_[i] = std::exp(-vif.beta * t_[i]);
    }
  }

  [[nodiscard]] std::size_t size() const noexcept { return t_.size(); }

  template <class Out>
  void evaluate(const TissueParams& tissue, Out&& out) const {
    const double k = tissue.kep;
    const int power = kind_ == VifModelKind::Cubic ? 3 : 1;
    for (std::size_t i = 0; i < t_.size(); ++i) {
      const double t = t_[i];
      if (tissue.ktrans == 0.0 || t == 0.0) {
        out[i] = 0.0;
        continue;
      }
      const double e_k = std::exp(-k * t);
      double c = 0.0;
      if (kind_ == VifModelKind::BiExponential) {
        c = vif_.a * detail::exp_power_convolution(0, vif_.alpha, k, t, e_alpha_[i], e_k) +
            vif_.b * detail::exp_power_convolution(0, vif_.beta, k, t, e_beta_[i], e_k);
      } else {
        c = vif_.a * detail::exp_power_convolution(power, vif_.alpha, k, t, e_alpha_[i], e_k) +
            vif_.b * (detail::exp_power_convolution(0, vif_.beta, k, t, e_beta_[i], e_k) -
                      detail::exp_power_convolution(0, vif_.alpha, k, t, e_alpha_[i], e_k));
      }
      out[i] = tissue.ktrans * c;
    }
  }

 private:
  VifModelKind kind_;
  VifParams vif_;
  std::vector<double> t_;
  std::vector<double> e_alpha_;
  std::vector<double> e_beta_;
};

namespace detail {

inline void require_grid(std::span<const double> t) {
  for (std::size_t i = 0; i < t.size(); ++i) {
    require(t[i] >= 0.0, "time grid must be non-negative");
    if (i) require(t[i] > t[i - 1], "time grid must be strictly increasing");
  }
}

}  // namespace detail

/// Tofts response by adaptive Gauss-Kronrod quadrature of a callable plasma curve.
inline std::vector<double> tissue_response_numeric(const std::function<double(double)>& cp,
                                                   const TissueParams& tissue, std::span<const double> t_grid,
                                                   double rel_tol = 1e-11) {
  detail::require_grid(t_grid);
  using Quadrature = boost::math::quadrature::gauss_kronrod<double, 31>;
  std::vector<double> out(t_grid.size(), 0.0);
  for (std::size_t i = 0; i < t_grid.size(); ++i) {
    const double t = t_grid[i];
    if (t == 0.0 || tissue.ktrans == 0.0) continue;
    auto integrand = [&](double tau) { return cp(tau) * std::exp(-tissue.kep * (t - tau)); };
    out[i] = tissue.ktrans * Quadrature::integrate(integrand, 0.0, t, 12, rel_tol);
  }
  return out;
}

inline std::vector<double> tissue_response_numeric(VifModelKind kind, const VifParams& vif,
                                                   const TissueParams& tissue, std::span<const double> t_grid,
                                                   double rel_tol = 1e-11) {
  return tissue_response_numeric([&](double tau) { return eval_vif(kind, vif, tau); }, tissue, t_grid, rel_tol);
}

/// Tofts response of a sampled plasma curve by trapezoidal convolution,
/// evaluated at the sample times.
inline std::vector<double> tissue_response_numeric(std::span<const double> times, std::span<const double> cp,
                                                   const TissueParams& tissue) {
  detail::require(times.size() == cp.size(), "sample count does not match time count");
  detail::require_grid(times);
  std::vector<double> out(times.size(), 0.0);
  for (std::size_t i = 1; i < times.size(); ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < i; ++j) {
      const double f0 = cp[j] * std::exp(-tissue.kep * (times[i] - times[j]));
      const double f1 = cp[j + 1] * std::exp(-tissue.kep * (times[i] - times[j + 1]));
      acc += 0.5 * (times[j + 1] - times[j]) * (f0 + f1);
    }
    out[i] = tissue.ktrans * acc;
  }
  return out;
}

}  // namespace dcekit
