#pragma once

// Model fits: the plasma VIF once per study, then (Ktrans, ve) per voxel
// against the closed-form tissue response with the VIF held fixed.

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <random>
#include <span>
#include <vector>

#include "dcekit/error.hpp"
#include "dcekit/least_squares.hpp"
#include "dcekit/parallel.hpp"
#include "dcekit/relaxometry.hpp"
#include "dcekit/vif_models.hpp"
#include "dcekit/volume.hpp"

namespace dcekit {

inline constexpr std::size_t kMinFitSamples = 8;

namespace fit_detail {

inline void check_samples(std::span<const double> y, std::span<const double> t) {
  detail::require(y.size() == t.size(), "curve and time vectors differ in length");
  detail::require(y.size() >= kMinFitSamples, "at least 8 samples are required for a fit");
  detail::require_grid(t);
  for (double v : y) detail::require(std::isfinite(v), "curve contains non-finite samples");
}

/// Radical inverse in the given base (Halton sequence component).
inline double halton(std::size_t index, unsigned base) {
  double f = 1.0, r = 0.0;
  while (index > 0) {
    f /= base;
    r += f * static_cast<double>(index % base);
    index /= base;
  }
  return r;
}

inline double log_lerp(double lo, double hi, double u) { return lo * std::pow(hi / lo, u); }

/// Best non-negative (a, b) for fixed rates: the VIF is linear in a and b.
inline std::pair<double, double> amplitudes_for_rates(VifModelKind kind, double alpha, double beta,
                                                      std::span<const double> y, std::span<const double> t,
                                                      const FitConfig& cfg) {
  double s11 = 0, s12 = 0, s22 = 0, s1y = 0, s2y = 0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    const VifParams unit_a{1.0, 0.0, alpha, beta};
    const VifParams unit_b{0.0, 1.0, alpha, beta};
    const double f1 = eval_vif(kind, unit_a, t[i]);
    const double f2 = eval_vif(kind, unit_b, t[i]);
    s11 += f1 * f1;
    s12 += f1 * f2;
    s22 += f2 * f2;
    s1y += f1 * y[i];
    s2y += f2 * y[i];
  }
  auto sse = [&](double a, double b) { return a * a * s11 + 2 * a * b * s12 + b * b * s22 - 2 * a * s1y - 2 * b * s2y; };
  std::array<std::pair<double, double>, 4> candidates{{{0.0, 0.0},
                                                       {s11 > 0 ? std::max(0.0, s1y / s11) : 0.0, 0.0},
                                                       {0.0, s22 > 0 ? std::max(0.0, s2y / s22) : 0.0},
                                                       {0.0, 0.0}}};
  const double det = s11 * s22 - s12 * s12;
  if (det > 1e-12 * s11 * s22) {
    const double a = (s1y * s22 - s2y * s12) / det;
    const double b = (s2y * s11 - s1y * s12) / det;
    if (a >= 0 && b >= 0) candidates[3] = {a, b};
  }
  auto best = candidates[0];
  for (auto c : candidates) {
    c.first = std::clamp(c.first, cfg.amp_min, cfg.amp_max);
    c.second = std::clamp(c.second, cfg.amp_min, cfg.amp_max);
    if (sse(c.first, c.second) < sse(best.first, best.second)) best = c;
  }
  return best;
}

/// Start derived from the curve shape: beta from the log-slope of the last
/// third, alpha from the time of the peak, amplitudes by linear least squares.
inline VifParams heuristic_vif_start(VifModelKind kind, std::span<const double> y, std::span<const double> t,
                                     const FitConfig& cfg) {
  const std::size_t n = y.size();
  const std::size_t peak = static_cast<std::size_t>(std::distance(y.begin(), std::max_element(y.begin(), y.end())));
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  std::size_t cnt = 0;
  for (std::size_t i = std::max(peak + 1, n - n / 3); i < n; ++i) {
    if (!(y[i] > 0.0)) continue;
    const double ly = std::log(y[i]);
    sx += t[i];
    sy += ly;
    sxx += t[i] * t[i];
    sxy += t[i] * ly;
    ++cnt;
  }
  double beta = 0.1;
  if (cnt >= 2) {
    const double slope = (cnt * sxy - sx * sy) / (cnt * sxx - sx * sx);
    if (std::isfinite(slope) && slope < 0.0) beta = -slope;
  }
  const double t_peak = std::max(t[peak], t.size() > 1 ? t[1] - t[0] : 1.0);
  double alpha = 0.0;
  switch (kind) {
    case VifModelKind::Cubic: alpha = 3.0 / t_peak; break;  // t^3 e^{-alpha t} peaks at 3/alpha
    case VifModelKind::Linear: alpha = 1.0 / t_peak; break;
    case VifModelKind::BiExponential: alpha = 5.0 * beta; break;
  }
  alpha = std::clamp(alpha, cfg.rate_min, cfg.rate_max);
  beta = std::clamp(beta, cfg.rate_min, cfg.rate_max);
  auto [a, b] = amplitudes_for_rates(kind, alpha, beta, y, t, cfg);
  return {a, b, alpha, beta};
}

}  // namespace fit_detail

/// Starting points for a VIF fit: the heuristic start first, then
/// cfg.multistart_count Halton points (log-uniform rates, Cranley-Patterson
/// shift drawn from cfg.rng_seed) with least-squares amplitudes.
inline std::vector<VifParams> vif_starts(VifModelKind kind, std::span<const double> y, std::span<const double> t,
                                         const FitConfig& cfg) {
  std::vector<VifParams> starts{fit_detail::heuristic_vif_start(kind, y, t, cfg)};
  std::mt19937 rng(cfg.rng_seed);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  const double shift_a = uni(rng);
  const double shift_b = uni(rng);
  const double rate_lo = std::max(cfg.rate_min, 1e-2);
  const double rate_hi = std::min(cfg.rate_max, 20.0);
  for (int k = 1; k <= cfg.multistart_count; ++k) {
    const double u = std::fmod(fit_detail::halton(static_cast<std::size_t>(k), 2) + shift_a, 1.0);
    const double v = std::fmod(fit_detail::halton(static_cast<std::size_t>(k), 3) + shift_b, 1.0);
    const double alpha = fit_detail::log_lerp(rate_lo, rate_hi, u);
    const double beta = fit_detail::log_lerp(rate_lo, rate_hi, v);
    auto [a, b] = fit_detail::amplitudes_for_rates(kind, alpha, beta, y, t, cfg);
    starts.push_back({a, b, alpha, beta});
  }
  return starts;
}

inline FitResult<VifParams> fit_vif_from(const VifParams& start, std::span<const double> y, std::span<const double> t,
                                         VifModelKind kind, const FitConfig& cfg) {
  using Vec = ParamVector<4>;
  const Bounds bounds{{cfg.amp_min, cfg.amp_min, cfg.rate_min, cfg.rate_min},
                      {cfg.amp_max, cfg.amp_max, cfg.rate_max, cfg.rate_max}};
  auto residual = [&](const Vec& p, Eigen::VectorXd& r) {
    const VifParams vp{p[0], p[1], p[2], p[3]};
    for (std::size_t i = 0; i < t.size(); ++i)
      r[static_cast<Eigen::Index>(i)] = eval_vif(kind, vp, t[i]) - y[i];
  };
  Vec p0(start.a, start.b, start.alpha, start.beta);
  for (Eigen::Index j = 0; j < 4; ++j) p0[j] = std::clamp(p0[j], bounds.lower[j], bounds.upper[j]);
  auto fit = least_squares<4>(residual, static_cast<Eigen::Index>(t.size()), p0, bounds, cfg);
  return {{fit.params[0], fit.params[1], fit.params[2], fit.params[3]}, fit.mse, fit.iterations, fit.converged};
}

/// Best-of-multistart fit of a VIF model to a plasma curve (minutes, mmol/L).
inline FitResult<VifParams> fit_vif(std::span<const double> curve, std::span<const double> t, VifModelKind kind,
                                    const FitConfig& cfg) {
  cfg.validate();
  fit_detail::check_samples(curve, t);
  FitResult<VifParams> best;
  for (const auto& start : vif_starts(kind, curve, t, cfg)) {
    auto fit = fit_vif_from(start, curve, t, kind, cfg);
    if (fit.mse < best.mse) best = fit;
  }
  return best;
}

/// Fixed 4x4 log-spaced grid of (Ktrans, ve) starts.
inline constexpr std::array<double, 4> kKtransStarts{0.002, 0.02, 0.15, 1.0};
inline constexpr std::array<double, 4> kVeStarts{0.02, 0.07, 0.25, 0.8};

/// Fits (Ktrans, ve) of one voxel. Starts are tried in order of their initial
/// cost; the search stops early once a start reaches the residual tolerance.
inline FitResult<TissueParams> fit_tissue_voxel(std::span<const double> ct, std::span<const double> t,
                                                VifModelKind kind, const VifParams& vif, const FitConfig& cfg) {
  fit_detail::check_samples(ct, t);
  using Vec = ParamVector<2>;
  const Bounds bounds{{cfg.ktrans_min, cfg.ve_min}, {cfg.ktrans_max, cfg.ve_max}};
  const ToftsKernel kernel(kind, vif, t);
  auto residual = [&](const Vec& p, Eigen::VectorXd& r) {
    kernel.evaluate(TissueParams::from_ktrans_ve(p[0], p[1]), r);
    for (std::size_t i = 0; i < t.size(); ++i) r[static_cast<Eigen::Index>(i)] -= ct[i];
  };
  const auto m = static_cast<Eigen::Index>(t.size());

  struct Start {
    Vec p;
    double cost;
  };
  std::vector<Start> starts;
  starts.reserve(16);
  Eigen::VectorXd r(m);
  for (double kt : kKtransStarts)
    for (double ve : kVeStarts) {
      Vec p(std::clamp(kt, bounds.lower[0], bounds.upper[0]), std::clamp(ve, bounds.lower[1], bounds.upper[1]));
      residual(p, r);
      starts.push_back({p, r.squaredNorm()});
    }
  std::stable_sort(starts.begin(), starts.end(), [](const Start& a, const Start& b) { return a.cost < b.cost; });

  // Two converged starts agreeing on the best point also end the search.
  auto same_point = [](const Vec& a, const Vec& b) {
    return ((a - b).array().abs() <= 1e-7 * (a.array().abs().max(b.array().abs()) + 1e-12)).all();
  };
  FitResult<TissueParams> best;
  Vec best_p = Vec::Zero();
  for (const auto& s : starts) {
    auto fit = least_squares<2>(residual, m, s.p, bounds, cfg);
    const bool agrees = best.converged && fit.converged && same_point(fit.params, best_p);
    if (fit.mse < best.mse) {
      best = {TissueParams::from_ktrans_ve(fit.params[0], fit.params[1]), fit.mse, fit.iterations, fit.converged};
      best_p = fit.params;
    }
    if (best.converged && std::sqrt(best.mse) <= cfg.residual_tol) break;
    if (agrees) break;
  }
  return best;
}

/// Fits every masked voxel. Samples that failed signal conversion (NaN) are
/// dropped from that voxel's fit; voxels left with fewer than 8 samples, and
/// voxels outside the mask, stay NaN.
inline ParameterMap fit_tissue_map(const ConcentrationCurves& conc, const VoxelMask& mask, VifModelKind kind,
                                   const VifParams& vif, const FitConfig& cfg, unsigned threads = 1) {
  cfg.validate();
  detail::require(mask.dims() == conc.dims, "mask dims do not match the concentration map");
  ParameterMap map(conc.dims);
  const auto voxels = mask.indices();
  parallel_for(voxels.size(), threads, [&](std::size_t k) {
    const std::size_t i = voxels[k];
    const auto curve = conc.curve(i);
    std::vector<double> y, t;
    y.reserve(curve.size());
    t.reserve(curve.size());
    for (std::size_t s = 0; s < curve.size(); ++s)
      if (std::isfinite(curve[s])) {
        y.push_back(curve[s]);
        t.push_back(conc.times_min[s]);
      }
    if (y.size() < kMinFitSamples) return;
    auto fit = fit_tissue_voxel(y, t, kind, vif, cfg);
    map[i] = {fit.params, fit.mse, fit.converged};
  });
  return map;
}

}  // namespace dcekit
