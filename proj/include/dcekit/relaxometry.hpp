#pragma once

// Signal <-> concentration mapping for spoiled gradient-echo acquisitions.
//
// Steady-state signal:  S = M0 sin(a) (1 - E1) / (1 - cos(a) E1),  E1 = exp(-TR/T1)
// Fast-exchange relaxivity:  1/T1(t) = 1/T10 + r1 C(t)
//
// Timestamps stay in seconds here; ConcentrationCurves carries minutes because
// every downstream model works in min^-1.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <span>
#include <vector>

#include "dcekit/error.hpp"
#include "dcekit/volume.hpp"

namespace dcekit {

inline constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

inline double deg_to_rad(double deg) { return deg * std::numbers::pi / 180.0; }

inline double spgr_signal(double m0, double t1_s, double tr_s, double flip_deg) {
  detail::require(t1_s > 0.0, "spgr_signal: t1 must be > 0");
  detail::require(tr_s > 0.0, "spgr_signal: tr must be > 0");
  detail::require(flip_deg > 0.0 && flip_deg <= 90.0, "spgr_signal: flip angle must lie in (0, 90]");
  const double a = deg_to_rad(flip_deg);
  // 1 - E1 via expm1 keeps precision when TR << T1.
  const double one_minus_e1 = -std::expm1(-tr_s / t1_s);
  const double e1 = 1.0 - one_minus_e1;
  return m0 * std::sin(a) * one_minus_e1 / (1.0 - std::cos(a) * e1);
}

/// Inverse of spgr_signal for T1 given the normalised signal s = S / M0.
/// Returns NaN when no T1 > 0 reproduces the signal (s outside (0, sin a)).
inline double spgr_r1_from_signal(double s, double tr_s, double flip_deg) {
  const double a = deg_to_rad(flip_deg);
  const double sa = std::sin(a);
  const double ca = std::cos(a);
  if (!(s > 0.0) || !(s < sa)) return kNaN;
  // s (1 - ca E1) = sa (1 - E1)  =>  E1 = (sa - s) / (sa - s ca)
  // 1 - E1 = s (1 - ca) / (sa - s ca); log1p keeps accuracy when E1 -> 1.
  const double one_minus_e1 = s * (1.0 - ca) / (sa - s * ca);
  if (!(one_minus_e1 > 0.0) || !(one_minus_e1 < 1.0)) return kNaN;
  return -std::log1p(-one_minus_e1) / tr_s;
}

struct T10Map {
  Dims dims;
  std::vector<double> t10_s;  // NaN where not estimated
  std::vector<double> m0;

  static T10Map uniform(Dims dims, double t10, double m0 = kNaN) {
    return {dims, std::vector<double>(dims.count(), t10), std::vector<double>(dims.count(), m0)};
  }
  [[nodiscard]] bool estimated(std::size_t i) const { return std::isfinite(t10_s[i]) && t10_s[i] > 0.0; }
};

/// Variable-flip-angle T10/M0 estimate from the linearised SPGR equation
/// S/sin(a) = E1 S/tan(a) + M0 (1 - E1), solved per voxel by least squares.
inline T10Map estimate_t10_vfa(std::span<const Volume3D> signals, const AcquisitionParams& acq) {
  const auto& angles = acq.flip_angles_deg;
  detail::require(angles.size() >= 2, "T10 estimation needs at least two flip angles");
  detail::require(signals.size() == angles.size(), "one volume per flip angle is required");
  for (std::size_t i = 0; i < angles.size(); ++i)
    for (std::size_t j = i + 1; j < angles.size(); ++j)
      detail::require(angles[i] != angles[j], "duplicate flip angles");
  for (const auto& v : signals) detail::require(v.dims() == signals[0].dims(), "dim mismatch between VFA volumes");
  detail::require(acq.tr_s > 0.0, "tr must be > 0");

  const Dims dims = signals[0].dims();
  T10Map out{dims, std::vector<double>(dims.count(), kNaN), std::vector<double>(dims.count(), kNaN)};
  const std::size_t n = angles.size();
  std::vector<double> sin_a(n), tan_a(n);
  for (std::size_t k = 0; k < n; ++k) {
    sin_a[k] = std::sin(deg_to_rad(angles[k]));
    tan_a[k] = std::tan(deg_to_rad(angles[k]));
  }
  std::vector<double> xs(n), ys(n);
  for (std::size_t i = 0; i < dims.count(); ++i) {
    double mx = 0.0, my = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      xs[k] = signals[k][i] / tan_a[k];
      ys[k] = signals[k][i] / sin_a[k];
      mx += xs[k];
      my += ys[k];
    }
    mx /= static_cast<double>(n);
    my /= static_cast<double>(n);
    double sxx = 0.0, sxy = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      sxx += (xs[k] - mx) * (xs[k] - mx);
      sxy += (xs[k] - mx) * (ys[k] - my);
    }
    if (!(sxx > 0.0)) continue;
    const double e1 = sxy / sxx;
    if (!(e1 > 0.0 && e1 < 1.0)) continue;
    const double intercept = my - e1 * mx;
    out.t10_s[i] = -acq.tr_s / std::log(e1);
    out.m0[i] = intercept / (1.0 - e1);
  }
  return out;
}

enum class ConversionFlag : std::uint8_t { Ok = 0, Clamped = 1, NotInvertible = 2 };

/// Concentration (mmol/L) per voxel and timestamp, voxel-major.
struct ConcentrationCurves {
  Dims dims;
  std::vector<double> times_min;
  std::vector<double> values;
  std::vector<ConversionFlag> flags;

  [[nodiscard]] std::size_t steps() const noexcept { return times_min.size(); }
  [[nodiscard]] std::span<const double> curve(std::size_t voxel) const {
    return std::span<const double>(values).subspan(voxel * steps(), steps());
  }
  [[nodiscard]] std::span<const ConversionFlag> curve_flags(std::size_t voxel) const {
    return std::span<const ConversionFlag>(flags).subspan(voxel * steps(), steps());
  }
};

/// Converts one signal curve. With baseline_count >= 1 the effective M0 is
/// rescaled so the mean of the first baseline_count samples equals
/// spgr_signal(M0, T10); with baseline_count == 0 the supplied m0 is used as is.
/// Negative concentrations become 0; only those beyond roundoff (1e-9 of
/// R10/r1) are flagged Clamped, so exact baseline samples stay Ok.
inline void curve_to_concentration(std::span<const double> signal, double t10_s, double m0,
                                   const AcquisitionParams& acq, std::size_t baseline_count,
                                   std::span<double> conc, std::span<ConversionFlag> flags) {
  const double flip = acq.dynamic_flip_deg();
  double scale = m0;
  if (baseline_count > 0) {
    double mean = 0.0;
    for (std::size_t k = 0; k < baseline_count; ++k) mean += signal[k];
    mean /= static_cast<double>(baseline_count);
    scale = mean / spgr_signal(1.0, t10_s, acq.tr_s, flip);
  }
  const double r10 = 1.0 / t10_s;
  for (std::size_t k = 0; k < signal.size(); ++k) {
    const double r1 = spgr_r1_from_signal(signal[k] / scale, acq.tr_s, flip);
    if (!std::isfinite(r1)) {
      conc[k] = kNaN;
      flags[k] = ConversionFlag::NotInvertible;
      continue;
    }
    const double c = (r1 - r10) / acq.relaxivity_r1;
    if (c < 0.0) {
      conc[k] = 0.0;
      flags[k] = c < -1e-9 * r10 / acq.relaxivity_r1 ? ConversionFlag::Clamped : ConversionFlag::Ok;
    } else {
      conc[k] = c;
      flags[k] = ConversionFlag::Ok;
    }
  }
}

/// Converts every voxel (or only masked voxels) of a dynamic series.
/// Voxels without a T10 estimate, or outside the mask, hold NaN.
inline ConcentrationCurves signal_to_concentration(const TimeSeries& series, const T10Map& t10,
                                                   const AcquisitionParams& acq, std::size_t baseline_count,
                                                   const VoxelMask* mask = nullptr) {
  acq.validate();
  const std::size_t nt = series.size();
  detail::require(baseline_count < nt, "baseline_count must be less than the number of timestamps");
  detail::require(t10.dims == series.dims(), "T10 map dims do not match the series");
  if (mask) detail::require(mask->dims() == series.dims(), "mask dims do not match the series");

  ConcentrationCurves out;
  out.dims = series.dims();
  out.times_min = series.timestamps_min();
  out.values.assign(out.dims.count() * nt, kNaN);
  out.flags.assign(out.dims.count() * nt, ConversionFlag::NotInvertible);

  std::vector<double> sig(nt);
  for (std::size_t i = 0; i < out.dims.count(); ++i) {
    if (mask && !(*mask)[i]) continue;
    if (!t10.estimated(i)) continue;
    if (baseline_count == 0 && !(t10.m0[i] > 0.0)) continue;
    for (std::size_t k = 0; k < nt; ++k) sig[k] = series[k][i];
    curve_to_concentration(sig, t10.t10_s[i], t10.m0[i], acq, baseline_count,
                           std::span<double>(out.values).subspan(i * nt, nt),
                           std::span<ConversionFlag>(out.flags).subspan(i * nt, nt));
  }
  return out;
}

/// Forward model: concentration curve to SPGR signal at the dynamic flip angle.
inline std::vector<double> concentration_to_signal(std::span<const double> conc, double t10_s, double m0,
                                                   const AcquisitionParams& acq) {
  std::vector<double> out(conc.size());
  for (std::size_t k = 0; k < conc.size(); ++k) {
    const double r1 = 1.0 / t10_s + acq.relaxivity_r1 * conc[k];
    out[k] = spgr_signal(m0, 1.0 / r1, acq.tr_s, acq.dynamic_flip_deg());
  }
  return out;
}

inline std::vector<double> blood_to_plasma(std::span<const double> cb, double haematocrit) {
  detail::require(haematocrit > 0.0 && haematocrit < 1.0, "haematocrit must lie in (0, 1)");
  std::vector<double> cp(cb.size());
  const double f = 1.0 - haematocrit;
  for (std::size_t k = 0; k < cb.size(); ++k) cp[k] = cb[k] / f;
  return cp;
}

}  // namespace dcekit
