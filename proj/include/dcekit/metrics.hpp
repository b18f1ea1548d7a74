#pragma once

// Segmentation agreement, curve comparison and histogram features.
// Metrics whose denominator vanishes return std::nullopt rather than 0.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "dcekit/error.hpp"
#include "dcekit/volume.hpp"

namespace dcekit {

struct ConfusionCounts {
  std::uint64_t tp = 0;
  std::uint64_t fp = 0;
  std::uint64_t fn = 0;
  std::uint64_t tn = 0;

  [[nodiscard]] std::uint64_t total() const noexcept { return tp + fp + fn + tn; }
  friend bool operator==(const ConfusionCounts&, const ConfusionCounts&) = default;
};

inline ConfusionCounts confusion(const VoxelMask& pred, const VoxelMask& truth) {
  detail::require(pred.dims() == truth.dims(), "dim mismatch: " + to_string(pred.dims()) + " vs " +
                                                   to_string(truth.dims()));
  ConfusionCounts c;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred[i], t = truth[i];
    if (p && t) ++c.tp;
    else if (p) ++c.fp;
    else if (t) ++c.fn;
    else ++c.tn;
  }
  return c;
}

namespace metrics_detail {
inline std::optional<double> ratio(std::uint64_t num, std::uint64_t den) {
  if (den == 0) return std::nullopt;
  return static_cast<double>(num) / static_cast<double>(den);
}
}  // namespace metrics_detail

/// 2|A n B| / (|A| + |B|); undefined when both masks are empty.
inline std::optional<double> dice(const ConfusionCounts& c) {
  return metrics_detail::ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn);
}
inline std::optional<double> dice(const VoxelMask& pred, const VoxelMask& truth) { return dice(confusion(pred, truth)); }

inline std::optional<double> sensitivity(const ConfusionCounts& c) { return metrics_detail::ratio(c.tp, c.tp + c.fn); }
inline std::optional<double> specificity(const ConfusionCounts& c) { return metrics_detail::ratio(c.tn, c.tn + c.fp); }
inline std::optional<double> precision(const ConfusionCounts& c) { return metrics_detail::ratio(c.tp, c.tp + c.fp); }

/// Over axial slices where the truth mask is non-empty, the fraction in which
/// the prediction is empty.
inline std::optional<double> fn_frame_rate(const VoxelMask& pred, const VoxelMask& truth) {
  detail::require(pred.dims() == truth.dims(), "dim mismatch between masks");
  const Dims d = truth.dims();
  std::uint64_t tumour_slices = 0, missed = 0;
  for (std::size_t z = 0; z < d.nz; ++z) {
    bool t_any = false, p_any = false;
    for (std::size_t i = z * d.slice_count(); i < (z + 1) * d.slice_count(); ++i) {
      t_any = t_any || truth[i];
      p_any = p_any || pred[i];
    }
    if (!t_any) continue;
    ++tumour_slices;
    if (!p_any) ++missed;
  }
  return metrics_detail::ratio(missed, tumour_slices);
}

/// Moments use the population convention: m_k = mean((x - mean)^k),
/// std = sqrt(m2), skewness = m3 / m2^1.5, excess kurtosis = m4 / m2^2 - 3.
struct HistogramFeatures {
  std::size_t count = 0;
  double mean = 0.0;
  double std = 0.0;
  std::optional<double> skewness;
  std::optional<double> kurtosis;
};

inline HistogramFeatures histogram_features(std::span<const double> values) {
  detail::require(values.size() >= 3, "histogram features need at least 3 values");
  const double n = static_cast<double>(values.size());
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= n;
  double m2 = 0.0, m3 = 0.0, m4 = 0.0;
  for (double v : values) {
    const double d = v - mean;
    const double d2 = d * d;
    m2 += d2;
    m3 += d2 * d;
    m4 += d2 * d2;
  }
  m2 /= n;
  m3 /= n;
  m4 /= n;
  HistogramFeatures f{values.size(), mean, std::sqrt(m2), std::nullopt, std::nullopt};
  // Constant data (up to rounding relative to the mean) has no shape.
  if (m2 > 1e-24 * std::max(1.0, mean * mean)) {
    f.skewness = m3 / std::pow(m2, 1.5);
    f.kurtosis = m4 / (m2 * m2) - 3.0;
  }
  return f;
}

enum class MapField { Ktrans, Ve, Kep };

inline MapField parse_map_field(std::string_view s) {
  if (s == "ktrans") return MapField::Ktrans;
  if (s == "ve") return MapField::Ve;
  if (s == "kep") return MapField::Kep;
  throw ValidationError("unknown map field '" + std::string(s) + "' (expected ktrans, ve or kep)");
}

/// Finite values of one map field over the masked voxels, in index order.
inline std::vector<double> masked_values(const ParameterMap& map, MapField field, const VoxelMask& mask) {
  detail::require(map.dims() == mask.dims(), "mask dims do not match the parameter map");
  std::vector<double> out;
  for (std::size_t i = 0; i < map.size(); ++i) {
    if (!mask[i]) continue;
    const auto& p = map[i].params;
    const double v = field == MapField::Ktrans ? p.ktrans : field == MapField::Ve ? p.ve : p.kep;
    if (std::isfinite(v)) out.push_back(v);
  }
  return out;
}

inline HistogramFeatures histogram_features(const ParameterMap& map, MapField field, const VoxelMask& mask) {
  return histogram_features(masked_values(map, field, mask));
}

/// Equal-width bin counts over [min, max] of the values.
inline std::vector<std::size_t> histogram_counts(std::span<const double> values, std::size_t bins) {
  detail::require(bins >= 1, "bins must be >= 1");
  std::vector<std::size_t> out(bins, 0);
  if (values.empty()) return out;
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  const double width = (*hi - *lo) / static_cast<double>(bins);
  for (double v : values) {
    std::size_t b = width > 0.0 ? static_cast<std::size_t>((v - *lo) / width) : 0;
    out[std::min(b, bins - 1)]++;
  }
  return out;
}

inline double rms_curve_difference(std::span<const double> a, std::span<const double> b) {
  detail::require(a.size() == b.size(), "length mismatch between curves");
  detail::require(!a.empty(), "curves must not be empty");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(acc / static_cast<double>(a.size()));
}

}  // namespace dcekit
