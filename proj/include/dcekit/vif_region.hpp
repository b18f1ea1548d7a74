#pragma once

// Automatic vascular-input region detection:
//   1. pick the volume whose bright voxels (>= fraction * max) have the highest mean,
//   2. binarise it at the same fraction,
//   3. per axial slice keep 2D components in the lower section whose
//      area / bounding-box area reaches the shape threshold,
//   4. keep the largest 3D component of what survives.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <optional>
#include <span>
#include <vector>

#include "dcekit/components.hpp"
#include "dcekit/error.hpp"
#include "dcekit/relaxometry.hpp"
#include "dcekit/volume.hpp"

namespace dcekit {

/// Half-open voxel box [x0, x1) x [y0, y1) x [z0, z1).
struct CropBox {
  std::size_t x0 = 0, x1 = 0, y0 = 0, y1 = 0, z0 = 0, z1 = 0;

  [[nodiscard]] bool contains(std::size_t x, std::size_t y, std::size_t z) const noexcept {
    return x >= x0 && x < x1 && y >= y0 && y < y1 && z >= z0 && z < z1;
  }
};

struct VifRegionConfig {
  double intensity_fraction = 0.75;
  double lower_fraction = 1.0 / 3.0;
  double shape_threshold = std::numbers::pi / 4.0;
  int connectivity_2d = 8;
  int connectivity_3d = 26;
  std::optional<CropBox> crop;  // no cropping by default

  void validate() const {
    detail::require(intensity_fraction > 0.0 && intensity_fraction <= 1.0, "intensity_fraction must lie in (0, 1]");
    detail::require(lower_fraction > 0.0 && lower_fraction <= 1.0, "lower_fraction must lie in (0, 1]");
    detail::require(shape_threshold > 0.0 && shape_threshold <= 1.0, "shape_threshold must lie in (0, 1]");
    detail::require(connectivity_2d == 4 || connectivity_2d == 8, "connectivity_2d must be 4 or 8");
    detail::require(connectivity_3d == 6 || connectivity_3d == 26, "connectivity_3d must be 6 or 26");
  }
};

struct Pixel {
  long x = 0;
  long y = 0;
};

/// Area of the component over the area of its axis-aligned bounding box.
inline double shape_metric(std::span<const Pixel> component) {
  detail::require(!component.empty(), "shape_metric: empty component");
  long x0 = component[0].x, x1 = x0, y0 = component[0].y, y1 = y0;
  for (const auto& p : component) {
    x0 = std::min(x0, p.x);
    x1 = std::max(x1, p.x);
    y0 = std::min(y0, p.y);
    y1 = std::max(y1, p.y);
  }
  const double box = static_cast<double>(x1 - x0 + 1) * static_cast<double>(y1 - y0 + 1);
  return static_cast<double>(component.size()) / box;
}

/// Mean intensity of the voxels at or above fraction * max, for one volume.
inline double bright_voxel_mean(const Volume3D& v, double fraction) {
  const auto data = v.data();
  const double mx = *std::max_element(data.begin(), data.end());
  const double thr = fraction * mx;
  double sum = 0.0;
  std::size_t n = 0;
  for (double x : data)
    if (x >= thr) {
      sum += x;
      ++n;
    }
  return n ? sum / static_cast<double>(n) : 0.0;
}

/// Index of the volume with the largest bright-voxel mean; ties go to the earliest.
inline std::size_t select_peak_volume(const TimeSeries& series, const VifRegionConfig& cfg) {
  cfg.validate();
  detail::require(series.size() > 0, "select_peak_volume: empty series");
  std::size_t best = 0;
  double best_mean = bright_voxel_mean(series[0], cfg.intensity_fraction);
  for (std::size_t k = 1; k < series.size(); ++k) {
    const double m = bright_voxel_mean(series[k], cfg.intensity_fraction);
    if (m > best_mean) {
      best_mean = m;
      best = k;
    }
  }
  return best;
}

/// Binary mask of voxels >= fraction * max (inside the crop box, if any).
inline VoxelMask threshold_volume(const Volume3D& v, double fraction, const std::optional<CropBox>& crop = {}) {
  const Dims d = v.dims();
  auto inside = [&](std::size_t i) {
    if (!crop) return true;
    const auto [x, y, z] = d.coords(i);
    return crop->contains(x, y, z);
  };
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < v.size(); ++i)
    if (inside(i)) mx = std::max(mx, v[i]);
  VoxelMask out(d);
  const double thr = fraction * mx;
  for (std::size_t i = 0; i < v.size(); ++i)
    if (inside(i) && v[i] >= thr) out.set(i);
  return out;
}

/// Step 3 on its own: the voxels of `binary` that belong to 2D components
/// lying in the lower section of their slice with an acceptable shape.
inline VoxelMask filter_slice_components(const VoxelMask& binary, const VifRegionConfig& cfg) {
  const Dims d = binary.dims();
  VoxelMask out(d);
  const double lower_edge = (1.0 - cfg.lower_fraction) * static_cast<double>(d.ny);
  std::vector<std::uint8_t> slice(d.slice_count());
  std::vector<Pixel> pixels;
  for (std::size_t z = 0; z < d.nz; ++z) {
    const std::size_t offset = z * d.slice_count();
    for (std::size_t i = 0; i < slice.size(); ++i) slice[i] = binary[offset + i] ? 1 : 0;
    for (const auto& comp : label_components_2d(slice, d.nx, d.ny, cfg.connectivity_2d)) {
      pixels.clear();
      double cy = 0.0;
      for (std::size_t i : comp.voxels) {
        pixels.push_back({static_cast<long>(i % d.nx), static_cast<long>(i / d.nx)});
        cy += static_cast<double>(i / d.nx) + 0.5;  // pixel centre
      }
      cy /= static_cast<double>(comp.voxels.size());
      if (cy < lower_edge) continue;
      if (shape_metric(pixels) < cfg.shape_threshold) continue;
      for (std::size_t i : comp.voxels) out.set(offset + i);
    }
  }
  return out;
}

inline VoxelMask detect_vif_region(const TimeSeries& series, const VifRegionConfig& cfg) {
  cfg.validate();
  const auto& peak = series[select_peak_volume(series, cfg)];
  const VoxelMask survivors = filter_slice_components(threshold_volume(peak, cfg.intensity_fraction, cfg.crop), cfg);

  const auto comps = label_components_3d(survivors, cfg.connectivity_3d);
  const Component* largest = nullptr;
  for (const auto& c : comps)
    if (!largest || c.voxels.size() > largest->voxels.size()) largest = &c;
  if (!largest) throw NotFoundError("no vascular region found");

  VoxelMask mask(series.dims());
  for (std::size_t i : largest->voxels) mask.set(i);
  return mask;
}

/// Plasma curve of the vascular region: mean signal over the mask per
/// timestamp, converted to blood concentration with the mean T10 (and M0) of
/// the region, then scaled by 1 / (1 - haematocrit).
struct PlasmaCurve {
  std::vector<double> times_min;
  std::vector<double> cp;  // mmol/L; NaN where the signal could not be inverted
};

inline PlasmaCurve extract_vif_curve(const TimeSeries& series, const VoxelMask& mask, const T10Map& t10,
                                     const AcquisitionParams& acq, std::size_t baseline_count = 1) {
  acq.validate();
  detail::require(mask.dims() == series.dims(), "mask dims do not match the series");
  detail::require(t10.dims == series.dims(), "T10 map dims do not match the series");
  const auto voxels = mask.indices();
  detail::require(!voxels.empty(), "vascular mask is empty");
  detail::require(baseline_count < series.size(), "baseline_count must be less than the number of timestamps");

  double t10_mean = 0.0, m0_mean = 0.0;
  for (std::size_t i : voxels) {
    detail::require(t10.estimated(i), "T10 is not estimated inside the vascular mask");
    t10_mean += t10.t10_s[i];
    m0_mean += t10.m0[i];
  }
  t10_mean /= static_cast<double>(voxels.size());
  m0_mean /= static_cast<double>(voxels.size());

  std::vector<double> signal(series.size(), 0.0);
  for (std::size_t k = 0; k < series.size(); ++k) {
    for (std::size_t i : voxels) signal[k] += series[k][i];
    signal[k] /= static_cast<double>(voxels.size());
  }
  std::vector<double> cb(series.size());
  std::vector<ConversionFlag> flags(series.size());
  curve_to_concentration(signal, t10_mean, m0_mean, acq, baseline_count, cb, flags);
  return {series.timestamps_min(), blood_to_plasma(cb, acq.haematocrit)};
}

}  // namespace dcekit
