#pragma once

// Spatial containers shared by every stage: scalar volumes, dynamic series,
// binary masks and fitted parameter maps. Voxels are stored x-fastest, so the
// linear index of (x, y, z) is x + nx * (y + ny * z). Within an axial slice y
// grows towards the bottom of the image. Intensities are held as double in
// memory and stored as float32 on disk.

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "dcekit/error.hpp"

namespace dcekit {

struct Dims {
  std::size_t nx = 1;
  std::size_t ny = 1;
  std::size_t nz = 1;

  [[nodiscard]] constexpr std::size_t count() const noexcept { return nx * ny * nz; }
  [[nodiscard]] constexpr std::size_t slice_count() const noexcept { return nx * ny; }
  [[nodiscard]] constexpr std::size_t index(std::size_t x, std::size_t y, std::size_t z) const noexcept {
    return x + nx * (y + ny * z);
  }
  [[nodiscard]] constexpr std::array<std::size_t, 3> coords(std::size_t i) const noexcept {
    return {i % nx, (i / nx) % ny, i / (nx * ny)};
  }
  friend constexpr bool operator==(const Dims&, const Dims&) = default;
};

inline std::string to_string(const Dims& d) {
  return std::to_string(d.nx) + "x" + std::to_string(d.ny) + "x" + std::to_string(d.nz);
}

struct Spacing {
  double sx = 1.0;
  double sy = 1.0;
  double sz = 1.0;
  friend constexpr bool operator==(const Spacing&, const Spacing&) = default;
};

class Volume3D {
 public:
  Volume3D() = default;

  Volume3D(Dims dims, Spacing spacing, std::vector<double> intensities)
      : dims_(dims), spacing_(spacing), data_(std::move(intensities)) {
    detail::require(dims_.nx >= 1 && dims_.ny >= 1 && dims_.nz >= 1, "volume dims must be >= 1");
    detail::require(data_.size() == dims_.count(),
                    "volume data length " + std::to_string(data_.size()) + " does not match dims " +
                        to_string(dims_));
    for (double v : data_) detail::require(std::isfinite(v), "volume contains non-finite values");
  }

  Volume3D(Dims dims, Spacing spacing, double fill = 0.0)
      : Volume3D(dims, spacing, std::vector<double>(dims.count(), fill)) {}

  [[nodiscard]] const Dims& dims() const noexcept { return dims_; }
  [[nodiscard]] const Spacing& spacing() const noexcept { return spacing_; }
  [[nodiscard]] std::span<const double> data() const noexcept { return data_; }
  [[nodiscard]] std::size_t size() const noexcept { return data_.size(); }

  [[nodiscard]] double operator[](std::size_t i) const { return data_[i]; }
  [[nodiscard]] double at(std::size_t x, std::size_t y, std::size_t z) const {
    return data_[dims_.index(x, y, z)];
  }

  friend bool operator==(const Volume3D&, const Volume3D&) = default;

 private:
  Dims dims_{};
  Spacing spacing_{};
  std::vector<double> data_;
};

class VoxelMask {
 public:
  VoxelMask() = default;
  explicit VoxelMask(Dims dims, bool fill = false) : dims_(dims), bits_(dims.count(), fill ? 1 : 0) {}
  VoxelMask(Dims dims, std::vector<std::uint8_t> bits) : dims_(dims), bits_(std::move(bits)) {
    detail::require(bits_.size() == dims_.count(), "mask length does not match dims " + to_string(dims_));
    for (auto& b : bits_) b = b ? 1 : 0;
  }

  [[nodiscard]] const Dims& dims() const noexcept { return dims_; }
  [[nodiscard]] std::size_t size() const noexcept { return bits_.size(); }
  [[nodiscard]] bool operator[](std::size_t i) const { return bits_[i] != 0; }
  void set(std::size_t i, bool v = true) { bits_[i] = v ? 1 : 0; }
  [[nodiscard]] std::span<const std::uint8_t> bits() const noexcept { return bits_; }

  [[nodiscard]] std::size_t count() const noexcept {
    std::size_t n = 0;
    for (auto b : bits_) n += b;
    return n;
  }
  [[nodiscard]] bool empty() const noexcept { return count() == 0; }

  [[nodiscard]] std::vector<std::size_t> indices() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < bits_.size(); ++i)
      if (bits_[i]) out.push_back(i);
    return out;
  }

  friend bool operator==(const VoxelMask&, const VoxelMask&) = default;

 private:
  Dims dims_{};
  std::vector<std::uint8_t> bits_;
};

/// Scanner and patient constants needed to turn signal into concentration.
/// The dynamic series is acquired at flip_angles_deg.front(); further angles
/// only matter for variable-flip-angle T10 estimation.
struct AcquisitionParams {
  double tr_s = 0.005;
  std::vector<double> flip_angles_deg{25.0};
  double relaxivity_r1 = 4.5;  // L / (mmol s)
  double haematocrit = 0.45;

  [[nodiscard]] double dynamic_flip_deg() const { return flip_angles_deg.front(); }

  void validate() const {
    detail::require(tr_s > 0.0 && std::isfinite(tr_s), "tr must be > 0");
    detail::require(!flip_angles_deg.empty(), "at least one flip angle is required");
    for (double a : flip_angles_deg)
      detail::require(a > 0.0 && a <= 90.0, "flip angles must lie in (0, 90] degrees");
    detail::require(relaxivity_r1 > 0.0 && std::isfinite(relaxivity_r1), "relaxivity r1 must be > 0");
    detail::require(haematocrit > 0.0 && haematocrit < 1.0, "haematocrit must lie in (0, 1)");
  }
};

class TimeSeries {
 public:
  TimeSeries() = default;

  TimeSeries(std::vector<Volume3D> volumes, std::vector<double> timestamps_s)
      : volumes_(std::move(volumes)), times_(std::move(timestamps_s)) {
    detail::require(!volumes_.empty(), "time series is empty");
    detail::require(volumes_.size() == times_.size(), "volume count does not match timestamp count");
    for (const auto& v : volumes_) {
      detail::require(v.dims() == volumes_.front().dims(),
                      "dim mismatch: " + to_string(v.dims()) + " vs " + to_string(volumes_.front().dims()));
      detail::require(v.spacing() == volumes_.front().spacing(), "spacing mismatch across volumes");
    }
    detail::require(times_.front() == 0.0, "first timestamp must be 0");
    for (std::size_t k = 1; k < times_.size(); ++k)
      detail::require(times_[k] > times_[k - 1], "non-increasing timestamps");
  }

  [[nodiscard]] std::size_t size() const noexcept { return volumes_.size(); }
  [[nodiscard]] const Volume3D& operator[](std::size_t k) const { return volumes_[k]; }
  [[nodiscard]] std::span<const Volume3D> volumes() const noexcept { return volumes_; }
  [[nodiscard]] std::span<const double> timestamps_s() const noexcept { return times_; }
  [[nodiscard]] const Dims& dims() const { return volumes_.front().dims(); }
  [[nodiscard]] const Spacing& spacing() const { return volumes_.front().spacing(); }

  [[nodiscard]] std::vector<double> timestamps_min() const {
    std::vector<double> out(times_.size());
    for (std::size_t k = 0; k < times_.size(); ++k) out[k] = times_[k] / 60.0;
    return out;
  }

  /// Signal of one voxel across all timestamps.
  [[nodiscard]] std::vector<double> voxel_curve(std::size_t i) const {
    std::vector<double> out(volumes_.size());
    for (std::size_t k = 0; k < volumes_.size(); ++k) out[k] = volumes_[k][i];
    return out;
  }

  friend bool operator==(const TimeSeries&, const TimeSeries&) = default;

 private:
  std::vector<Volume3D> volumes_;
  std::vector<double> times_;
};

struct TissueParams {
  double ktrans = 0.0;  // min^-1
  double ve = 1.0;
  double kep = 0.0;  // min^-1

  static TissueParams from_ktrans_ve(double ktrans, double ve) {
    return {ktrans, ve, ve > 0.0 ? ktrans / ve : 0.0};
  }
  friend bool operator==(const TissueParams&, const TissueParams&) = default;
};

struct VoxelFit {
  TissueParams params{nan(), nan(), nan()};
  double mse = nan();
  bool converged = false;

  static constexpr double nan() { return std::numeric_limits<double>::quiet_NaN(); }
};

/// Per-voxel Tofts parameters; voxels that were not fitted hold NaN.
class ParameterMap {
 public:
  ParameterMap() = default;
  explicit ParameterMap(Dims dims) : dims_(dims), voxels_(dims.count()) {}

  [[nodiscard]] const Dims& dims() const noexcept { return dims_; }
  [[nodiscard]] std::size_t size() const noexcept { return voxels_.size(); }
  [[nodiscard]] const VoxelFit& operator[](std::size_t i) const { return voxels_[i]; }
  [[nodiscard]] VoxelFit& operator[](std::size_t i) { return voxels_[i]; }
  [[nodiscard]] std::span<const VoxelFit> voxels() const noexcept { return voxels_; }

  [[nodiscard]] bool fitted(std::size_t i) const { return !std::isnan(voxels_[i].params.ktrans); }

  /// Bitwise equality; NaN compares equal to NaN.
  [[nodiscard]] bool identical(const ParameterMap& o) const {
    if (!(dims_ == o.dims_)) return false;
    auto same = [](double a, double b) {
      return (std::isnan(a) && std::isnan(b)) || std::memcmp(&a, &b, sizeof a) == 0;
    };
    for (std::size_t i = 0; i < voxels_.size(); ++i) {
      const auto& a = voxels_[i];
      const auto& b = o.voxels_[i];
      if (!same(a.params.ktrans, b.params.ktrans) || !same(a.params.ve, b.params.ve) ||
          !same(a.params.kep, b.params.kep) || !same(a.mse, b.mse) || a.converged != b.converged)
        return false;
    }
    return true;
  }

 private:
  Dims dims_{};
  std::vector<VoxelFit> voxels_;
};

}  // namespace dcekit
