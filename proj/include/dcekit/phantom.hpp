#pragma once

// Digital reference phantom in the style of the QIBA DCE objects: a grid of
// 10x10 tissue patches (rows = ve, columns = Ktrans) with a vascular strip
// along the bottom of the image.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "dcekit/error.hpp"
#include "dcekit/io.hpp"
#include "dcekit/relaxometry.hpp"
#include "dcekit/vif_models.hpp"
#include "dcekit/volume.hpp"

namespace dcekit {

struct PhantomLayout {
  std::vector<double> ktrans_values{0.01, 0.02, 0.05, 0.10, 0.20, 0.35};  // min^-1, one per column
  std::vector<double> ve_values{0.01, 0.05, 0.10, 0.20, 0.50};            // one per row
  std::size_t patch_size = 10;
  std::size_t strip_height = 10;
  std::size_t strip_width = 50;
  std::size_t timestamp_count = 661;

  [[nodiscard]] std::size_t rows() const noexcept { return ve_values.size(); }
  [[nodiscard]] std::size_t cols() const noexcept { return ktrans_values.size(); }
  [[nodiscard]] std::size_t min_nx() const noexcept { return std::max(cols() * patch_size, strip_width); }
  [[nodiscard]] std::size_t min_ny() const noexcept { return rows() * patch_size + strip_height; }

  void validate() const {
    detail::require(!ktrans_values.empty() && !ve_values.empty(), "layout needs at least one Ktrans and one ve value");
    detail::require(patch_size >= 1, "patch_size must be >= 1");
    detail::require(strip_height >= 1 && strip_width >= 1, "strip must be at least 1x1");
    detail::require(timestamp_count >= 2, "timestamp_count must be >= 2");
    for (double k : ktrans_values) detail::require(k >= 0.0, "Ktrans values must be >= 0");
    for (double v : ve_values) detail::require(v > 0.0 && v <= 1.0, "ve values must lie in (0, 1]");
  }
};

struct PatchTruth {
  std::size_t row = 0;
  std::size_t col = 0;
  double ktrans = 0.0;
  double ve = 0.0;
};

struct PatchRegion {
  std::size_t row = 0;
  std::size_t col = 0;
  std::vector<std::size_t> voxels;
};

struct PhantomRegions {
  std::vector<PatchRegion> patches;  // row-major over (row, col)
  std::vector<std::size_t> strip;

  [[nodiscard]] VoxelMask patch_mask(Dims dims) const {
    VoxelMask m(dims);
    for (const auto& p : patches)
      for (std::size_t i : p.voxels) m.set(i);
    return m;
  }
  [[nodiscard]] VoxelMask strip_mask(Dims dims) const {
    VoxelMask m(dims);
    for (std::size_t i : strip) m.set(i);
    return m;
  }
};

/// Patch (row, col) covers x in [col*p, (col+1)*p), y in [row*p, (row+1)*p);
/// the strip covers the bottom strip_height rows and the first strip_width
/// columns. Every axial slice carries the same layout.
inline PhantomRegions parse_phantom_layout(Dims dims, const PhantomLayout& layout) {
  layout.validate();
  if (dims.nx < layout.min_nx() || dims.ny < layout.min_ny())
    throw ValidationError("image " + to_string(dims) + " too small for phantom layout (needs at least " +
                          std::to_string(layout.min_nx()) + "x" + std::to_string(layout.min_ny()) + ")");
  PhantomRegions out;
  const std::size_t p = layout.patch_size;
  for (std::size_t r = 0; r < layout.rows(); ++r)
    for (std::size_t c = 0; c < layout.cols(); ++c) {
      PatchRegion reg{r, c, {}};
      for (std::size_t z = 0; z < dims.nz; ++z)
        for (std::size_t y = r * p; y < (r + 1) * p; ++y)
          for (std::size_t x = c * p; x < (c + 1) * p; ++x) reg.voxels.push_back(dims.index(x, y, z));
      out.patches.push_back(std::move(reg));
    }
  for (std::size_t z = 0; z < dims.nz; ++z)
    for (std::size_t y = dims.ny - layout.strip_height; y < dims.ny; ++y)
      for (std::size_t x = 0; x < layout.strip_width; ++x) out.strip.push_back(dims.index(x, y, z));
  return out;
}

inline PhantomRegions parse_phantom_layout(const Volume3D& volume, const PhantomLayout& layout) {
  return parse_phantom_layout(volume.dims(), layout);
}

inline std::vector<PatchTruth> phantom_truth(const PhantomLayout& layout) {
  std::vector<PatchTruth> out;
  for (std::size_t r = 0; r < layout.rows(); ++r)
    for (std::size_t c = 0; c < layout.cols(); ++c) out.push_back({r, c, layout.ktrans_values[c], layout.ve_values[r]});
  return out;
}

struct PhantomSpec {
  PhantomLayout layout;
  VifModelKind kind = VifModelKind::Cubic;
  VifParams vif{8.0, 1.2, 2.5, 0.1};
  AcquisitionParams acq{0.005, {25.0, 5.0}, 4.5, 0.45};
  double t10_tissue_s = 1.0;
  double t10_blood_s = 1.4;
  double m0 = 1000.0;
  double dt_s = 0.5;
  double noise_sd = 0.0;  // additive Gaussian noise on signals, off by default
  unsigned seed = 42;
  Dims dims{0, 0, 1};  // 0 means the smallest size that fits the layout
};

struct Phantom {
  Study study;
  std::vector<PatchTruth> truth;
  PhantomRegions regions;
  std::vector<double> plasma;  // noise-free Cp at the series timestamps
};

/// Synthesises a dynamic series (plus VFA volumes at every flip angle) from
/// the layout. Background voxels are tissue without contrast uptake.
inline Phantom generate_phantom(const PhantomSpec& spec) {
  spec.layout.validate();
  spec.acq.validate();
  detail::require(spec.dt_s > 0.0, "dt must be > 0");
  detail::require(spec.t10_tissue_s > 0.0 && spec.t10_blood_s > 0.0, "T10 values must be > 0");
  detail::require(spec.m0 > 0.0, "m0 must be > 0");
  detail::require(spec.noise_sd >= 0.0, "noise_sd must be >= 0");

  Dims dims = spec.dims;
  if (dims.nx == 0) dims.nx = spec.layout.min_nx();
  if (dims.ny == 0) dims.ny = spec.layout.min_ny();
  if (dims.nz == 0) dims.nz = 1;

  Phantom ph;
  ph.truth = phantom_truth(spec.layout);
  ph.regions = parse_phantom_layout(dims, spec.layout);

  const std::size_t nt = spec.layout.timestamp_count;
  std::vector<double> times_s(nt), times_min(nt);
  for (std::size_t k = 0; k < nt; ++k) {
    times_s[k] = static_cast<double>(k) * spec.dt_s;
    times_min[k] = times_s[k] / 60.0;
  }

  ph.plasma.resize(nt);
  for (std::size_t k = 0; k < nt; ++k) ph.plasma[k] = eval_vif(spec.kind, spec.vif, times_min[k]);

  // Per-voxel signal curves, voxel-major.
  const std::size_t nv = dims.count();
  std::vector<double> signal(nv * nt);
  const std::vector<double> zero(nt, 0.0);
  const auto background = concentration_to_signal(zero, spec.t10_tissue_s, spec.m0, spec.acq);
  for (std::size_t i = 0; i < nv; ++i) std::copy(background.begin(), background.end(), signal.begin() + i * nt);

  for (std::size_t p = 0; p < ph.regions.patches.size(); ++p) {
    const auto& truth = ph.truth[p];
    const auto ct = tissue_response_analytic(spec.kind, spec.vif, TissueParams::from_ktrans_ve(truth.ktrans, truth.ve),
                                             times_min);
    const auto s = concentration_to_signal(ct, spec.t10_tissue_s, spec.m0, spec.acq);
    for (std::size_t i : ph.regions.patches[p].voxels) std::copy(s.begin(), s.end(), signal.begin() + i * nt);
  }
  {
    std::vector<double> cb(nt);
    for (std::size_t k = 0; k < nt; ++k) cb[k] = ph.plasma[k] * (1.0 - spec.acq.haematocrit);
    const auto s = concentration_to_signal(cb, spec.t10_blood_s, spec.m0, spec.acq);
    for (std::size_t i : ph.regions.strip) std::copy(s.begin(), s.end(), signal.begin() + i * nt);
  }

  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> noise(0.0, spec.noise_sd > 0.0 ? spec.noise_sd : 1.0);
  auto add_noise = [&](double v) { return spec.noise_sd > 0.0 ? v + noise(rng) : v; };

  std::vector<Volume3D> vols;
  vols.reserve(nt);
  for (std::size_t k = 0; k < nt; ++k) {
    std::vector<double> data(nv);
    for (std::size_t i = 0; i < nv; ++i) data[i] = add_noise(signal[i * nt + k]);
    vols.emplace_back(dims, Spacing{}, std::move(data));
  }

  ph.study.name = "phantom";
  ph.study.acq = spec.acq;
  ph.study.series = TimeSeries(std::move(vols), times_s);
  const VoxelMask strip = ph.regions.strip_mask(dims);
  for (double flip : spec.acq.flip_angles_deg) {
    std::vector<double> data(nv);
    for (std::size_t i = 0; i < nv; ++i)
      data[i] = add_noise(spgr_signal(spec.m0, strip[i] ? spec.t10_blood_s : spec.t10_tissue_s, spec.acq.tr_s, flip));
    ph.study.vfa.emplace_back(dims, Spacing{}, std::move(data));
  }
  return ph;
}

struct PatchError {
  PatchTruth truth;
  double ktrans_fit = kNaN;  // median over converged voxels of the patch
  double ve_fit = kNaN;
  double ktrans_err_pct = kNaN;
  double ve_err_pct = kNaN;
  bool missing = false;  // no converged voxel in the patch
};

struct FitErrorReport {
  std::vector<PatchError> patches;
  double mean_ktrans_err_pct = kNaN;
  double mean_ve_err_pct = kNaN;
  std::size_t missing_patches = 0;
};

inline double median(std::vector<double> v) {
  detail::require(!v.empty(), "median of an empty set");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

/// Per-patch relative error |fit - target| / target (in percent) of the
/// median fitted value, and the mean over patches that have converged voxels.
/// Patches with a zero target are reported but left out of the mean.
inline FitErrorReport evaluate_fit_errors(const ParameterMap& map, const PhantomRegions& regions,
                                          const std::vector<PatchTruth>& truth) {
  detail::require(regions.patches.size() == truth.size(), "truth table does not match the layout");
  FitErrorReport rep;
  double sum_k = 0.0, sum_v = 0.0;
  std::size_t n_k = 0, n_v = 0;
  for (std::size_t p = 0; p < truth.size(); ++p) {
    PatchError pe{truth[p]};
    std::vector<double> ks, vs;
    for (std::size_t i : regions.patches[p].voxels) {
      detail::require(i < map.size(), "parameter map does not cover the phantom");
      const auto& v = map[i];
      if (!v.converged || !std::isfinite(v.params.ktrans)) continue;
      ks.push_back(v.params.ktrans);
      vs.push_back(v.params.ve);
    }
    if (ks.empty()) {
      pe.missing = true;
      ++rep.missing_patches;
    } else {
      pe.ktrans_fit = median(ks);
      pe.ve_fit = median(vs);
      if (pe.truth.ktrans > 0.0) {
        pe.ktrans_err_pct = 100.0 * std::abs(pe.ktrans_fit - pe.truth.ktrans) / pe.truth.ktrans;
        sum_k += pe.ktrans_err_pct;
        ++n_k;
      }
      if (pe.truth.ve > 0.0) {
        pe.ve_err_pct = 100.0 * std::abs(pe.ve_fit - pe.truth.ve) / pe.truth.ve;
        sum_v += pe.ve_err_pct;
        ++n_v;
      }
    }
    rep.patches.push_back(pe);
  }
  if (n_k) rep.mean_ktrans_err_pct = sum_k / static_cast<double>(n_k);
  if (n_v) rep.mean_ve_err_pct = sum_v / static_cast<double>(n_v);
  return rep;
}

inline constexpr const char* kTruthCsvHeader = "row,col,ktrans_true,ve_true,ktrans_fit,ve_fit,ktrans_err_pct,ve_err_pct";

inline void write_truth_csv(const std::vector<PatchError>& rows, const fs::path& path) {
  auto os = io_detail::open_out(path);
  os << kTruthCsvHeader << '\n';
  auto num = [](double v) { return std::isfinite(v) ? io_detail::format_double(v) : std::string("nan"); };
  for (const auto& r : rows)
    os << r.truth.row << ',' << r.truth.col << ',' << num(r.truth.ktrans) << ',' << num(r.truth.ve) << ','
       << num(r.ktrans_fit) << ',' << num(r.ve_fit) << ',' << num(r.ktrans_err_pct) << ',' << num(r.ve_err_pct)
       << '\n';
  if (!os) throw IoError("write failed: " + path.string());
}

inline void write_truth_csv(const std::vector<PatchTruth>& truth, const fs::path& path) {
  std::vector<PatchError> rows;
  for (const auto& t : truth) rows.push_back({t});
  write_truth_csv(rows, path);
}

/// Reads the truth columns (row, col, ktrans_true, ve_true) of a truth CSV.
inline std::vector<PatchTruth> read_truth_csv(const fs::path& path) {
  auto is = io_detail::open_in(path);
  std::string line;
  std::getline(is, line);
  if (io_detail::trim(line) != kTruthCsvHeader) throw ValidationError("unexpected truth CSV header in " + path.string());
  std::vector<PatchTruth> out;
  while (std::getline(is, line)) {
    if (io_detail::trim(line).empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 8) throw ValidationError("truth CSV row needs 8 columns: " + line);
    out.push_back({static_cast<std::size_t>(io_detail::parse_double(cells[0], "row")),
                   static_cast<std::size_t>(io_detail::parse_double(cells[1], "col")),
                   io_detail::parse_double(cells[2], "ktrans_true"), io_detail::parse_double(cells[3], "ve_true")});
  }
  return out;
}

}  // namespace dcekit
