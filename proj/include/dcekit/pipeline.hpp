#pragma once

// End-to-end run: load -> segmentation-input -> t10 -> vif-region ->
// vif-curve -> vif-fit -> tissue-fit -> histogram -> write.
// Requires nlohmann/json.

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dcekit/error.hpp"
#include "dcekit/fitting.hpp"
#include "dcekit/io.hpp"
#include "dcekit/metrics.hpp"
#include "dcekit/relaxometry.hpp"
#include "dcekit/vif_models.hpp"
#include "dcekit/vif_region.hpp"
#include "dcekit/volume.hpp"

#ifndef DCEKIT_VERSION
#define DCEKIT_VERSION "0.0.0"
#endif

namespace dcekit {

inline constexpr const char* kVersion = DCEKIT_VERSION;

struct AcquisitionOverrides {
  std::optional<double> tr_s;
  std::optional<std::vector<double>> flip_angles_deg;
  std::optional<double> relaxivity_r1;
  std::optional<double> haematocrit;

  void apply(AcquisitionParams& acq) const {
    if (tr_s) acq.tr_s = *tr_s;
    if (flip_angles_deg) acq.flip_angles_deg = *flip_angles_deg;
    if (relaxivity_r1) acq.relaxivity_r1 = *relaxivity_r1;
    if (haematocrit) acq.haematocrit = *haematocrit;
  }
};

struct PipelineConfig {
  fs::path series_dir;
  fs::path mask_file;  // tumour mask; segmentation itself is external
  fs::path out_dir;
  std::optional<fs::path> vif_mask_file;  // skips automatic detection when set
  VifModelKind model = VifModelKind::Cubic;
  VifRegionConfig vif_region;
  FitConfig fit;
  AcquisitionOverrides acq;
  std::optional<double> t10_s;  // uniform T10 when the study has no VFA volumes
  std::size_t baseline_count = 1;
  unsigned threads = 1;
  bool write_csv = true;
  bool write_json = true;

  void validate() const {
    detail::require(!series_dir.empty(), "series directory is required");
    detail::require(!mask_file.empty(), "tumour mask file is required");
    detail::require(!out_dir.empty(), "output directory is required");
    vif_region.validate();
    fit.validate();
    if (t10_s) detail::require(*t10_s > 0.0, "t10_s must be > 0");
    detail::require(write_csv || write_json, "at least one report format is required");
  }
};

/// A failure tagged with the stage it happened in. `validation` separates bad
/// input from runtime failures (for exit codes).
class StageError : public std::runtime_error {
 public:
  StageError(std::string stage, const std::string& what, bool validation)
      : std::runtime_error(stage + ": " + what), stage_(std::move(stage)), validation_(validation) {}
  [[nodiscard]] const std::string& stage() const noexcept { return stage_; }
  [[nodiscard]] bool validation() const noexcept { return validation_; }

 private:
  std::string stage_;
  bool validation_;
};

struct StageTiming {
  std::string stage;
  double seconds = 0.0;
};

struct MapSummary {
  std::size_t masked_voxels = 0;
  std::size_t fitted_voxels = 0;
  std::size_t converged_voxels = 0;
  double mean_ktrans = kNaN;
  double mean_ve = kNaN;
  double mean_kep = kNaN;
  double mean_mse = kNaN;
};

struct RunReport {
  std::vector<StageTiming> stages;
  VifModelKind model = VifModelKind::Cubic;
  FitResult<VifParams> vif;
  std::size_t vif_voxels = 0;
  MapSummary map;
  std::optional<HistogramFeatures> ktrans_histogram;
  std::optional<HistogramFeatures> ve_histogram;
  std::string version = kVersion;
  nlohmann::json config;
  std::vector<fs::path> artifacts;

  [[nodiscard]] double stage_seconds(std::string_view name) const {
    for (const auto& s : stages)
      if (s.stage == name) return s.seconds;
    return kNaN;
  }
};

// ---- configuration <-> JSON -------------------------------------------------

namespace pipeline_detail {

inline void reject_unknown(const nlohmann::json& j, std::initializer_list<std::string_view> allowed,
                           std::string_view where) {
  if (!j.is_object()) throw ValidationError(std::string(where) + " must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (auto a : allowed) ok = ok || key == a;
    if (!ok) throw ValidationError("unknown config key '" + key + "' in " + std::string(where));
  }
}

template <class T>
void read_opt(const nlohmann::json& j, const char* key, T& out) {
  if (auto it = j.find(key); it != j.end()) {
    try {
      out = it->get<T>();
    } catch (const nlohmann::json::exception&) {
      throw ValidationError(std::string("config key '") + key + "' has the wrong type");
    }
  }
}

}  // namespace pipeline_detail

inline nlohmann::json to_json(const FitConfig& c) {
  return {{"max_iterations", c.max_iterations}, {"gradient_tol", c.gradient_tol},
          {"step_tol", c.step_tol},             {"residual_tol", c.residual_tol},
          {"multistart_count", c.multistart_count}, {"rng_seed", c.rng_seed},
          {"ktrans_min", c.ktrans_min},         {"ktrans_max", c.ktrans_max},
          {"ve_min", c.ve_min},                 {"ve_max", c.ve_max},
          {"rate_min", c.rate_min},             {"rate_max", c.rate_max},
          {"amp_min", c.amp_min},               {"amp_max", c.amp_max}};
}

inline FitConfig fit_config_from_json(const nlohmann::json& j, FitConfig c = {}) {
  using pipeline_detail::read_opt;
  pipeline_detail::reject_unknown(j,
                                  {"max_iterations", "gradient_tol", "step_tol", "residual_tol", "multistart_count",
                                   "rng_seed", "ktrans_min", "ktrans_max", "ve_min", "ve_max", "rate_min", "rate_max",
                                   "amp_min", "amp_max"},
                                  "fit");
  read_opt(j, "max_iterations", c.max_iterations);
  read_opt(j, "gradient_tol", c.gradient_tol);
  read_opt(j, "step_tol", c.step_tol);
  read_opt(j, "residual_tol", c.residual_tol);
  read_opt(j, "multistart_count", c.multistart_count);
  read_opt(j, "rng_seed", c.rng_seed);
  read_opt(j, "ktrans_min", c.ktrans_min);
  read_opt(j, "ktrans_max", c.ktrans_max);
  read_opt(j, "ve_min", c.ve_min);
  read_opt(j, "ve_max", c.ve_max);
  read_opt(j, "rate_min", c.rate_min);
  read_opt(j, "rate_max", c.rate_max);
  read_opt(j, "amp_min", c.amp_min);
  read_opt(j, "amp_max", c.amp_max);
  c.validate();
  return c;
}

inline nlohmann::json to_json(const VifRegionConfig& c) {
  nlohmann::json j{{"intensity_fraction", c.intensity_fraction},
                   {"lower_fraction", c.lower_fraction},
                   {"shape_threshold", c.shape_threshold},
                   {"connectivity_2d", c.connectivity_2d},
                   {"connectivity_3d", c.connectivity_3d}};
  if (c.crop) j["crop"] = {c.crop->x0, c.crop->x1, c.crop->y0, c.crop->y1, c.crop->z0, c.crop->z1};
  return j;
}

inline VifRegionConfig vif_region_config_from_json(const nlohmann::json& j, VifRegionConfig c = {}) {
  using pipeline_detail::read_opt;
  pipeline_detail::reject_unknown(
      j, {"intensity_fraction", "lower_fraction", "shape_threshold", "connectivity_2d", "connectivity_3d", "crop"},
      "vif_region");
  read_opt(j, "intensity_fraction", c.intensity_fraction);
  read_opt(j, "lower_fraction", c.lower_fraction);
  read_opt(j, "shape_threshold", c.shape_threshold);
  read_opt(j, "connectivity_2d", c.connectivity_2d);
  read_opt(j, "connectivity_3d", c.connectivity_3d);
  if (auto it = j.find("crop"); it != j.end()) {
    std::vector<std::size_t> v;
    read_opt(j, "crop", v);
    if (v.size() != 6) throw ValidationError("crop needs six entries x0,x1,y0,y1,z0,z1");
    c.crop = CropBox{v[0], v[1], v[2], v[3], v[4], v[5]};
  }
  c.validate();
  return c;
}

inline nlohmann::json to_json(const PipelineConfig& c) {
  nlohmann::json acq = nlohmann::json::object();
  if (c.acq.tr_s) acq["tr_s"] = *c.acq.tr_s;
  if (c.acq.flip_angles_deg) acq["flip_angles_deg"] = *c.acq.flip_angles_deg;
  if (c.acq.relaxivity_r1) acq["r1"] = *c.acq.relaxivity_r1;
  if (c.acq.haematocrit) acq["htc"] = *c.acq.haematocrit;
  nlohmann::json reports = nlohmann::json::array();
  if (c.write_csv) reports.push_back("csv");
  if (c.write_json) reports.push_back("json");
  nlohmann::json j{{"series_dir", c.series_dir.string()},
                   {"mask", c.mask_file.string()},
                   {"out", c.out_dir.string()},
                   {"model", to_string(c.model)},
                   {"threads", c.threads},
                   {"baseline_count", c.baseline_count},
                   {"acquisition", acq},
                   {"vif_region", to_json(c.vif_region)},
                   {"fit", to_json(c.fit)},
                   {"reports", reports}};
  if (c.vif_mask_file) j["vif_mask"] = c.vif_mask_file->string();
  if (c.t10_s) j["t10_s"] = *c.t10_s;
  return j;
}

/// Fields absent from `j` keep their value in `base`. Unknown keys are errors.
inline PipelineConfig pipeline_config_from_json(const nlohmann::json& j, PipelineConfig c = {}) {
  using pipeline_detail::read_opt;
  pipeline_detail::reject_unknown(j,
                                  {"series_dir", "mask", "out", "vif_mask", "model", "threads", "baseline_count",
                                   "t10_s", "acquisition", "vif_region", "fit", "reports"},
                                  "config");
  std::string s;
  if (j.contains("series_dir")) read_opt(j, "series_dir", s), c.series_dir = s;
  if (j.contains("mask")) read_opt(j, "mask", s), c.mask_file = s;
  if (j.contains("out")) read_opt(j, "out", s), c.out_dir = s;
  if (j.contains("vif_mask")) read_opt(j, "vif_mask", s), c.vif_mask_file = fs::path(s);
  if (j.contains("model")) read_opt(j, "model", s), c.model = parse_vif_model(s);
  read_opt(j, "threads", c.threads);
  read_opt(j, "baseline_count", c.baseline_count);
  if (j.contains("t10_s")) {
    double t = 0.0;
    read_opt(j, "t10_s", t);
    c.t10_s = t;
  }
  if (auto it = j.find("acquisition"); it != j.end()) {
    pipeline_detail::reject_unknown(*it, {"tr_s", "flip_angles_deg", "r1", "htc"}, "acquisition");
    double v = 0.0;
    if (it->contains("tr_s")) read_opt(*it, "tr_s", v), c.acq.tr_s = v;
    if (it->contains("r1")) read_opt(*it, "r1", v), c.acq.relaxivity_r1 = v;
    if (it->contains("htc")) read_opt(*it, "htc", v), c.acq.haematocrit = v;
    if (it->contains("flip_angles_deg")) {
      std::vector<double> f;
      read_opt(*it, "flip_angles_deg", f);
      c.acq.flip_angles_deg = f;
    }
  }
  if (auto it = j.find("vif_region"); it != j.end()) c.vif_region = vif_region_config_from_json(*it, c.vif_region);
  if (auto it = j.find("fit"); it != j.end()) c.fit = fit_config_from_json(*it, c.fit);
  if (auto it = j.find("reports"); it != j.end()) {
    std::vector<std::string> r;
    read_opt(j, "reports", r);
    c.write_csv = c.write_json = false;
    for (const auto& f : r) {
      if (f == "csv") c.write_csv = true;
      else if (f == "json") c.write_json = true;
      else throw ValidationError("unknown report format '" + f + "' (expected csv or json)");
    }
  }
  return c;
}

inline nlohmann::json read_json_file(const fs::path& p) {
  auto is = io_detail::open_in(p);
  try {
    return nlohmann::json::parse(is);
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError("cannot parse " + p.string() + ": " + e.what());
  }
}

inline nlohmann::json to_json(const HistogramFeatures& f) {
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
  return {{"count", f.count}, {"mean", f.mean}, {"std", f.std}, {"skewness", opt(f.skewness)},
          {"kurtosis", opt(f.kurtosis)}};
}

inline nlohmann::json to_json(const VifParams& p) {
  return {{"a", p.a}, {"b", p.b}, {"alpha", p.alpha}, {"beta", p.beta}};
}

inline nlohmann::json to_json(const RunReport& r) {
  auto num = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); };
  nlohmann::json stages = nlohmann::json::array();
  for (const auto& s : r.stages) stages.push_back({{"stage", s.stage}, {"seconds", s.seconds}});
  nlohmann::json j{
      {"version", r.version},
      {"stages", stages},
      {"vif",
       {{"model", to_string(r.model)},
        {"params", to_json(r.vif.params)},
        {"mse", num(r.vif.mse)},
        {"iterations", r.vif.iterations},
        {"converged", r.vif.converged},
        {"region_voxels", r.vif_voxels}}},
      {"map",
       {{"masked_voxels", r.map.masked_voxels},
        {"fitted_voxels", r.map.fitted_voxels},
        {"converged_voxels", r.map.converged_voxels},
        {"mean_ktrans", num(r.map.mean_ktrans)},
        {"mean_ve", num(r.map.mean_ve)},
        {"mean_kep", num(r.map.mean_kep)},
        {"mean_mse", num(r.map.mean_mse)}}},
      {"histogram",
       {{"ktrans", r.ktrans_histogram ? to_json(*r.ktrans_histogram) : nlohmann::json(nullptr)},
        {"ve", r.ve_histogram ? to_json(*r.ve_histogram) : nlohmann::json(nullptr)}}},
      {"config", r.config}};
  return j;
}

// ---- run ---------------------------------------------------------------------

namespace pipeline_detail {

/// Float32 map of one field; NaN outside the fitted voxels.
inline void write_field_f32(const ParameterMap& map, MapField field, const fs::path& p) {
  auto os = io_detail::open_out(p);
  for (const auto& v : map.voxels()) {
    const double d = field == MapField::Ktrans ? v.params.ktrans : field == MapField::Ve ? v.params.ve : v.params.kep;
    io_detail::write_le(os, static_cast<float>(d));
  }
  if (!os) throw IoError("write failed: " + p.string());
}

inline MapSummary summarize(const ParameterMap& map, const VoxelMask& mask) {
  MapSummary s;
  s.masked_voxels = mask.count();
  double sk = 0, sv = 0, sp = 0, sm = 0;
  for (std::size_t i = 0; i < map.size(); ++i) {
    const auto& v = map[i];
    if (!mask[i] || !std::isfinite(v.params.ktrans)) continue;
    ++s.fitted_voxels;
    if (v.converged) ++s.converged_voxels;
    sk += v.params.ktrans;
    sv += v.params.ve;
    sp += v.params.kep;
    sm += v.mse;
  }
  if (s.fitted_voxels) {
    const double n = static_cast<double>(s.fitted_voxels);
    s.mean_ktrans = sk / n;
    s.mean_ve = sv / n;
    s.mean_kep = sp / n;
    s.mean_mse = sm / n;
  }
  return s;
}

inline std::optional<HistogramFeatures> maybe_histogram(const ParameterMap& map, MapField field,
                                                        const VoxelMask& mask) {
  const auto values = masked_values(map, field, mask);
  if (values.size() < 3) return std::nullopt;
  return histogram_features(values);
}

inline std::string csv_num(double v) { return std::isfinite(v) ? io_detail::format_double(v) : "nan"; }

inline void write_report_csv(const RunReport& r, const fs::path& p) {
  auto os = io_detail::open_out(p);
  os << "key,value\n";
  os << "version," << r.version << '\n';
  for (const auto& s : r.stages) os << "stage_seconds." << s.stage << ',' << csv_num(s.seconds) << '\n';
  os << "vif.model," << to_string(r.model) << '\n'
     << "vif.a," << csv_num(r.vif.params.a) << '\n'
     << "vif.b," << csv_num(r.vif.params.b) << '\n'
     << "vif.alpha," << csv_num(r.vif.params.alpha) << '\n'
     << "vif.beta," << csv_num(r.vif.params.beta) << '\n'
     << "vif.mse," << csv_num(r.vif.mse) << '\n'
     << "vif.converged," << (r.vif.converged ? 1 : 0) << '\n'
     << "vif.region_voxels," << r.vif_voxels << '\n'
     << "map.masked_voxels," << r.map.masked_voxels << '\n'
     << "map.fitted_voxels," << r.map.fitted_voxels << '\n'
     << "map.converged_voxels," << r.map.converged_voxels << '\n'
     << "map.mean_ktrans," << csv_num(r.map.mean_ktrans) << '\n'
     << "map.mean_ve," << csv_num(r.map.mean_ve) << '\n'
     << "map.mean_kep," << csv_num(r.map.mean_kep) << '\n'
     << "map.mean_mse," << csv_num(r.map.mean_mse) << '\n';
  auto hist = [&](const char* name, const std::optional<HistogramFeatures>& h) {
    if (!h) return;
    os << "histogram." << name << ".count," << h->count << '\n'
       << "histogram." << name << ".mean," << csv_num(h->mean) << '\n'
       << "histogram." << name << ".std," << csv_num(h->std) << '\n'
       << "histogram." << name << ".skewness," << csv_num(h->skewness.value_or(kNaN)) << '\n'
       << "histogram." << name << ".kurtosis," << csv_num(h->kurtosis.value_or(kNaN)) << '\n';
  };
  hist("ktrans", r.ktrans_histogram);
  hist("ve", r.ve_histogram);
  if (!os) throw IoError("write failed: " + p.string());
}

inline void write_vif_curve_csv(const PlasmaCurve& curve, VifModelKind kind, const VifParams& vif, const fs::path& p) {
  auto os = io_detail::open_out(p);
  os << "t_min,cp_measured,cp_fitted\n";
  for (std::size_t k = 0; k < curve.times_min.size(); ++k)
    os << csv_num(curve.times_min[k]) << ',' << csv_num(curve.cp[k]) << ','
       << csv_num(eval_vif(kind, vif, curve.times_min[k])) << '\n';
  if (!os) throw IoError("write failed: " + p.string());
}

/// Deletes the files it recorded unless released.
class ArtifactGuard {
 public:
  ArtifactGuard() = default;
  ArtifactGuard(const ArtifactGuard&) = delete;
  ArtifactGuard& operator=(const ArtifactGuard&) = delete;
  ~ArtifactGuard() {
    if (released_) return;
    std::error_code ec;
    for (const auto& p : files_) fs::remove(p, ec);
    if (!created_dir_.empty()) fs::remove(created_dir_, ec);  // only if still empty
  }
  void created_dir(fs::path p) { created_dir_ = std::move(p); }
  // Paths that exist but are not regular files were never ours to write.
  fs::path add(fs::path p) {
    std::error_code ec;
    if (!fs::exists(p, ec) || fs::is_regular_file(p, ec)) files_.push_back(p);
    return p;
  }
  std::vector<fs::path> release() {
    released_ = true;
    return files_;
  }

 private:
  std::vector<fs::path> files_;
  fs::path created_dir_;
  bool released_ = false;
};

}  // namespace pipeline_detail

/// Runs every stage; on failure throws StageError and removes the artifacts
/// written so far.
inline RunReport run_pipeline(const PipelineConfig& cfg) {
  using Clock = std::chrono::steady_clock;
  RunReport report;
  report.model = cfg.model;
  report.config = to_json(cfg);

  auto stage = [&](const char* name, auto&& body) {
    const auto t0 = Clock::now();
    try {
      body();
    } catch (const StageError&) {
      throw;
    } catch (const ValidationError& e) {
      throw StageError(name, e.what(), true);
    } catch (const std::exception& e) {
      throw StageError(name, e.what(), false);
    }
    report.stages.push_back({name, std::chrono::duration<double>(Clock::now() - t0).count()});
  };

  stage("config", [&] { cfg.validate(); });

  Study study;
  stage("load", [&] {
    study = load_study(cfg.series_dir);
    cfg.acq.apply(study.acq);
    study.acq.validate();
  });

  VoxelMask tumour;
  stage("segmentation-input", [&] {
    if (!fs::exists(cfg.mask_file)) throw IoError("missing mask file " + cfg.mask_file.string());
    tumour = load_mask(cfg.mask_file);
    detail::require(tumour.dims() == study.series.dims(), "tumour mask dims " + to_string(tumour.dims()) +
                                                              " do not match the series " +
                                                              to_string(study.series.dims()));
  });

  T10Map t10;
  stage("t10", [&] {
    if (!study.vfa.empty()) {
      t10 = estimate_t10_vfa(study.vfa, study.acq);
    } else {
      const auto uniform = cfg.t10_s ? cfg.t10_s : study.t10_s;
      detail::require(uniform.has_value(), "study has no VFA volumes and no t10_s was given");
      detail::require(cfg.baseline_count > 0, "a uniform T10 needs baseline_count >= 1 to derive M0");
      t10 = T10Map::uniform(study.series.dims(), *uniform);
    }
  });

  VoxelMask vif_mask;
  stage("vif-region", [&] {
    if (cfg.vif_mask_file) {
      vif_mask = load_mask(*cfg.vif_mask_file);
      detail::require(vif_mask.dims() == study.series.dims(), "vascular mask dims do not match the series");
    } else {
      vif_mask = detect_vif_region(study.series, cfg.vif_region);
    }
    report.vif_voxels = vif_mask.count();
  });

  PlasmaCurve plasma;
  stage("vif-curve", [&] {
    plasma = extract_vif_curve(study.series, vif_mask, t10, study.acq, cfg.baseline_count);
    for (double c : plasma.cp)
      if (!std::isfinite(c)) throw ValidationError("vascular signal could not be converted to concentration");
  });

  stage("vif-fit", [&] { report.vif = fit_vif(plasma.cp, plasma.times_min, cfg.model, cfg.fit); });

  ParameterMap map;
  stage("tissue-fit", [&] {
    const auto conc = signal_to_concentration(study.series, t10, study.acq, cfg.baseline_count, &tumour);
    map = fit_tissue_map(conc, tumour, cfg.model, report.vif.params, cfg.fit, cfg.threads);
    report.map = pipeline_detail::summarize(map, tumour);
  });

  stage("histogram", [&] {
    report.ktrans_histogram = pipeline_detail::maybe_histogram(map, MapField::Ktrans, tumour);
    report.ve_histogram = pipeline_detail::maybe_histogram(map, MapField::Ve, tumour);
  });

  pipeline_detail::ArtifactGuard guard;
  stage("write", [&] {
    if (!fs::exists(cfg.out_dir)) {
      std::error_code ec;
      fs::create_directories(cfg.out_dir, ec);
      if (ec) throw IoError("cannot create " + cfg.out_dir.string());
      guard.created_dir(cfg.out_dir);
    }
    const auto& out = cfg.out_dir;
    save_parameter_map(map, guard.add(out / "params.pmap"));
    pipeline_detail::write_field_f32(map, MapField::Ktrans, guard.add(out / "ktrans.f32"));
    pipeline_detail::write_field_f32(map, MapField::Ve, guard.add(out / "ve.f32"));
    pipeline_detail::write_field_f32(map, MapField::Kep, guard.add(out / "kep.f32"));
    save_mask(vif_mask, guard.add(out / "vif.mask"));
    pipeline_detail::write_vif_curve_csv(plasma, cfg.model, report.vif.params, guard.add(out / "vif_curve.csv"));
  });

  // The report is written last so its timings cover every stage.
  try {
    if (cfg.write_csv) pipeline_detail::write_report_csv(report, guard.add(cfg.out_dir / "report.csv"));
    if (cfg.write_json) {
      auto os = io_detail::open_out(guard.add(cfg.out_dir / "report.json"));
      os << to_json(report).dump(2) << '\n';
      if (!os) throw IoError("write failed: report.json");
    }
  } catch (const std::exception& e) {
    throw StageError("write", e.what(), false);
  }
  report.artifacts = guard.release();
  return report;
}

}  // namespace dcekit
