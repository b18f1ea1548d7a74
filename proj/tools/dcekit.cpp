// dcekit command-line tool. Exit codes: 0 success, 2 validation error or bad
// usage, 3 runtime failure.

#include <cstdlib>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "dcekit/dcekit.hpp"
#include "dcekit/pipeline.hpp"

namespace {

using namespace dcekit;
using nlohmann::json;

constexpr int kExitValidation = 2;
constexpr int kExitRuntime = 3;

struct Common {
  std::string config;
  std::string model;
  unsigned threads = 0;  // 0: not given
  std::optional<unsigned> seed;
  std::string out;
};

/// --threads, then DCEKIT_THREADS, then the configured value.
unsigned resolve_cli_threads(unsigned flag, unsigned configured) {
  if (flag > 0) return flag;
  if (const char* env = std::getenv("DCEKIT_THREADS"); env && *env) {
    try {
      const long v = std::stol(env);
      if (v >= 1) return static_cast<unsigned>(v);
    } catch (const std::exception&) {
    }
    throw ValidationError(std::string("DCEKIT_THREADS must be a positive integer, got '") + env + "'");
  }
  return configured;
}

/// Config file (if any) with command-line flags layered on top.
PipelineConfig base_config(const Common& c) {
  PipelineConfig cfg;
  if (!c.config.empty()) cfg = pipeline_config_from_json(read_json_file(c.config));
  if (!c.model.empty()) cfg.model = parse_vif_model(c.model);
  if (c.seed) cfg.fit.rng_seed = *c.seed;
  cfg.threads = resolve_cli_threads(c.threads, cfg.threads);
  if (!c.out.empty()) cfg.out_dir = c.out;
  return cfg;
}

void add_common(CLI::App* app, Common& c, bool with_out = true) {
  app->add_option("--config", c.config, "JSON configuration file")->check(CLI::ExistingFile);
  app->add_option("--model", c.model, "VIF model")->check(CLI::IsMember({"biexp", "linear", "cubic"}));
  app->add_option("--threads", c.threads, "worker threads (default: DCEKIT_THREADS or 1)")
      ->check(CLI::PositiveNumber);
  app->add_option("--seed", c.seed, "multistart seed");
  if (with_out) app->add_option("--out", c.out, "output directory");
}

void print(const json& j) { std::cout << j.dump(2) << '\n'; }

json to_json(const PhantomLayout& l) {
  return {{"ktrans_values", l.ktrans_values}, {"ve_values", l.ve_values},
          {"patch_size", l.patch_size},       {"strip_height", l.strip_height},
          {"strip_width", l.strip_width},     {"timestamp_count", l.timestamp_count}};
}

PhantomLayout layout_from_json(const json& j) {
  PhantomLayout l;
  try {
    l.ktrans_values = j.at("ktrans_values").get<std::vector<double>>();
    l.ve_values = j.at("ve_values").get<std::vector<double>>();
    l.patch_size = j.at("patch_size").get<std::size_t>();
    l.strip_height = j.at("strip_height").get<std::size_t>();
    l.strip_width = j.at("strip_width").get<std::size_t>();
    l.timestamp_count = j.at("timestamp_count").get<std::size_t>();
  } catch (const json::exception& e) {
    throw ValidationError(std::string("bad phantom layout: ") + e.what());
  }
  l.validate();
  return l;
}

// ---- subcommands -------------------------------------------------------------

int run_fit(const Common& c, const std::string& series, const std::string& mask, const std::string& vif_mask,
            std::optional<double> t10, std::optional<std::size_t> baseline) {
  PipelineConfig cfg = base_config(c);
  if (!series.empty()) cfg.series_dir = series;
  if (!mask.empty()) cfg.mask_file = mask;
  if (!vif_mask.empty()) cfg.vif_mask_file = fs::path(vif_mask);
  if (t10) cfg.t10_s = *t10;
  if (baseline) cfg.baseline_count = *baseline;
  const auto report = run_pipeline(cfg);
  print(to_json(report));
  return 0;
}

int run_detect(const Common& c, const std::string& series) {
  PipelineConfig cfg = base_config(c);
  detail::require(!cfg.out_dir.empty(), "--out is required");
  const TimeSeries ts = load_timeseries(series);
  const std::size_t peak = select_peak_volume(ts, cfg.vif_region);
  const VoxelMask mask = detect_vif_region(ts, cfg.vif_region);
  std::error_code ec;
  fs::create_directories(cfg.out_dir, ec);
  save_mask(mask, cfg.out_dir / "vif.mask");
  print({{"peak_volume", peak}, {"voxels", mask.count()}, {"mask", (cfg.out_dir / "vif.mask").string()}});
  return 0;
}

/// Reads a CSV whose first two columns are time (minutes) and plasma concentration.
std::pair<std::vector<double>, std::vector<double>> read_curve_csv(const fs::path& p) {
  auto is = io_detail::open_in(p);
  std::string line;
  std::getline(is, line);  // header
  std::vector<double> t, cp;
  while (std::getline(is, line)) {
    if (io_detail::trim(line).empty()) continue;
    const auto cells = io_detail::parse_list(line, "curve");
    if (cells.size() < 2) throw ValidationError("curve row needs at least two columns: " + line);
    t.push_back(cells[0]);
    cp.push_back(cells[1]);
  }
  return {t, cp};
}

int run_fit_vif_curve(const Common& c, const std::string& in) {
  PipelineConfig cfg = base_config(c);
  const auto [t, cp] = read_curve_csv(in);
  const auto fit = fit_vif(cp, t, cfg.model, cfg.fit);
  json j{{"model", to_string(cfg.model)},
         {"params", dcekit::to_json(fit.params)},
         {"mse", fit.mse},
         {"iterations", fit.iterations},
         {"converged", fit.converged}};
  if (!cfg.out_dir.empty()) {
    std::error_code ec;
    fs::create_directories(cfg.out_dir, ec);
    auto os = io_detail::open_out(cfg.out_dir / "vif_fit.json");
    os << j.dump(2) << '\n';
  }
  print(j);
  return 0;
}

int run_phantom_generate(const Common& c, std::size_t timestamps, double dt, double noise) {
  detail::require(!c.out.empty(), "--out is required");
  PhantomSpec spec;
  if (!c.model.empty()) spec.kind = parse_vif_model(c.model);
  if (c.seed) spec.seed = *c.seed;
  if (timestamps > 0) spec.layout.timestamp_count = timestamps;
  if (dt > 0.0) spec.dt_s = dt;
  spec.noise_sd = noise;
  const Phantom ph = generate_phantom(spec);
  const fs::path out = c.out;
  save_study(ph.study, out);
  const Dims dims = ph.study.series.dims();
  save_mask(ph.regions.patch_mask(dims), out / "tumour.mask");
  save_mask(ph.regions.strip_mask(dims), out / "vif.mask");
  write_truth_csv(ph.truth, out / "truth.csv");
  const json meta{{"layout", to_json(spec.layout)},
                  {"model", to_string(spec.kind)},
                  {"vif", dcekit::to_json(spec.vif)},
                  {"t10_tissue_s", spec.t10_tissue_s},
                  {"t10_blood_s", spec.t10_blood_s},
                  {"m0", spec.m0},
                  {"dt_s", spec.dt_s},
                  {"noise_sd", spec.noise_sd},
                  {"seed", spec.seed}};
  {
    auto os = io_detail::open_out(out / "phantom.json");
    os << meta.dump(2) << '\n';
  }
  print({{"out", out.string()}, {"dims", io_detail::dims_text(dims)}, {"patches", ph.truth.size()},
         {"timestamps", ph.study.series.size()}});
  return 0;
}

int run_phantom_evaluate(const Common& c, const std::string& in, bool detect) {
  const fs::path dir = in;
  PipelineConfig cfg = base_config(c);
  cfg.series_dir = dir;
  cfg.mask_file = dir / "tumour.mask";
  if (!detect) cfg.vif_mask_file = dir / "vif.mask";
  if (cfg.out_dir.empty()) cfg.out_dir = dir / "eval";
  const PhantomLayout layout = layout_from_json(read_json_file(dir / "phantom.json").at("layout"));
  const auto truth = read_truth_csv(dir / "truth.csv");

  const auto report = run_pipeline(cfg);
  const ParameterMap map = load_parameter_map(cfg.out_dir / "params.pmap");
  const auto regions = parse_phantom_layout(map.dims(), layout);
  const auto errors = evaluate_fit_errors(map, regions, truth);
  write_truth_csv(errors.patches, cfg.out_dir / "errors.csv");

  auto num = [](double v) { return std::isfinite(v) ? json(v) : json(nullptr); };
  print({{"model", to_string(cfg.model)},
         {"mean_ktrans_err_pct", num(errors.mean_ktrans_err_pct)},
         {"mean_ve_err_pct", num(errors.mean_ve_err_pct)},
         {"missing_patches", errors.missing_patches},
         {"tissue_fit_seconds", report.stage_seconds("tissue-fit")},
         {"errors_csv", (cfg.out_dir / "errors.csv").string()}});
  if (errors.missing_patches > 0)
    std::cerr << "warning: " << errors.missing_patches << " patch(es) without converged voxels were excluded\n";
  return 0;
}

int run_compare_masks(const std::string& a, const std::string& b) {
  const VoxelMask pred = load_mask(a);
  const VoxelMask truth = load_mask(b);
  const auto cc = confusion(pred, truth);
  auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
  print({{"tp", cc.tp},
         {"fp", cc.fp},
         {"fn", cc.fn},
         {"tn", cc.tn},
         {"dice", opt(dice(cc))},
         {"sensitivity", opt(sensitivity(cc))},
         {"specificity", opt(specificity(cc))},
         {"precision", opt(precision(cc))},
         {"fn_frame_rate", opt(fn_frame_rate(pred, truth))}});
  return 0;
}

int run_histogram(const std::string& map_file, const std::string& mask_file, const std::string& field) {
  const ParameterMap map = load_parameter_map(map_file);
  const VoxelMask mask = load_mask(mask_file);
  print(dcekit::to_json(histogram_features(map, parse_map_field(field), mask)));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dcekit: DCE-MRI pharmacokinetic analysis"};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);

  Common common;
  std::string series, mask, vif_mask, in, field = "ktrans", map_file;
  std::optional<double> t10;
  std::optional<std::size_t> baseline;
  std::size_t timestamps = 0;
  double dt = 0.0, noise = 0.0;
  bool detect = false;
  std::string mask_a, mask_b;

  auto* fit = app.add_subcommand("fit", "full pipeline on a study directory");
  add_common(fit, common);
  fit->add_option("--series", series, "study directory")->check(CLI::ExistingDirectory);
  fit->add_option("--mask", mask, "tumour mask file");
  fit->add_option("--vif-mask", vif_mask, "vascular mask; skips automatic detection");
  fit->add_option("--t10", t10, "uniform T10 in seconds when the study has no VFA volumes");
  fit->add_option("--baseline", baseline, "number of pre-contrast baseline frames");

  auto* detect_cmd = app.add_subcommand("detect-vif", "detect the vascular input region");
  add_common(detect_cmd, common);
  detect_cmd->add_option("--series", series, "study directory")->required()->check(CLI::ExistingDirectory);

  auto* fvc = app.add_subcommand("fit-vif-curve", "fit a VIF model to a CSV plasma curve (t_min, cp)");
  add_common(fvc, common);
  fvc->add_option("--in", in, "curve CSV")->required()->check(CLI::ExistingFile);

  auto* phantom = app.add_subcommand("phantom", "digital reference phantom");
  phantom->require_subcommand(1);
  auto* gen = phantom->add_subcommand("generate", "write a phantom study");
  add_common(gen, common);
  gen->add_option("--timestamps", timestamps, "number of timestamps (default 661)")->check(CLI::Range(2, 100000));
  gen->add_option("--dt", dt, "timestamp spacing in seconds (default 0.5)")->check(CLI::PositiveNumber);
  gen->add_option("--noise", noise, "additive Gaussian noise SD on signals")->check(CLI::NonNegativeNumber);
  auto* eval = phantom->add_subcommand("evaluate", "fit a phantom study and compare with its truth table");
  add_common(eval, common);
  eval->add_option("--in", in, "phantom directory")->required()->check(CLI::ExistingDirectory);
  eval->add_flag("--detect-vif", detect, "detect the vascular region instead of using vif.mask");

  auto* metrics = app.add_subcommand("metrics", "segmentation and map statistics");
  metrics->require_subcommand(1);
  auto* cmp = metrics->add_subcommand("compare-masks", "confusion counts and agreement scores");
  cmp->add_option("pred", mask_a, "predicted mask")->required();
  cmp->add_option("truth", mask_b, "reference mask")->required();
  auto* hist = metrics->add_subcommand("histogram", "histogram features of a parameter map");
  hist->add_option("--map", map_file, "params.pmap file")->required();
  hist->add_option("--mask", mask, "mask file")->required();
  hist->add_option("--field", field, "ktrans, ve or kep")->check(CLI::IsMember({"ktrans", "ve", "kep"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    std::cerr << app.help();
    return kExitValidation;
  }

  try {
    if (*fit) return run_fit(common, series, mask, vif_mask, t10, baseline);
    if (*detect_cmd) return run_detect(common, series);
    if (*fvc) return run_fit_vif_curve(common, in);
    if (*gen) return run_phantom_generate(common, timestamps, dt, noise);
    if (*eval) return run_phantom_evaluate(common, in, detect);
    if (*cmp) return run_compare_masks(mask_a, mask_b);
    if (*hist) return run_histogram(map_file, mask, field);
  } catch (const StageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.validation() ? kExitValidation : kExitRuntime;
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitValidation;
}
