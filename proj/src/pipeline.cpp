#include "recon/pipeline.hpp"

#include <filesystem>
#include <sstream>

#include "json.hpp"
#include "recon/epipolar.hpp"
#include "recon/errors.hpp"
#include "recon/io_util.hpp"
#include "recon/log.hpp"
#include "recon/raster.hpp"

namespace recon {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

void ensure_out_dir(const std::string& out_dir) {
  if (out_dir.empty()) throw ConfigError("an output directory is required (--out)");
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create output directory " + out_dir + ": " + ec.message());
}

std::string join(const std::string& dir, const std::string& name) {
  return (fs::path(dir) / name).string();
}

std::vector<BinaryImage> load_view_images(const std::string& dir, std::size_t n_views) {
  if (dir.empty()) throw ConfigError("an image directory is required (--images)");
  std::vector<BinaryImage> images;
  for (std::size_t v = 0; v < n_views; ++v) {
    const std::string path = join(dir, "view_" + std::to_string(v) + ".pgm");
    if (!fs::exists(path)) throw ConfigError("missing image: " + path);
    images.push_back(read_pgm(path));
  }
  return images;
}

struct WarmStartArtifacts {
  WarmStartPoints points;
  std::vector<Skeleton> skeletons;
};

WarmStartArtifacts run_epipolar_pipeline(const Scenario& scenario,
                                         const std::vector<BinaryImage>& images) {
  if (images.size() < 2) throw ConfigError("epipolar warm start needs at least two views");
  WarmStartArtifacts out;
  for (std::size_t v = 0; v < images.size(); ++v) {
    const Eigen::Vector2d base_hint =
        project(scenario.rig.cameras[v], scenario.truth.base_position);
    out.skeletons.push_back(order_path(skeletonize(images[v]), base_hint, static_cast<int>(v)));
    log::info("view ", v, ": skeleton of ", out.skeletons.back().path.size(), " px");
  }
  const CorrespondenceResult match =
      correspond_epipolar(out.skeletons[0], out.skeletons[1], scenario.rig);
  log::info("epipolar matching: ", match.pairs.size(), " pairs, ", match.skipped_left,
            " skipped");
  out.points = build_warmstart(match.pairs, scenario.rig, scenario.truth.base_position);
  return out;
}

}  // namespace

LoadedInputs load_and_validate(const RunConfig& config, bool need_solver) {
  LoadedInputs inputs;
  if (config.scenario_path.empty()) throw ConfigError("a scenario file is required (--scenario)");
  if (!fs::exists(config.scenario_path)) {
    throw ConfigError("scenario file does not exist: " + config.scenario_path);
  }
  inputs.scenario = load_scenario(config.scenario_path);
  if (!config.calib_path.empty()) {
    if (!fs::exists(config.calib_path)) {
      throw ConfigError("calibration file does not exist: " + config.calib_path);
    }
    const CameraRig rig = load_calibration(config.calib_path);
    for (const CameraModel& cam : rig.cameras) {
      if (cam.width != inputs.scenario.image_width ||
          cam.height != inputs.scenario.image_height) {
        throw ConfigError("calibration image size differs from the scenario");
      }
    }
    inputs.scenario.rig = rig;
    inputs.scenario.validate();
  }
  if (need_solver) {
    if (!config.solver_config_path.empty()) {
      if (!fs::exists(config.solver_config_path)) {
        throw ConfigError("solver config does not exist: " + config.solver_config_path);
      }
      inputs.solver = load_solver_config(config.solver_config_path);
    }
    if (config.seed.has_value()) inputs.solver.seed = *config.seed;
    inputs.solver.validate();
  }
  return inputs;
}

void write_theta_json(const CurveParams& params, const SegmentGrid& grid,
                      const SolverConfig& config, const SolveTrace& trace,
                      const std::string& path) {
  json root;
  root["grid"] = grid.boundaries;
  root["theta"] =
      std::vector<double>(params.theta.data(), params.theta.data() + params.theta.size());
  root["base_position"] = {params.base_position.x(), params.base_position.y(),
                           params.base_position.z()};
  json jr = json::array();
  for (int r = 0; r < 3; ++r) {
    jr.push_back({params.base_orientation(r, 0), params.base_orientation(r, 1),
                  params.base_orientation(r, 2)});
  }
  root["base_orientation"] = jr;
  root["method"] = config.method;
  root["p"] = config.p;
  root["seed"] = config.seed;
  root["final_cost"] = trace.final_full_cost;
  root["converged"] = trace.converged;
  root["reason"] = trace.reason;
  write_text_file(path, root.dump(2) + "\n");
}

CurveParams read_theta_json(const std::string& path, SegmentGrid* grid_out) {
  json root;
  try {
    root = json::parse(read_text_file(path));
  } catch (const json::exception& e) {
    throw ConfigError(std::string("theta JSON parse error: ") + e.what());
  }
  CurveParams params;
  const auto theta = root["theta"].get<std::vector<double>>();
  params.theta = Eigen::Map<const Eigen::VectorXd>(theta.data(), theta.size());
  for (int i = 0; i < 3; ++i) params.base_position[i] = root["base_position"][i].get<double>();
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) {
      params.base_orientation(r, c) = root["base_orientation"][r][c].get<double>();
    }
  }
  if (grid_out != nullptr) {
    *grid_out = SegmentGrid::from_boundaries(root["grid"].get<std::vector<double>>());
  }
  return params;
}

void run_simulate(const RunConfig& config) {
  LoadedInputs inputs = load_and_validate(config, false);
  ensure_out_dir(config.out_dir);
  Scenario& sc = inputs.scenario;
  const int radius = config.dilation_radius.value_or(sc.dilation_radius);
  if (radius < 0) throw ConfigError("dilation radius must be non-negative");

  IntegrateOptions opt;
  opt.method = IntegratorKind::rk45_adaptive;
  const double length = sc.grid.total_length();
  const CurveSamples truth_samples = integrate_frame(
      sc.truth, sc.grid, linspace(0.0, length, evaluation_sample_count()), opt);
  write_samples_csv(truth_samples, join(config.out_dir, "truth.csv"));

  const CurveSamples dense =
      integrate_frame(sc.truth, sc.grid, linspace(0.0, length, 8000), opt);
  RasterResult raster = rasterize_curve(sc.rig, dense, sc.image_width, sc.image_height);
  for (std::size_t v = 0; v < raster.images.size(); ++v) {
    const BinaryImage img = dilate(raster.images[v], radius);
    write_pgm(img, join(config.out_dir, "view_" + std::to_string(v) + ".pgm"));
    log::info("view ", v, ": ", img.count_white(), " white px, ", raster.skipped[v],
              " samples out of frame");
  }
}

void run_warmstart(const RunConfig& config) {
  LoadedInputs inputs = load_and_validate(config, false);
  const std::vector<BinaryImage> images =
      load_view_images(config.images_dir, inputs.scenario.rig.cameras.size());
  ensure_out_dir(config.out_dir);

  const WarmStartArtifacts ws = run_epipolar_pipeline(inputs.scenario, images);
  for (std::size_t v = 0; v < ws.skeletons.size(); ++v) {
    write_skeleton_csv(ws.skeletons[v], join(config.out_dir, "skeleton_" + std::to_string(v) +
                                                                 ".csv"));
  }
  write_warmstart_csv(ws.points, join(config.out_dir, "warmstart.csv"));

  CurveParams base = CurveParams::zero(inputs.scenario.grid.segment_count());
  base.base_position = inputs.scenario.truth.base_position;
  base.base_orientation = inputs.scenario.truth.base_orientation;
  const FitResult fit = fit_initial_guess(ws.points, inputs.scenario.grid, base);
  log::info("warm-start fit: rms ", fmt_g17(fit.rms_mm), " mm in ", fit.iterations,
            " iterations");
  SolverConfig dummy;
  SolveTrace empty;
  empty.converged = !fit.quality_warning;
  empty.reason = fit.quality_warning ? "warmstart_quality_warning" : "warmstart_fit";
  write_theta_json(fit.params, inputs.scenario.grid, dummy, empty,
                   join(config.out_dir, "theta0.json"));
}

void run_reconstruct(const RunConfig& config) {
  LoadedInputs inputs = load_and_validate(config, true);
  const Scenario& sc = inputs.scenario;
  const std::vector<BinaryImage> images =
      load_view_images(config.images_dir, sc.rig.cameras.size());
  if (!config.warmstart.empty() && config.warmstart != "none" &&
      config.warmstart != "epipolar" && config.warmstart.rfind("file:", 0) != 0) {
    throw ConfigError("unknown warm start mode: " + config.warmstart);
  }
  if (config.warmstart.rfind("file:", 0) == 0) {
    const std::string path = config.warmstart.substr(5);
    if (!fs::exists(path)) throw ConfigError("warm-start file does not exist: " + path);
  }
  ensure_out_dir(config.out_dir);

  IcpProblem problem;
  problem.rig = sc.rig;
  problem.grid = sc.grid;
  problem.p = inputs.solver.p;
  problem.n_nodes = inputs.solver.n_nodes;
  problem.initial = CurveParams::zero(sc.grid.segment_count());
  problem.initial.base_position = sc.truth.base_position;
  problem.initial.base_orientation = sc.truth.base_orientation;
  for (std::size_t v = 0; v < images.size(); ++v) {
    problem.pixel_sets.push_back(extract_pixels(images[v], static_cast<int>(v)));
  }

  if (config.warmstart == "epipolar") {
    const WarmStartArtifacts ws = run_epipolar_pipeline(sc, images);
    write_warmstart_csv(ws.points, join(config.out_dir, "warmstart.csv"));
    problem.initial = fit_initial_guess(ws.points, sc.grid, problem.initial).params;
  } else if (config.warmstart.rfind("file:", 0) == 0) {
    const WarmStartPoints ws = read_warmstart_csv(config.warmstart.substr(5));
    problem.initial = fit_initial_guess(ws, sc.grid, problem.initial).params;
  }

  std::pair<CurveParams, SolveTrace> solved;
  try {
    solved = inputs.solver.method == "multi_step" ? solve_multistep(problem, inputs.solver)
                                                  : solve_onestep(problem, inputs.solver);
  } catch (const SolverFailure& failure) {
    const std::string trace_path = join(config.out_dir, "trace.csv");
    write_trace_csv(failure.trace, trace_path);
    throw SolverError(std::string(failure.what()) + " (partial trace: " + trace_path + ")");
  }

  write_theta_json(solved.first, sc.grid, inputs.solver, solved.second,
                   join(config.out_dir, "theta.json"));
  write_trace_csv(solved.second, join(config.out_dir, "trace.csv"));
  IntegrateOptions opt;
  opt.method = IntegratorKind::rk45_adaptive;
  const CurveSamples recon = integrate_frame(
      solved.first, sc.grid, linspace(0.0, sc.grid.total_length(), evaluation_sample_count()),
      opt);
  write_samples_csv(recon, join(config.out_dir, "recon.csv"));
}

void run_evaluate(const RunConfig& config) {
  if (config.n_seeds > 0) {
    LoadedInputs inputs = load_and_validate(config, true);
    ensure_out_dir(config.out_dir);
    ExperimentOptions options;
    options.n_seeds = config.n_seeds;
    options.warmstart = config.warmstart == "none" || config.warmstart.empty()
                            ? std::string("none")
                            : config.warmstart;
    options.threads = config.threads;
    const RunReport report = run_experiment(inputs.scenario, inputs.solver, options);
    write_text_file(join(config.out_dir, "report.json"), report_to_json(report));
    write_report_csv(report, join(config.out_dir, "report.csv"));
    return;
  }

  // single-shot metrics
  json metrics;
  if (!config.recon_csv.empty() && !config.truth_csv.empty()) {
    const CurveSamples recon = read_samples_csv(config.recon_csv);
    const CurveSamples truth = read_samples_csv(config.truth_csv);
    metrics["max_dev_recon_to_truth_mm"] = max_deviation_between(recon.points, truth.points);
  } else if (!config.recon_path.empty()) {
    LoadedInputs inputs = load_and_validate(config, false);
    SegmentGrid grid;
    const CurveParams recon = read_theta_json(config.recon_path, &grid);
    metrics["max_dev_recon_to_truth_mm"] = max_deviation_recon_to_truth(recon, inputs.scenario);
    if (!config.points_path.empty()) {
      const CurveSamples pts = read_samples_csv(config.points_path);
      metrics["max_dev_points_to_recon_mm"] =
          max_deviation_points_to_recon(pts.points, recon, grid);
    }
  } else {
    throw ConfigError(
        "evaluate needs --seeds N, or --recon-csv with --truth-csv, or --recon theta.json");
  }
  ensure_out_dir(config.out_dir);
  write_text_file(join(config.out_dir, "metrics.json"), metrics.dump(2) + "\n");
  log::info("metrics: ", metrics.dump());
}

void run_export_plot(const RunConfig& config) {
  if (config.report_path.empty()) throw ConfigError("export-plot needs --report");
  if (!fs::exists(config.report_path)) {
    throw ConfigError("report does not exist: " + config.report_path);
  }
  const RunReport report = parse_report_json(read_text_file(config.report_path));
  ensure_out_dir(config.out_dir);
  std::ostringstream os;
  os << "series,seed,value\n";
  for (const SeedResult& r : report.per_seed) {
    if (r.failed) continue;
    os << "max_dev_mm," << r.seed << ',' << fmt_g17(r.max_dev_mm) << '\n';
  }
  write_text_file(join(config.out_dir, "plot.csv"), os.str());
}

}  // namespace recon
