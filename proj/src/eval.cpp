#include "recon/eval.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <sstream>
#include <thread>

#include "json.hpp"
#include "recon/epipolar.hpp"
#include "recon/errors.hpp"
#include "recon/io_util.hpp"
#include "recon/log.hpp"
#include "recon/raster.hpp"
#include "recon/rng.hpp"

namespace recon {

namespace {

using nlohmann::json;

constexpr int kEvalSamples = 1000;
constexpr int kRasterSamples = 8000;

json vec3_to_json(const Eigen::Vector3d& v) { return json{v.x(), v.y(), v.z()}; }

Eigen::Vector3d vec3_from_json(const json& j, const std::string& where) {
  if (!j.is_array() || j.size() != 3) throw ConfigError(where + " must be a 3-vector");
  return Eigen::Vector3d(j[0].get<double>(), j[1].get<double>(), j[2].get<double>());
}

double point_segment_distance(const Eigen::Vector3d& q, const Eigen::Vector3d& a,
                              const Eigen::Vector3d& b) {
  const Eigen::Vector3d ab = b - a;
  const double len2 = ab.squaredNorm();
  if (len2 == 0.0) return (q - a).norm();
  const double t = std::clamp((q - a).dot(ab) / len2, 0.0, 1.0);
  return (q - (a + t * ab)).norm();
}

}  // namespace

void Scenario::validate() const {
  if (name.empty()) throw ConfigError("scenario needs a name");
  truth.validate(grid);
  if (rig.cameras.empty()) throw ConfigError("scenario has no cameras");
  for (const CameraModel& cam : rig.cameras) {
    cam.validate();
    if (cam.width != image_width || cam.height != image_height) {
      throw ConfigError("scenario image size differs from a camera's image size");
    }
  }
  if (dilation_radius < 0) throw ConfigError("dilation radius must be non-negative");
  if (seeds.empty()) throw ConfigError("scenario needs at least one seed");
}

std::uint64_t Scenario::seed_for_run(int run_index) const {
  if (run_index < static_cast<int>(seeds.size())) return seeds[run_index];
  return derive_seed(seeds.front(), static_cast<std::uint64_t>(run_index));
}

int evaluation_sample_count() { return kEvalSamples; }

Scenario default_scenario() {
  Scenario sc;
  sc.name = "paper_scale";
  // deployed segment boundaries from the tube lengths and translations
  sc.grid = SegmentGrid::from_boundaries({0.0, 75.0, 130.0, 190.0});

  sc.truth = CurveParams::zero(3);
  auto set_axis = [&sc](int seg, int axis, double v0, double d0, double v1, double d1) {
    sc.truth.theta[CurveParams::index(seg, axis, 0)] = v0;
    sc.truth.theta[CurveParams::index(seg, axis, 1)] = d0;
    sc.truth.theta[CurveParams::index(seg, axis, 2)] = v1;
    sc.truth.theta[CurveParams::index(seg, axis, 3)] = d1;
  };
  // smooth profiles bending every segment in both views
  set_axis(0, 0, 0.012, 0.0, 0.009, -1e-4);
  set_axis(1, 0, 0.009, -1e-4, -0.006, -2e-4);
  set_axis(2, 0, -0.006, -2e-4, -0.014, 0.0);
  set_axis(0, 1, -0.004, 1e-4, 0.006, 1e-4);
  set_axis(1, 1, 0.006, 1e-4, 0.013, 0.0);
  set_axis(2, 1, 0.013, 0.0, 0.003, -2e-4);

  sc.image_width = 2448;
  sc.image_height = 2048;
  sc.dilation_radius = 15;

  const double focal = 3500.0;
  const double cx = 1224.0;
  const double cy = 1024.0;

  CameraModel cam0;
  cam0.rotation << 1, 0, 0, 0, 0, -1, 0, 1, 0;  // looking along world +y
  cam0.translation = -cam0.rotation * Eigen::Vector3d(0.0, -500.0, 95.0);
  cam0.intrinsics << focal, 0, cx, 0, focal, cy, 0, 0, 1;
  cam0.dist = {-0.08, 0.01, 0.0, 1e-4, -1e-4};
  cam0.width = sc.image_width;
  cam0.height = sc.image_height;

  CameraModel cam1;
  cam1.rotation << 0, -1, 0, 0, 0, -1, 1, 0, 0;  // looking along world +x
  cam1.translation = -cam1.rotation * Eigen::Vector3d(-500.0, 0.0, 95.0);
  cam1.intrinsics << focal, 0, cx, 0, focal, cy, 0, 0, 1;
  cam1.dist = {-0.06, 0.008, 0.0, -1e-4, 1e-4};
  cam1.width = sc.image_width;
  cam1.height = sc.image_height;

  sc.rig.cameras = {cam0, cam1};
  sc.seeds = {101, 102, 103, 104, 105, 106, 107, 108, 109, 110};
  sc.validate();
  return sc;
}

Scenario parse_scenario_json(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("scenario parse error: ") + e.what());
  }
  if (!root.is_object()) throw ConfigError("scenario must be an object");
  for (auto it = root.begin(); it != root.end(); ++it) {
    static const char* allowed[] = {"name",       "grid",            "truth", "cameras",
                                    "image_size", "dilation_radius", "seeds"};
    bool ok = false;
    for (const char* key : allowed) ok = ok || it.key() == key;
    if (!ok) throw ConfigError("unknown key '" + it.key() + "' in scenario");
  }
  for (const char* key : {"name", "grid", "truth", "cameras", "image_size"}) {
    if (!root.contains(key)) throw ConfigError(std::string("scenario missing key '") + key + "'");
  }

  Scenario sc;
  sc.name = root["name"].get<std::string>();
  sc.grid = SegmentGrid::from_boundaries(root["grid"].get<std::vector<double>>());

  const json& jt = root["truth"];
  if (!jt.is_object()) throw ConfigError("scenario truth must be an object");
  for (const char* key : {"theta", "base_position", "base_orientation"}) {
    if (!jt.contains(key)) throw ConfigError(std::string("scenario truth missing '") + key + "'");
  }
  const auto theta = jt["theta"].get<std::vector<double>>();
  sc.truth.theta = Eigen::Map<const Eigen::VectorXd>(theta.data(), theta.size());
  sc.truth.base_position = vec3_from_json(jt["base_position"], "truth.base_position");
  const json& jr = jt["base_orientation"];
  if (!jr.is_array() || jr.size() != 3) throw ConfigError("truth.base_orientation must be 3x3");
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) sc.truth.base_orientation(r, c) = jr[r][c].get<double>();
  }

  json calib;
  calib["cameras"] = root["cameras"];
  sc.rig = parse_calibration_json(calib.dump());

  sc.image_width = root["image_size"][0].get<int>();
  sc.image_height = root["image_size"][1].get<int>();
  sc.dilation_radius = root.value("dilation_radius", 15);
  if (root.contains("seeds")) sc.seeds = root["seeds"].get<std::vector<std::uint64_t>>();
  if (sc.seeds.empty()) sc.seeds = {12345};
  sc.validate();
  return sc;
}

Scenario load_scenario(const std::string& path) {
  return parse_scenario_json(read_text_file(path));
}

std::string scenario_to_json(const Scenario& scenario) {
  json root;
  root["name"] = scenario.name;
  root["grid"] = scenario.grid.boundaries;
  json jt;
  jt["theta"] = std::vector<double>(scenario.truth.theta.data(),
                                    scenario.truth.theta.data() + scenario.truth.theta.size());
  jt["base_position"] = vec3_to_json(scenario.truth.base_position);
  json jr = json::array();
  for (int r = 0; r < 3; ++r) {
    jr.push_back({scenario.truth.base_orientation(r, 0), scenario.truth.base_orientation(r, 1),
                  scenario.truth.base_orientation(r, 2)});
  }
  jt["base_orientation"] = jr;
  root["truth"] = jt;
  root["cameras"] = json::parse(calibration_to_json(scenario.rig))["cameras"];
  root["image_size"] = {scenario.image_width, scenario.image_height};
  root["dilation_radius"] = scenario.dilation_radius;
  root["seeds"] = scenario.seeds;
  return root.dump(2) + "\n";
}

std::vector<Eigen::Vector3d> sample_polyline(const CurveParams& params, const SegmentGrid& grid,
                                             int n_samples) {
  IntegrateOptions opt;
  opt.method = IntegratorKind::rk45_adaptive;
  const CurveSamples samples =
      integrate_frame(params, grid, linspace(0.0, grid.total_length(), n_samples), opt);
  return samples.points;
}

double point_to_polyline_distance(const Eigen::Vector3d& point,
                                  const std::vector<Eigen::Vector3d>& polyline) {
  if (polyline.empty()) throw ConfigError("point_to_polyline_distance: empty polyline");
  if (polyline.size() == 1) return (point - polyline.front()).norm();
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i + 1 < polyline.size(); ++i) {
    best = std::min(best, point_segment_distance(point, polyline[i], polyline[i + 1]));
  }
  return best;
}

double max_deviation_between(const std::vector<Eigen::Vector3d>& recon_samples,
                             const std::vector<Eigen::Vector3d>& truth_samples) {
  double worst = 0.0;
  for (const Eigen::Vector3d& q : recon_samples) {
    worst = std::max(worst, point_to_polyline_distance(q, truth_samples));
  }
  return worst;
}

double max_deviation_recon_to_truth(const CurveParams& recon, const Scenario& scenario) {
  const auto recon_samples = sample_polyline(recon, scenario.grid, kEvalSamples);
  const auto truth_samples = sample_polyline(scenario.truth, scenario.grid, kEvalSamples);
  return max_deviation_between(recon_samples, truth_samples);
}

double max_deviation_points_to_recon(const std::vector<Eigen::Vector3d>& measured,
                                     const CurveParams& recon, const SegmentGrid& grid) {
  if (measured.empty()) throw ConfigError("max_deviation_points_to_recon: no measured points");
  const auto recon_samples = sample_polyline(recon, grid, kEvalSamples);
  double worst = 0.0;
  for (const Eigen::Vector3d& q : measured) {
    worst = std::max(worst, point_to_polyline_distance(q, recon_samples));
  }
  return worst;
}

void RunReport::aggregate() {
  mean_max_dev = 0.0;
  min_max_dev = std::numeric_limits<double>::infinity();
  max_max_dev = 0.0;
  n_failed = 0;
  int n_ok = 0;
  for (const SeedResult& r : per_seed) {
    if (r.failed) {
      ++n_failed;
      continue;
    }
    ++n_ok;
    mean_max_dev += r.max_dev_mm;
    min_max_dev = std::min(min_max_dev, r.max_dev_mm);
    max_max_dev = std::max(max_max_dev, r.max_dev_mm);
  }
  if (n_ok > 0) {
    mean_max_dev /= n_ok;
  } else {
    mean_max_dev = 0.0;
    min_max_dev = 0.0;
  }
}

RunReport run_experiment(const Scenario& scenario, const SolverConfig& config,
                         const ExperimentOptions& options) {
  scenario.validate();
  config.validate();
  if (options.n_seeds < 1) throw ConfigError("run_experiment: need at least one seed");

  // The synthetic images depend only on the scenario, so they are generated
  // once and shared read-only across the seed workers.
  IntegrateOptions raster_opt;
  raster_opt.method = IntegratorKind::rk45_adaptive;
  const CurveSamples dense = integrate_frame(
      scenario.truth, scenario.grid, linspace(0.0, scenario.grid.total_length(), kRasterSamples),
      raster_opt);
  RasterResult raster =
      rasterize_curve(scenario.rig, dense, scenario.image_width, scenario.image_height);

  IcpProblem problem;
  problem.rig = scenario.rig;
  problem.grid = scenario.grid;
  problem.p = config.p;
  problem.n_nodes = config.n_nodes;
  problem.initial = CurveParams::zero(scenario.grid.segment_count());
  problem.initial.base_position = scenario.truth.base_position;
  problem.initial.base_orientation = scenario.truth.base_orientation;
  for (std::size_t v = 0; v < raster.images.size(); ++v) {
    problem.pixel_sets.push_back(
        extract_pixels(dilate(raster.images[v], scenario.dilation_radius), static_cast<int>(v)));
  }

  if (options.warmstart == "epipolar") {
    // deterministic, so one warm start serves every seed
    std::vector<Skeleton> skeletons;
    for (std::size_t v = 0; v < problem.pixel_sets.size(); ++v) {
      BinaryImage img = BinaryImage::black(scenario.image_width, scenario.image_height);
      for (const Eigen::Vector2d& px : problem.pixel_sets[v].coords) {
        img.set(static_cast<int>(px.x()), static_cast<int>(px.y()), true);
      }
      const Eigen::Vector2d base_hint =
          project(scenario.rig.cameras[v], scenario.truth.base_position);
      skeletons.push_back(
          order_path(skeletonize(img), base_hint, static_cast<int>(v)));
    }
    const CorrespondenceResult match =
        correspond_epipolar(skeletons[0], skeletons[1], scenario.rig);
    const WarmStartPoints ws =
        build_warmstart(match.pairs, scenario.rig, scenario.truth.base_position);
    problem.initial = fit_initial_guess(ws, scenario.grid, problem.initial).params;
  } else if (options.warmstart != "none") {
    throw ConfigError("run_experiment: unknown warm start mode '" + options.warmstart + "'");
  }

  RunReport report;
  report.per_seed.resize(options.n_seeds);

  std::atomic<int> next{0};
  auto worker = [&]() {
    while (true) {
      const int i = next.fetch_add(1);
      if (i >= options.n_seeds) break;
      SeedResult& result = report.per_seed[i];
      result.seed = scenario.seed_for_run(i);
      const auto t0 = std::chrono::steady_clock::now();
      try {
        SolverConfig run_config = config;
        run_config.seed = result.seed;
        auto [params, trace] = run_config.method == "multi_step"
                                   ? solve_multistep(problem, run_config)
                                   : solve_onestep(problem, run_config);
        result.max_dev_mm = max_deviation_recon_to_truth(params, scenario);
        result.converged = trace.converged;
      } catch (const std::exception& e) {
        result.failed = true;
        result.error = e.what();
        log::warn("seed ", result.seed, " failed: ", e.what());
      }
      result.seconds =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    }
  };

  int n_threads = options.threads > 0 ? options.threads
                                      : static_cast<int>(std::thread::hardware_concurrency());
  n_threads = std::max(1, std::min(n_threads, options.n_seeds));
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(n_threads);
    for (int t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (std::thread& t : pool) t.join();
  }

  report.aggregate();
  return report;
}

CameraRig perturb_calibration(const CameraRig& rig, double rot_rad, double trans_mm,
                              double intr_rel, std::uint64_t seed) {
  if (rot_rad < 0.0 || trans_mm < 0.0 || intr_rel < 0.0) {
    throw ConfigError("perturbation magnitudes must be non-negative");
  }
  Rng rng(seed);
  CameraRig out = rig;
  for (CameraModel& cam : out.cameras) {
    Eigen::Vector3d axis(rng.normal(), rng.normal(), rng.normal());
    if (axis.norm() < 1e-12) axis = Eigen::Vector3d::UnitZ();
    axis.normalize();
    cam.rotation = Eigen::AngleAxisd(rot_rad, axis).toRotationMatrix() * cam.rotation;

    Eigen::Vector3d dir(rng.normal(), rng.normal(), rng.normal());
    if (dir.norm() < 1e-12) dir = Eigen::Vector3d::UnitX();
    dir.normalize();
    cam.translation += trans_mm * dir;

    cam.intrinsics(0, 0) *= 1.0 + intr_rel * rng.uniform(-1.0, 1.0);
    cam.intrinsics(1, 1) *= 1.0 + intr_rel * rng.uniform(-1.0, 1.0);
    cam.intrinsics(0, 2) *= 1.0 + intr_rel * rng.uniform(-1.0, 1.0);
    cam.intrinsics(1, 2) *= 1.0 + intr_rel * rng.uniform(-1.0, 1.0);
  }
  return out;
}

CameraRig perturb_calibration(const CameraRig& rig, double magnitude, std::uint64_t seed) {
  return perturb_calibration(rig, magnitude, magnitude, magnitude, seed);
}

std::string report_to_json(const RunReport& report) {
  json root;
  root["per_seed"] = json::array();
  for (const SeedResult& r : report.per_seed) {
    json jr;
    jr["seed"] = r.seed;
    jr["max_dev_mm"] = r.max_dev_mm;
    jr["seconds"] = r.seconds;
    jr["converged"] = r.converged;
    jr["failed"] = r.failed;
    jr["error"] = r.error;
    root["per_seed"].push_back(jr);
  }
  root["mean_max_dev"] = report.mean_max_dev;
  root["min_max_dev"] = report.min_max_dev;
  root["max_max_dev"] = report.max_max_dev;
  root["n_failed"] = report.n_failed;
  return root.dump(2) + "\n";
}

RunReport parse_report_json(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("report parse error: ") + e.what());
  }
  RunReport report;
  for (const json& jr : root["per_seed"]) {
    SeedResult r;
    r.seed = jr["seed"].get<std::uint64_t>();
    r.max_dev_mm = jr["max_dev_mm"].get<double>();
    r.seconds = jr["seconds"].get<double>();
    r.converged = jr["converged"].get<bool>();
    r.failed = jr["failed"].get<bool>();
    r.error = jr["error"].get<std::string>();
    report.per_seed.push_back(r);
  }
  report.aggregate();
  return report;
}

void write_report_csv(const RunReport& report, const std::string& path) {
  std::ostringstream os;
  os << "seed,max_dev_mm,seconds,converged\n";
  for (const SeedResult& r : report.per_seed) {
    os << r.seed << ',' << fmt_g17(r.max_dev_mm) << ',' << fmt_fixed(r.seconds, 6) << ','
       << (r.converged && !r.failed ? 1 : 0) << '\n';
  }
  write_text_file(path, os.str());
}

}  // namespace recon
