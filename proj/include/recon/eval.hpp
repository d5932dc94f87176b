#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "recon/camera.hpp"
#include "recon/curve.hpp"
#include "recon/icp.hpp"

namespace recon {

// Ground-truth definition for synthetic experiments; everything needed to
// regenerate the images and metrics bit-exactly.
struct Scenario {
  std::string name;
  SegmentGrid grid;
  CurveParams truth;
  CameraRig rig;
  int image_width = 0;
  int image_height = 0;
  int dilation_radius = 15;
  std::vector<std::uint64_t> seeds;

  void validate() const;
  std::uint64_t seed_for_run(int run_index) const;
};

// Paper-scale default: two views, 2448x2048, disk radius 15, three segments
// with deployed boundaries 0/75/130/190 mm.
Scenario default_scenario();

Scenario load_scenario(const std::string& path);
Scenario parse_scenario_json(const std::string& text);
std::string scenario_to_json(const Scenario& scenario);

int evaluation_sample_count();  // 1000 equidistant arc lengths

std::vector<Eigen::Vector3d> sample_polyline(const CurveParams& params, const SegmentGrid& grid,
                                             int n_samples);

double point_to_polyline_distance(const Eigen::Vector3d& point,
                                  const std::vector<Eigen::Vector3d>& polyline);

// Performance criterion of the synthetic experiments: max over reconstruction
// samples of the distance to the ground-truth polyline (p = 2).
double max_deviation_recon_to_truth(const CurveParams& recon, const Scenario& scenario);
double max_deviation_between(const std::vector<Eigen::Vector3d>& recon_samples,
                             const std::vector<Eigen::Vector3d>& truth_samples);

// Sparse-measurement criterion: max over given points of the distance to the
// reconstruction polyline.
double max_deviation_points_to_recon(const std::vector<Eigen::Vector3d>& measured,
                                     const CurveParams& recon, const SegmentGrid& grid);

struct SeedResult {
  std::uint64_t seed = 0;
  double max_dev_mm = 0.0;
  double seconds = 0.0;
  bool converged = false;
  bool failed = false;
  std::string error;
};

struct RunReport {
  std::vector<SeedResult> per_seed;
  double mean_max_dev = 0.0;
  double min_max_dev = 0.0;
  double max_max_dev = 0.0;
  int n_failed = 0;

  void aggregate();
};

struct ExperimentOptions {
  int n_seeds = 1;
  std::string warmstart = "none";  // none | epipolar
  int threads = 0;                 // 0 = hardware concurrency
};

// Full synthetic pipeline per seed: images, optional warm start, solve,
// recon-to-truth metric. Individual failures are recorded, not fatal.
RunReport run_experiment(const Scenario& scenario, const SolverConfig& config,
                         const ExperimentOptions& options = {});

// Random rig perturbation: rotations by an axis-angle of rot_rad, translations
// by trans_mm, intrinsics by a relative factor.
CameraRig perturb_calibration(const CameraRig& rig, double rot_rad, double trans_mm,
                              double intr_rel, std::uint64_t seed);
CameraRig perturb_calibration(const CameraRig& rig, double magnitude, std::uint64_t seed);

std::string report_to_json(const RunReport& report);
void write_report_csv(const RunReport& report, const std::string& path);
RunReport parse_report_json(const std::string& text);

}  // namespace recon
