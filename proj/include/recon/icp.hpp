#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "recon/camera.hpp"
#include "recon/curve.hpp"
#include "recon/errors.hpp"
#include "recon/raster.hpp"

namespace recon {

// One registration instance: robot pixels per view, the camera rig, the
// curve segmentation, the distance exponent and the node count.
struct IcpProblem {
  CameraRig rig;
  std::vector<PixelSet> pixel_sets;
  SegmentGrid grid;
  double p = 2.0;
  int n_nodes = 40;
  CurveParams initial;

  void validate() const;
  std::size_t total_pixels() const;
  std::vector<double> node_arc_lengths() const;
};

// Per view, per pixel: index of the assigned reconstruction node.
using CorrespondenceMap = std::vector<std::vector<std::int32_t>>;

struct TraceRow {
  int iter = 0;
  int epoch = 0;
  double cost = 0.0;
  int reassignments = 0;
  double step = 0.0;
  double seconds = 0.0;
  double grad_norm = 0.0;  // optimizer-space, not part of the CSV export
};

// Cost comparison at a reassignment boundary: same theta, old vs new
// correspondences. Violations can only be genuine in full-batch mode.
struct MonitorEvent {
  int iter = 0;
  bool full_batch = false;
  double cost_before = 0.0;
  double cost_after = 0.0;
  bool violation = false;
};

struct SolveTrace {
  std::vector<TraceRow> rows;
  std::vector<MonitorEvent> monitor;
  bool converged = false;
  std::string reason;
  double final_full_cost = 0.0;

  int full_batch_events() const;
  int full_batch_violations() const;
  int batch_violations() const;
};

// Solver failure that still carries the partial trace so callers can persist
// it for diagnosis.
struct SolverFailure : SolverError {
  SolveTrace trace;
  SolverFailure(const std::string& msg, SolveTrace t)
      : SolverError(msg), trace(std::move(t)) {}
};

struct SolverConfig {
  std::string method = "one_step";  // one_step | multi_step
  double p = 2.0;
  // Piecewise-constant step schedule: (epoch count, alpha) pairs. The epoch
  // budget defaults to the schedule total; an explicit "epochs" value
  // overrides the budget, with the last alpha persisting past the schedule.
  std::vector<std::pair<int, double>> alpha_schedule = {{10, 0.2}};
  std::optional<int> epoch_override;
  int batch_size = 4000;
  int n_nodes = 40;
  std::uint64_t seed = 12345;
  std::string optimizer = "adaptive";  // adaptive | armijo (one_step only)

  // Adaptive-moment defaults; the paper pins only alpha.
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;

  double armijo_c = 1e-4;
  double armijo_shrink = 0.5;
  int armijo_max_backtracks = 40;

  int inner_iteration_cap = 200;  // multi_step quasi-Newton cap per outer step
  double stagnation_rel_tol = 1e-10;

  int epochs() const;
  double alpha_for_epoch(int epoch) const;
  void validate() const;
};

SolverConfig parse_solver_config_json(const std::string& text);
SolverConfig load_solver_config(const std::string& path);
std::string solver_config_to_json(const SolverConfig& config);

// Distance d of Eq-style p-norm form: |du|^p + |dv|^p. Behind-camera nodes
// carry a large finite penalty equivalent to a 1000 px residual.
double pixel_node_distance(const Eigen::Vector2d& pixel, const Projection& node, double p);
double behind_camera_penalty(double p);

// Projections of the N reconstruction nodes in every view, with curve
// sensitivities when requested.
struct NodeProjections {
  CurveSamples samples;
  std::vector<std::vector<Projection>> per_view;
};
NodeProjections project_nodes(const CurveParams& params, const IcpProblem& problem,
                              bool with_sensitivities);

// Exhaustive closest-node assignment, ties broken toward the lowest index.
CorrespondenceMap assign_closest(const std::vector<PixelSet>& pixel_sets,
                                 const std::vector<std::vector<Projection>>& projections,
                                 double p);

struct CostResult {
  double cost = 0.0;
  Eigen::VectorXd gradient;  // d cost / d theta, storage (1/mm) units
};

// Full-batch cost and gradient at fixed correspondences.
CostResult cost(const CurveParams& params, const CorrespondenceMap& correspondences,
                const IcpProblem& problem);
double cost_value(const CurveParams& params, const CorrespondenceMap& correspondences,
                  const IcpProblem& problem);

// Alternates full inner minimization (quasi-Newton with backtracking) with
// closest-point reassignment.
std::pair<CurveParams, SolveTrace> solve_multistep(const IcpProblem& problem,
                                                   const SolverConfig& config);

// One descent step per reassignment; adaptive-moment or Armijo plain gradient.
std::pair<CurveParams, SolveTrace> solve_onestep(const IcpProblem& problem,
                                                 const SolverConfig& config);

void write_trace_csv(const SolveTrace& trace, const std::string& path);

// Diagonal parameter scaling between stored 1/mm curvature coordinates and
// the optimizer's per-meter coordinates (tangent slots additionally scaled by
// the segment length). Descent steps of order 0.1 then match the parameter
// scale the step defaults were tuned for.
Eigen::VectorXd optimizer_scaling(const SegmentGrid& grid);

}  // namespace recon
