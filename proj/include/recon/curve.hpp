#pragma once

#include <Eigen/Dense>
#include <limits>
#include <string>
#include <vector>

namespace recon {

// Arc-length segmentation of the reconstruction curve, millimeters.
// boundaries[0] = 0, boundaries[S] = L, strictly increasing.
struct SegmentGrid {
  std::vector<double> boundaries;

  static SegmentGrid from_boundaries(std::vector<double> b);

  int segment_count() const { return static_cast<int>(boundaries.size()) - 1; }
  double total_length() const { return boundaries.back(); }
  double segment_length(int i) const { return boundaries[i + 1] - boundaries[i]; }

  // Segment containing s: [l[i], l[i+1]), with s = L falling into the last one.
  int segment_of(double s) const;
};

// Decision variables of the reconstruction curve. The curvature block holds
// 8 scalars per segment: for each axis (x then y) the Hermite endpoint data
// (value at left boundary [1/mm], derivative at left [1/mm^2], value at
// right, derivative at right). Base pose is fixed during optimization.
struct CurveParams {
  Eigen::VectorXd theta;
  Eigen::Vector3d base_position = Eigen::Vector3d::Zero();
  Eigen::Matrix3d base_orientation = Eigen::Matrix3d::Identity();

  static int index(int segment, int axis, int slot) { return 8 * segment + 4 * axis + slot; }

  static CurveParams zero(int segment_count);

  // Checks theta size against the grid and base_orientation against SO(3).
  void validate(const SegmentGrid& grid) const;
};

struct FrameState {
  Eigen::Vector3d position;
  Eigen::Matrix3d orientation;
  double arc_length = 0.0;
};

// Sampled curve positions; sensitivities[j] is d position_j / d theta (3 x 8S)
// when requested, empty otherwise.
struct CurveSamples {
  std::vector<double> arc_lengths;
  std::vector<Eigen::Vector3d> points;
  std::vector<Eigen::Matrix<double, 3, Eigen::Dynamic>> sensitivities;
};

// Curvature (u_x, u_y, u_z) at arc length s; u_z is identically zero.
Eigen::Vector3d eval_curvature(const CurveParams& params, const SegmentGrid& grid, double s);

enum class IntegratorKind { rk4_fixed, rk45_adaptive };

struct IntegrateOptions {
  IntegratorKind method = IntegratorKind::rk4_fixed;
  bool with_sensitivities = false;
  // rk4: optional cap on the step between requested arc lengths. The default
  // takes one step per requested interval, which is the pinned discretization
  // for equidistant optimization nodes.
  double max_step = std::numeric_limits<double>::infinity();
  // rk45 tolerances.
  double rel_tol = 1e-10;
  double abs_tol = 1e-12;
};

// Integrates the moving-frame ODE (position advances along the frame z-axis,
// orientation rotates with the curvature) and returns positions at the
// requested sorted arc lengths. The orientation is re-projected to SO(3)
// after every step; sensitivities are propagated through the discrete scheme
// including that projection.
CurveSamples integrate_frame(const CurveParams& params, const SegmentGrid& grid,
                             const std::vector<double>& arc_lengths,
                             const IntegrateOptions& options = {});

// Full frame at a single arc length (rk45 path).
FrameState frame_at(const CurveParams& params, const SegmentGrid& grid, double s);

// Final frame after n_steps equidistant RK4 steps up to arc length s.
FrameState frame_at_rk4(const CurveParams& params, const SegmentGrid& grid, double s,
                        int n_steps);

std::vector<double> linspace(double lo, double hi, int n);

// CSV with header s_mm,x_mm,y_mm,z_mm at 17 significant digits.
void write_samples_csv(const CurveSamples& samples, const std::string& path);
CurveSamples read_samples_csv(const std::string& path);

}  // namespace recon
