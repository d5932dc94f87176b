#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "recon/camera.hpp"
#include "recon/curve.hpp"
#include "recon/raster.hpp"

namespace recon {

// 1-px-wide backbone path, ordered base to tip after order_path.
struct Skeleton {
  int view = 0;
  std::vector<Eigen::Vector2i> path;
};

struct SkeletonizeOptions {
  bool noise_filter = false;
  int opening_radius = 2;
  // Components at least this large (relative to the biggest one, with an
  // absolute floor) make the image ambiguous.
  double large_component_fraction = 0.05;
  int large_component_min_px = 64;
};

// Morphological thinning (two-subiteration scheme) to a unit-width pixel set.
std::vector<Eigen::Vector2i> skeletonize(const BinaryImage& img,
                                         const SkeletonizeOptions& options = {});

// Orders skeleton pixels from the endpoint nearest base_hint to the
// farthest-reachable endpoint. Cycles are broken by dropping the shortest
// edges first; spurs lose to the longest path.
Skeleton order_path(const std::vector<Eigen::Vector2i>& pixels, const Eigen::Vector2d& base_hint,
                    int view = 0);

struct EpipolarMatchOptions {
  double line_dist_tol_px = 1.5;
  int index_window = 50;
  // Candidates within this margin of the best line distance count as ties;
  // the smallest admissible index advance wins (tangency regions).
  double tie_band_px = 0.25;
  int min_pairs = 8;
};

struct PixelPair {
  Eigen::Vector2d left;
  Eigen::Vector2d right;
  int left_index = 0;
  int right_index = 0;
};

struct CorrespondenceResult {
  std::vector<PixelPair> pairs;
  int skipped_left = 0;
  int monotonicity_rejects = 0;
};

// Walks the left skeleton base to tip, intersecting each pixel's epipolar
// line with the right skeleton under the adjacency-window and monotone-index
// rules. Both skeletons are undistorted before any line computation.
CorrespondenceResult correspond_epipolar(const Skeleton& left, const Skeleton& right,
                                         const CameraRig& rig,
                                         const EpipolarMatchOptions& options = {});

struct WarmStartPoints {
  std::vector<Eigen::Vector3d> points;   // mm
  std::vector<double> arc_lengths;       // cumulative chord length, mm
};

// Triangulates every pair and accumulates chord-length arc lengths, with the
// first point translated onto the given base position.
WarmStartPoints build_warmstart(const std::vector<PixelPair>& pairs, const CameraRig& rig,
                                const Eigen::Vector3d& base_position = Eigen::Vector3d::Zero());

struct FitOptions {
  int max_iterations = 500;
  int max_points = 400;          // evenly subsampled above this
  double residual_warn_mm = 5.0;
  double gradient_tol = 1e-12;
};

struct FitResult {
  CurveParams params;
  double rms_mm = 0.0;
  int iterations = 0;
  bool quality_warning = false;
};

// Least squares with known correspondences: min_theta sum ||p_B[i] -
// r(s_B[i]; theta)||^2, arc lengths beyond L clamped to L. base_config
// supplies the fixed base pose and the starting curvature parameters.
FitResult fit_initial_guess(const WarmStartPoints& ws, const SegmentGrid& grid,
                            const CurveParams& base_config, const FitOptions& options = {});

// CSV: s_mm,x_mm,y_mm,z_mm
void write_warmstart_csv(const WarmStartPoints& ws, const std::string& path);
WarmStartPoints read_warmstart_csv(const std::string& path);
// CSV: order,u,v
void write_skeleton_csv(const Skeleton& skeleton, const std::string& path);

}  // namespace recon
