#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

namespace recon {

struct DistortionCoeffs {
  double k1 = 0.0, k2 = 0.0, k3 = 0.0;  // radial
  double p1 = 0.0, p2 = 0.0;            // tangential
};

// One calibrated view: world -> camera rigid transform, intrinsics, lens
// distortion. Rotation maps world to camera coordinates, translation in mm.
struct CameraModel {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();
  Eigen::Matrix3d intrinsics = Eigen::Matrix3d::Identity();
  DistortionCoeffs dist;
  int width = 0;
  int height = 0;

  Eigen::Vector3d center() const;  // camera center in world coordinates
  void validate() const;
};

struct CameraRig {
  std::vector<CameraModel> cameras;
};

// Normalized-coordinate lens model (radial Phi factor plus both tangential
// terms) and its 2x2 Jacobian.
Eigen::Vector2d distort_normalized(const DistortionCoeffs& d, const Eigen::Vector2d& xn);
Eigen::Matrix2d distort_jacobian(const DistortionCoeffs& d, const Eigen::Vector2d& xn);

// Full projection chain: rigid transform, z-normalization, distortion,
// intrinsic scaling. Throws NumericError if the point is at or behind the
// camera plane.
Eigen::Vector2d project(const CameraModel& cam, const Eigen::Vector3d& x_world);

// Non-throwing variant for optimization loops: behind-camera points are
// flagged instead of aborting the solve.
struct Projection {
  Eigen::Vector2d pixel = Eigen::Vector2d::Zero();
  double depth = 0.0;
  bool behind = false;
};
Projection project_checked(const CameraModel& cam, const Eigen::Vector3d& x_world);

Eigen::Matrix<double, 2, 3> project_jacobian(const CameraModel& cam, const Eigen::Vector3d& x_world);

// Inverts pixel -> normalized coordinates through the distortion model by
// Newton iteration. Out-of-frame inputs are allowed (warning only);
// non-convergence reports the offending pixel.
std::vector<Eigen::Vector2d> undistort_points(const CameraModel& cam,
                                              const std::vector<Eigen::Vector2d>& pixels);
Eigen::Vector2d undistort_point(const CameraModel& cam, const Eigen::Vector2d& pixel);

// F with ||F||_F = 1 and a deterministic sign, built from the relative pose
// as K_R^{-T} [t]_x R K_L^{-1}. Distinct camera centers required.
Eigen::Matrix3d fundamental_matrix(const CameraModel& left, const CameraModel& right);

struct TriangulationResult {
  Eigen::Vector3d point = Eigen::Vector3d::Zero();
  double reprojection_rms_px = 0.0;
  double condition_number = 0.0;
  bool ill_conditioned = false;
};

// DLT over all views (pixels are undistorted internally) followed by one
// Gauss-Newton refinement pass on pixel reprojection error.
TriangulationResult triangulate(const CameraRig& rig, const std::vector<Eigen::Vector2d>& pixels);

// Calibration JSON: { "cameras": [ { "R", "t", "K", "dist", "image_size" } ] },
// row-major matrices, unknown keys rejected.
CameraRig load_calibration(const std::string& path);
CameraRig parse_calibration_json(const std::string& text);
std::string calibration_to_json(const CameraRig& rig);

}  // namespace recon
