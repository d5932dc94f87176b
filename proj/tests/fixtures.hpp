#pragma once

// Shared problem fixtures for the solver-level tests.

#include <Eigen/Dense>
#include <vector>

#include "recon/camera.hpp"
#include "recon/curve.hpp"
#include "recon/icp.hpp"

namespace fixtures {

inline recon::CameraModel toy_camera(int which) {
  recon::CameraModel cam;
  if (which == 0) {
    cam.rotation << 1, 0, 0, 0, 0, -1, 0, 1, 0;  // looking along +y
    cam.translation = -cam.rotation * Eigen::Vector3d(0.0, -300.0, 50.0);
  } else {
    cam.rotation << 0, -1, 0, 0, 0, -1, 1, 0, 0;  // looking along +x
    cam.translation = -cam.rotation * Eigen::Vector3d(-300.0, 0.0, 50.0);
  }
  cam.intrinsics << 1000.0, 0.0, 500.0, 0.0, 1000.0, 400.0, 0.0, 0.0, 1.0;
  cam.width = 1000;
  cam.height = 800;
  return cam;
}

inline recon::CurveParams toy_arc(double kappa) {
  recon::CurveParams p = recon::CurveParams::zero(1);
  p.theta[recon::CurveParams::index(0, 0, 0)] = kappa;
  p.theta[recon::CurveParams::index(0, 0, 2)] = kappa;
  return p;
}

// Two circular arcs of equal length with the curvature as the unknown: the
// observations are exact projections of the true nodes, so the global optimum
// has zero cost.
inline recon::IcpProblem toy_problem(double kappa_true, double p_norm = 2.0, int n_nodes = 12) {
  recon::IcpProblem problem;
  problem.rig.cameras = {toy_camera(0), toy_camera(1)};
  problem.grid = recon::SegmentGrid::from_boundaries({0.0, 100.0});
  problem.p = p_norm;
  problem.n_nodes = n_nodes;
  problem.initial = recon::CurveParams::zero(1);

  const recon::CurveParams truth = toy_arc(kappa_true);
  recon::IntegrateOptions opt;
  const recon::CurveSamples nodes =
      recon::integrate_frame(truth, problem.grid, problem.node_arc_lengths(), opt);
  for (std::size_t v = 0; v < problem.rig.cameras.size(); ++v) {
    recon::PixelSet set;
    set.view = static_cast<int>(v);
    for (const Eigen::Vector3d& point : nodes.points) {
      set.coords.push_back(recon::project(problem.rig.cameras[v], point));
    }
    problem.pixel_sets.push_back(set);
  }
  return problem;
}

}  // namespace fixtures
