#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "doctest.h"
#include "oracle_helpers.hpp"
#include "recon/curve.hpp"
#include "recon/errors.hpp"
#include "recon/rng.hpp"

using namespace recon;

namespace {

CurveParams constant_curvature(const SegmentGrid& grid, double kappa_x, double kappa_y = 0.0) {
  CurveParams p = CurveParams::zero(grid.segment_count());
  for (int seg = 0; seg < grid.segment_count(); ++seg) {
    p.theta[CurveParams::index(seg, 0, 0)] = kappa_x;
    p.theta[CurveParams::index(seg, 0, 2)] = kappa_x;
    p.theta[CurveParams::index(seg, 1, 0)] = kappa_y;
    p.theta[CurveParams::index(seg, 1, 2)] = kappa_y;
  }
  return p;
}

}  // namespace

TEST_CASE("segment grid validation") {
  CHECK_THROWS_AS(SegmentGrid::from_boundaries({0.0}), ConfigError);
  CHECK_THROWS_AS(SegmentGrid::from_boundaries({0.0, 0.0}), ConfigError);       // L = 0 rejected
  CHECK_THROWS_AS(SegmentGrid::from_boundaries({0.0, 50.0, 50.0}), ConfigError);
  CHECK_THROWS_AS(SegmentGrid::from_boundaries({1.0, 50.0}), ConfigError);
  const SegmentGrid g = SegmentGrid::from_boundaries({0.0, 75.0, 130.0, 190.0});
  CHECK(g.segment_count() == 3);
  CHECK(g.total_length() == 190.0);
  CHECK(g.segment_of(0.0) == 0);
  CHECK(g.segment_of(75.0) == 1);  // boundaries belong to the right segment
  CHECK(g.segment_of(190.0) == 2);
  const SegmentGrid single = SegmentGrid::from_boundaries({0.0, 100.0});
  CHECK(single.segment_count() == 1);
}

TEST_CASE("curvature: constant Hermite case") {
  const SegmentGrid grid = SegmentGrid::from_boundaries({0.0, 100.0});
  CurveParams p = CurveParams::zero(1);
  p.theta[CurveParams::index(0, 0, 0)] = 1.0;
  p.theta[CurveParams::index(0, 0, 2)] = 1.0;
  for (double s : {0.0, 13.7, 50.0, 99.99, 100.0}) {
    CHECK(eval_curvature(p, grid, s).x() == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(eval_curvature(p, grid, s).z() == 0.0);
  }
}

TEST_CASE("curvature: linear Hermite case") {
  const SegmentGrid grid = SegmentGrid::from_boundaries({0.0, 50.0});
  CurveParams p = CurveParams::zero(1);
  p.theta[CurveParams::index(0, 0, 0)] = 0.0;
  p.theta[CurveParams::index(0, 0, 1)] = 1.0;
  p.theta[CurveParams::index(0, 0, 2)] = 50.0;
  p.theta[CurveParams::index(0, 0, 3)] = 1.0;
  CHECK(eval_curvature(p, grid, 20.0).x() == doctest::Approx(20.0).epsilon(1e-12));
}

TEST_CASE("curvature: direct substitution value and generic Hermite oracle") {
  const SegmentGrid grid = SegmentGrid::from_boundaries({0.0, 1.0});
  CurveParams p = CurveParams::zero(1);
  p.theta[CurveParams::index(0, 0, 2)] = 1.0;  // (0, 0, 1, 0)
  // frozen hand evaluation of the cubic at s = 0.5
  CHECK(eval_curvature(p, grid, 0.5).x() == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(eval_curvature(p, grid, 0.5).x() ==
        doctest::Approx(oracle::cubic_hermite(0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.5))
            .epsilon(1e-15));
}

TEST_CASE("curvature: generic Hermite oracle on random parameters") {
  const SegmentGrid grid = SegmentGrid::from_boundaries({0.0, 75.0, 130.0, 190.0});
  Rng rng(7);
  const CurveParams p = oracle::random_params(grid, rng);
  for (int trial = 0; trial < 200; ++trial) {
    const double s = rng.uniform(0.0, grid.total_length());
    const int seg = grid.segment_of(s);
    const double s0 = grid.boundaries[seg];
    const double s1 = grid.boundaries[seg + 1];
    for (int axis = 0; axis < 2; ++axis) {
      const double expected = oracle::cubic_hermite(
          p.theta[CurveParams::index(seg, axis, 0)], p.theta[CurveParams::index(seg, axis, 1)],
          p.theta[CurveParams::index(seg, axis, 2)], p.theta[CurveParams::index(seg, axis, 3)],
          s0, s1, s);
      CHECK(eval_curvature(p, grid, s)[axis] == doctest::Approx(expected).epsilon(1e-12));
    }
  }
}

TEST_CASE("curvature: endpoint interpolation and derivative recovery") {
  const SegmentGrid grid = SegmentGrid::from_boundaries({0.0, 75.0, 130.0, 190.0});
  Rng rng(11);
  const CurveParams p = oracle::random_params(grid, rng);
  const double h = 1e-7;
  for (int seg = 0; seg < grid.segment_count(); ++seg) {
    const double s0 = grid.boundaries[seg];
    const double s1 = grid.boundaries[seg + 1];
    for (int axis = 0; axis < 2; ++axis) {
      const double v0 = p.theta[CurveParams::index(seg, axis, 0)];
      const double d0 = p.theta[CurveParams::index(seg, axis, 1)];
      const double v1 = p.theta[CurveParams::index(seg, axis, 2)];
      const double d1 = p.theta[CurveParams::index(seg, axis, 3)];
      // endpoint values are exact; the right boundary belongs to the next
      // segment, so its value is probed as the limit from inside
      CHECK(eval_curvature(p, grid, s0)[axis] == doctest::Approx(v0).epsilon(1e-14));
      CHECK(eval_curvature(p, grid, s1 - 1e-9)[axis] ==
            doctest::Approx(v1).scale(1.0).epsilon(1e-7));
      // one-sided numeric derivatives taken from inside the segment
      const double d0_num =
          (eval_curvature(p, grid, s0 + h)[axis] - eval_curvature(p, grid, s0)[axis]) / h;
      const double d1_num = (eval_curvature(p, grid, s1 - h)[axis] -
                             eval_curvature(p, grid, s1 - 2.0 * h)[axis]) /
                            h;
      CHECK(d0_num == doctest::Approx(d0).epsilon(1e-6).scale(1.0));
      CHECK(d1_num == doctest::Approx(d1).epsilon(1e-6).scale(1.0));
    }
  }
}

TEST_CASE("curvature: domain errors") {
  const SegmentGrid grid = SegmentGrid::from_boundaries({0.0, 100.0});
  const CurveParams p = CurveParams::zero(1);
  CHECK_THROWS_AS(eval_curvature(p, grid, -1.0), NumericError);
  CHECK_THROWS_AS(eval_curvature(p, grid, 100.1), NumericError);
}

TEST_CASE("integration: zero curvature gives a straight line along z") {
  const SegmentGrid grid = SegmentGrid::from_boundaries({0.0, 75.0, 130.0, 190.0});
  const CurveParams p = CurveParams::zero(3);
  const double length = grid.total_length();
  for (auto method : {IntegratorKind::rk4_fixed, IntegratorKind::rk45_adaptive}) {
    IntegrateOptions opt;
    opt.method = method;
    const CurveSamples samples = integrate_frame(p, grid, linspace(0.0, length, 40), opt);
    CHECK(samples.points.front().norm() == doctest::Approx(0.0).epsilon(1e-15));
    CHECK((samples.points.back() - Eigen::Vector3d(0, 0, length)).norm() <= 1e-9);
  }
}

TEST_CASE("integration: constant-curvature quarter circle closed form") {
  const SegmentGrid grid = SegmentGrid::from_boundaries({0.0, 75.0, 130.0, 190.0});
  const double length = grid.total_length();
  const double kappa = M_PI / (2.0 * length);
  const CurveParams p = constant_curvature(grid, kappa);
  const Eigen::Vector3d expected(0.0, -1.0 / kappa, 1.0 / kappa);

  IntegrateOptions rk4;
  rk4.method = IntegratorKind::rk4_fixed;
  const CurveSamples s4 = integrate_frame(p, grid, linspace(0.0, length, 40), rk4);
  CHECK((s4.points.back() - expected).norm() <= 1e-6 * length);

  IntegrateOptions rk45;
  rk45.method = IntegratorKind::rk45_adaptive;
  const CurveSamples s45 = integrate_frame(p, grid, linspace(0.0, length, 40), rk45);
  CHECK((s45.points.back() - expected).norm() <= 1e-8 * length);

  // intermediate points lie on the circle of radius 1/kappa
  for (std::size_t j = 0; j < s45.points.size(); ++j) {
    const double s = s45.arc_lengths[j];
    const Eigen::Vector3d on_circle(0.0, -(1.0 - std::cos(kappa * s)) / kappa,
                                    std::sin(kappa * s) / kappa);
    CHECK((s45.points[j] - on_circle).norm() <= 1e-8 * length);
  }
}

TEST_CASE("integration: rk4 vs rk45 agreement on random parameters") {
  const SegmentGrid grid = SegmentGrid::from_boundaries({0.0, 75.0, 130.0, 190.0});
  const double length = grid.total_length();
  Rng rng(23);
  for (int trial = 0; trial < 5; ++trial) {
    const CurveParams p = oracle::random_params(grid, rng);
    IntegrateOptions rk4;
    rk4.method = IntegratorKind::rk4_fixed;
    IntegrateOptions rk45;
    rk45.method = IntegratorKind::rk45_adaptive;
    const auto nodes = linspace(0.0, length, 40);
    const CurveSamples a = integrate_frame(p, grid, nodes, rk4);
    const CurveSamples b = integrate_frame(p, grid, nodes, rk45);
    for (std::size_t j = 0; j < nodes.size(); ++j) {
      CHECK((a.points[j] - b.points[j]).norm() <= 1e-6 * length);
    }
  }
}

TEST_CASE("integration: SO(3) drift stays below 1e-7") {
  const SegmentGrid grid = SegmentGrid::from_boundaries({0.0, 75.0, 130.0, 190.0});
  Rng rng(31);
  for (int trial = 0; trial < 3; ++trial) {
    const CurveParams p = oracle::random_params(grid, rng, 0.02, 3e-4);
    const FrameState f = frame_at_rk4(p, grid, grid.total_length(), 40);
    const double drift =
        (f.orientation.transpose() * f.orientation - Eigen::Matrix3d::Identity()).norm();
    CHECK(drift <= 1e-7);
    const FrameState g = frame_at(p, grid, grid.total_length());
    CHECK((g.orientation.transpose() * g.orientation - Eigen::Matrix3d::Identity()).norm() <=
          1e-7);
  }
}

TEST_CASE("integration: unit-speed arc length at 1000 samples") {
  const SegmentGrid grid = SegmentGrid::from_boundaries({0.0, 75.0, 130.0, 190.0});
  const double length = grid.total_length();
  Rng rng(37);
  const CurveParams p = oracle::random_params(grid, rng);
  IntegrateOptions opt;
  opt.method = IntegratorKind::rk45_adaptive;
  const CurveSamples samples = integrate_frame(p, grid, linspace(0.0, length, 1000), opt);
  double poly = 0.0;
  for (std::size_t j = 1; j < samples.points.size(); ++j) {
    poly += (samples.points[j] - samples.points[j - 1]).norm();
  }
  CHECK(std::abs(poly - length) <= 1e-3 * length);
}

TEST_CASE("integration: forward sensitivities match central differences") {
  const SegmentGrid grid = SegmentGrid::from_boundaries({0.0, 75.0, 130.0, 190.0});
  const double length = grid.total_length();
  Rng rng(41);
  const CurveParams base = oracle::random_params(grid, rng);
  const auto nodes = linspace(0.0, length, 10);

  IntegrateOptions opt;
  opt.method = IntegratorKind::rk4_fixed;
  opt.with_sensitivities = true;
  const CurveSamples samples = integrate_frame(base, grid, nodes, opt);

  auto positions = [&](const Eigen::VectorXd& theta) {
    CurveParams p = base;
    p.theta = theta;
    IntegrateOptions o;
    o.method = IntegratorKind::rk4_fixed;
    const CurveSamples s = integrate_frame(p, grid, nodes, o);
    Eigen::VectorXd flat(3 * s.points.size());
    for (std::size_t j = 0; j < s.points.size(); ++j) flat.segment<3>(3 * j) = s.points[j];
    return flat;
  };
  const Eigen::MatrixXd fd = oracle::fd_jacobian(positions, base.theta, 1e-5);
  for (std::size_t j = 0; j < nodes.size(); ++j) {
    const Eigen::MatrixXd analytic = samples.sensitivities[j];
    const Eigen::MatrixXd fd_block = fd.block(3 * j, 0, 3, base.theta.size());
    CHECK(oracle::fd_close(analytic, fd_block, 1e-4, 1e-8));
  }
}

TEST_CASE("integration: error paths") {
  const SegmentGrid grid = SegmentGrid::from_boundaries({0.0, 100.0});
  const CurveParams p = CurveParams::zero(1);
  CHECK_THROWS_AS(integrate_frame(p, grid, {}), NumericError);
  CHECK_THROWS_AS(integrate_frame(p, grid, {-5.0, 50.0}), NumericError);
  CHECK_THROWS_AS(integrate_frame(p, grid, {50.0, 150.0}), NumericError);
  CurveParams bad = p;
  bad.theta[0] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(integrate_frame(bad, grid, {50.0}), NumericError);
  CurveParams tilted = p;
  tilted.base_orientation(0, 0) = 2.0;
  CHECK_THROWS_AS(integrate_frame(tilted, grid, {50.0}), ConfigError);
}

TEST_CASE("curve samples CSV round trip") {
  const SegmentGrid grid = SegmentGrid::from_boundaries({0.0, 75.0, 130.0, 190.0});
  Rng rng(43);
  const CurveParams p = oracle::random_params(grid, rng);
  IntegrateOptions opt;
  opt.method = IntegratorKind::rk45_adaptive;
  const CurveSamples samples =
      integrate_frame(p, grid, linspace(0.0, grid.total_length(), 37), opt);
  const std::string path = "curve_samples_test.csv";
  write_samples_csv(samples, path);
  const CurveSamples back = read_samples_csv(path);
  REQUIRE(back.points.size() == samples.points.size());
  for (std::size_t j = 0; j < samples.points.size(); ++j) {
    CHECK(back.arc_lengths[j] == samples.arc_lengths[j]);  // %.17g round-trips exactly
    CHECK(back.points[j] == samples.points[j]);
  }
  std::remove(path.c_str());
}
