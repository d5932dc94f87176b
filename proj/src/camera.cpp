#include "recon/camera.hpp"

#include <cmath>
#include <sstream>

#include "json.hpp"
#include "recon/errors.hpp"
#include "recon/io_util.hpp"
#include "recon/log.hpp"

namespace recon {

namespace {

using nlohmann::json;

void check_keys(const json& obj, std::initializer_list<const char*> allowed,
                const std::string& where) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    bool ok = false;
    for (const char* key : allowed) {
      if (it.key() == key) {
        ok = true;
        break;
      }
    }
    if (!ok) throw ConfigError("unknown key '" + it.key() + "' in " + where);
  }
}

Eigen::Matrix3d mat3_from_json(const json& j, const std::string& where) {
  if (!j.is_array() || j.size() != 3) throw ConfigError(where + " must be a 3x3 array");
  Eigen::Matrix3d m;
  for (int r = 0; r < 3; ++r) {
    if (!j[r].is_array() || j[r].size() != 3) throw ConfigError(where + " must be a 3x3 array");
    for (int c = 0; c < 3; ++c) m(r, c) = j[r][c].get<double>();
  }
  return m;
}

json mat3_to_json(const Eigen::Matrix3d& m) {
  json j = json::array();
  for (int r = 0; r < 3; ++r) j.push_back({m(r, 0), m(r, 1), m(r, 2)});
  return j;
}

}  // namespace

Eigen::Vector3d CameraModel::center() const { return -rotation.transpose() * translation; }

void CameraModel::validate() const {
  const double ortho = (rotation.transpose() * rotation - Eigen::Matrix3d::Identity()).norm();
  if (ortho > 1e-9 || std::abs(rotation.determinant() - 1.0) > 1e-9) {
    throw ConfigError("camera rotation is not in SO(3)");
  }
  if (!(intrinsics(0, 0) > 0.0) || !(intrinsics(1, 1) > 0.0)) {
    throw ConfigError("focal lengths must be positive");
  }
  if (std::abs(intrinsics(1, 0)) > 0.0 || std::abs(intrinsics(2, 0)) > 0.0 ||
      std::abs(intrinsics(2, 1)) > 0.0 || std::abs(intrinsics(2, 2) - 1.0) > 1e-12) {
    throw ConfigError("intrinsic matrix must be upper triangular with unit lower-right entry");
  }
  if (width <= 0 || height <= 0) throw ConfigError("image size must be positive");
}

Eigen::Vector2d distort_normalized(const DistortionCoeffs& d, const Eigen::Vector2d& xn) {
  const double x = xn.x();
  const double y = xn.y();
  const double r2 = x * x + y * y;
  const double phi = 1.0 + d.k1 * r2 + d.k2 * r2 * r2 + d.k3 * r2 * r2 * r2;
  return Eigen::Vector2d(x * phi + d.p1 * (2.0 * x * y) + 2.0 * d.p2 * (r2 + 2.0 * x * x),
                         y * phi + 2.0 * d.p1 * (r2 + 2.0 * y * y) + d.p2 * (2.0 * x * y));
}

Eigen::Matrix2d distort_jacobian(const DistortionCoeffs& d, const Eigen::Vector2d& xn) {
  const double x = xn.x();
  const double y = xn.y();
  const double r2 = x * x + y * y;
  const double phi = 1.0 + d.k1 * r2 + d.k2 * r2 * r2 + d.k3 * r2 * r2 * r2;
  const double dphi = d.k1 + 2.0 * d.k2 * r2 + 3.0 * d.k3 * r2 * r2;  // d phi / d r2
  Eigen::Matrix2d jac;
  jac(0, 0) = phi + 2.0 * x * x * dphi + 2.0 * d.p1 * y + 12.0 * d.p2 * x;
  jac(0, 1) = 2.0 * x * y * dphi + 2.0 * d.p1 * x + 4.0 * d.p2 * y;
  jac(1, 0) = 2.0 * x * y * dphi + 4.0 * d.p1 * x + 2.0 * d.p2 * y;
  jac(1, 1) = phi + 2.0 * y * y * dphi + 12.0 * d.p1 * y + 2.0 * d.p2 * x;
  return jac;
}

Projection project_checked(const CameraModel& cam, const Eigen::Vector3d& x_world) {
  Projection out;
  const Eigen::Vector3d xc = cam.rotation * x_world + cam.translation;
  out.depth = xc.z();
  if (!(xc.z() > 0.0)) {
    out.behind = true;
    return out;
  }
  const Eigen::Vector2d xn(xc.x() / xc.z(), xc.y() / xc.z());
  const Eigen::Vector2d xd = distort_normalized(cam.dist, xn);
  out.pixel.x() = cam.intrinsics(0, 0) * xd.x() + cam.intrinsics(0, 1) * xd.y() +
                  cam.intrinsics(0, 2);
  out.pixel.y() = cam.intrinsics(1, 1) * xd.y() + cam.intrinsics(1, 2);
  return out;
}

Eigen::Vector2d project(const CameraModel& cam, const Eigen::Vector3d& x_world) {
  const Projection p = project_checked(cam, x_world);
  if (p.behind) {
    throw NumericError("point at or behind camera plane (depth " + fmt_g17(p.depth) + " mm)");
  }
  return p.pixel;
}

Eigen::Matrix<double, 2, 3> project_jacobian(const CameraModel& cam,
                                             const Eigen::Vector3d& x_world) {
  const Eigen::Vector3d xc = cam.rotation * x_world + cam.translation;
  if (!(xc.z() > 0.0)) {
    throw NumericError("project_jacobian: point at or behind camera plane");
  }
  const double inv_z = 1.0 / xc.z();
  const Eigen::Vector2d xn(xc.x() * inv_z, xc.y() * inv_z);
  Eigen::Matrix<double, 2, 3> d_norm;
  d_norm << inv_z, 0.0, -xn.x() * inv_z, 0.0, inv_z, -xn.y() * inv_z;
  Eigen::Matrix2d k2;
  k2 << cam.intrinsics(0, 0), cam.intrinsics(0, 1), 0.0, cam.intrinsics(1, 1);
  return k2 * distort_jacobian(cam.dist, xn) * d_norm * cam.rotation;
}

Eigen::Vector2d undistort_point(const CameraModel& cam, const Eigen::Vector2d& pixel) {
  if (pixel.x() < -0.5 || pixel.x() > cam.width - 0.5 || pixel.y() < -0.5 ||
      pixel.y() > cam.height - 0.5) {
    log::warn("undistort_point: pixel (", pixel.x(), ", ", pixel.y(), ") outside image bounds");
  }
  // Target in distorted-normalized coordinates.
  const double fy = cam.intrinsics(1, 1);
  const double yd = (pixel.y() - cam.intrinsics(1, 2)) / fy;
  const double xd =
      (pixel.x() - cam.intrinsics(0, 2) - cam.intrinsics(0, 1) * yd) / cam.intrinsics(0, 0);
  const Eigen::Vector2d target(xd, yd);

  Eigen::Vector2d x = target;  // exact for zero distortion
  for (int iter = 0; iter < 100; ++iter) {
    const Eigen::Vector2d residual = distort_normalized(cam.dist, x) - target;
    // Convergence is judged in pixel units against the round-trip contract.
    const double err_px =
        (Eigen::Vector2d(cam.intrinsics(0, 0) * residual.x() + cam.intrinsics(0, 1) * residual.y(),
                         fy * residual.y()))
            .lpNorm<Eigen::Infinity>();
    if (err_px <= 1e-12) return x;
    const Eigen::Matrix2d jac = distort_jacobian(cam.dist, x);
    const double det = jac.determinant();
    if (std::abs(det) < 1e-300) break;
    x -= jac.inverse() * residual;
  }
  // Characterize the failure before reporting it: high-order models can fold.
  const Eigen::Vector2d residual = distort_normalized(cam.dist, x) - target;
  const double err_px =
      (Eigen::Vector2d(cam.intrinsics(0, 0) * residual.x() + cam.intrinsics(0, 1) * residual.y(),
                       fy * residual.y()))
          .lpNorm<Eigen::Infinity>();
  if (err_px <= 1e-9) return x;
  throw NumericError("undistort_point: no convergence for pixel (" + fmt_g17(pixel.x()) + ", " +
                     fmt_g17(pixel.y()) + "), residual " + fmt_g17(err_px) + " px");
}

std::vector<Eigen::Vector2d> undistort_points(const CameraModel& cam,
                                              const std::vector<Eigen::Vector2d>& pixels) {
  std::vector<Eigen::Vector2d> out;
  out.reserve(pixels.size());
  for (const Eigen::Vector2d& px : pixels) out.push_back(undistort_point(cam, px));
  return out;
}

Eigen::Matrix3d fundamental_matrix(const CameraModel& left, const CameraModel& right) {
  // Relative pose: x_R = R_rel x_L + t_rel in camera coordinates.
  const Eigen::Matrix3d r_rel = right.rotation * left.rotation.transpose();
  const Eigen::Vector3d t_rel = right.translation - r_rel * left.translation;
  if (t_rel.norm() < 1e-9) {
    throw NumericError("fundamental_matrix: camera centers coincide");
  }
  Eigen::Matrix3d t_cross;
  t_cross << 0.0, -t_rel.z(), t_rel.y(), t_rel.z(), 0.0, -t_rel.x(), -t_rel.y(), t_rel.x(), 0.0;
  const Eigen::Matrix3d essential = t_cross * r_rel;
  Eigen::Matrix3d f = right.intrinsics.transpose().inverse() * essential *
                      left.intrinsics.inverse();
  f /= f.norm();
  // Deterministic sign: largest-magnitude entry positive.
  double best = 0.0;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c)
      if (std::abs(f(r, c)) > std::abs(best)) best = f(r, c);
  if (best < 0.0) f = -f;
  return f;
}

TriangulationResult triangulate(const CameraRig& rig, const std::vector<Eigen::Vector2d>& pixels) {
  const std::size_t n_views = rig.cameras.size();
  if (n_views < 2) throw ConfigError("triangulation needs at least two views");
  if (pixels.size() != n_views) {
    throw ConfigError("triangulation: one pixel per view required");
  }

  Eigen::MatrixXd a(2 * n_views, 3);
  Eigen::VectorXd b(2 * n_views);
  for (std::size_t v = 0; v < n_views; ++v) {
    const CameraModel& cam = rig.cameras[v];
    const Eigen::Vector2d xn = undistort_point(cam, pixels[v]);
    // xn * (r3.X + t3) = r1.X + t1 (and the y row likewise)
    a.row(2 * v) = (xn.x() * cam.rotation.row(2) - cam.rotation.row(0));
    b(2 * v) = cam.translation.x() - xn.x() * cam.translation.z();
    a.row(2 * v + 1) = (xn.y() * cam.rotation.row(2) - cam.rotation.row(1));
    b(2 * v + 1) = cam.translation.y() - xn.y() * cam.translation.z();
  }

  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
  TriangulationResult result;
  const double smin = svd.singularValues().minCoeff();
  result.condition_number = smin > 0.0 ? svd.singularValues().maxCoeff() / smin
                                       : std::numeric_limits<double>::infinity();
  result.ill_conditioned = result.condition_number > 1e8;
  if (result.ill_conditioned) {
    log::warn("triangulate: near-parallel viewing rays, condition number ",
              fmt_g17(result.condition_number));
  }
  result.point = svd.solve(b);

  // One Gauss-Newton pass on pixel reprojection error.
  Eigen::MatrixXd jac(2 * n_views, 3);
  Eigen::VectorXd res(2 * n_views);
  bool in_front = true;
  for (std::size_t v = 0; v < n_views; ++v) {
    const Projection proj = project_checked(rig.cameras[v], result.point);
    if (proj.behind) {
      in_front = false;
      break;
    }
    res.segment<2>(2 * v) = proj.pixel - pixels[v];
    jac.block<2, 3>(2 * static_cast<int>(v), 0) = project_jacobian(rig.cameras[v], result.point);
  }
  if (in_front) {
    const Eigen::Vector3d delta =
        (jac.transpose() * jac).ldlt().solve(jac.transpose() * res);
    const Eigen::Vector3d refined = result.point - delta;
    double rms_before = std::sqrt(res.squaredNorm() / static_cast<double>(n_views));
    double sq_after = 0.0;
    bool refined_valid = true;
    for (std::size_t v = 0; v < n_views; ++v) {
      const Projection proj = project_checked(rig.cameras[v], refined);
      if (proj.behind) {
        refined_valid = false;
        break;
      }
      sq_after += (proj.pixel - pixels[v]).squaredNorm();
    }
    if (refined_valid) {
      const double rms_after = std::sqrt(sq_after / static_cast<double>(n_views));
      if (rms_after <= rms_before) {
        result.point = refined;
        result.reprojection_rms_px = rms_after;
      } else {
        result.reprojection_rms_px = rms_before;
      }
    } else {
      result.reprojection_rms_px = rms_before;
    }
  }
  return result;
}

CameraRig parse_calibration_json(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("calibration JSON parse error: ") + e.what());
  }
  if (!root.is_object()) throw ConfigError("calibration root must be an object");
  check_keys(root, {"cameras"}, "calibration root");
  if (!root.contains("cameras") || !root["cameras"].is_array() || root["cameras"].empty()) {
    throw ConfigError("calibration must list at least one camera");
  }
  CameraRig rig;
  int index = 0;
  for (const json& jc : root["cameras"]) {
    const std::string where = "camera " + std::to_string(index);
    if (!jc.is_object()) throw ConfigError(where + " must be an object");
    check_keys(jc, {"R", "t", "K", "dist", "image_size"}, where);
    for (const char* key : {"R", "t", "K", "dist", "image_size"}) {
      if (!jc.contains(key)) throw ConfigError(where + " missing key '" + key + "'");
    }
    CameraModel cam;
    cam.rotation = mat3_from_json(jc["R"], where + ".R");
    if (!jc["t"].is_array() || jc["t"].size() != 3) throw ConfigError(where + ".t must be a 3-vector");
    for (int i = 0; i < 3; ++i) cam.translation[i] = jc["t"][i].get<double>();
    cam.intrinsics = mat3_from_json(jc["K"], where + ".K");
    const json& jd = jc["dist"];
    if (!jd.is_object()) throw ConfigError(where + ".dist must be an object");
    check_keys(jd, {"k1", "k2", "k3", "p1", "p2"}, where + ".dist");
    cam.dist.k1 = jd.value("k1", 0.0);
    cam.dist.k2 = jd.value("k2", 0.0);
    cam.dist.k3 = jd.value("k3", 0.0);
    cam.dist.p1 = jd.value("p1", 0.0);
    cam.dist.p2 = jd.value("p2", 0.0);
    if (!jc["image_size"].is_array() || jc["image_size"].size() != 2) {
      throw ConfigError(where + ".image_size must be [width, height]");
    }
    cam.width = jc["image_size"][0].get<int>();
    cam.height = jc["image_size"][1].get<int>();
    cam.validate();
    rig.cameras.push_back(cam);
    ++index;
  }
  return rig;
}

CameraRig load_calibration(const std::string& path) {
  return parse_calibration_json(read_text_file(path));
}

std::string calibration_to_json(const CameraRig& rig) {
  json root;
  root["cameras"] = json::array();
  for (const CameraModel& cam : rig.cameras) {
    json jc;
    jc["R"] = mat3_to_json(cam.rotation);
    jc["t"] = {cam.translation.x(), cam.translation.y(), cam.translation.z()};
    jc["K"] = mat3_to_json(cam.intrinsics);
    jc["dist"] = {{"k1", cam.dist.k1},
                  {"k2", cam.dist.k2},
                  {"k3", cam.dist.k3},
                  {"p1", cam.dist.p1},
                  {"p2", cam.dist.p2}};
    jc["image_size"] = {cam.width, cam.height};
    root["cameras"].push_back(jc);
  }
  return root.dump(2) + "\n";
}

}  // namespace recon
