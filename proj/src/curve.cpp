#include "recon/curve.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "recon/errors.hpp"
#include "recon/io_util.hpp"

namespace recon {

namespace {

constexpr double kBoundaryEps = 1e-9;

Eigen::Matrix3d hat(const Eigen::Vector3d& u) {
  Eigen::Matrix3d m;
  m << 0.0, -u.z(), u.y(), u.z(), 0.0, -u.x(), -u.y(), u.x(), 0.0;
  return m;
}

// Hermite basis at arc length s within segment seg: weights for (value-left,
// derivative-left, value-right, derivative-right), tangents in arc-length units.
struct CurvBasis {
  int seg = 0;
  double w[4] = {0, 0, 0, 0};
};

CurvBasis curvature_basis_in_segment(const SegmentGrid& grid, int seg, double s) {
  CurvBasis cb;
  cb.seg = seg;
  const double l0 = grid.boundaries[seg];
  const double dl = grid.segment_length(seg);
  const double t = std::clamp((s - l0) / dl, 0.0, 1.0);
  const double t2 = t * t;
  const double t3 = t2 * t;
  cb.w[0] = 2.0 * t3 - 3.0 * t2 + 1.0;
  cb.w[1] = dl * (t3 - 2.0 * t2 + t);
  cb.w[2] = -2.0 * t3 + 3.0 * t2;
  cb.w[3] = dl * (t3 - t2);
  return cb;
}

CurvBasis curvature_basis(const SegmentGrid& grid, double s) {
  return curvature_basis_in_segment(grid, grid.segment_of(s), s);
}

Eigen::Vector2d curvature_xy(const CurveParams& params, const CurvBasis& cb) {
  Eigen::Vector2d u = Eigen::Vector2d::Zero();
  for (int axis = 0; axis < 2; ++axis) {
    double acc = 0.0;
    for (int k = 0; k < 4; ++k) acc += cb.w[k] * params.theta[CurveParams::index(cb.seg, axis, k)];
    u[axis] = acc;
  }
  return u;
}

// Differential of the polar factor Q of M: with M = Q H, solving
// (tr(H) I - H) w = 2 axial(skew(Q^T dM)) gives dQ = Q hat(w).
struct PolarProjection {
  Eigen::Matrix3d q;
  Eigen::Matrix3d solve_a;  // (tr(H) I - H)^-1
};

PolarProjection polar_project(const Eigen::Matrix3d& m, bool with_differential) {
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Matrix3d q = svd.matrixU() * svd.matrixV().transpose();
  if (q.determinant() < 0.0) {
    Eigen::Matrix3d flip = Eigen::Matrix3d::Identity();
    flip(2, 2) = -1.0;
    q = svd.matrixU() * flip * svd.matrixV().transpose();
  }
  PolarProjection out;
  out.q = q;
  if (with_differential) {
    Eigen::Matrix3d h = q.transpose() * m;
    h = 0.5 * (h + h.transpose()).eval();
    const Eigen::Matrix3d a = h.trace() * Eigen::Matrix3d::Identity() - h;
    out.solve_a = a.inverse();
  }
  return out;
}

Eigen::Vector3d axial_of_skew_part(const Eigen::Matrix3d& g) {
  return Eigen::Vector3d(0.5 * (g(2, 1) - g(1, 2)), 0.5 * (g(0, 2) - g(2, 0)),
                         0.5 * (g(1, 0) - g(0, 1)));
}

struct OdeState {
  Eigen::Vector3d pos;
  Eigen::Matrix3d rot;
  // sens present iff tracking gradients; d_pos is 3 x P, d_rot one 3x3 per parameter
  Eigen::Matrix<double, 3, Eigen::Dynamic> d_pos;
  std::vector<Eigen::Matrix3d> d_rot;
};

struct OdeDeriv {
  Eigen::Vector3d pos;
  Eigen::Matrix3d rot;
  Eigen::Matrix<double, 3, Eigen::Dynamic> d_pos;
  std::vector<Eigen::Matrix3d> d_rot;
};

// Right-hand side rho' = R e3, R' = R hat(u); u does not depend on rho. The
// segment is pinned by the caller so that stage evaluations at a step's right
// end take the limit from inside the step's segment.
OdeDeriv eval_rhs(const CurveParams& params, const SegmentGrid& grid, int seg, double s,
                  const Eigen::Matrix3d& rot, const std::vector<Eigen::Matrix3d>* d_rot) {
  const CurvBasis cb = curvature_basis_in_segment(grid, seg, s);
  const Eigen::Vector2d uxy = curvature_xy(params, cb);
  const Eigen::Matrix3d uh = hat(Eigen::Vector3d(uxy.x(), uxy.y(), 0.0));

  OdeDeriv d;
  d.pos = rot.col(2);
  d.rot = rot * uh;
  if (d_rot != nullptr) {
    const int n_params = static_cast<int>(d_rot->size());
    d.d_pos.resize(3, n_params);
    d.d_rot.resize(n_params);
    for (int m = 0; m < n_params; ++m) {
      d.d_pos.col(m) = (*d_rot)[m].col(2);
      d.d_rot[m] = (*d_rot)[m] * uh;
    }
    // direct dependence of u on the 8 parameters of the active segment
    for (int axis = 0; axis < 2; ++axis) {
      for (int k = 0; k < 4; ++k) {
        const int m = CurveParams::index(cb.seg, axis, k);
        Eigen::Vector3d du = Eigen::Vector3d::Zero();
        du[axis] = cb.w[k];
        d.d_rot[m] += rot * hat(du);
      }
    }
  }
  return d;
}

void rk4_step(const CurveParams& params, const SegmentGrid& grid, double s, double h,
              OdeState& state, bool with_sens) {
  const int n_params = with_sens ? static_cast<int>(state.d_rot.size()) : 0;
  const std::vector<Eigen::Matrix3d>* d_rot = with_sens ? &state.d_rot : nullptr;
  const int seg = grid.segment_of(s + 0.5 * h);

  const OdeDeriv k1 = eval_rhs(params, grid, seg, s, state.rot, d_rot);

  Eigen::Matrix3d rot2 = state.rot + 0.5 * h * k1.rot;
  std::vector<Eigen::Matrix3d> d_rot2;
  if (with_sens) {
    d_rot2.resize(n_params);
    for (int m = 0; m < n_params; ++m) d_rot2[m] = state.d_rot[m] + 0.5 * h * k1.d_rot[m];
  }
  const OdeDeriv k2 =
      eval_rhs(params, grid, seg, s + 0.5 * h, rot2, with_sens ? &d_rot2 : nullptr);

  Eigen::Matrix3d rot3 = state.rot + 0.5 * h * k2.rot;
  std::vector<Eigen::Matrix3d> d_rot3;
  if (with_sens) {
    d_rot3.resize(n_params);
    for (int m = 0; m < n_params; ++m) d_rot3[m] = state.d_rot[m] + 0.5 * h * k2.d_rot[m];
  }
  const OdeDeriv k3 =
      eval_rhs(params, grid, seg, s + 0.5 * h, rot3, with_sens ? &d_rot3 : nullptr);

  Eigen::Matrix3d rot4 = state.rot + h * k3.rot;
  std::vector<Eigen::Matrix3d> d_rot4;
  if (with_sens) {
    d_rot4.resize(n_params);
    for (int m = 0; m < n_params; ++m) d_rot4[m] = state.d_rot[m] + h * k3.d_rot[m];
  }
  const OdeDeriv k4 = eval_rhs(params, grid, seg, s + h, rot4, with_sens ? &d_rot4 : nullptr);

  state.pos += (h / 6.0) * (k1.pos + 2.0 * k2.pos + 2.0 * k3.pos + k4.pos);
  const Eigen::Matrix3d m_raw =
      state.rot + (h / 6.0) * (k1.rot + 2.0 * k2.rot + 2.0 * k3.rot + k4.rot);

  if (!with_sens) {
    state.rot = polar_project(m_raw, false).q;
    return;
  }

  state.d_pos += (h / 6.0) * (k1.d_pos + 2.0 * k2.d_pos + 2.0 * k3.d_pos + k4.d_pos);
  const PolarProjection pp = polar_project(m_raw, true);
  for (int m = 0; m < n_params; ++m) {
    const Eigen::Matrix3d dm =
        state.d_rot[m] + (h / 6.0) * (k1.d_rot[m] + 2.0 * k2.d_rot[m] + 2.0 * k3.d_rot[m] +
                                      k4.d_rot[m]);
    const Eigen::Vector3d w = pp.solve_a * (2.0 * axial_of_skew_part(pp.q.transpose() * dm));
    state.d_rot[m] = pp.q * hat(w);
  }
  state.rot = pp.q;
}

void check_targets(const SegmentGrid& grid, const std::vector<double>& arc_lengths) {
  if (arc_lengths.empty()) throw NumericError("integrate_frame: empty arc length list");
  const double length = grid.total_length();
  double prev = -1.0;
  for (double s : arc_lengths) {
    if (!std::isfinite(s) || s < -kBoundaryEps || s > length + kBoundaryEps) {
      throw NumericError("integrate_frame: arc length outside [0, L]: " + fmt_g17(s));
    }
    if (s < prev) throw NumericError("integrate_frame: arc lengths not sorted");
    prev = s;
  }
}

// The curvature polynomials are only piecewise smooth, so steps never
// straddle a segment boundary; each requested gap is cut at the interior
// boundaries it crosses.
std::vector<double> cut_points(const SegmentGrid& grid, double from, double to) {
  std::vector<double> cuts;
  for (std::size_t i = 1; i + 1 < grid.boundaries.size(); ++i) {
    const double b = grid.boundaries[i];
    if (b > from + kBoundaryEps && b < to - kBoundaryEps) cuts.push_back(b);
  }
  cuts.push_back(to);
  return cuts;
}

CurveSamples integrate_rk4(const CurveParams& params, const SegmentGrid& grid,
                           const std::vector<double>& arc_lengths, const IntegrateOptions& opt) {
  const int n_params = static_cast<int>(params.theta.size());
  OdeState state;
  state.pos = params.base_position;
  state.rot = params.base_orientation;
  if (opt.with_sensitivities) {
    state.d_pos = Eigen::Matrix<double, 3, Eigen::Dynamic>::Zero(3, n_params);
    state.d_rot.assign(n_params, Eigen::Matrix3d::Zero());
  }

  CurveSamples out;
  out.arc_lengths = arc_lengths;
  out.points.reserve(arc_lengths.size());
  if (opt.with_sensitivities) out.sensitivities.reserve(arc_lengths.size());

  double s_cur = 0.0;
  for (double target : arc_lengths) {
    if (target > s_cur) {
      for (double stop : cut_points(grid, s_cur, target)) {
        const double gap = stop - s_cur;
        const int n_sub =
            std::isfinite(opt.max_step) && opt.max_step > 0.0
                ? std::max(1, static_cast<int>(std::ceil(gap / opt.max_step - 1e-12)))
                : 1;
        const double h = gap / n_sub;
        for (int i = 0; i < n_sub; ++i) {
          rk4_step(params, grid, s_cur + i * h, h, state, opt.with_sensitivities);
        }
        s_cur = stop;
      }
      s_cur = target;
    }
    out.points.push_back(state.pos);
    if (opt.with_sensitivities) out.sensitivities.push_back(state.d_pos);
  }
  return out;
}

// Dormand-Prince 5(4) on the 12-dimensional (rho, R) state with polar
// re-orthonormalization after each accepted step.
struct Rk45State {
  Eigen::Vector3d pos;
  Eigen::Matrix3d rot;
};

Rk45State rk45_axpy(const Rk45State& y, double h, const double* coeff, const OdeDeriv* k,
                    int n_stages) {
  Rk45State out = y;
  for (int i = 0; i < n_stages; ++i) {
    if (coeff[i] == 0.0) continue;
    out.pos += h * coeff[i] * k[i].pos;
    out.rot += h * coeff[i] * k[i].rot;
  }
  return out;
}

std::vector<FrameState> integrate_rk45(const CurveParams& params, const SegmentGrid& grid,
                                       const std::vector<double>& arc_lengths,
                                       const IntegrateOptions& opt) {
  static const double c[7] = {0.0, 1.0 / 5, 3.0 / 10, 4.0 / 5, 8.0 / 9, 1.0, 1.0};
  static const double a2[] = {1.0 / 5};
  static const double a3[] = {3.0 / 40, 9.0 / 40};
  static const double a4[] = {44.0 / 45, -56.0 / 15, 32.0 / 9};
  static const double a5[] = {19372.0 / 6561, -25360.0 / 2187, 64448.0 / 6561, -212.0 / 729};
  static const double a6[] = {9017.0 / 3168, -355.0 / 33, 46732.0 / 5247, 49.0 / 176,
                              -5103.0 / 18656};
  static const double b5[] = {35.0 / 384, 0.0, 500.0 / 1113, 125.0 / 192, -2187.0 / 6784,
                              11.0 / 84, 0.0};
  static const double b4[] = {5179.0 / 57600, 0.0,           7571.0 / 16695, 393.0 / 640,
                              -92097.0 / 339200, 187.0 / 2100, 1.0 / 40};

  const double length = grid.total_length();
  Rk45State y{params.base_position, params.base_orientation};
  double s_cur = 0.0;
  double h = std::max(length / 100.0, 1e-6);

  std::vector<FrameState> out;
  out.reserve(arc_lengths.size());

  std::size_t next_target = 0;
  while (next_target < arc_lengths.size() && arc_lengths[next_target] <= s_cur + kBoundaryEps) {
    out.push_back({y.pos, y.rot, arc_lengths[next_target]});
    ++next_target;
  }

  int rejected_in_a_row = 0;
  while (next_target < arc_lengths.size()) {
    const double target = arc_lengths[next_target];
    // never straddle a segment boundary; the curvature is only piecewise smooth
    double stop = target;
    for (std::size_t i = 1; i + 1 < grid.boundaries.size(); ++i) {
      const double b = grid.boundaries[i];
      if (b > s_cur + kBoundaryEps && b < stop - kBoundaryEps) stop = std::min(stop, b);
    }
    h = std::min(h, stop - s_cur);
    if (h < 1e-14 * std::max(1.0, length)) {
      throw NumericError("rk45: step size underflow at s=" + fmt_g17(s_cur));
    }
    const int seg = grid.segment_of(s_cur + 0.5 * h);

    OdeDeriv k[7];
    k[0] = eval_rhs(params, grid, seg, s_cur, y.rot, nullptr);
    {
      const Rk45State y2 = rk45_axpy(y, h, a2, k, 1);
      k[1] = eval_rhs(params, grid, seg, s_cur + c[1] * h, y2.rot, nullptr);
      const Rk45State y3 = rk45_axpy(y, h, a3, k, 2);
      k[2] = eval_rhs(params, grid, seg, s_cur + c[2] * h, y3.rot, nullptr);
      const Rk45State y4 = rk45_axpy(y, h, a4, k, 3);
      k[3] = eval_rhs(params, grid, seg, s_cur + c[3] * h, y4.rot, nullptr);
      const Rk45State y5 = rk45_axpy(y, h, a5, k, 4);
      k[4] = eval_rhs(params, grid, seg, s_cur + c[4] * h, y5.rot, nullptr);
      const Rk45State y6 = rk45_axpy(y, h, a6, k, 5);
      k[5] = eval_rhs(params, grid, seg, s_cur + c[5] * h, y6.rot, nullptr);
    }
    const Rk45State y_new = rk45_axpy(y, h, b5, k, 7);
    k[6] = eval_rhs(params, grid, seg, s_cur + h, y_new.rot, nullptr);
    const Rk45State y_low = rk45_axpy(y, h, b4, k, 7);

    double err_sq = 0.0;
    auto accumulate = [&](double e, double v0, double v1) {
      const double sc = opt.abs_tol + opt.rel_tol * std::max(std::abs(v0), std::abs(v1));
      const double r = e / sc;
      err_sq += r * r;
    };
    for (int i = 0; i < 3; ++i)
      accumulate(y_new.pos[i] - y_low.pos[i], y.pos[i], y_new.pos[i]);
    for (int r = 0; r < 3; ++r)
      for (int cc = 0; cc < 3; ++cc)
        accumulate(y_new.rot(r, cc) - y_low.rot(r, cc), y.rot(r, cc), y_new.rot(r, cc));
    const double err = std::sqrt(err_sq / 12.0);

    if (err <= 1.0) {
      s_cur += h;
      y = y_new;
      y.rot = polar_project(y.rot, false).q;
      rejected_in_a_row = 0;
      while (next_target < arc_lengths.size() &&
             arc_lengths[next_target] <= s_cur + kBoundaryEps) {
        out.push_back({y.pos, y.rot, arc_lengths[next_target]});
        ++next_target;
      }
    } else if (++rejected_in_a_row > 200) {
      throw NumericError("rk45: repeated step rejection, non-finite dynamics suspected");
    }
    const double factor =
        err > 0.0 ? std::clamp(0.9 * std::pow(err, -0.2), 0.2, 5.0) : 5.0;
    h = std::min(h * factor, length);
  }
  return out;
}

}  // namespace

SegmentGrid SegmentGrid::from_boundaries(std::vector<double> b) {
  if (b.size() < 2) throw ConfigError("segment grid needs at least two boundaries");
  if (std::abs(b.front()) > 0.0) throw ConfigError("segment grid must start at 0");
  for (std::size_t i = 1; i < b.size(); ++i) {
    if (!(b[i] > b[i - 1])) throw ConfigError("segment boundaries must be strictly increasing");
    if (!std::isfinite(b[i])) throw ConfigError("segment boundary not finite");
  }
  if (!(b.back() > 0.0)) throw ConfigError("total length must be positive");
  SegmentGrid g;
  g.boundaries = std::move(b);
  return g;
}

int SegmentGrid::segment_of(double s) const {
  const double length = total_length();
  if (s < -kBoundaryEps || s > length + kBoundaryEps) {
    throw NumericError("arc length outside [0, L]: " + fmt_g17(s));
  }
  s = std::clamp(s, 0.0, length);
  const auto it = std::upper_bound(boundaries.begin(), boundaries.end(), s);
  int seg = static_cast<int>(it - boundaries.begin()) - 1;
  seg = std::clamp(seg, 0, segment_count() - 1);
  return seg;
}

CurveParams CurveParams::zero(int segment_count) {
  CurveParams p;
  p.theta = Eigen::VectorXd::Zero(8 * segment_count);
  return p;
}

void CurveParams::validate(const SegmentGrid& grid) const {
  if (theta.size() != 8 * grid.segment_count()) {
    throw ConfigError("curve parameter vector has wrong size: " + std::to_string(theta.size()) +
                      " for " + std::to_string(grid.segment_count()) + " segments");
  }
  if (!theta.allFinite() || !base_position.allFinite() || !base_orientation.allFinite()) {
    throw NumericError("curve parameters contain non-finite values");
  }
  const double ortho =
      (base_orientation.transpose() * base_orientation - Eigen::Matrix3d::Identity()).norm();
  if (ortho > 1e-9 || std::abs(base_orientation.determinant() - 1.0) > 1e-9) {
    throw ConfigError("base orientation is not a rotation matrix");
  }
}

Eigen::Vector3d eval_curvature(const CurveParams& params, const SegmentGrid& grid, double s) {
  const CurvBasis cb = curvature_basis(grid, s);
  const Eigen::Vector2d uxy = curvature_xy(params, cb);
  return Eigen::Vector3d(uxy.x(), uxy.y(), 0.0);
}

CurveSamples integrate_frame(const CurveParams& params, const SegmentGrid& grid,
                             const std::vector<double>& arc_lengths,
                             const IntegrateOptions& options) {
  params.validate(grid);
  check_targets(grid, arc_lengths);
  if (options.method == IntegratorKind::rk4_fixed) {
    return integrate_rk4(params, grid, arc_lengths, options);
  }
  const std::vector<FrameState> frames = integrate_rk45(params, grid, arc_lengths, options);
  CurveSamples out;
  out.arc_lengths = arc_lengths;
  out.points.reserve(frames.size());
  for (const FrameState& f : frames) out.points.push_back(f.position);
  if (options.with_sensitivities) {
    throw NumericError("rk45 path does not provide sensitivities");
  }
  return out;
}

FrameState frame_at(const CurveParams& params, const SegmentGrid& grid, double s) {
  params.validate(grid);
  std::vector<double> targets{s};
  check_targets(grid, targets);
  IntegrateOptions opt;
  opt.method = IntegratorKind::rk45_adaptive;
  return integrate_rk45(params, grid, targets, opt).front();
}

FrameState frame_at_rk4(const CurveParams& params, const SegmentGrid& grid, double s,
                        int n_steps) {
  params.validate(grid);
  std::vector<double> targets{s};
  check_targets(grid, targets);
  if (n_steps < 1) throw NumericError("frame_at_rk4: need at least one step");
  OdeState state;
  state.pos = params.base_position;
  state.rot = params.base_orientation;
  const double h = s / n_steps;
  for (int i = 0; i < n_steps; ++i) {
    rk4_step(params, grid, i * h, h, state, false);
  }
  return {state.pos, state.rot, s};
}

std::vector<double> linspace(double lo, double hi, int n) {
  std::vector<double> v(static_cast<std::size_t>(n));
  if (n == 1) {
    v[0] = lo;
    return v;
  }
  for (int i = 0; i < n; ++i) v[i] = lo + (hi - lo) * static_cast<double>(i) / (n - 1);
  v.back() = hi;
  return v;
}

void write_samples_csv(const CurveSamples& samples, const std::string& path) {
  std::ostringstream os;
  os << "s_mm,x_mm,y_mm,z_mm\n";
  for (std::size_t i = 0; i < samples.points.size(); ++i) {
    os << fmt_g17(samples.arc_lengths[i]) << ',' << fmt_g17(samples.points[i].x()) << ','
       << fmt_g17(samples.points[i].y()) << ',' << fmt_g17(samples.points[i].z()) << '\n';
  }
  write_text_file(path, os.str());
}

CurveSamples read_samples_csv(const std::string& path) {
  const auto rows = read_csv(path, "s_mm,x_mm,y_mm,z_mm");
  CurveSamples out;
  for (const auto& row : rows) {
    if (row.size() != 4) throw IoError("bad sample row in " + path);
    out.arc_lengths.push_back(std::stod(row[0]));
    out.points.emplace_back(std::stod(row[1]), std::stod(row[2]), std::stod(row[3]));
  }
  return out;
}

}  // namespace recon
