#include "recon/epipolar.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_map>

#include "recon/errors.hpp"
#include "recon/icp.hpp"
#include "recon/io_util.hpp"
#include "recon/log.hpp"

namespace recon {

namespace {

struct Box {
  int u0 = 0, v0 = 0, u1 = -1, v1 = -1;
  bool empty() const { return u1 < u0 || v1 < v0; }
};

Box white_bbox(const BinaryImage& img) {
  Box box;
  box.u0 = img.width;
  box.v0 = img.height;
  for (int v = 0; v < img.height; ++v) {
    for (int u = 0; u < img.width; ++u) {
      if (!img.at(u, v)) continue;
      box.u0 = std::min(box.u0, u);
      box.v0 = std::min(box.v0, v);
      box.u1 = std::max(box.u1, u);
      box.v1 = std::max(box.v1, v);
    }
  }
  return box;
}

// Connected components (8-connectivity) as pixel index lists.
std::vector<std::vector<int>> components8(const BinaryImage& img) {
  std::vector<std::vector<int>> comps;
  std::vector<std::uint8_t> seen(img.bits.size(), 0);
  std::vector<int> stack;
  for (std::size_t start = 0; start < img.bits.size(); ++start) {
    if (img.bits[start] == 0 || seen[start]) continue;
    comps.emplace_back();
    stack.assign(1, static_cast<int>(start));
    seen[start] = 1;
    while (!stack.empty()) {
      const int idx = stack.back();
      stack.pop_back();
      comps.back().push_back(idx);
      const int u = idx % img.width;
      const int v = idx / img.width;
      for (int dv = -1; dv <= 1; ++dv) {
        for (int du = -1; du <= 1; ++du) {
          if (du == 0 && dv == 0) continue;
          const int uu = u + du;
          const int vv = v + dv;
          if (!img.in_bounds(uu, vv)) continue;
          const int nidx = vv * img.width + uu;
          if (img.bits[nidx] != 0 && !seen[nidx]) {
            seen[nidx] = 1;
            stack.push_back(nidx);
          }
        }
      }
    }
  }
  return comps;
}

// Two-subiteration thinning on a cropped window.
void thin_inplace(BinaryImage& img) {
  auto white = [&img](int u, int v) { return img.in_bounds(u, v) && img.at(u, v); };
  bool changed = true;
  std::vector<std::pair<int, int>> to_clear;
  while (changed) {
    changed = false;
    for (int phase = 0; phase < 2; ++phase) {
      to_clear.clear();
      for (int v = 0; v < img.height; ++v) {
        for (int u = 0; u < img.width; ++u) {
          if (!img.at(u, v)) continue;
          const int p2 = white(u, v - 1), p3 = white(u + 1, v - 1), p4 = white(u + 1, v);
          const int p5 = white(u + 1, v + 1), p6 = white(u, v + 1), p7 = white(u - 1, v + 1);
          const int p8 = white(u - 1, v), p9 = white(u - 1, v - 1);
          const int b = p2 + p3 + p4 + p5 + p6 + p7 + p8 + p9;
          if (b < 2 || b > 6) continue;
          const int seq[9] = {p2, p3, p4, p5, p6, p7, p8, p9, p2};
          int a = 0;
          for (int k = 0; k < 8; ++k) a += (seq[k] == 0 && seq[k + 1] == 1) ? 1 : 0;
          if (a != 1) continue;
          if (phase == 0) {
            if (p2 * p4 * p6 != 0 || p4 * p6 * p8 != 0) continue;
          } else {
            if (p2 * p4 * p8 != 0 || p2 * p6 * p8 != 0) continue;
          }
          to_clear.emplace_back(u, v);
        }
      }
      for (const auto& [u, v] : to_clear) img.set(u, v, false);
      changed = changed || !to_clear.empty();
    }
  }
}

std::int64_t pixel_key(int u, int v) {
  return (static_cast<std::int64_t>(v) << 32) | static_cast<std::int64_t>(u);
}

struct DisjointSet {
  std::vector<int> parent;
  explicit DisjointSet(int n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
  int find(int a) {
    while (parent[a] != a) {
      parent[a] = parent[parent[a]];
      a = parent[a];
    }
    return a;
  }
  bool unite(int a, int b) {
    a = find(a);
    b = find(b);
    if (a == b) return false;
    parent[b] = a;
    return true;
  }
};

}  // namespace

std::vector<Eigen::Vector2i> skeletonize(const BinaryImage& img,
                                         const SkeletonizeOptions& options) {
  if (img.count_white() == 0) throw NumericError("skeletonize: image is all black");

  BinaryImage work = img;
  if (options.noise_filter && options.opening_radius > 0) {
    work = dilate(erode(work, options.opening_radius), options.opening_radius);
    if (work.count_white() == 0) {
      throw NumericError("skeletonize: opening removed every white pixel");
    }
  }

  // keep only the dominant component; a second large one is ambiguous
  auto comps = components8(work);
  std::sort(comps.begin(), comps.end(),
            [](const auto& a, const auto& b) { return a.size() > b.size(); });
  if (comps.size() > 1) {
    const std::size_t threshold = std::max<std::size_t>(
        options.large_component_min_px,
        static_cast<std::size_t>(options.large_component_fraction *
                                 static_cast<double>(comps[0].size())));
    if (comps[1].size() >= threshold) {
      throw NumericError("skeletonize: multiple large components (" +
                         std::to_string(comps[0].size()) + " and " +
                         std::to_string(comps[1].size()) + " px)");
    }
  }

  BinaryImage kept = BinaryImage::black(work.width, work.height);
  for (int idx : comps[0]) kept.bits[idx] = 1;

  const Box box = white_bbox(kept);
  const int pad = 1;
  const int cw = box.u1 - box.u0 + 1 + 2 * pad;
  const int ch = box.v1 - box.v0 + 1 + 2 * pad;
  BinaryImage crop = BinaryImage::black(cw, ch);
  for (int v = box.v0; v <= box.v1; ++v) {
    for (int u = box.u0; u <= box.u1; ++u) {
      if (kept.at(u, v)) crop.set(u - box.u0 + pad, v - box.v0 + pad, true);
    }
  }
  thin_inplace(crop);

  std::vector<Eigen::Vector2i> out;
  for (int v = 0; v < ch; ++v) {
    for (int u = 0; u < cw; ++u) {
      if (crop.at(u, v)) out.emplace_back(u + box.u0 - pad, v + box.v0 - pad);
    }
  }
  return out;
}

Skeleton order_path(const std::vector<Eigen::Vector2i>& pixels, const Eigen::Vector2d& base_hint,
                    int view) {
  if (pixels.empty()) throw NumericError("order_path: empty skeleton");
  const int n = static_cast<int>(pixels.size());

  std::unordered_map<std::int64_t, int> index;
  index.reserve(pixels.size() * 2);
  for (int i = 0; i < n; ++i) {
    if (!index.emplace(pixel_key(pixels[i].x(), pixels[i].y()), i).second) {
      throw NumericError("order_path: repeated pixel in skeleton");
    }
  }

  struct Edge {
    int a, b;
    double w;
  };
  std::vector<Edge> edges;
  for (int i = 0; i < n; ++i) {
    for (int dv = -1; dv <= 1; ++dv) {
      for (int du = -1; du <= 1; ++du) {
        if (du == 0 && dv == 0) continue;
        const auto it = index.find(pixel_key(pixels[i].x() + du, pixels[i].y() + dv));
        if (it == index.end() || it->second <= i) continue;
        edges.push_back({i, it->second, (du != 0 && dv != 0) ? std::numbers::sqrt2 : 1.0});
      }
    }
  }

  // Maximum spanning forest: processing long edges first drops the shortest
  // edge of every cycle.
  std::stable_sort(edges.begin(), edges.end(), [](const Edge& a, const Edge& b) {
    if (a.w != b.w) return a.w > b.w;
    if (a.a != b.a) return a.a < b.a;
    return a.b < b.b;
  });
  DisjointSet dsu(n);
  std::vector<std::vector<std::pair<int, double>>> adj(n);
  for (const Edge& e : edges) {
    if (dsu.unite(e.a, e.b)) {
      adj[e.a].push_back({e.b, e.w});
      adj[e.b].push_back({e.a, e.w});
    }
  }

  // connectivity check
  {
    std::vector<int> comp_size;
    std::vector<int> comp(n, -1);
    for (int i = 0; i < n; ++i) {
      if (comp[i] >= 0) continue;
      const int c = static_cast<int>(comp_size.size());
      comp_size.push_back(0);
      std::vector<int> stack{i};
      comp[i] = c;
      while (!stack.empty()) {
        const int cur = stack.back();
        stack.pop_back();
        ++comp_size[c];
        for (const auto& [nb, w] : adj[cur]) {
          if (comp[nb] < 0) {
            comp[nb] = c;
            stack.push_back(nb);
          }
        }
      }
    }
    if (comp_size.size() > 1) {
      std::ostringstream os;
      os << "order_path: skeleton is disconnected, component sizes";
      for (int s : comp_size) os << ' ' << s;
      throw NumericError(os.str());
    }
  }

  // start: endpoint (degree <= 1) nearest the base hint
  int start = -1;
  double best_d = std::numeric_limits<double>::infinity();
  for (int i = 0; i < n; ++i) {
    if (adj[i].size() > 1) continue;
    const double d = (pixels[i].cast<double>() - base_hint).norm();
    if (d < best_d) {
      best_d = d;
      start = i;
    }
  }
  if (start < 0) start = 0;  // defensive; a tree always has leaves

  // farthest-reachable vertex by weighted path length (exact on trees)
  std::vector<double> dist(n, -1.0);
  std::vector<int> parent(n, -1);
  std::vector<int> stack{start};
  dist[start] = 0.0;
  int far = start;
  while (!stack.empty()) {
    const int cur = stack.back();
    stack.pop_back();
    if (dist[cur] > dist[far] || (dist[cur] == dist[far] && cur < far)) far = cur;
    for (const auto& [nb, w] : adj[cur]) {
      if (dist[nb] >= 0.0) continue;
      dist[nb] = dist[cur] + w;
      parent[nb] = cur;
      stack.push_back(nb);
    }
  }

  Skeleton out;
  out.view = view;
  for (int cur = far; cur >= 0; cur = parent[cur]) out.path.push_back(pixels[cur]);
  std::reverse(out.path.begin(), out.path.end());
  return out;
}

CorrespondenceResult correspond_epipolar(const Skeleton& left, const Skeleton& right,
                                         const CameraRig& rig,
                                         const EpipolarMatchOptions& options) {
  if (rig.cameras.size() < 2) throw ConfigError("correspond_epipolar: need two views");
  if (left.path.empty() || right.path.empty()) {
    throw NumericError("correspond_epipolar: empty skeleton path");
  }
  const CameraModel& cam_l = rig.cameras[left.view];
  const CameraModel& cam_r = rig.cameras[right.view];

  // undistorted pixel coordinates on both paths
  auto undistort_path = [](const CameraModel& cam, const std::vector<Eigen::Vector2i>& path) {
    std::vector<Eigen::Vector2d> out;
    out.reserve(path.size());
    for (const Eigen::Vector2i& px : path) {
      const Eigen::Vector2d xn = undistort_point(cam, px.cast<double>());
      out.emplace_back(
          cam.intrinsics(0, 0) * xn.x() + cam.intrinsics(0, 1) * xn.y() + cam.intrinsics(0, 2),
          cam.intrinsics(1, 1) * xn.y() + cam.intrinsics(1, 2));
    }
    return out;
  };
  const std::vector<Eigen::Vector2d> left_ud = undistort_path(cam_l, left.path);
  const std::vector<Eigen::Vector2d> right_ud = undistort_path(cam_r, right.path);

  const Eigen::Matrix3d f = fundamental_matrix(cam_l, cam_r);

  CorrespondenceResult result;
  int prev = 0;
  const int n_right = static_cast<int>(right_ud.size());
  for (std::size_t il = 0; il < left_ud.size(); ++il) {
    const Eigen::Vector3d line = f * left_ud[il].homogeneous();
    const double norm = std::hypot(line.x(), line.y());
    if (norm < 1e-15) {
      ++result.skipped_left;
      continue;
    }

    const int window_hi = std::min(n_right - 1, prev + options.index_window);
    double best_dist = std::numeric_limits<double>::infinity();
    for (int jr = prev; jr <= window_hi; ++jr) {
      const double d = std::abs(line.dot(right_ud[jr].homogeneous())) / norm;
      best_dist = std::min(best_dist, d);
    }
    if (best_dist > options.line_dist_tol_px) {
      // distinguish an ordering failure from a plain miss
      bool admissible_somewhere = false;
      for (int jr = 0; jr < n_right; ++jr) {
        if (std::abs(line.dot(right_ud[jr].homogeneous())) / norm <=
            options.line_dist_tol_px) {
          admissible_somewhere = true;
          break;
        }
      }
      if (admissible_somewhere) ++result.monotonicity_rejects;
      ++result.skipped_left;
      continue;
    }
    // smallest admissible index advance among near-minimal distances
    int chosen = -1;
    for (int jr = prev; jr <= window_hi; ++jr) {
      const double d = std::abs(line.dot(right_ud[jr].homogeneous())) / norm;
      if (d <= best_dist + options.tie_band_px && d <= options.line_dist_tol_px) {
        chosen = jr;
        break;
      }
    }
    PixelPair pair;
    pair.left = left.path[il].cast<double>();
    pair.right = right.path[chosen].cast<double>();
    pair.left_index = static_cast<int>(il);
    pair.right_index = chosen;
    result.pairs.push_back(pair);
    prev = chosen;
  }

  if (static_cast<int>(result.pairs.size()) < options.min_pairs) {
    throw NumericError("correspond_epipolar: only " + std::to_string(result.pairs.size()) +
                       " matches (need " + std::to_string(options.min_pairs) + "), " +
                       std::to_string(result.monotonicity_rejects) +
                       " left pixels lost to the ordering rules");
  }
  return result;
}

WarmStartPoints build_warmstart(const std::vector<PixelPair>& pairs, const CameraRig& rig,
                                const Eigen::Vector3d& base_position) {
  if (pairs.size() < 2) throw NumericError("build_warmstart: need at least two pairs");
  std::vector<Eigen::Vector3d> raw;
  raw.reserve(pairs.size());
  for (const PixelPair& pair : pairs) {
    raw.push_back(triangulate(rig, {pair.left, pair.right}).point);
  }
  const Eigen::Vector3d shift = base_position - raw.front();

  WarmStartPoints ws;
  ws.points.push_back(raw.front() + shift);
  ws.arc_lengths.push_back(0.0);
  for (std::size_t i = 1; i < raw.size(); ++i) {
    const Eigen::Vector3d p = raw[i] + shift;
    const double chord = (p - ws.points.back()).norm();
    if (chord < 1e-12) continue;  // duplicate triangulations collapse
    ws.points.push_back(p);
    ws.arc_lengths.push_back(ws.arc_lengths.back() + chord);
  }
  return ws;
}

FitResult fit_initial_guess(const WarmStartPoints& ws, const SegmentGrid& grid,
                            const CurveParams& base_config, const FitOptions& options) {
  if (ws.points.empty()) throw NumericError("fit_initial_guess: no warm-start points");
  const double length = grid.total_length();
  if (ws.arc_lengths.back() > 1.05 * length) {
    throw NumericError("fit_initial_guess: warm-start arc length " +
                       fmt_g17(ws.arc_lengths.back()) + " exceeds curve length " +
                       fmt_g17(length) + " by more than 5%");
  }

  // evenly subsampled fit set, arc lengths clamped to [0, L]
  std::vector<double> s_fit;
  std::vector<Eigen::Vector3d> p_fit;
  const int total = static_cast<int>(ws.points.size());
  const int n_fit = std::min(total, options.max_points);
  for (int k = 0; k < n_fit; ++k) {
    const int i = (n_fit == 1) ? 0
                               : static_cast<int>(std::llround(
                                     static_cast<double>(k) * (total - 1) / (n_fit - 1)));
    s_fit.push_back(std::min(ws.arc_lengths[i], length));
    p_fit.push_back(ws.points[i]);
  }

  const Eigen::VectorXd scaling = optimizer_scaling(grid);
  const int dim = static_cast<int>(scaling.size());

  auto evaluate = [&](const Eigen::VectorXd& x, Eigen::VectorXd* grad) {
    CurveParams params = base_config;
    params.theta = scaling.cwiseProduct(x);
    IntegrateOptions opt;
    opt.method = IntegratorKind::rk4_fixed;
    opt.with_sensitivities = grad != nullptr;
    opt.max_step = length / 200.0;
    const CurveSamples samples = integrate_frame(params, grid, s_fit, opt);
    double f = 0.0;
    if (grad != nullptr) grad->setZero(dim);
    for (std::size_t i = 0; i < s_fit.size(); ++i) {
      const Eigen::Vector3d r = samples.points[i] - p_fit[i];
      f += r.squaredNorm();
      if (grad != nullptr) {
        grad->noalias() +=
            scaling.cwiseProduct((2.0 * r.transpose() * samples.sensitivities[i]).transpose());
      }
    }
    return f;
  };

  Eigen::VectorXd x = base_config.theta.cwiseQuotient(scaling);
  Eigen::MatrixXd h_inv = Eigen::MatrixXd::Identity(dim, dim);
  Eigen::VectorXd grad(dim);
  double f = evaluate(x, &grad);

  FitResult result;
  for (int it = 0; it < options.max_iterations; ++it) {
    if (grad.lpNorm<Eigen::Infinity>() <= options.gradient_tol * (1.0 + std::abs(f))) break;
    Eigen::VectorXd dir = -(h_inv * grad);
    double slope = dir.dot(grad);
    if (!(slope < 0.0)) {
      h_inv.setIdentity();
      dir = -grad;
      slope = -grad.squaredNorm();
    }
    double t = 1.0;
    bool accepted = false;
    double f_new = f;
    for (int bt = 0; bt < 60; ++bt) {
      f_new = evaluate(x + t * dir, nullptr);
      if (f_new <= f + 1e-4 * t * slope) {
        accepted = true;
        break;
      }
      t *= 0.5;
    }
    if (!accepted) break;
    const Eigen::VectorXd x_new = x + t * dir;
    Eigen::VectorXd grad_new(dim);
    const double f_check = evaluate(x_new, &grad_new);
    const Eigen::VectorXd s = x_new - x;
    const Eigen::VectorXd y = grad_new - grad;
    const double sy = s.dot(y);
    if (sy > 1e-12 * s.norm() * y.norm()) {
      const double rho = 1.0 / sy;
      const Eigen::MatrixXd identity = Eigen::MatrixXd::Identity(dim, dim);
      h_inv = (identity - rho * s * y.transpose()) * h_inv *
                  (identity - rho * y * s.transpose()) +
              rho * s * s.transpose();
    }
    const double decrease = f - f_check;
    x = x_new;
    f = f_check;
    grad = grad_new;
    ++result.iterations;
    if (decrease <= 1e-16 * std::max(1.0, f)) break;
  }

  result.params = base_config;
  result.params.theta = scaling.cwiseProduct(x);
  result.rms_mm = std::sqrt(f / static_cast<double>(s_fit.size()));
  result.quality_warning = result.rms_mm > options.residual_warn_mm;
  if (result.quality_warning) {
    log::warn("fit_initial_guess: residual ", fmt_g17(result.rms_mm),
              " mm RMS exceeds the quality bound ", fmt_g17(options.residual_warn_mm), " mm");
  }
  return result;
}

void write_warmstart_csv(const WarmStartPoints& ws, const std::string& path) {
  std::ostringstream os;
  os << "s_mm,x_mm,y_mm,z_mm\n";
  for (std::size_t i = 0; i < ws.points.size(); ++i) {
    os << fmt_g17(ws.arc_lengths[i]) << ',' << fmt_g17(ws.points[i].x()) << ','
       << fmt_g17(ws.points[i].y()) << ',' << fmt_g17(ws.points[i].z()) << '\n';
  }
  write_text_file(path, os.str());
}

WarmStartPoints read_warmstart_csv(const std::string& path) {
  const auto rows = read_csv(path, "s_mm,x_mm,y_mm,z_mm");
  WarmStartPoints ws;
  for (const auto& row : rows) {
    if (row.size() != 4) throw IoError("bad warm-start row in " + path);
    ws.arc_lengths.push_back(std::stod(row[0]));
    ws.points.emplace_back(std::stod(row[1]), std::stod(row[2]), std::stod(row[3]));
  }
  if (ws.points.empty()) throw IoError("empty warm-start file: " + path);
  for (std::size_t i = 1; i < ws.arc_lengths.size(); ++i) {
    if (!(ws.arc_lengths[i] > ws.arc_lengths[i - 1])) {
      throw IoError("warm-start arc lengths must increase strictly: " + path);
    }
  }
  return ws;
}

void write_skeleton_csv(const Skeleton& skeleton, const std::string& path) {
  std::ostringstream os;
  os << "order,u,v\n";
  for (std::size_t i = 0; i < skeleton.path.size(); ++i) {
    os << i << ',' << skeleton.path[i].x() << ',' << skeleton.path[i].y() << '\n';
  }
  write_text_file(path, os.str());
}

}  // namespace recon
