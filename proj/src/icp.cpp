#include "recon/icp.hpp"

#include <chrono>
#include <cmath>
#include <sstream>

#include "json.hpp"
#include "recon/errors.hpp"
#include "recon/io_util.hpp"
#include "recon/log.hpp"
#include "recon/rng.hpp"

namespace recon {

namespace {

using nlohmann::json;
using Clock = std::chrono::steady_clock;

double seconds_since(const Clock::time_point& t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

bool is_small_integer(double p, int& n) {
  const double r = std::round(p);
  if (std::abs(p - r) > 0.0 || r < 1.0 || r > 32.0) return false;
  n = static_cast<int>(r);
  return true;
}

// |x|^p with a repeated-multiplication fast path for integer p; the p = 8
// solve spends most of its time here.
double pow_abs(double x, double p) {
  const double a = std::abs(x);
  int n = 0;
  if (is_small_integer(p, n)) {
    double acc = 1.0;
    double base = a;
    int e = n;
    while (e > 0) {
      if (e & 1) acc *= base;
      base *= base;
      e >>= 1;
    }
    return acc;
  }
  return std::pow(a, p);
}

// d/dx |x|^p = p |x|^(p-1) sgn(x)
double dpow_signed(double x, double p) {
  if (x == 0.0) return 0.0;
  const double mag = p * pow_abs(x, p - 1.0);
  return x > 0.0 ? mag : -mag;
}

struct Batch {
  std::vector<std::vector<int>> per_view;  // pixel indices into each PixelSet
  std::size_t size = 0;
};

// Per-view shuffle, then proportional slicing into ceil(M/batch_size)
// disjoint batches so every batch sees all views.
std::vector<Batch> make_batches(const IcpProblem& problem, int batch_size, Rng& rng) {
  const std::size_t n_views = problem.pixel_sets.size();
  const std::size_t total = problem.total_pixels();
  const std::size_t n_batches =
      std::max<std::size_t>(1, (total + batch_size - 1) / static_cast<std::size_t>(batch_size));

  std::vector<std::vector<int>> shuffled(n_views);
  for (std::size_t v = 0; v < n_views; ++v) {
    shuffled[v].resize(problem.pixel_sets[v].coords.size());
    for (std::size_t i = 0; i < shuffled[v].size(); ++i) shuffled[v][i] = static_cast<int>(i);
    rng.shuffle(shuffled[v]);
  }

  std::vector<Batch> batches(n_batches);
  for (std::size_t v = 0; v < n_views; ++v) {
    const std::size_t m = shuffled[v].size();
    for (std::size_t b = 0; b < n_batches; ++b) {
      const std::size_t lo = (m * b) / n_batches;
      const std::size_t hi = (m * (b + 1)) / n_batches;
      auto& dst = batches[b].per_view;
      if (dst.empty()) dst.resize(n_views);
      dst[v].assign(shuffled[v].begin() + lo, shuffled[v].begin() + hi);
      batches[b].size += hi - lo;
    }
  }
  return batches;
}

Batch full_batch(const IcpProblem& problem) {
  Batch b;
  b.per_view.resize(problem.pixel_sets.size());
  for (std::size_t v = 0; v < problem.pixel_sets.size(); ++v) {
    b.per_view[v].resize(problem.pixel_sets[v].coords.size());
    for (std::size_t i = 0; i < b.per_view[v].size(); ++i) b.per_view[v][i] = static_cast<int>(i);
    b.size += b.per_view[v].size();
  }
  return b;
}

int assign_batch(const IcpProblem& problem, const NodeProjections& nodes, const Batch& batch,
                 CorrespondenceMap& assigned, double& cost_before, double& cost_after) {
  const double p = problem.p;
  int changes = 0;
  cost_before = 0.0;
  cost_after = 0.0;
  for (std::size_t v = 0; v < batch.per_view.size(); ++v) {
    const auto& pixels = problem.pixel_sets[v].coords;
    const auto& proj = nodes.per_view[v];
    for (int i : batch.per_view[v]) {
      const Eigen::Vector2d& px = pixels[i];
      double best = pixel_node_distance(px, proj[0], p);
      int best_j = 0;
      for (int j = 1; j < static_cast<int>(proj.size()); ++j) {
        const double d = pixel_node_distance(px, proj[j], p);
        if (d < best) {
          best = d;
          best_j = j;
        }
      }
      cost_before += pixel_node_distance(px, proj[assigned[v][i]], p);
      cost_after += best;
      if (best_j != assigned[v][i]) {
        assigned[v][i] = best_j;
        ++changes;
      }
    }
  }
  return changes;
}

double batch_cost_value(const IcpProblem& problem, const NodeProjections& nodes,
                        const CorrespondenceMap& assigned, const Batch& batch, double scale) {
  const double p = problem.p;
  double total = 0.0;
  for (std::size_t v = 0; v < batch.per_view.size(); ++v) {
    const auto& pixels = problem.pixel_sets[v].coords;
    const auto& proj = nodes.per_view[v];
    for (int i : batch.per_view[v]) {
      total += pixel_node_distance(pixels[i], proj[assigned[v][i]], p);
    }
  }
  return scale * total;
}

// Gradient by chaining per-node pixel accumulators through the projection
// Jacobian and the curve sensitivities; storage (1/mm) units.
CostResult batch_cost_gradient(const IcpProblem& problem, const NodeProjections& nodes,
                               const CorrespondenceMap& assigned, const Batch& batch,
                               double scale) {
  const double p = problem.p;
  const int n_params = static_cast<int>(problem.initial.theta.size());
  const int n_nodes = problem.n_nodes;

  CostResult result;
  result.gradient = Eigen::VectorXd::Zero(n_params);
  for (std::size_t v = 0; v < batch.per_view.size(); ++v) {
    const auto& pixels = problem.pixel_sets[v].coords;
    const auto& proj = nodes.per_view[v];
    std::vector<Eigen::Vector2d> node_acc(n_nodes, Eigen::Vector2d::Zero());
    for (int i : batch.per_view[v]) {
      const int j = assigned[v][i];
      if (proj[j].behind) {
        result.cost += behind_camera_penalty(p);
        continue;
      }
      const Eigen::Vector2d e = proj[j].pixel - pixels[i];
      result.cost += pow_abs(e.x(), p) + pow_abs(e.y(), p);
      node_acc[j] += Eigen::Vector2d(dpow_signed(e.x(), p), dpow_signed(e.y(), p));
    }
    for (int j = 0; j < n_nodes; ++j) {
      if (node_acc[j].isZero() || proj[j].behind) continue;
      const Eigen::Matrix<double, 2, 3> jac =
          project_jacobian(problem.rig.cameras[v], nodes.samples.points[j]);
      result.gradient.noalias() +=
          (node_acc[j].transpose() * jac * nodes.samples.sensitivities[j]).transpose();
    }
  }
  result.cost *= scale;
  result.gradient *= scale;
  return result;
}

CurveParams with_theta(const CurveParams& base, const Eigen::VectorXd& theta) {
  CurveParams p = base;
  p.theta = theta;
  return p;
}

struct ScaledEval {
  double cost = 0.0;
  Eigen::VectorXd grad_opt;
};

// Cost and optimizer-space gradient at optimizer-space coordinates x.
ScaledEval eval_scaled(const IcpProblem& problem, const Eigen::VectorXd& scaling,
                       const Eigen::VectorXd& x, const CorrespondenceMap& assigned,
                       const Batch& batch, double scale) {
  const CurveParams params = with_theta(problem.initial, scaling.cwiseProduct(x));
  const NodeProjections nodes = project_nodes(params, problem, true);
  CostResult r = batch_cost_gradient(problem, nodes, assigned, batch, scale);
  ScaledEval out;
  out.cost = r.cost;
  out.grad_opt = scaling.cwiseProduct(r.gradient);
  return out;
}

double eval_scaled_value(const IcpProblem& problem, const Eigen::VectorXd& scaling,
                         const Eigen::VectorXd& x, const CorrespondenceMap& assigned,
                         const Batch& batch, double scale) {
  const CurveParams params = with_theta(problem.initial, scaling.cwiseProduct(x));
  const NodeProjections nodes = project_nodes(params, problem, false);
  return batch_cost_value(problem, nodes, assigned, batch, scale);
}

struct InnerResult {
  Eigen::VectorXd x;
  double cost = 0.0;
  double grad_norm = 0.0;
  double last_step = 0.0;
  int iterations = 0;
  bool converged = false;
};

// Dense quasi-Newton (BFGS on the inverse Hessian) with Armijo backtracking;
// never accepts an increase, which is what the reassignment convergence
// argument requires of the inner solver.
InnerResult bfgs_minimize(const IcpProblem& problem, const Eigen::VectorXd& scaling,
                          Eigen::VectorXd x, const CorrespondenceMap& assigned,
                          const Batch& batch, double scale, const SolverConfig& config) {
  const int dim = static_cast<int>(x.size());
  Eigen::MatrixXd h_inv = Eigen::MatrixXd::Identity(dim, dim);
  ScaledEval cur = eval_scaled(problem, scaling, x, assigned, batch, scale);

  InnerResult out;
  out.iterations = 0;
  for (int it = 0; it < config.inner_iteration_cap; ++it) {
    const double gnorm = cur.grad_opt.lpNorm<Eigen::Infinity>();
    if (gnorm <= 1e-9 * (1.0 + std::abs(cur.cost))) {
      out.converged = true;
      break;
    }
    Eigen::VectorXd dir = -(h_inv * cur.grad_opt);
    double slope = dir.dot(cur.grad_opt);
    if (!(slope < 0.0)) {
      h_inv.setIdentity();
      dir = -cur.grad_opt;
      slope = -cur.grad_opt.squaredNorm();
    }
    double t = 1.0;
    bool accepted = false;
    double f_trial = cur.cost;
    for (int bt = 0; bt < 60; ++bt) {
      f_trial = eval_scaled_value(problem, scaling, x + t * dir, assigned, batch, scale);
      if (f_trial <= cur.cost + config.armijo_c * t * slope) {
        accepted = true;
        break;
      }
      t *= 0.5;
    }
    if (!accepted) {
      out.converged = true;  // no decrease available along the quasi-Newton ray
      break;
    }
    const Eigen::VectorXd x_new = x + t * dir;
    const ScaledEval next = eval_scaled(problem, scaling, x_new, assigned, batch, scale);
    const Eigen::VectorXd s = x_new - x;
    const Eigen::VectorXd y = next.grad_opt - cur.grad_opt;
    const double sy = s.dot(y);
    if (sy > 1e-12 * s.norm() * y.norm()) {
      const double rho = 1.0 / sy;
      const Eigen::MatrixXd identity = Eigen::MatrixXd::Identity(dim, dim);
      h_inv = (identity - rho * s * y.transpose()) * h_inv *
                  (identity - rho * y * s.transpose()) +
              rho * s * s.transpose();
    }
    out.last_step = t;
    ++out.iterations;
    const double decrease = cur.cost - next.cost;
    x = x_new;
    cur = next;
    if (decrease <= 1e-14 * std::max(1.0, std::abs(cur.cost))) {
      out.converged = true;
      break;
    }
  }
  out.x = x;
  out.cost = cur.cost;
  out.grad_norm = cur.grad_opt.norm();
  return out;
}

}  // namespace

void IcpProblem::validate() const {
  if (p < 1.0) throw ConfigError("norm exponent p must be >= 1");
  if (n_nodes < 2) throw ConfigError("at least two reconstruction nodes required");
  if (rig.cameras.empty()) throw ConfigError("empty camera rig");
  if (pixel_sets.size() != rig.cameras.size()) {
    throw ConfigError("one pixel set per camera required");
  }
  bool any = false;
  for (const PixelSet& s : pixel_sets) any = any || !s.coords.empty();
  if (!any) throw ConfigError("all pixel sets are empty");
  initial.validate(grid);
}

std::size_t IcpProblem::total_pixels() const {
  std::size_t n = 0;
  for (const PixelSet& s : pixel_sets) n += s.coords.size();
  return n;
}

std::vector<double> IcpProblem::node_arc_lengths() const {
  return linspace(0.0, grid.total_length(), n_nodes);
}

int SolveTrace::full_batch_events() const {
  int n = 0;
  for (const MonitorEvent& e : monitor) n += e.full_batch ? 1 : 0;
  return n;
}

int SolveTrace::full_batch_violations() const {
  int n = 0;
  for (const MonitorEvent& e : monitor) n += (e.full_batch && e.violation) ? 1 : 0;
  return n;
}

int SolveTrace::batch_violations() const {
  int n = 0;
  for (const MonitorEvent& e : monitor) n += (!e.full_batch && e.violation) ? 1 : 0;
  return n;
}

int SolverConfig::epochs() const {
  if (epoch_override.has_value()) return *epoch_override;
  int total = 0;
  for (const auto& [count, alpha] : alpha_schedule) total += count;
  return total;
}

double SolverConfig::alpha_for_epoch(int epoch) const {
  int consumed = 0;
  for (const auto& [count, alpha] : alpha_schedule) {
    consumed += count;
    if (epoch < consumed) return alpha;
  }
  return alpha_schedule.back().second;
}

void SolverConfig::validate() const {
  if (method != "one_step" && method != "multi_step") {
    throw ConfigError("unknown solver method: " + method);
  }
  if (p < 1.0) throw ConfigError("norm exponent p must be >= 1");
  if (alpha_schedule.empty()) throw ConfigError("alpha schedule must not be empty");
  for (const auto& [count, alpha] : alpha_schedule) {
    if (count < 1) throw ConfigError("alpha schedule epoch counts must be positive");
    if (!(alpha > 0.0)) throw ConfigError("step lengths must be positive");
  }
  if (epochs() < 1) throw ConfigError("epoch budget must be positive");
  if (batch_size < 1) throw ConfigError("batch size must be positive");
  if (n_nodes < 2) throw ConfigError("n_nodes must be at least 2");
  if (optimizer != "adaptive" && optimizer != "armijo") {
    throw ConfigError("unknown optimizer: " + optimizer);
  }
  if (inner_iteration_cap < 1) throw ConfigError("inner iteration cap must be positive");
}

SolverConfig parse_solver_config_json(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("solver config parse error: ") + e.what());
  }
  if (!root.is_object()) throw ConfigError("solver config must be an object");
  for (auto it = root.begin(); it != root.end(); ++it) {
    static const char* allowed[] = {"method",  "p",       "alpha_schedule", "batch_size",
                                    "n_nodes", "epochs",  "seed",           "optimizer",
                                    "inner_iteration_cap"};
    bool ok = false;
    for (const char* key : allowed) ok = ok || it.key() == key;
    if (!ok) throw ConfigError("unknown key '" + it.key() + "' in solver config");
  }
  SolverConfig config;
  if (root.contains("method")) config.method = root["method"].get<std::string>();
  if (root.contains("p")) config.p = root["p"].get<double>();
  if (root.contains("batch_size")) config.batch_size = root["batch_size"].get<int>();
  if (root.contains("n_nodes")) config.n_nodes = root["n_nodes"].get<int>();
  if (root.contains("seed")) config.seed = root["seed"].get<std::uint64_t>();
  if (root.contains("optimizer")) config.optimizer = root["optimizer"].get<std::string>();
  if (root.contains("inner_iteration_cap")) {
    config.inner_iteration_cap = root["inner_iteration_cap"].get<int>();
  }
  if (root.contains("alpha_schedule")) {
    const json& js = root["alpha_schedule"];
    if (!js.is_array() || js.empty()) throw ConfigError("alpha_schedule must be a non-empty array");
    config.alpha_schedule.clear();
    for (const json& pair : js) {
      if (!pair.is_array() || pair.size() != 2) {
        throw ConfigError("alpha_schedule entries must be [epochs, alpha] pairs");
      }
      config.alpha_schedule.emplace_back(pair[0].get<int>(), pair[1].get<double>());
    }
  }
  if (root.contains("epochs")) {
    const int epochs = root["epochs"].get<int>();
    if (epochs < 1) throw ConfigError("epochs must be positive");
    config.epoch_override = epochs;
    if (!root.contains("alpha_schedule")) config.alpha_schedule = {{epochs, 0.2}};
  }
  if (config.method == "multi_step" && !root.contains("batch_size")) {
    config.batch_size = 51041;
  }
  config.validate();
  return config;
}

SolverConfig load_solver_config(const std::string& path) {
  return parse_solver_config_json(read_text_file(path));
}

std::string solver_config_to_json(const SolverConfig& config) {
  json root;
  root["method"] = config.method;
  root["p"] = config.p;
  json sched = json::array();
  for (const auto& [count, alpha] : config.alpha_schedule) sched.push_back({count, alpha});
  root["alpha_schedule"] = sched;
  root["batch_size"] = config.batch_size;
  root["n_nodes"] = config.n_nodes;
  root["epochs"] = config.epochs();
  root["seed"] = config.seed;
  root["optimizer"] = config.optimizer;
  return root.dump(2) + "\n";
}

double behind_camera_penalty(double p) { return pow_abs(1000.0, p); }

double pixel_node_distance(const Eigen::Vector2d& pixel, const Projection& node, double p) {
  if (node.behind) return behind_camera_penalty(p);
  return pow_abs(node.pixel.x() - pixel.x(), p) + pow_abs(node.pixel.y() - pixel.y(), p);
}

NodeProjections project_nodes(const CurveParams& params, const IcpProblem& problem,
                              bool with_sensitivities) {
  IntegrateOptions opt;
  opt.method = IntegratorKind::rk4_fixed;
  opt.with_sensitivities = with_sensitivities;
  NodeProjections out;
  out.samples = integrate_frame(params, problem.grid, problem.node_arc_lengths(), opt);
  out.per_view.resize(problem.rig.cameras.size());
  for (std::size_t v = 0; v < problem.rig.cameras.size(); ++v) {
    out.per_view[v].reserve(out.samples.points.size());
    for (const Eigen::Vector3d& point : out.samples.points) {
      out.per_view[v].push_back(project_checked(problem.rig.cameras[v], point));
    }
  }
  return out;
}

CorrespondenceMap assign_closest(const std::vector<PixelSet>& pixel_sets,
                                 const std::vector<std::vector<Projection>>& projections,
                                 double p) {
  if (pixel_sets.size() != projections.size()) {
    throw ConfigError("assign_closest: view count mismatch");
  }
  CorrespondenceMap map(pixel_sets.size());
  for (std::size_t v = 0; v < pixel_sets.size(); ++v) {
    const auto& proj = projections[v];
    if (proj.empty()) throw ConfigError("assign_closest: no reconstruction points");
    map[v].resize(pixel_sets[v].coords.size());
    for (std::size_t i = 0; i < pixel_sets[v].coords.size(); ++i) {
      const Eigen::Vector2d& px = pixel_sets[v].coords[i];
      double best = pixel_node_distance(px, proj[0], p);
      int best_j = 0;
      for (int j = 1; j < static_cast<int>(proj.size()); ++j) {
        const double d = pixel_node_distance(px, proj[j], p);
        if (d < best) {
          best = d;
          best_j = j;
        }
      }
      map[v][i] = best_j;
    }
  }
  return map;
}

CostResult cost(const CurveParams& params, const CorrespondenceMap& correspondences,
                const IcpProblem& problem) {
  if (!params.theta.allFinite()) throw NumericError("cost: non-finite parameters");
  const NodeProjections nodes = project_nodes(params, problem, true);
  return batch_cost_gradient(problem, nodes, correspondences, full_batch(problem), 1.0);
}

double cost_value(const CurveParams& params, const CorrespondenceMap& correspondences,
                  const IcpProblem& problem) {
  if (!params.theta.allFinite()) throw NumericError("cost: non-finite parameters");
  const NodeProjections nodes = project_nodes(params, problem, false);
  return batch_cost_value(problem, nodes, correspondences, full_batch(problem), 1.0);
}

Eigen::VectorXd optimizer_scaling(const SegmentGrid& grid) {
  Eigen::VectorXd scaling(8 * grid.segment_count());
  for (int seg = 0; seg < grid.segment_count(); ++seg) {
    const double dl = grid.segment_length(seg);
    for (int axis = 0; axis < 2; ++axis) {
      scaling[CurveParams::index(seg, axis, 0)] = 1e-3;
      scaling[CurveParams::index(seg, axis, 1)] = 1e-3 / dl;
      scaling[CurveParams::index(seg, axis, 2)] = 1e-3;
      scaling[CurveParams::index(seg, axis, 3)] = 1e-3 / dl;
    }
  }
  return scaling;
}

std::pair<CurveParams, SolveTrace> solve_onestep(const IcpProblem& problem,
                                                 const SolverConfig& config) {
  problem.validate();
  config.validate();
  const auto t0 = Clock::now();
  const std::size_t total_pixels = problem.total_pixels();
  const Eigen::VectorXd scaling = optimizer_scaling(problem.grid);
  Rng rng(config.seed);

  Eigen::VectorXd x = problem.initial.theta.cwiseQuotient(scaling);
  const bool adaptive = config.optimizer == "adaptive";
  Eigen::VectorXd adam_m = Eigen::VectorXd::Zero(x.size());
  Eigen::VectorXd adam_v = Eigen::VectorXd::Zero(x.size());
  int adam_t = 0;

  SolveTrace trace;
  const Batch everything = full_batch(problem);

  // Initial correspondences at theta0.
  CurveParams params = with_theta(problem.initial, scaling.cwiseProduct(x));
  CorrespondenceMap assigned =
      assign_closest(problem.pixel_sets, project_nodes(params, problem, false).per_view,
                     problem.p);
  double full_cost_prev = cost_value(params, assigned, problem);

  int iter = 0;
  try {
  for (int epoch = 0; epoch < config.epochs() && !trace.converged; ++epoch) {
    const double alpha = config.alpha_for_epoch(epoch);
    const std::vector<Batch> batches = make_batches(problem, config.batch_size, rng);
    for (const Batch& batch : batches) {
      const auto iter_t0 = Clock::now();
      const double scale =
          static_cast<double>(total_pixels) / static_cast<double>(batch.size);
      params = with_theta(problem.initial, scaling.cwiseProduct(x));
      const NodeProjections nodes = project_nodes(params, problem, true);

      double j_before = 0.0;
      double j_after = 0.0;
      const int changes = assign_batch(problem, nodes, batch, assigned, j_before, j_after);
      MonitorEvent event;
      event.iter = iter;
      event.full_batch = batch.size == total_pixels;
      event.cost_before = scale * j_before;
      event.cost_after = scale * j_after;
      event.violation = !(j_after <= j_before * (1.0 + 1e-12));
      trace.monitor.push_back(event);

      CostResult cg = batch_cost_gradient(problem, nodes, assigned, batch, scale);
      const Eigen::VectorXd grad = scaling.cwiseProduct(cg.gradient);

      double step_used = 0.0;
      if (adaptive) {
        ++adam_t;
        adam_m = config.adam_beta1 * adam_m + (1.0 - config.adam_beta1) * grad;
        adam_v =
            config.adam_beta2 * adam_v + (1.0 - config.adam_beta2) * grad.cwiseProduct(grad);
        const double c1 = 1.0 - std::pow(config.adam_beta1, adam_t);
        const double c2 = 1.0 - std::pow(config.adam_beta2, adam_t);
        for (int d = 0; d < x.size(); ++d) {
          x[d] -= alpha * (adam_m[d] / c1) / (std::sqrt(adam_v[d] / c2) + config.adam_eps);
        }
        step_used = alpha;
      } else {
        // plain gradient with Armijo backtracking on the batch cost
        const double g2 = grad.squaredNorm();
        if (g2 > 0.0) {
          double t = alpha;
          for (int bt = 0; bt <= config.armijo_max_backtracks; ++bt) {
            const double f_trial =
                eval_scaled_value(problem, scaling, x - t * grad, assigned, batch, scale);
            if (f_trial <= cg.cost - config.armijo_c * t * g2) {
              x -= t * grad;
              step_used = t;
              break;
            }
            t *= config.armijo_shrink;
          }
        }
      }

      TraceRow row;
      row.iter = iter;
      row.epoch = epoch;
      row.cost = cg.cost;
      row.reassignments = changes;
      row.step = step_used;
      row.grad_norm = grad.norm();
      row.seconds = seconds_since(iter_t0);
      trace.rows.push_back(row);
      ++iter;
    }

    // Epoch boundary: full-batch cost for the stagnation criterion.
    params = with_theta(problem.initial, scaling.cwiseProduct(x));
    const NodeProjections nodes = project_nodes(params, problem, false);
    double j_before = 0.0;
    double j_after = 0.0;
    assign_batch(problem, nodes, everything, assigned, j_before, j_after);
    MonitorEvent event;
    event.iter = iter;
    event.full_batch = true;
    event.cost_before = j_before;
    event.cost_after = j_after;
    event.violation = !(j_after <= j_before * (1.0 + 1e-12));
    trace.monitor.push_back(event);

    const double full_cost = j_after;
    if (std::abs(full_cost - full_cost_prev) <
        config.stagnation_rel_tol * std::max(full_cost_prev, 1e-300)) {
      trace.converged = true;
      trace.reason = "cost_stagnation";
    }
    full_cost_prev = full_cost;
    trace.final_full_cost = full_cost;
  }
  } catch (const NumericError& e) {
    throw SolverFailure(std::string("one-step solve failed: ") + e.what(), std::move(trace));
  }
  if (!trace.converged) {
    trace.converged = true;
    trace.reason = "epoch_budget";
  }

  if (!x.allFinite()) {
    throw SolverFailure("one-step solve produced non-finite parameters", std::move(trace));
  }
  log::info("one_step finished: cost ", fmt_g17(trace.final_full_cost), ", ",
            trace.rows.size(), " iterations, ", fmt_fixed(seconds_since(t0), 2), " s");
  return {with_theta(problem.initial, scaling.cwiseProduct(x)), trace};
}

std::pair<CurveParams, SolveTrace> solve_multistep(const IcpProblem& problem,
                                                   const SolverConfig& config) {
  problem.validate();
  config.validate();
  const auto t0 = Clock::now();
  const std::size_t total_pixels = problem.total_pixels();
  const Eigen::VectorXd scaling = optimizer_scaling(problem.grid);
  Rng rng(config.seed);

  Eigen::VectorXd x = problem.initial.theta.cwiseQuotient(scaling);
  SolveTrace trace;

  CurveParams params = with_theta(problem.initial, scaling.cwiseProduct(x));
  CorrespondenceMap assigned =
      assign_closest(problem.pixel_sets, project_nodes(params, problem, false).per_view,
                     problem.p);

  int iter = 0;
  bool prev_inner_converged = false;
  try {
  for (int epoch = 0; epoch < config.epochs() && !trace.converged; ++epoch) {
    const std::vector<Batch> batches = make_batches(problem, config.batch_size, rng);
    for (const Batch& batch : batches) {
      const auto iter_t0 = Clock::now();
      const double scale =
          static_cast<double>(total_pixels) / static_cast<double>(batch.size);
      params = with_theta(problem.initial, scaling.cwiseProduct(x));
      const NodeProjections nodes = project_nodes(params, problem, false);

      double j_before = 0.0;
      double j_after = 0.0;
      const int changes = assign_batch(problem, nodes, batch, assigned, j_before, j_after);
      MonitorEvent event;
      event.iter = iter;
      event.full_batch = batch.size == total_pixels;
      event.cost_before = scale * j_before;
      event.cost_after = scale * j_after;
      event.violation = !(j_after <= j_before * (1.0 + 1e-12));
      trace.monitor.push_back(event);

      if (changes == 0 && prev_inner_converged) {
        trace.converged = true;
        trace.reason = "converged_correspondences";
        TraceRow row;
        row.iter = iter;
        row.epoch = epoch;
        row.cost = scale * j_after;
        row.reassignments = 0;
        row.step = 0.0;
        row.grad_norm = 0.0;
        row.seconds = seconds_since(iter_t0);
        trace.rows.push_back(row);
        trace.final_full_cost = scale * j_after;
        break;
      }

      const InnerResult inner =
          bfgs_minimize(problem, scaling, x, assigned, batch, scale, config);
      x = inner.x;
      prev_inner_converged = inner.converged;

      TraceRow row;
      row.iter = iter;
      row.epoch = epoch;
      row.cost = inner.cost;
      row.reassignments = changes;
      row.step = inner.last_step;
      row.grad_norm = inner.grad_norm;
      row.seconds = seconds_since(iter_t0);
      trace.rows.push_back(row);
      ++iter;
    }
  }
  } catch (const NumericError& e) {
    throw SolverFailure(std::string("multi-step solve failed: ") + e.what(), std::move(trace));
  }
  if (!trace.converged) {
    trace.converged = true;
    trace.reason = "epoch_budget";
  }

  params = with_theta(problem.initial, scaling.cwiseProduct(x));
  if (!x.allFinite()) {
    throw SolverFailure("multi-step solve produced non-finite parameters", std::move(trace));
  }
  CorrespondenceMap final_map =
      assign_closest(problem.pixel_sets, project_nodes(params, problem, false).per_view,
                     problem.p);
  trace.final_full_cost = cost_value(params, final_map, problem);
  log::info("multi_step finished: cost ", fmt_g17(trace.final_full_cost), ", ",
            trace.rows.size(), " outer iterations, ", fmt_fixed(seconds_since(t0), 2), " s");
  return {params, trace};
}

void write_trace_csv(const SolveTrace& trace, const std::string& path) {
  std::ostringstream os;
  os << "iter,epoch,cost,reassignments,step,seconds\n";
  for (const TraceRow& row : trace.rows) {
    os << row.iter << ',' << row.epoch << ',' << fmt_g17(row.cost) << ',' << row.reassignments
       << ',' << fmt_g17(row.step) << ',' << fmt_fixed(row.seconds, 6) << '\n';
  }
  write_text_file(path, os.str());
}

}  // namespace recon
