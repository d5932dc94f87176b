#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "recon/eval.hpp"
#include "recon/icp.hpp"

namespace recon {

// File-level run configuration shared by the CLI subcommands. All referenced
// inputs are loaded and validated up front so long solves cannot die late on
// a typo.
struct RunConfig {
  std::string scenario_path;
  std::string calib_path;          // overrides/supplies the rig if set
  std::string solver_config_path;  // optional; defaults otherwise
  std::string images_dir;          // reconstruct/warmstart input
  std::string out_dir;
  std::string warmstart = "none";  // none | epipolar | file:PATH
  std::optional<std::uint64_t> seed;
  int n_seeds = 0;
  int threads = 0;
  std::optional<int> dilation_radius;  // simulate override
  std::string points_path;             // evaluate: measured 3D points CSV
  std::string recon_path;              // evaluate: theta.json of a reconstruction
  std::string truth_csv;               // evaluate: explicit truth samples
  std::string recon_csv;               // evaluate: explicit recon samples
  std::string report_path;             // export-plot input
};

struct LoadedInputs {
  Scenario scenario;
  SolverConfig solver;
};

LoadedInputs load_and_validate(const RunConfig& config, bool need_solver);

// simulate: one PGM per camera plus truth.csv (1000 samples).
void run_simulate(const RunConfig& config);

// warmstart: epipolar pipeline to warmstart.csv, skeleton debug CSVs and
// theta0.json.
void run_warmstart(const RunConfig& config);

// reconstruct: solve from images, writing theta.json, trace.csv, recon.csv
// (and warmstart.csv when applicable).
void run_reconstruct(const RunConfig& config);

// evaluate: repeated-seed experiment when n_seeds > 0, otherwise single
// metrics against the scenario truth / provided files.
void run_evaluate(const RunConfig& config);

// export-plot: RunReport JSON to a flat CSV series for external plotting.
void run_export_plot(const RunConfig& config);

// Shared artifact helpers (also used by the acceptance suite).
void write_theta_json(const CurveParams& params, const SegmentGrid& grid,
                      const SolverConfig& config, const SolveTrace& trace,
                      const std::string& path);
CurveParams read_theta_json(const std::string& path, SegmentGrid* grid_out = nullptr);

}  // namespace recon
