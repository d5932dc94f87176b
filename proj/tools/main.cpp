#include <cstdint>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "recon/errors.hpp"
#include "recon/pipeline.hpp"

namespace {

void add_common(CLI::App* cmd, recon::RunConfig& config) {
  cmd->add_option("--scenario", config.scenario_path, "Scenario JSON file");
  cmd->add_option("--calib", config.calib_path, "Calibration JSON overriding the scenario rig");
  cmd->add_option("--out", config.out_dir, "Output directory");
  cmd->add_option("--threads", config.threads, "Worker pool cap (0 = all cores)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"3D backbone reconstruction of slender continuum robots from binary images"};
  app.require_subcommand(1);

  recon::RunConfig config;
  std::int64_t seed_raw = -1;

  CLI::App* simulate = app.add_subcommand("simulate", "Generate synthetic images and truth.csv");
  add_common(simulate, config);
  simulate->add_option("--seed", seed_raw, "Run seed (recorded; generation is deterministic)");
  simulate->add_option("--dilation-radius", [&config](const std::vector<std::string>& v) {
    config.dilation_radius = std::stoi(v.at(0));
    return true;
  }, "Override the scenario dilation radius");

  CLI::App* warmstart =
      app.add_subcommand("warmstart", "Epipolar warm start from a simulated image pair");
  add_common(warmstart, config);
  warmstart->add_option("--images", config.images_dir, "Directory with view_<i>.pgm files");

  CLI::App* reconstruct = app.add_subcommand("reconstruct", "Fit the backbone curve to images");
  add_common(reconstruct, config);
  reconstruct->add_option("--images", config.images_dir, "Directory with view_<i>.pgm files");
  reconstruct->add_option("--solver-config", config.solver_config_path, "Solver JSON config");
  reconstruct->add_option("--seed", seed_raw, "Override the solver seed");
  reconstruct->add_option("--warmstart", config.warmstart,
                          "none | epipolar | file:PATH (warm-start points CSV)");

  CLI::App* evaluate = app.add_subcommand("evaluate", "Metrics or repeated-seed experiments");
  add_common(evaluate, config);
  evaluate->add_option("--solver-config", config.solver_config_path, "Solver JSON config");
  evaluate->add_option("--seed", seed_raw, "Override the solver seed");
  evaluate->add_option("--seeds", config.n_seeds, "Number of experiment seeds");
  evaluate->add_option("--warmstart", config.warmstart, "none | epipolar");
  evaluate->add_option("--recon", config.recon_path, "theta.json of a reconstruction");
  evaluate->add_option("--recon-csv", config.recon_csv, "Reconstruction samples CSV");
  evaluate->add_option("--truth-csv", config.truth_csv, "Ground-truth samples CSV");
  evaluate->add_option("--points", config.points_path, "Measured 3D points CSV (s,x,y,z)");

  CLI::App* export_plot = app.add_subcommand("export-plot", "Flatten report.json to plot CSV");
  export_plot->add_option("--report", config.report_path, "RunReport JSON file");
  export_plot->add_option("--out", config.out_dir, "Output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  if (seed_raw >= 0) config.seed = static_cast<std::uint64_t>(seed_raw);

  try {
    if (simulate->parsed()) recon::run_simulate(config);
    if (warmstart->parsed()) recon::run_warmstart(config);
    if (reconstruct->parsed()) recon::run_reconstruct(config);
    if (evaluate->parsed()) recon::run_evaluate(config);
    if (export_plot->parsed()) recon::run_export_plot(config);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return recon::exit_code_for(e);
  }
  return 0;
}
