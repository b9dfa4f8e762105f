// Command-line front end: scenario runs, refinement/solver studies, and
// re-export of saved states as VTK surfaces.

#include <cstdio>
#include <exception>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <Eigen/Core>

#include "bilayer/scenarios.hpp"

namespace {

bilayer::ScenarioConfig load_config(const std::string& preset, const std::string& config_path,
                                    const std::vector<std::string>& overrides) {
  bilayer::ScenarioConfig cfg;
  if (!config_path.empty()) {
    std::ifstream in(config_path);
    if (!in) throw std::runtime_error("cannot open config file " + config_path);
    cfg = bilayer::parse_config(in, config_path);
  } else if (!preset.empty()) {
    cfg = bilayer::scenario_preset(preset);
  } else {
    throw std::runtime_error("need --preset or --config");
  }
  if (!preset.empty() && !config_path.empty() && cfg.scenario != preset)
    cfg = bilayer::scenario_preset(preset);  // --preset wins, file overrides follow
  for (const std::string& ov : overrides) bilayer::apply_override(cfg, ov);
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"LDG bending solver for bilayer plates"};
  app.require_subcommand(1);

  std::string preset, config_path, out_dir;
  std::vector<std::string> overrides;
  int threads = 1;
  bool deterministic = false;

  auto* run = app.add_subcommand("run", "run a scenario");
  run->add_option("--preset", preset, "scenario preset name");
  run->add_option("--config", config_path, "config file (key = value lines)");
  run->add_option("--override", overrides, "key=value override, repeatable");
  run->add_option("--out", out_dir, "output directory");
  run->add_option("--threads", threads, "worker thread cap");
  run->add_flag("--deterministic", deterministic, "force bitwise-reproducible reductions");

  std::string study_kind = "hessian_convergence", study_out;
  int levels = 3;
  auto* study = app.add_subcommand("study", "refinement / solver-scaling studies");
  study->add_option("--kind", study_kind,
                    "hessian_convergence | interpolation | cg_scaling");
  study->add_option("--levels", levels, "number of refinement levels");
  study->add_option("--out", study_out, "CSV output path");

  std::string state_path, export_out = "surface.vtk";
  auto* exp = app.add_subcommand("export", "export a saved state as a VTK surface");
  exp->add_option("--state", state_path, "final_state file")->required();
  exp->add_option("--out", export_out, "VTK output path");

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) {
      bilayer::ScenarioConfig cfg = load_config(preset, config_path, overrides);
      if (!out_dir.empty()) cfg.out_dir = out_dir;
      if (deterministic) threads = 1;
      cfg.threads = threads;
      cfg.deterministic = deterministic || cfg.deterministic;
      Eigen::setNbThreads(threads);
      const bilayer::ScenarioReport rep = bilayer::run_scenario(cfg);
      std::printf("scenario %s: %d steps, E_h = %.6f (B_h = %.6f, C_h = %.6f), "
                  "mismatch energy = %.6f, max defect = %.3e, %s\n",
                  cfg.scenario.c_str(), rep.steps, rep.final_energy, rep.final_bending,
                  rep.final_cubic, rep.mismatch_energy, rep.max_defect,
                  rep.stopped_by_tolerance ? "stopped by tolerance" : "hit max_steps");
    } else if (study->parsed()) {
      const auto rows = bilayer::manufactured_study(study_kind, levels, study_out);
      std::printf("level,elements,h,value,ratio,extra\n");
      for (const auto& r : rows)
        std::printf("%d,%d,%.6g,%.6g,%.6g,%.6g\n", r.level, r.elements, r.h, r.value, r.ratio,
                    r.extra);
    } else if (exp->parsed()) {
      const bilayer::LoadedState st = bilayer::load_state(state_path);
      bilayer::export_surface(*st.y, export_out);
      std::printf("wrote %s\n", export_out.c_str());
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
