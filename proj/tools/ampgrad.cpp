// ampgrad: experiment harness around the gradient-amplification trainer.
//
//   ampgrad run   --config cfg.json
//   ampgrad sweep --mode {step1,step2,gamma} --config base.json [...]
//   ampgrad plot  --summary out/summary.csv
//
// Config schema is documented in README.md; see configs/ for examples.

#include <CLI11.hpp>

#include <iostream>
#include <sstream>

#include "ampgrad/ampgrad.hpp"

using namespace ampgrad;

namespace {

std::vector<double> parse_double_list(const std::string& csv) {
  std::vector<double> out;
  std::stringstream ss(csv);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (tok.empty()) continue;
    out.push_back(std::stod(tok));
  }
  return out;
}

int do_run(const std::string& config_path, const std::string& out_override) {
  ExperimentConfig cfg = load_experiment_config(config_path);
  if (!out_override.empty()) cfg.out_dir = out_override;
  return run_experiment(cfg, std::cout);
}

int do_sweep(const std::string& config_path, const std::string& mode, const std::string& mm_csv,
             const std::string& grid, const std::string& schedule_label,
             const std::string& out_override, bool dry_run) {
  ExperimentConfig cfg = load_experiment_config(config_path);
  if (!out_override.empty()) cfg.out_dir = out_override;
  const Schedule base = baseline_schedule(cfg.base_scale);

  std::vector<Schedule> points;
  if (mode == "step1") {
    points = sweep_step1(base);
  } else if (mode == "step2") {
    std::vector<double> mm = default_step2_ratios();
    if (!mm_csv.empty()) mm = parse_double_list(mm_csv);
    points = sweep_step2(base, mm);
  } else if (mode == "gamma") {
    if (schedule_label.empty())
      throw ConfigError("sweep gamma: --schedule <label> is required (the fixed best schedule)");
    const Schedule best = schedule_from_label(schedule_label, base);
    std::vector<double> g;
    if (grid == "coarse")
      g = gamma_grid_coarse();
    else if (grid == "fine")
      g = gamma_grid_fine();
    else
      g = parse_double_list(grid);
    points = sweep_gamma(best, g);
  } else {
    throw ConfigError("unknown sweep mode '" + mode + "' (expected step1, step2 or gamma)");
  }

  // baseline runs anchor the improvement columns of every sweep
  cfg.schedules.clear();
  cfg.schedules.push_back(base);
  cfg.schedules.insert(cfg.schedules.end(), points.begin(), points.end());

  std::cout << "sweep " << mode << ": " << cfg.schedules.size() << " schedule(s) x "
            << cfg.seeds.size() << " seed(s) -> " << cfg.out_dir << "\n";
  for (const auto& s : cfg.schedules) std::cout << "  " << s.label << "\n";
  if (dry_run) return 0;
  return run_experiment(cfg, std::cout);
}

int do_plot(const std::string& summary_path) {
  const std::string out_dir = std::filesystem::path(summary_path).parent_path().string();
  const auto written = emit_plot_data(out_dir.empty() ? "." : out_dir);
  for (const auto& p : written) std::cout << "wrote " << p << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"gradient amplification experiment harness"};
  app.require_subcommand(1);

  std::string config_path, out_override;
  auto* run_cmd = app.add_subcommand("run", "execute the runs described by a config file");
  run_cmd->add_option("--config", config_path, "experiment config (JSON)")->required();
  run_cmd->add_option("--out", out_override, "override the config's output directory");

  std::string mode, mm_csv, grid = "coarse", schedule_label, sweep_config, sweep_out;
  bool dry_run = false;
  auto* sweep_cmd = app.add_subcommand("sweep", "expand and run a protocol sweep");
  sweep_cmd->add_option("--mode", mode, "step1 | step2 | gamma")->required();
  sweep_cmd->add_option("--config", sweep_config, "base experiment config (JSON)")->required();
  sweep_cmd->add_option("--mm", mm_csv, "step2: comma-separated step-1 ratios (default 0.1,0.3,0.5,0.6)");
  sweep_cmd->add_option("--grid", grid, "gamma: coarse | fine | comma-separated values");
  sweep_cmd->add_option("--schedule", schedule_label, "gamma: the fixed schedule label, e.g. S2_0.5_0.3");
  sweep_cmd->add_option("--out", sweep_out, "override the config's output directory");
  sweep_cmd->add_flag("--dry-run", dry_run, "print the expanded plan without running");

  std::string summary_path;
  auto* plot_cmd = app.add_subcommand("plot", "emit plot-ready TSV files from a finished sweep");
  plot_cmd->add_option("--summary", summary_path, "summary.csv of a finished experiment")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (run_cmd->parsed()) return do_run(config_path, out_override);
    if (sweep_cmd->parsed())
      return do_sweep(sweep_config, mode, mm_csv, grid, schedule_label, sweep_out, dry_run);
    if (plot_cmd->parsed()) return do_plot(summary_path);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "unexpected error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
