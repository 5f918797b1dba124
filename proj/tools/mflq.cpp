// Command-line front end: model-based and trajectory-driven solves, residual
// checks and closed-loop simulation from a JSON problem file.

#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>

#include "mflq/cli.hpp"

namespace {

struct Overrides {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<long> paths;
  std::optional<long> steps;
  std::optional<double> dt;
  std::optional<double> epsilon;
  std::optional<int> max_iter;
  bool auto_gain = false;
  bool adaptive_horizon = false;
};

void add_common(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--config", o.config, "problem file (JSON)")->required()->check(CLI::ExistingFile);
  cmd->add_option("--seed", o.seed, "RNG seed");
  cmd->add_option("--out", o.out, "output directory");
  cmd->add_option("--paths", o.paths, "sample paths per initial state")->check(CLI::PositiveNumber);
  cmd->add_option("--steps", o.steps, "time steps L")->check(CLI::PositiveNumber);
  cmd->add_option("--dt", o.dt, "time step")->check(CLI::PositiveNumber);
  cmd->add_flag("--auto-gain", o.auto_gain, "search for a stabilizer when the config has no gain");
  cmd->add_flag("--adaptive-horizon", o.adaptive_horizon,
                "extend T until the exact mean falls below 1e-6 |x0|");
}

mflq::ProblemConfig load(const Overrides& o, bool model_mode) {
  mflq::ProblemConfig cfg = mflq::load_config(o.config);
  if (o.seed) cfg.seed = cfg.rl.seed = *o.seed;
  if (o.out) cfg.out_dir = *o.out;
  if (o.paths) cfg.paths = cfg.rl.H = *o.paths;
  if (o.steps) cfg.grid.steps = cfg.rl.grid.steps = *o.steps;
  if (o.dt) cfg.grid.dt = cfg.rl.grid.dt = *o.dt;
  if (o.epsilon && !model_mode) cfg.rl.epsilon = *o.epsilon;
  if (o.max_iter && !model_mode) cfg.rl.max_iter = *o.max_iter;
  cfg.rl.validate();
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Mean-field linear-quadratic control: Riccati solves and policy iteration"};
  app.require_subcommand(1);

  Overrides o;
  std::string mode = "model";
  std::string pair_file, gain_file;

  auto* solve = app.add_subcommand("solve", "solve the coupled Riccati equations");
  add_common(solve, o);
  solve->add_option("--mode", mode, "model or rl")->check(CLI::IsMember({"model", "rl"}));
  solve->add_option("--epsilon", o.epsilon, "stopping tolerance")->check(CLI::PositiveNumber);
  solve->add_option("--max-iter", o.max_iter, "iteration cap")->check(CLI::PositiveNumber);

  auto* check = app.add_subcommand("check-gare", "print Riccati residuals of a stored pair");
  add_common(check, o);
  check->add_option("--pair", pair_file, "JSON file with P and Phat")
      ->required()
      ->check(CLI::ExistingFile);

  auto* sim = app.add_subcommand("simulate", "simulate the closed loop under a gain");
  add_common(sim, o);
  sim->add_option("--gain", gain_file, "JSON file with K and Khat")->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    const bool model_mode = solve->parsed() && mode == "model";
    const mflq::ProblemConfig cfg = load(o, model_mode);
    mflq::RunOptions run;
    run.auto_gain = o.auto_gain;
    run.adaptive_horizon = o.adaptive_horizon;

    if (solve->parsed()) {
      if (model_mode) {
        mflq::SolveOptions so;
        if (o.epsilon) so.epsilon = *o.epsilon;
        if (o.max_iter) so.max_iter = *o.max_iter;
        return mflq::cmd_solve_model_based(cfg, so, run);
      }
      return mflq::cmd_run_rl(cfg, run);
    }
    if (check->parsed()) return mflq::cmd_check_gare(cfg, pair_file, run);
    return mflq::cmd_simulate(cfg, gain_file, run);
  } catch (const mflq::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return mflq::exit_code_for(e.kind());
  }
}
