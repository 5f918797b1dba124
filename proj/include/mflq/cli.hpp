#pragma once

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include "mflq/error.hpp"
#include "mflq/gare.hpp"
#include "mflq/io.hpp"
#include "mflq/lyapunov.hpp"
#include "mflq/rl.hpp"
#include "mflq/simulator.hpp"

namespace mflq {

/// 0 success, 1 usage/parse, 2 mathematical precondition, 3 numerical failure.
inline int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Parse:
    case ErrorKind::DimensionMismatch:
    case ErrorKind::Asymmetric:
      return 1;
    case ErrorKind::NotStabilizer:
    case ErrorKind::PdcViolated:
    case ErrorKind::NotSolvable:
      return 2;
    case ErrorKind::SingularInnerTerm:
    case ErrorKind::RankDeficient:
    case ErrorKind::MaxIterationsExceeded:
    case ErrorKind::Diverged:
      return 3;
  }
  return 1;
}

struct RunOptions {
  /// Search for a stabilizer when the config has no initial gain.
  bool auto_gain = false;
  /// Extend the simulation horizon until the exact mean has decayed.
  bool adaptive_horizon = false;
  std::ostream* log = &std::cout;
};

namespace detail {

inline std::filesystem::path prepare_out(const ProblemConfig& cfg) {
  std::filesystem::path dir(cfg.out_dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline std::ofstream open_out(const std::filesystem::path& p) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw Error(ErrorKind::Parse, "cannot write '" + p.string() + "'");
  return out;
}

/// Initial gain from the config; otherwise zero, or a searched stabilizer.
inline FeedbackGain initial_gain(const ProblemConfig& cfg, const RunOptions& opt) {
  if (cfg.gain) return *cfg.gain;
  FeedbackGain zero = FeedbackGain::zero(cfg.m(), cfg.n());
  if (!opt.auto_gain) return zero;
  return find_stabilizer(cfg.system);
}

inline std::string solution_json(const std::string& mode, const RiccatiPair& pair,
                                 const FeedbackGain& gain, int iterations, double resid,
                                 double resid_hat, bool diagnostic) {
  return "{\n  \"mode\": " + json_string(mode) + ",\n  \"iterations\": " +
         std::to_string(iterations) + ",\n  \"P\": " + json_matrix(pair.P()) +
         ",\n  \"Phat\": " + json_matrix(pair.Phat()) + ",\n  \"K\": " + json_matrix(gain.K()) +
         ",\n  \"Khat\": " + json_matrix(gain.Khat()) + ",\n  \"residP\": " + fmt17(resid) +
         ",\n  \"residPhat\": " + fmt17(resid_hat) +
         (diagnostic ? ",\n  \"residuals_are_diagnostic_only\": true" : "") + "\n}\n";
}

inline std::string error_summary(const Error& e) {
  std::string s = "{\"summary\": true, \"status\": " + json_string(std::string(to_string(e.kind()))) +
                  ", \"message\": " + json_string(e.what());
  if (const auto* rd = dynamic_cast<const RankDeficientError*>(&e)) {
    s += ", \"rank\": " + std::to_string(rd->rank()) +
         ", \"required\": " + std::to_string(rd->required());
  }
  if (const auto* dv = dynamic_cast<const DivergedError*>(&e)) {
    s += ", \"step\": " + std::to_string(dv->step());
  }
  return s + "}\n";
}

}  // namespace detail

/// Model-based solve. Writes solution.json, history.jsonl and history.csv.
inline int cmd_solve_model_based(const ProblemConfig& cfg, const SolveOptions& solve = {},
                                 const RunOptions& opt = {}) {
  std::ostream& log = *opt.log;
  try {
    const FeedbackGain gain0 = detail::initial_gain(cfg, opt);
    const SolveResult r = solve_gare_model_based(cfg.system, cfg.weights, gain0, solve);
    const auto dir = detail::prepare_out(cfg);
    auto jsonl = detail::open_out(dir / "history.jsonl");
    auto csv = detail::open_out(dir / "history.csv");
    csv << history_csv_header();
    for (const auto& rec : r.history) {
      jsonl << record_json(rec) << '\n';
      csv << record_csv(rec);
    }
    jsonl << "{\"summary\": true, \"status\": \"converged\", \"iterations\": " << r.iterations
          << ", \"residP\": " << fmt17(r.residual) << ", \"residPhat\": " << fmt17(r.residual_hat)
          << "}\n";
    detail::open_out(dir / "solution.json")
        << detail::solution_json("model", r.pair, r.gain, r.iterations, r.residual,
                                 r.residual_hat, false);
    log << "converged after " << r.iterations << " iterations; |R(P)|_F = " << fmt17(r.residual)
        << ", |Rhat(P,Phat)|_F = " << fmt17(r.residual_hat) << '\n';
    return 0;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code_for(e.kind());
  }
}

/// Trajectory-driven solve. Records are streamed as they are produced so a run
/// that stops early still leaves its partial history behind.
inline int cmd_run_rl(const ProblemConfig& cfg, const RunOptions& opt = {}) {
  std::ostream& log = *opt.log;
  std::ofstream jsonl, csv;
  try {
    const FeedbackGain gain0 = detail::initial_gain(cfg, opt);
    const auto dir = detail::prepare_out(cfg);
    jsonl = detail::open_out(dir / "history.jsonl");
    csv = detail::open_out(dir / "history.csv");
    csv << history_csv_header();
    csv.flush();

    RlConfig rl = cfg.rl;
    if (opt.adaptive_horizon) {
      rl.grid = adaptive_grid(cfg.system, gain0, sample_initial_states(rl, cfg.n()), rl.grid);
    }
    const RlResult r = run_algorithm1(
        cfg.system, ModelFreeView::from(cfg.system), cfg.weights, gain0, rl,
        [&](const IterationRecord& rec) {
          jsonl << record_json(rec) << '\n';
          csv << record_csv(rec);
          jsonl.flush();
          csv.flush();
        });
    const IterationRecord& last = r.history.back();
    jsonl << "{\"summary\": true, \"status\": \"converged\", \"iterations\": " << r.iterations
          << ", \"residP\": " << fmt17(last.residP) << ", \"residPhat\": " << fmt17(last.residPhat)
          << ", \"residuals_are_diagnostic_only\": true}\n";
    detail::open_out(dir / "solution.json")
        << detail::solution_json("rl", r.pair, r.gain, r.iterations, last.residP, last.residPhat,
                                 true);
    {
      auto states = detail::open_out(dir / "states.csv");
      for (const Vector& x : r.states) {
        for (Eigen::Index i = 0; i < x.size(); ++i) states << (i ? "," : "") << fmt17(x(i));
        states << '\n';
      }
    }
    log << "converged after " << r.iterations << " iterations; diagnostic |R(P)|_F = "
        << fmt17(last.residP) << ", |Rhat(P,Phat)|_F = " << fmt17(last.residPhat) << '\n';
    return 0;
  } catch (const Error& e) {
    if (jsonl.is_open()) jsonl << detail::error_summary(e);
    std::cerr << "error: " << e.what() << '\n';
    return exit_code_for(e.kind());
  }
}

/// Prints the Riccati residual norms and positivity flags for a stored pair.
inline int cmd_check_gare(const ProblemConfig& cfg, const std::string& pair_file,
                          const RunOptions& opt = {}) {
  std::ostream& log = *opt.log;
  try {
    const RiccatiPair pair = load_pair(pair_file, cfg.n());
    const GareResiduals r = gare_residuals(cfg.system, cfg.weights, pair);
    log << "residP " << fmt17(r.norm()) << '\n'
        << "residPhat " << fmt17(r.norm_hat()) << '\n'
        << "inner_pd " << (r.inner_pd ? "true" : "false") << '\n'
        << "inner_hat_pd " << (r.inner_hat_pd ? "true" : "false") << '\n'
        << "P_pd " << (is_positive_definite(pair.P()) ? "true" : "false") << '\n'
        << "Phat_pd " << (is_positive_definite(pair.Phat()) ? "true" : "false") << '\n';
    return 0;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code_for(e.kind());
  }
}

/// Above this many stored values the per-path body of trajectory.csv is omitted.
inline constexpr double kMaxStoredValues = 5e7;

/// Simulates the closed loop from every configured initial state (or the first
/// sampled one) and writes trajectory files plus mean CSVs.
inline int cmd_simulate(const ProblemConfig& cfg, const std::string& gain_file,
                        const RunOptions& opt = {}) {
  std::ostream& log = *opt.log;
  try {
    const FeedbackGain gain = gain_file.empty() ? detail::initial_gain(cfg, opt)
                                                : load_gain(gain_file, cfg.m(), cfg.n());
    std::vector<Vector> states = sample_initial_states(cfg.rl, cfg.n());
    SimGrid grid = cfg.grid;
    if (opt.adaptive_horizon) grid = adaptive_grid(cfg.system, gain, states, grid);

    const double values = static_cast<double>(cfg.paths) * static_cast<double>(grid.steps + 1) *
                          static_cast<double>(cfg.n());
    SimOptions so;
    so.paths = cfg.paths;
    so.keep_paths = values <= kMaxStoredValues;
    so.threads = cfg.rl.threads;
    if (!so.keep_paths) warn("too many values to store every path; writing moments only");

    const auto dir = detail::prepare_out(cfg);
    for (std::size_t j = 0; j < states.size(); ++j) {
      so.seed = derive_seed(cfg.seed, j);
      const TrajectoryBundle b = simulate_closed_loop(cfg.system, gain, states[j], grid, so);
      const DecayReport d = decay_check(b);
      auto traj = detail::open_out(dir / ("trajectory_" + std::to_string(j) + ".csv"));
      write_trajectory(b, traj);
      auto mean = detail::open_out(dir / ("mean_" + std::to_string(j) + ".csv"));
      write_mean_csv(b, mean_ode(cfg.system, gain, states[j], grid), d.second_moment, mean);
      log << "state " << j << ": E|X(T)|^2 / E|X(0)|^2 = "
          << fmt17(d.second_moment(grid.steps) / d.second_moment(0))
          << (d.decayed ? " (decayed)" : " (not decayed)") << '\n';
    }
    return 0;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code_for(e.kind());
  }
}

}  // namespace mflq
