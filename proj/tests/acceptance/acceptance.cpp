// Acceptance runner: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails. Tolerances and problem sizes are fixed here, not tuned.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "../test_util.hpp"
#include "mflq/cli.hpp"

namespace {

using namespace mflq;
using mflq::testing::s;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string num(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", x);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

double rel_frobenius(const Matrix& estimate, const Matrix& reference) {
  return (estimate - reference).norm() / reference.norm();
}

// 1. Scalar baseline against the positive root of −2P + 1 − P² = 0.
Outcome scalar_oracle() {
  const double root = (-2.0 + std::sqrt(8.0)) / 2.0;
  const auto t0 = std::chrono::steady_clock::now();
  const auto inst = mflq::testing::s0();
  const SolveResult r = solve_gare_model_based(inst.sys, inst.w, inst.gain0);
  const double elapsed = seconds_since(t0);
  const double err = std::max({std::abs(r.pair.P()(0, 0) - root),
                               std::abs(r.pair.Phat()(0, 0) - root),
                               std::abs(r.gain.K()(0, 0) + root),
                               std::abs(r.gain.Khat()(0, 0) + root)});
  return {err <= 1e-10 && elapsed < 1.0,
          "max |error| " + num(err) + " (tol 1e-10), " + num(elapsed) + " s (limit 1 s)"};
}

// 2. One data-driven evaluation against the Lyapunov recursion, same gain.
//
// Instances are drawn with full noise and a searched stabilizer, then kept only
// when the estimator is well posed under that gain: the fourth moment of the
// fluctuation decays (otherwise the Monte Carlo objectives have unbounded
// variance) and cond(Ĉ + D̂K̂) ≤ 10 (the P system sees the fluctuation weight
// only through (Ĉ + D̂K̂)X̄, so a near-singular matrix leaves a direction of P
// unobserved). The number of discarded draws is reported.
Outcome evaluation_equivalence() {
  std::mt19937_64 rng(20240611);
  bool pass = true;
  std::string detail;
  int discarded = 0;
  for (int k = 0; k < 3;) {
    const auto inst = mflq::testing::random_instance(rng, 2, 1 + k % 2, 0.3, true);
    const ClosedLoopMatrices cl = closed_loop(inst.sys, inst.gain0);
    const Vector sv = singular_values(cl.Chat);
    if (mflq::testing::fourth_moment_abscissa(cl.A, cl.C) >= 0.0 ||
        sv(0) > 10.0 * sv(sv.size() - 1)) {
      ++discarded;
      continue;
    }
    const auto t0 = std::chrono::steady_clock::now();
    RlConfig cfg;
    cfg.H = 10000;
    cfg.grid = {0.005, 4000};
    cfg.seed = 1000 + static_cast<std::uint64_t>(k);
    const std::vector<Vector> states = sample_initial_states(cfg, 2);
    const SimulatedEnvironment env(inst.sys, cfg.grid, cfg.H);
    const auto bundles = env.run(inst.gain0, states, cfg.seed);
    const EvaluationBatch batch = assemble_evaluation_batch(
        states, bundles, inst.gain0, ModelFreeView::from(inst.sys), inst.w);
    const RiccatiPair data = evaluate_policy(batch, duplication_matrix(2));
    const double elapsed = seconds_since(t0);
    const RiccatiPair ref = lyapunov_recursion_step(inst.sys, inst.w, inst.gain0);
    const double eP = rel_frobenius(data.P(), ref.P());
    const double ePhat = rel_frobenius(data.Phat(), ref.Phat());
    const bool ok = eP <= 0.05 && ePhat <= 0.05 && elapsed < 120.0;
    pass = pass && ok;
    detail += (k ? "; " : "") + std::string("instance ") + std::to_string(k) + ": rel err P " +
              num(eP) + ", Phat " + num(ePhat) + ", " + num(elapsed) + " s";
    ++k;
  }
  return {pass, detail + " (tol 5%, limit 120 s each; " + std::to_string(discarded) +
                    " draws discarded as ill-posed for Monte Carlo)"};
}

// 3. Monotone model-based iteration on random instances.
Outcome monotone_convergence() {
  std::mt19937_64 rng(99);
  std::vector<mflq::testing::Instance> instances;
  for (int k = 0; k < 20; ++k) {
    instances.push_back(mflq::testing::random_instance(rng, 2 + k % 2, 1 + (k / 2) % 2));
  }
  const auto t0 = std::chrono::steady_clock::now();
  double worst_eig = INFINITY, worst_resid = 0.0;
  bool stabilizing = true, pdc = true;
  for (const auto& inst : instances) {
    pdc = pdc && check_pdc(inst.w).satisfied;
    const SolveResult r = solve_gare_model_based(inst.sys, inst.w, inst.gain0);
    for (std::size_t i = 1; i < r.history.size(); ++i) {
      worst_eig = std::min(worst_eig, min_eigenvalue(r.history[i - 1].pair.P() -
                                                     r.history[i].pair.P()));
      worst_eig = std::min(worst_eig, min_eigenvalue(r.history[i - 1].pair.Phat() -
                                                     r.history[i].pair.Phat()));
    }
    for (const auto& rec : r.history) stabilizing = stabilizing && is_stabilizer(inst.sys, rec.gain);
    worst_resid = std::max(worst_resid,
                           std::max(r.residual, r.residual_hat) / (1.0 + inst.w.Q().norm()));
  }
  const double elapsed = seconds_since(t0);
  return {pdc && worst_eig >= -1e-9 && stabilizing && worst_resid <= 1e-8 && elapsed < 30.0,
          "min eig of successive differences " + num(worst_eig) +
              " (tol -1e-9), all gains stabilizing: " + (stabilizing ? "yes" : "no") +
              ", max residual/(1+|Q|) " + num(worst_resid) + " (tol 1e-8), " + num(elapsed) +
              " s (limit 30 s)"};
}

// 4. Full trajectory-driven run on the noise-free scalar baseline.
Outcome scalar_rl_residuals() {
  const auto inst = mflq::testing::s0();
  RlConfig cfg;
  cfg.H = 100000;
  cfg.grid = {0.01, 2000};
  cfg.epsilon = 1e-3;
  cfg.max_iter = 15;
  cfg.seed = 4;
  const auto t0 = std::chrono::steady_clock::now();
  try {
    const RlResult r =
        run_algorithm1(inst.sys, ModelFreeView::from(inst.sys), inst.w, inst.gain0, cfg);
    const double elapsed = seconds_since(t0);
    const IterationRecord& last = r.history.back();
    return {last.residP <= 1e-3 && last.residPhat <= 1e-3 && r.iterations <= 15 && elapsed < 300,
            "residuals " + num(last.residP) + " / " + num(last.residPhat) + " (tol 1e-3), " +
                std::to_string(r.iterations) + " iterations (limit 15), " + num(elapsed) + " s"};
  } catch (const Error& e) {
    return {false, std::string(e.what()) + " after " + num(seconds_since(t0)) +
                       " s. Without diffusion every path equals its mean, so the P system"
                       " has no rows"};
  }
}

// 5. Fundamental-solution estimate against the stochastic Lyapunov solve.
Outcome fundamental_cross_check() {
  std::mt19937_64 rng(5);
  std::vector<mflq::testing::Instance> instances = {
      mflq::testing::scalar(mflq::testing::noisy_scalar_coeffs()),
      mflq::testing::random_instance(rng, 2, 1, 0.3)};
  bool pass = true;
  std::string detail;
  for (std::size_t k = 0; k < instances.size(); ++k) {
    const auto& inst = instances[k];
    const ClosedLoopMatrices cl = closed_loop(inst.sys, inst.gain0);
    const Matrix exact =
        solve_stochastic_lyapunov(cl.A, cl.C, fluctuation_weight(inst.w, inst.gain0.K()));
    // Euler bias of the second moment is about a²Δs/|2a + c²| relative; at this
    // step it is a fraction of one standard error.
    const SimGrid grid{0.00025, 48000};
    SimOptions opts;
    opts.paths = 10000;
    opts.seed = 77 + k;
    const FundamentalEstimate e = estimate_P_fundamental(inst.sys, inst.w, inst.gain0, grid, opts);
    double worst = 0.0;
    for (Eigen::Index i = 0; i < exact.size(); ++i) {
      const double se = e.stderr_.data()[i];
      const double gap = std::abs(e.P.data()[i] - exact.data()[i]);
      worst = std::max(worst, se > 0 ? gap / se : (gap == 0 ? 0.0 : INFINITY));
    }
    pass = pass && worst <= 3.0;
    detail += (k ? "; " : "") + std::string(inst.sys.n() == 1 ? "scalar" : "2x2") +
              ": max |gap|/SE " + num(worst);
  }
  return {pass, detail + " (tol 3 SE, H = 1e4, dt 2.5e-4, T 12)"};
}

// 6. vec, duplication, Kronecker and least-squares properties.
Outcome kronecker_suite() {
  std::mt19937_64 rng(6);
  double dup = 0.0, kron_err = 0.0, ls_err = 0.0;
  bool ranks = true;
  for (Eigen::Index n = 1; n <= 6; ++n) {
    const DuplicationMatrix T = duplication_matrix(n);
    ranks = ranks && numerical_rank(T.T) == half_vec_size(n);
    for (int trial = 0; trial < 10; ++trial) {
      const Matrix G = mflq::testing::random_matrix(rng, n, n, 1.0);
      const Matrix P = G + G.transpose();
      dup = std::max(dup, (vec(P) - T.T * vec_plus(P)).cwiseAbs().maxCoeff());

      const Matrix A = mflq::testing::random_matrix(rng, n + 1, n, 1.0);
      const Matrix B = mflq::testing::random_matrix(rng, n, n + 2, 1.0);
      const Matrix C = mflq::testing::random_matrix(rng, n + 2, n, 1.0);
      kron_err = std::max(
          kron_err, (vec(A * B * C) - kron(C.transpose(), A) * vec(B)).cwiseAbs().maxCoeff());

      const Eigen::Index k = half_vec_size(n);
      const Matrix M = mflq::testing::random_matrix(rng, k + 5, k, 1.0);
      const Vector planted = mflq::testing::random_matrix(rng, k, 1, 1.0);
      ls_err = std::max(ls_err,
                        (solve_least_squares(M, M * planted) - planted).cwiseAbs().maxCoeff());
    }
  }
  return {dup == 0.0 && ranks && kron_err <= 1e-12 && ls_err <= 1e-12,
          "vec(P) - T vec+(P) max " + num(dup) + " (exact), rank(T) = n(n+1)/2: " +
              (ranks ? "yes" : "no") + ", vec(ABC) identity " + num(kron_err) +
              ", planted recovery " + num(ls_err) + " (tol 1e-12), n = 1..6"};
}

// 7. The evaluation and improvement path works from input and diffusion
// coefficients plus trajectories. Checked at compile time and exercised once.
template <class T>
concept HasDrift = requires(const T& v) { v.A(); } || requires(const T& v) { v.Abar(); } ||
                   requires(const T& v) { v.Ahat(); };

struct RecordedTrajectories {
  std::vector<TrajectoryBundle> bundles;
  std::vector<TrajectoryBundle> run(const FeedbackGain&, const std::vector<Vector>&,
                                    std::uint64_t) const {
    return bundles;
  }
};

Outcome model_free_discipline() {
  static_assert(!HasDrift<ModelFreeView>);
  static_assert(HasDrift<MfSystem>);
  static_assert(TrajectorySource<RecordedTrajectories>);

  const auto k = mflq::testing::noisy_scalar_coeffs();
  const auto inst = mflq::testing::scalar(k);
  RlConfig cfg;
  cfg.H = 2000;
  cfg.grid = {0.01, 800};
  cfg.seed = 7;
  RecordedTrajectories recorded;
  {
    // The model lives only inside this scope, where the recording is made.
    const SimulatedEnvironment env(inst.sys, cfg.grid, cfg.H);
    recorded.bundles = env.run(inst.gain0, sample_initial_states(cfg, 1), 0);
  }
  const ModelFreeView view(s(k.b), s(k.bbar), s(k.c), s(k.cbar), s(k.d), s(k.dbar));
  const EvaluationBatch batch = assemble_evaluation_batch(
      sample_initial_states(cfg, 1), recorded.run(inst.gain0, {}, 0), inst.gain0, view, inst.w);
  const RiccatiPair pair = evaluate_policy(batch, duplication_matrix(1));
  const FeedbackGain improved = improve_policy(pair, view, inst.w);
  const bool finite = pair.P().allFinite() && pair.Phat().allFinite() &&
                      improved.K().allFinite() && improved.Khat().allFinite();
  return {finite,
          "ModelFreeView has no drift accessor (compile-time); evaluation and improvement ran"
          " from B, Bbar, C, Cbar, D, Dbar and recorded trajectories only"};
}

// 8. Byte-identical logs at worker counts 1 and 8.
Outcome reproducibility() {
  const auto inst = mflq::testing::scalar(mflq::testing::noisy_scalar_coeffs());
  const std::filesystem::path root =
      std::filesystem::temp_directory_path() / ("mflq_acceptance_" + std::to_string(::getpid()));
  std::vector<std::string> logs;
  std::ostringstream sink;
  RunOptions run;
  run.log = &sink;
  int codes = 0;
  for (unsigned threads : {1u, 8u}) {
    ProblemConfig cfg{inst.sys, inst.w, inst.gain0, RlConfig{}, SimGrid{}};
    cfg.seed = cfg.rl.seed = 8;
    cfg.rl.H = 3000;
    cfg.rl.grid = {0.01, 800};
    cfg.rl.epsilon = 0.02;
    cfg.rl.max_iter = 10;
    cfg.rl.threads = threads;
    cfg.out_dir = (root / std::to_string(threads)).string();
    codes |= cmd_run_rl(cfg, run);
    std::ifstream jsonl(root / std::to_string(threads) / "history.jsonl", std::ios::binary);
    std::ifstream csv(root / std::to_string(threads) / "history.csv", std::ios::binary);
    std::stringstream ss;
    ss << jsonl.rdbuf() << csv.rdbuf();
    logs.push_back(ss.str());
  }
  std::filesystem::remove_all(root);
  const bool same = logs[0] == logs[1] && !logs[0].empty();
  return {same && codes == 0, std::string("history.jsonl and history.csv ") +
                                  (same ? "identical" : "differ") + " at 1 vs 8 workers (" +
                                  std::to_string(logs[0].size()) + " bytes), exit codes " +
                                  (codes == 0 ? "0" : "nonzero")};
}

// 9. Without noise the simulated cost under the optimal gain is x0ᵀP̂x0.
Outcome value_consistency() {
  Matrix A(2, 2), Abar(2, 2), B(2, 1), Bbar(2, 1);
  A << -0.5, 1.0,
       0.0, -1.0;
  Abar << 0.2, 0.0,
          0.1, 0.3;
  B << 0.0,
       1.0;
  Bbar << 0.2,
          0.0;
  const Matrix Z22 = Matrix::Zero(2, 2), Z21 = Matrix::Zero(2, 1);
  const MfSystem sys(A, Abar, B, Bbar, Z22, Z22, Z21, Z21);
  Matrix Q(2, 2);
  Q << 2.0, 0.5,
       0.5, 1.0;
  const CostWeights w(Q, 0.5 * Matrix::Identity(2, 2), Matrix::Zero(1, 2), Matrix::Zero(1, 2),
                      s(1.0), s(0.5));
  const SolveResult opt = solve_gare_model_based(sys, w, find_stabilizer(sys));
  double worst = 0.0;
  for (const Vector& x0 : {Vector((Vector(2) << 1.0, 2.0).finished()),
                           Vector((Vector(2) << -3.0, 0.5).finished())}) {
    SimOptions so;
    so.paths = 4;
    const TrajectoryBundle b = simulate_closed_loop(sys, opt.gain, x0, {0.01, 2000}, so);
    const double cost = estimate_cost(b, w, opt.gain);
    const double value = x0.dot(opt.pair.Phat() * x0);
    worst = std::max(worst, std::abs(cost - value) / value);
  }
  return {worst <= 0.02, "max relative gap " + num(worst) + " (tol 2%, dt 0.01, T 20)"};
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
      {"scalar oracle", scalar_oracle},
      {"data-driven evaluation vs Lyapunov recursion", evaluation_equivalence},
      {"monotone model-based convergence", monotone_convergence},
      {"scalar baseline trajectory-driven residuals", scalar_rl_residuals},
      {"fundamental-solution cross-check", fundamental_cross_check},
      {"Kronecker machinery", kronecker_suite},
      {"model-free discipline", model_free_discipline},
      {"reproducibility across worker counts", reproducibility},
      {"value-function consistency", value_consistency},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += o.pass ? 0 : 1;
    std::cout << "CRITERION " << i + 1 << ' ' << (o.pass ? "PASS" : "FAIL") << ": "
              << criteria[i].first << ": " << o.detail << std::endl;
  }
  std::cout << failures << " of " << criteria.size() << " criteria failed" << std::endl;
  return failures ? 1 : 0;
}
