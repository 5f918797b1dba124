#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <functional>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "mflq/error.hpp"
#include "mflq/gare.hpp"
#include "mflq/kron.hpp"
#include "mflq/model.hpp"
#include "mflq/rng.hpp"
#include "mflq/simulator.hpp"

namespace mflq {

/// The coefficients the trajectory-driven loop is allowed to see: input and
/// diffusion matrices only. There is deliberately no way to store or read a
/// drift matrix through this type.
class ModelFreeView {
 public:
  ModelFreeView(Matrix B, Matrix Bbar, Matrix C, Matrix Cbar, Matrix D, Matrix Dbar)
      : B_(std::move(B)),
        Bbar_(std::move(Bbar)),
        C_(std::move(C)),
        Cbar_(std::move(Cbar)),
        D_(std::move(D)),
        Dbar_(std::move(Dbar)) {
    const auto n = C_.rows();
    const auto m = B_.cols();
    detail::require_shape(B_, n, m, "B");
    detail::require_shape(Bbar_, n, m, "Bbar");
    detail::require_shape(C_, n, n, "C");
    detail::require_shape(Cbar_, n, n, "Cbar");
    detail::require_shape(D_, n, m, "D");
    detail::require_shape(Dbar_, n, m, "Dbar");
  }

  /// Drops the drift terms of a full model.
  static ModelFreeView from(const MfSystem& sys) {
    return {sys.B(), sys.Bbar(), sys.C(), sys.Cbar(), sys.D(), sys.Dbar()};
  }

  Eigen::Index n() const { return C_.rows(); }
  Eigen::Index m() const { return B_.cols(); }

  const Matrix& B() const { return B_; }
  const Matrix& Bbar() const { return Bbar_; }
  const Matrix& C() const { return C_; }
  const Matrix& Cbar() const { return Cbar_; }
  const Matrix& D() const { return D_; }
  const Matrix& Dbar() const { return Dbar_; }

  Matrix Bhat() const { return B_ + Bbar_; }
  Matrix Chat() const { return C_ + Cbar_; }
  Matrix Dhat() const { return D_ + Dbar_; }

  /// Ĉ + D̂K̂.
  Matrix closed_loop_Chat(const FeedbackGain& gain) const { return Chat() + Dhat() * gain.Khat(); }

 private:
  Matrix B_, Bbar_, C_, Cbar_, D_, Dbar_;
};

struct RlConfig {
  /// Number of initial states; 0 selects max(n(n+1)/2 + 5, 15).
  long N = 0;
  /// Sample paths per initial state.
  long H = 1000;
  SimGrid grid;
  double epsilon = 1e-3;
  int max_iter = 30;
  std::uint64_t seed = 0;
  /// Initial states are drawn uniformly per coordinate from [state_lo, state_hi].
  double state_lo = 0.0;
  double state_hi = 20.0;
  /// Explicit initial states; overrides sampling when non-empty.
  std::vector<Vector> states;
  /// Decay ratio used to accept the initial gain from simulated data.
  double decay_ratio = 0.05;
  unsigned threads = 0;

  long state_count(Eigen::Index n) const {
    if (!states.empty()) return static_cast<long>(states.size());
    return N > 0 ? N : std::max<long>(half_vec_size(n) + 5, 15);
  }

  void validate() const {
    grid.validate();
    if (N < 0) throw Error(ErrorKind::DimensionMismatch, "N must be non-negative");
    if (H < 1) throw Error(ErrorKind::DimensionMismatch, "H must be positive");
    if (!(epsilon > 0.0)) throw Error(ErrorKind::DimensionMismatch, "epsilon must be positive");
    if (max_iter < 1) throw Error(ErrorKind::DimensionMismatch, "max_iter must be positive");
    if (!(state_hi >= state_lo)) {
      throw Error(ErrorKind::DimensionMismatch, "initial-state range is empty");
    }
    if (!(decay_ratio > 0.0)) {
      throw Error(ErrorKind::DimensionMismatch, "decay ratio must be positive");
    }
  }
};

/// Initial states drawn once per run from their own seed-derived stream.
inline std::vector<Vector> sample_initial_states(const RlConfig& cfg, Eigen::Index n) {
  if (!cfg.states.empty()) {
    for (const Vector& x : cfg.states) {
      if (x.size() != n) throw Error(ErrorKind::DimensionMismatch, "initial state has wrong size");
    }
    return cfg.states;
  }
  std::mt19937_64 engine(derive_seed(cfg.seed, 0xA5A5A5A5ULL));
  std::uniform_real_distribution<double> dist(cfg.state_lo, cfg.state_hi);
  std::vector<Vector> out(static_cast<std::size_t>(cfg.state_count(n)), Vector(n));
  for (Vector& x : out) {
    for (Eigen::Index i = 0; i < n; ++i) x(i) = dist(engine);
  }
  return out;
}

/// Sampled fluctuation cost Σ_l Δs·tr(Λ Cov_l), Λ = Q + SᵀK + KᵀS + KᵀRK,
/// with Cov_l the cross-path covariance about the sample mean.
inline double objective_J0(const TrajectoryBundle& bundle, const FeedbackGain& gain,
                           const CostWeights& w) {
  const Matrix Lambda = fluctuation_weight(w, gain.K());
  const Vector lam = vec(Lambda);
  double total = 0.0;
  for (long l = 0; l < bundle.steps(); ++l) {
    total += bundle.grid.dt * bundle.scatter.row(l).dot(lam);
  }
  return total;
}

/// Standard error of objective_J0 from per-path integrals; NaN when the bundle
/// was simulated without them or holds a single path.
inline double objective_J0_stderr(const TrajectoryBundle& bundle, const FeedbackGain& gain,
                                  const CostWeights& w) {
  const long H = bundle.paths;
  if (bundle.path_integrals.rows() != H || H < 2) {
    return std::numeric_limits<double>::quiet_NaN();
  }
  const Vector per_path = bundle.path_integrals * vec(fluctuation_weight(w, gain.K()));
  const double mean = per_path.mean();
  const double var = (per_path.array() - mean).square().sum() / static_cast<double>(H - 1);
  return std::sqrt(var / static_cast<double>(H));
}

/// 𝒥 = 𝒥₀ + Σ_l Δs·m_lᵀΛ̂m_l, Λ̂ = Q̂ + ŜᵀK̂ + K̂ᵀŜ + K̂ᵀR̂K̂, m_l the sample-mean path.
inline double objective_J(const TrajectoryBundle& bundle, const FeedbackGain& gain,
                          const CostWeights& w) {
  const Matrix LambdaHat = mean_weight(w, gain.Khat());
  double total = objective_J0(bundle, gain, w);
  for (long l = 0; l < bundle.steps(); ++l) {
    const Vector m = bundle.mean.row(l).transpose();
    total += bundle.grid.dt * m.dot(LambdaHat * m);
  }
  return total;
}

struct EvaluationBatch {
  std::vector<Vector> states;
  /// N × n², row j = Σ_l Δs·𝒦((Ĉ+D̂K̂)m_l) along state j's sample-mean path.
  Matrix IX;
  /// N × n², row j = x_jᵀ ⊗ x_jᵀ.
  Matrix Kx;
  Vector J0;
  Vector J;

  long N() const { return static_cast<long>(states.size()); }
};

inline EvaluationBatch assemble_evaluation_batch(const std::vector<Vector>& states,
                                                 const std::vector<TrajectoryBundle>& bundles,
                                                 const FeedbackGain& gain,
                                                 const ModelFreeView& view,
                                                 const CostWeights& w) {
  if (states.size() != bundles.size()) {
    throw Error(ErrorKind::DimensionMismatch, "need exactly one bundle per initial state");
  }
  const auto n = view.n();
  const auto N = static_cast<Eigen::Index>(states.size());
  const Matrix chat_cl = view.closed_loop_Chat(gain);

  EvaluationBatch batch;
  batch.states = states;
  batch.IX = Matrix::Zero(N, n * n);
  batch.Kx = Matrix::Zero(N, n * n);
  batch.J0.resize(N);
  batch.J.resize(N);
  for (Eigen::Index j = 0; j < N; ++j) {
    const Vector& x = states[static_cast<std::size_t>(j)];
    const TrajectoryBundle& b = bundles[static_cast<std::size_t>(j)];
    if (x.size() != n || b.n() != n) {
      throw Error(ErrorKind::DimensionMismatch, "state or bundle dimension mismatch");
    }
    for (long l = 0; l < b.steps(); ++l) {
      const Vector v = chat_cl * b.mean.row(l).transpose();
      batch.IX.row(j) += b.grid.dt * kcal_row(v);
    }
    batch.Kx.row(j) = kcal_row(x);
    batch.J0(j) = objective_J0(b, gain, w);
    batch.J(j) = objective_J(b, gain, w);
  }
  return batch;
}

struct RankReport {
  bool satisfied = false;
  Eigen::Index rank_IX = 0;
  Eigen::Index rank_Kx = 0;
  Eigen::Index required = 0;

  explicit operator bool() const { return satisfied; }
};

inline RankReport check_rank_condition(const EvaluationBatch& batch, const DuplicationMatrix& T) {
  RankReport r;
  r.required = half_vec_size(T.n);
  r.rank_IX = numerical_rank(batch.IX * T.T);
  r.rank_Kx = numerical_rank(batch.Kx * T.T);
  r.satisfied = r.rank_IX == r.required && r.rank_Kx == r.required;
  return r;
}

/// P from (ℐ_X𝒯)v = 𝕁₀.
inline Matrix solve_p_system(const EvaluationBatch& batch, const DuplicationMatrix& T) {
  return unvec_plus(solve_least_squares(batch.IX * T.T, batch.J0, "P system (I_X T)"), T.n);
}

/// P̂ from (𝒦_x𝒯)v = 𝕁.
inline Matrix solve_phat_system(const EvaluationBatch& batch, const DuplicationMatrix& T) {
  return unvec_plus(solve_least_squares(batch.Kx * T.T, batch.J, "Phat system (K_x T)"), T.n);
}

/// The two least-squares solves are independent of each other.
inline RiccatiPair evaluate_policy(const EvaluationBatch& batch, const DuplicationMatrix& T) {
  Matrix P = solve_p_system(batch, T);
  Matrix Phat = solve_phat_system(batch, T);
  return {std::move(P), std::move(Phat)};
}

inline FeedbackGain improve_policy(const RiccatiPair& pair, const ModelFreeView& view,
                                   const CostWeights& w) {
  if (pair.n() != view.n() || w.n() != view.n() || w.m() != view.m()) {
    throw Error(ErrorKind::DimensionMismatch, "pair, weights and view disagree on dimensions");
  }
  return detail::improved_gain(view.B(), view.C(), view.D(), view.Bhat(), view.Chat(),
                               view.Dhat(), w, pair);
}

/// Anything that returns closed-loop bundles for a gain and a list of initial
/// states. The loop below sees the environment only through this interface.
template <class S>
concept TrajectorySource = requires(const S& s, const FeedbackGain& g,
                                    const std::vector<Vector>& xs, std::uint64_t seed) {
  { s.run(g, xs, seed) } -> std::same_as<std::vector<TrajectoryBundle>>;
};

struct RlResult {
  RiccatiPair pair;
  FeedbackGain gain;
  std::vector<IterationRecord> history;
  int iterations = 0;
  std::vector<Vector> states;
};

struct RlHooks {
  /// Fills residP/residPhat for reporting. Diagnostic only: it may use a full
  /// model, but nothing it computes feeds back into the iteration.
  std::function<void(IterationRecord&)> diagnostic;
  /// Called once per finished record, before the stopping test.
  std::function<void(const IterationRecord&)> on_record;
};

/// Trajectory-driven policy iteration. Each iteration simulates fresh bundles
/// under the current gain with seed derive_seed(cfg.seed, i), evaluates the
/// pair by least squares and improves the gain. Stops at the first i ≥ 1 with
/// both Frobenius changes below epsilon.
template <TrajectorySource Source>
RlResult run_algorithm1(const Source& source, const ModelFreeView& view, const CostWeights& w,
                        const FeedbackGain& gain0, const RlConfig& cfg,
                        const RlHooks& hooks = {}) {
  cfg.validate();
  const auto n = view.n();
  if (w.n() != n || w.m() != view.m() || gain0.n() != n || gain0.m() != view.m()) {
    throw Error(ErrorKind::DimensionMismatch, "view, weights and gain disagree on dimensions");
  }
  if (const PdcReport pdc = check_pdc(w); !pdc.satisfied) {
    throw Error(ErrorKind::PdcViolated, "cost weights violate the positive-definiteness condition");
  }

  const DuplicationMatrix T = duplication_matrix(n);
  std::vector<Vector> states = sample_initial_states(cfg, n);
  std::vector<IterationRecord> history;
  FeedbackGain gain = gain0;

  for (int i = 0; i <= cfg.max_iter; ++i) {
    const std::vector<TrajectoryBundle> bundles =
        source.run(gain, states, derive_seed(cfg.seed, static_cast<std::uint64_t>(i)));
    if (i == 0) {
      for (std::size_t j = 0; j < bundles.size(); ++j) {
        if (!decay_check(bundles[j], cfg.decay_ratio).decayed) {
          throw Error(ErrorKind::NotStabilizer,
                      "initial gain: simulated second moment from state " + std::to_string(j) +
                          " does not decay below the configured ratio");
        }
      }
    }
    const Matrix chat_cl = view.closed_loop_Chat(gain);
    if (numerical_rank(chat_cl) < n) {
      warn("iteration " + std::to_string(i) +
           ": Chat + Dhat*Khat is singular; the P system may lose rank");
    }

    const EvaluationBatch batch = assemble_evaluation_batch(states, bundles, gain, view, w);
    RiccatiPair pair = evaluate_policy(batch, T);
    gain = improve_policy(pair, view, w);

    IterationRecord rec{i, pair, gain};
    if (!history.empty()) {
      rec.deltaP = (pair.P() - history.back().pair.P()).norm();
      rec.deltaPhat = (pair.Phat() - history.back().pair.Phat()).norm();
    }
    if (hooks.diagnostic) hooks.diagnostic(rec);
    history.push_back(rec);
    if (hooks.on_record) hooks.on_record(history.back());
    if (i >= 1 && rec.deltaP < cfg.epsilon && rec.deltaPhat < cfg.epsilon) {
      return {pair, gain, std::move(history), i, std::move(states)};
    }
  }
  throw Error(ErrorKind::MaxIterationsExceeded,
              "no convergence within " + std::to_string(cfg.max_iter) + " iterations");
}

/// Convenience overload: the full model drives a SimulatedEnvironment and the
/// post-hoc residual columns. The iteration itself reads only `view`.
inline RlResult run_algorithm1(const MfSystem& sys, const ModelFreeView& view,
                               const CostWeights& w, const FeedbackGain& gain0,
                               const RlConfig& cfg,
                               std::function<void(const IterationRecord&)> on_record = {}) {
  const SimulatedEnvironment env(sys, cfg.grid, cfg.H, cfg.threads);
  RlHooks hooks;
  hooks.diagnostic = [&sys, &w](IterationRecord& rec) { fill_residuals(rec, sys, w); };
  hooks.on_record = std::move(on_record);
  return run_algorithm1(env, view, w, gain0, cfg, hooks);
}

}  // namespace mflq
