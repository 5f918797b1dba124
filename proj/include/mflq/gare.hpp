#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "mflq/error.hpp"
#include "mflq/lyapunov.hpp"
#include "mflq/model.hpp"

namespace mflq {

/// Left sides of the two generalized algebraic Riccati equations.
struct GareResiduals {
  Matrix R;     ///< ℛ(P)
  Matrix Rhat;  ///< ℛ̂(P, P̂)
  bool inner_pd = false;      ///< DᵀPD + R ≻ 0
  bool inner_hat_pd = false;  ///< D̂ᵀPD̂ + R̂ ≻ 0

  double norm() const { return R.norm(); }
  double norm_hat() const { return Rhat.norm(); }
};

namespace detail {

inline Matrix solve_inner(const Matrix& inner, const Matrix& rhs, const char* name) {
  Eigen::FullPivLU<Matrix> lu(inner);
  if (!inner.allFinite() || !lu.isInvertible()) {
    throw Error(ErrorKind::SingularInnerTerm, std::string(name) + " is singular");
  }
  return lu.solve(rhs);
}

/// The policy-improvement formula. It takes only the input and diffusion
/// coefficients, so both the model-based scheme and the trajectory-driven loop
/// share it without exposing the drift.
inline FeedbackGain improved_gain(const Matrix& B, const Matrix& C, const Matrix& D,
                                  const Matrix& Bhat, const Matrix& Chat, const Matrix& Dhat,
                                  const CostWeights& w, const RiccatiPair& pair) {
  const Matrix& P = pair.P();
  const Matrix& Phat = pair.Phat();
  const Matrix inner = D.transpose() * P * D + w.R();
  const Matrix inner_hat = Dhat.transpose() * P * Dhat + w.Rhat();
  if (!is_positive_definite(inner)) {
    throw Error(ErrorKind::SingularInnerTerm, "R + DᵀPD is not positive definite");
  }
  if (!is_positive_definite(inner_hat)) {
    throw Error(ErrorKind::SingularInnerTerm, "R̂ + D̂ᵀPD̂ is not positive definite");
  }
  const Matrix K =
      -solve_inner(inner, B.transpose() * P + D.transpose() * P * C + w.S(), "R + DᵀPD");
  const Matrix Khat = -solve_inner(
      inner_hat, Bhat.transpose() * Phat + Dhat.transpose() * P * Chat + w.Shat(),
      "R̂ + D̂ᵀPD̂");
  return {K, Khat};
}

}  // namespace detail

inline GareResiduals gare_residuals(const MfSystem& sys, const CostWeights& w,
                                    const RiccatiPair& pair) {
  require_compatible(sys, w);
  const HattedSystem h = hat_system(sys);
  const Matrix& P = pair.P();
  const Matrix& Phat = pair.Phat();
  const Matrix& A = sys.A();
  const Matrix& B = sys.B();
  const Matrix& C = sys.C();
  const Matrix& D = sys.D();

  GareResiduals out;
  const Matrix inner = D.transpose() * P * D + w.R();
  const Matrix cross = B.transpose() * P + D.transpose() * P * C + w.S();
  out.inner_pd = is_positive_definite(inner);
  out.R = A.transpose() * P + P * A + C.transpose() * P * C + w.Q() -
          cross.transpose() * detail::solve_inner(inner, cross, "R + DᵀPD");

  const Matrix inner_hat = h.D.transpose() * P * h.D + w.Rhat();
  const Matrix cross_hat = h.B.transpose() * Phat + h.D.transpose() * P * h.C + w.Shat();
  out.inner_hat_pd = is_positive_definite(inner_hat);
  out.Rhat = h.A.transpose() * Phat + Phat * h.A + h.C.transpose() * P * h.C + w.Qhat() -
             cross_hat.transpose() * detail::solve_inner(inner_hat, cross_hat, "R̂ + D̂ᵀPD̂");
  return out;
}

/// K = −(DᵀPD+R)⁻¹(BᵀP+DᵀPC+S),  K̂ = −(D̂ᵀPD̂+R̂)⁻¹(B̂ᵀP̂+D̂ᵀPĈ+Ŝ).
inline FeedbackGain gains_from(const MfSystem& sys, const CostWeights& w,
                               const RiccatiPair& pair) {
  require_compatible(sys, w);
  const HattedSystem h = hat_system(sys);
  return detail::improved_gain(sys.B(), sys.C(), sys.D(), h.B, h.C, h.D, w, pair);
}

/// Running-cost weight KᵀRK + SᵀK + KᵀS + Q of the fluctuation part.
inline Matrix fluctuation_weight(const CostWeights& w, const Matrix& K) {
  return K.transpose() * w.R() * K + w.S().transpose() * K + K.transpose() * w.S() + w.Q();
}

/// Running-cost weight K̂ᵀR̂K̂ + ŜᵀK̂ + K̂ᵀŜ + Q̂ of the mean part.
inline Matrix mean_weight(const CostWeights& w, const Matrix& Khat) {
  const Matrix Shat = w.Shat();
  return Khat.transpose() * w.Rhat() * Khat + Shat.transpose() * Khat +
         Khat.transpose() * Shat + w.Qhat();
}

/// One exact policy evaluation: the pair solving the two Lyapunov equations
/// induced by the current gain. P̂ depends on P through (Ĉ+D̂K̂)ᵀP(Ĉ+D̂K̂).
///
/// Closed-loop matrices, weights and both solves are carried in long double and
/// rounded once at the end. In double, rounding A + BK afresh at every step makes
/// converged iterates jitter by cond(operator)·u·|P|, which on poorly
/// conditioned instances exceeds absolute monotonicity and stopping tolerances.
inline RiccatiPair lyapunov_recursion_step(const MfSystem& sys, const CostWeights& w,
                                           const FeedbackGain& gain) {
  require_compatible(sys, w);
  if (const auto report = is_stabilizer(sys, gain); !report) {
    throw Error(ErrorKind::NotStabilizer, report.reason);
  }
  using LD = long double;
  using M = detail::MatrixT<LD>;
  auto ld = [](const Matrix& X) -> M { return X.cast<LD>(); };
  const M K = ld(gain.K()), Khat = ld(gain.Khat());
  const M Acl = ld(sys.A()) + ld(sys.B()) * K;
  const M Ccl = ld(sys.C()) + ld(sys.D()) * K;
  const M Ahat = ld(sys.A()) + ld(sys.Abar()) + (ld(sys.B()) + ld(sys.Bbar())) * Khat;
  const M Chat = ld(sys.C()) + ld(sys.Cbar()) + (ld(sys.D()) + ld(sys.Dbar())) * Khat;
  const M S = ld(w.S()), Shat = ld(w.S()) + ld(w.Sbar());
  const M Lambda = K.transpose() * ld(w.R()) * K + S.transpose() * K + K.transpose() * S +
                   ld(w.Q());
  const M P = detail::solve_kronecker_system<LD>(
      detail::lyapunov_operator<LD>(Acl, &Ccl), M(LD(0.5) * (Lambda + Lambda.transpose())),
      LD(2) * Acl.norm() + Ccl.squaredNorm(), "stochastic Lyapunov equation");
  const M LambdaHat = Khat.transpose() * (ld(w.R()) + ld(w.Rbar())) * Khat +
                      Shat.transpose() * Khat + Khat.transpose() * Shat + ld(w.Q()) +
                      ld(w.Qbar()) + Chat.transpose() * P * Chat;
  const M Phat = detail::solve_kronecker_system<LD>(
      detail::lyapunov_operator<LD>(Ahat, nullptr),
      M(LD(0.5) * (LambdaHat + LambdaHat.transpose())), LD(2) * Ahat.norm(),
      "deterministic Lyapunov equation");
  return {P.cast<double>(), Phat.cast<double>()};
}

/// One row of an iteration log. Record i holds the pair evaluated at step i, the
/// gain improved from it, and the Frobenius change against record i-1 (NaN for
/// the first record, which has no predecessor).
struct IterationRecord {
  int index = 0;
  RiccatiPair pair;
  FeedbackGain gain;
  double deltaP = std::numeric_limits<double>::quiet_NaN();
  double deltaPhat = std::numeric_limits<double>::quiet_NaN();
  double residP = std::numeric_limits<double>::quiet_NaN();
  double residPhat = std::numeric_limits<double>::quiet_NaN();
};

struct SolveOptions {
  double epsilon = 1e-9;
  int max_iter = 100;
};

struct SolveResult {
  RiccatiPair pair;
  FeedbackGain gain;
  std::vector<IterationRecord> history;
  /// Index of the last record; the number of stopping-rule comparisons made.
  int iterations = 0;
  double residual = 0.0;
  double residual_hat = 0.0;
};

/// Model-based tolerance on the Riccati residuals.
inline double gare_tolerance(const CostWeights& w) { return 1e-8 * (1.0 + w.Q().norm()); }

inline void fill_residuals(IterationRecord& rec, const MfSystem& sys, const CostWeights& w) {
  try {
    const GareResiduals r = gare_residuals(sys, w, rec.pair);
    rec.residP = r.norm();
    rec.residPhat = r.norm_hat();
  } catch (const Error&) {
    rec.residP = rec.residPhat = std::numeric_limits<double>::quiet_NaN();
  }
}

/// Lyapunov recursion scheme: exact evaluation plus policy improvement, stopping
/// when both Frobenius changes fall below epsilon.
inline SolveResult solve_gare_model_based(const MfSystem& sys, const CostWeights& w,
                                          const FeedbackGain& gain0,
                                          const SolveOptions& opts = {}) {
  require_compatible(sys, w);
  require_compatible(sys, gain0);
  if (const PdcReport pdc = check_pdc(w); !pdc.satisfied) {
    throw Error(ErrorKind::PdcViolated,
                "min eig(R block) = " + std::to_string(pdc.min_eig_R) +
                    ", min eig(Schur complement) = " + std::to_string(pdc.min_eig_schur));
  }
  if (const auto report = is_stabilizer(sys, gain0); !report) {
    throw Error(ErrorKind::NotStabilizer, "initial gain: " + report.reason);
  }

  std::vector<IterationRecord> history;
  FeedbackGain gain = gain0;
  for (int i = 0; i <= opts.max_iter; ++i) {
    RiccatiPair pair = lyapunov_recursion_step(sys, w, gain);
    gain = gains_from(sys, w, pair);
    IterationRecord rec{i, pair, gain};
    if (!history.empty()) {
      rec.deltaP = (pair.P() - history.back().pair.P()).norm();
      rec.deltaPhat = (pair.Phat() - history.back().pair.Phat()).norm();
    }
    fill_residuals(rec, sys, w);
    history.push_back(rec);
    if (i >= 1 && rec.deltaP < opts.epsilon && rec.deltaPhat < opts.epsilon) {
      SolveResult result{pair, gain, std::move(history), i, rec.residP, rec.residPhat};
      return result;
    }
  }
  throw Error(ErrorKind::MaxIterationsExceeded,
              "no convergence within " + std::to_string(opts.max_iter) + " iterations");
}

/// V(x) = ⟨P̂x, x⟩.
inline double value_function(const RiccatiPair& pair, const Vector& x) {
  return x.dot(pair.Phat() * x);
}

/// u = K x + (K̂ − K) x̄.
inline Vector optimal_control(const FeedbackGain& gain, const Vector& x, const Vector& xbar) {
  return gain.K() * x + (gain.Khat() - gain.K()) * xbar;
}

/// Finds an initial stabilizer by continuation on a drift shift A → A − σI.
/// For σ large the zero gain stabilizes; each stage solves the shifted problem
/// with identity weights and then lowers σ as far as that gain still stabilizes.
inline FeedbackGain find_stabilizer(const MfSystem& sys, int max_stages = 200) {
  const auto n = sys.n();
  const auto m = sys.m();
  FeedbackGain gain = FeedbackGain::zero(m, n);
  if (is_stabilizer(sys, gain)) return gain;

  const Matrix I = Matrix::Identity(n, n);
  auto shifted = [&](double sigma) {
    return MfSystem(sys.A() - sigma * I, sys.Abar(), sys.B(), sys.Bbar(), sys.C(), sys.Cbar(),
                    sys.D(), sys.Dbar());
  };
  const CostWeights unit(I, Matrix::Zero(n, n), Matrix::Zero(m, n), Matrix::Zero(m, n),
                         Matrix::Identity(m, m), Matrix::Zero(m, m));

  double sigma = 1.0;
  while (!is_stabilizer(shifted(sigma), gain)) {
    sigma *= 2.0;
    if (sigma > 1e8) {
      throw Error(ErrorKind::NotStabilizer, "no drift shift makes the zero gain stabilizing");
    }
  }
  for (int stage = 0; stage < max_stages; ++stage) {
    gain = solve_gare_model_based(shifted(sigma), unit, gain).gain;
    if (is_stabilizer(sys, gain)) return gain;
    double next = sigma;
    for (double frac : {0.0, 0.25, 0.5, 0.75, 0.875, 0.9375, 0.96875, 0.984375}) {
      if (is_stabilizer(shifted(sigma * frac), gain)) {
        next = sigma * frac;
        break;
      }
    }
    if (next >= sigma) {
      throw Error(ErrorKind::NotStabilizer,
                  "continuation stalled at shift " + std::to_string(sigma) +
                      "; the system may not be stabilizable");
    }
    sigma = next;
  }
  throw Error(ErrorKind::NotStabilizer, "continuation did not reach the unshifted system");
}

}  // namespace mflq
