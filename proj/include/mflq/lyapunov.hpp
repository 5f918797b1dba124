#pragma once

#include <Eigen/Dense>

#include <optional>
#include <string>

#include "mflq/error.hpp"
#include "mflq/kron.hpp"
#include "mflq/model.hpp"

namespace mflq {

/// Closed-loop coefficients under a gain (K, K̂).
struct ClosedLoopMatrices {
  Matrix A;     ///< A + BK
  Matrix C;     ///< C + DK
  Matrix Ahat;  ///< Â + B̂K̂
  Matrix Chat;  ///< Ĉ + D̂K̂
};

inline ClosedLoopMatrices closed_loop(const MfSystem& sys, const FeedbackGain& gain) {
  require_compatible(sys, gain);
  const HattedSystem h = hat_system(sys);
  return {sys.A() + sys.B() * gain.K(), sys.C() + sys.D() * gain.K(),
          h.A + h.B * gain.Khat(), h.C + h.D * gain.Khat()};
}

namespace detail {

template <class T>
using MatrixT = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;

template <class T>
MatrixT<T> kron_t(const MatrixT<T>& A, const MatrixT<T>& B) {
  MatrixT<T> K(A.rows() * B.rows(), A.cols() * B.cols());
  for (Eigen::Index i = 0; i < A.rows(); ++i) {
    for (Eigen::Index j = 0; j < A.cols(); ++j) {
      K.block(i * B.rows(), j * B.cols(), B.rows(), B.cols()) = A(i, j) * B;
    }
  }
  return K;
}

/// kron(I, Aᵀ) + kron(Aᵀ, I), plus kron(Cᵀ, Cᵀ) when C is given.
template <class T>
MatrixT<T> lyapunov_operator(const MatrixT<T>& A, const MatrixT<T>* C) {
  const auto n = A.rows();
  const MatrixT<T> I = MatrixT<T>::Identity(n, n);
  const MatrixT<T> At = A.transpose();
  MatrixT<T> op = kron_t<T>(I, At) + kron_t<T>(At, I);
  if (C) {
    const MatrixT<T> Ct = C->transpose();
    op += kron_t<T>(Ct, Ct);
  }
  return op;
}

template <class T>
MatrixT<T> solve_kronecker_system(const MatrixT<T>& op, const MatrixT<T>& Lambda, T op_scale,
                                  const char* what) {
  const auto n = Lambda.rows();
  if (!op.allFinite() || !Lambda.allFinite()) {
    throw Error(ErrorKind::NotSolvable, std::string(what) + ": non-finite coefficients");
  }
  Eigen::FullPivLU<MatrixT<T>> lu(op);
  if (!lu.isInvertible()) {
    throw Error(ErrorKind::NotSolvable,
                std::string(what) + ": Kronecker operator is singular (rank " +
                    std::to_string(lu.rank()) + " < " + std::to_string(n * n) + ")");
  }
  const Eigen::Matrix<T, Eigen::Dynamic, 1> x = lu.solve(-Lambda.reshaped());
  MatrixT<T> P = x.reshaped(n, n);
  P = (T(0.5) * (P + P.transpose())).eval();

  const MatrixT<T> residual = (op * P.reshaped()).reshaped(n, n) + Lambda;
  const T tol = T(1e-10) * (Lambda.norm() + P.norm() * op_scale);
  if (!(residual.norm() <= tol)) {
    throw Error(ErrorKind::NotSolvable,
                std::string(what) + ": residual " +
                    std::to_string(static_cast<double>(residual.norm())) +
                    " exceeds tolerance " + std::to_string(static_cast<double>(tol)) +
                    " (operator near the stability boundary)");
  }
  return P;
}

}  // namespace detail

/// Solves Aᵀ P + P A + Cᵀ P C + Λ = 0 through the n²×n² Kronecker system.
inline Matrix solve_stochastic_lyapunov(const Matrix& Acl, const Matrix& Ccl,
                                        const Matrix& Lambda) {
  const auto n = Acl.rows();
  detail::require_shape(Acl, n, n, "closed-loop drift");
  detail::require_shape(Ccl, n, n, "closed-loop diffusion");
  detail::require_shape(Lambda, n, n, "Lambda");
  const double scale = 2.0 * Acl.norm() + Ccl.squaredNorm();
  return detail::solve_kronecker_system<double>(detail::lyapunov_operator<double>(Acl, &Ccl),
                                                symmetrized(Lambda, "Lambda"), scale,
                                                "stochastic Lyapunov equation");
}

/// Solves Âᵀ P̂ + P̂ Â + Λ̂ = 0.
inline Matrix solve_deterministic_lyapunov(const Matrix& Ahatcl, const Matrix& LambdaHat) {
  const auto n = Ahatcl.rows();
  detail::require_shape(Ahatcl, n, n, "closed-loop mean drift");
  detail::require_shape(LambdaHat, n, n, "LambdaHat");
  return detail::solve_kronecker_system<double>(detail::lyapunov_operator<double>(Ahatcl, nullptr),
                                                symmetrized(LambdaHat, "LambdaHat"),
                                                2.0 * Ahatcl.norm(),
                                                "deterministic Lyapunov equation");
}

struct StabilizerReport {
  bool stabilizer = false;
  /// Solution of both Lyapunov equations with Λ = Λ̂ = I, when it exists.
  std::optional<RiccatiPair> witness;
  std::string reason;

  explicit operator bool() const { return stabilizer; }
};

/// A gain is a mean-field L² stabilizer iff both Lyapunov equations with identity
/// right-hand sides have positive definite solutions.
inline StabilizerReport is_stabilizer(const MfSystem& sys, const FeedbackGain& gain) {
  StabilizerReport report;
  const ClosedLoopMatrices cl = closed_loop(sys, gain);
  const Matrix I = Matrix::Identity(sys.n(), sys.n());
  try {
    const Matrix P = solve_stochastic_lyapunov(cl.A, cl.C, I);
    const Matrix Phat = solve_deterministic_lyapunov(cl.Ahat, I);
    report.witness.emplace(P, Phat);
  } catch (const Error& e) {
    report.reason = e.what();
    return report;
  }
  const bool p_ok = is_positive_definite(report.witness->P());
  const bool phat_ok = is_positive_definite(report.witness->Phat());
  if (!p_ok) {
    report.reason = "fluctuation dynamics are not mean-square stable (P not positive definite)";
  } else if (!phat_ok) {
    report.reason = "mean dynamics are not Hurwitz (Phat not positive definite)";
  }
  report.stabilizer = p_ok && phat_ok;
  return report;
}

}  // namespace mflq
