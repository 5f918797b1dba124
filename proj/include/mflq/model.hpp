#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <string>

#include "mflq/error.hpp"

namespace mflq {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Relative Frobenius asymmetry above which a warning is issued.
inline constexpr double kSymTol = 1e-10;
/// Positive definiteness threshold, relative to the Frobenius norm.
inline constexpr double kPdRelTol = 1e-12;

namespace detail {

inline std::string shape(const Matrix& M) {
  return std::to_string(M.rows()) + "x" + std::to_string(M.cols());
}

inline void require_shape(const Matrix& M, Eigen::Index rows, Eigen::Index cols,
                          const char* name) {
  if (M.rows() != rows || M.cols() != cols) {
    throw Error(ErrorKind::DimensionMismatch,
                std::string(name) + " must be " + std::to_string(rows) + "x" +
                    std::to_string(cols) + ", got " + shape(M));
  }
}

}  // namespace detail

inline double asymmetry(const Matrix& M) {
  if (M.rows() != M.cols()) return std::numeric_limits<double>::infinity();
  const double scale = M.norm();
  if (scale == 0.0) return 0.0;
  return (M - M.transpose()).norm() / scale;
}

/// Returns (M+Mᵀ)/2, warning when the input was asymmetric beyond kSymTol.
inline Matrix symmetrized(const Matrix& M, const char* name = "matrix") {
  if (M.rows() != M.cols()) {
    throw Error(ErrorKind::DimensionMismatch,
                std::string(name) + " must be square, got " + detail::shape(M));
  }
  const double asym = asymmetry(M);
  if (asym > kSymTol) {
    std::ostringstream os;
    os << name << " is asymmetric (relative Frobenius " << asym << "); symmetrizing";
    warn(os.str());
  }
  return 0.5 * (M + M.transpose());
}

inline double min_eigenvalue(const Matrix& M) {
  if (M.size() == 0) return std::numeric_limits<double>::infinity();
  Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (M + M.transpose()),
                                           Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

inline bool is_positive_definite(const Matrix& M) {
  const double scale = M.norm();
  if (scale == 0.0 || !M.allFinite()) return false;
  return min_eigenvalue(M) > kPdRelTol * scale;
}

/// The eight constant coefficients of the controlled mean-field SDE
///   dX = (A X + Ā E[X] + B u + B̄ E[u]) ds + (C X + C̄ E[X] + D u + D̄ E[u]) dW.
class MfSystem {
 public:
  MfSystem(Matrix A, Matrix Abar, Matrix B, Matrix Bbar, Matrix C, Matrix Cbar, Matrix D,
           Matrix Dbar)
      : A_(std::move(A)),
        Abar_(std::move(Abar)),
        B_(std::move(B)),
        Bbar_(std::move(Bbar)),
        C_(std::move(C)),
        Cbar_(std::move(Cbar)),
        D_(std::move(D)),
        Dbar_(std::move(Dbar)) {
    const auto n = A_.rows();
    const auto m = B_.cols();
    if (n < 1 || m < 1) {
      throw Error(ErrorKind::DimensionMismatch, "system needs n >= 1 and m >= 1");
    }
    detail::require_shape(A_, n, n, "A");
    detail::require_shape(Abar_, n, n, "Abar");
    detail::require_shape(C_, n, n, "C");
    detail::require_shape(Cbar_, n, n, "Cbar");
    detail::require_shape(B_, n, m, "B");
    detail::require_shape(Bbar_, n, m, "Bbar");
    detail::require_shape(D_, n, m, "D");
    detail::require_shape(Dbar_, n, m, "Dbar");
  }

  Eigen::Index n() const { return A_.rows(); }
  Eigen::Index m() const { return B_.cols(); }

  const Matrix& A() const { return A_; }
  const Matrix& Abar() const { return Abar_; }
  const Matrix& B() const { return B_; }
  const Matrix& Bbar() const { return Bbar_; }
  const Matrix& C() const { return C_; }
  const Matrix& Cbar() const { return Cbar_; }
  const Matrix& D() const { return D_; }
  const Matrix& Dbar() const { return Dbar_; }

  /// True when every diffusion coefficient is zero, so paths are deterministic.
  bool noise_free() const {
    return C_.isZero(0.0) && Cbar_.isZero(0.0) && D_.isZero(0.0) && Dbar_.isZero(0.0);
  }

 private:
  Matrix A_, Abar_, B_, Bbar_, C_, Cbar_, D_, Dbar_;
};

/// Π̂ = Π + Π̄ for each coefficient pair.
struct HattedSystem {
  Matrix A, B, C, D;
};

inline HattedSystem hat_system(const MfSystem& sys) {
  return {sys.A() + sys.Abar(), sys.B() + sys.Bbar(), sys.C() + sys.Cbar(),
          sys.D() + sys.Dbar()};
}

/// Cost weights Q, Q̄ (n×n), S, S̄ (m×n), R, R̄ (m×m). Q, Q̄, R, R̄ are symmetrized.
class CostWeights {
 public:
  CostWeights(Matrix Q, Matrix Qbar, Matrix S, Matrix Sbar, Matrix R, Matrix Rbar)
      : Q_(symmetrized(Q, "Q")),
        Qbar_(symmetrized(Qbar, "Qbar")),
        S_(std::move(S)),
        Sbar_(std::move(Sbar)),
        R_(symmetrized(R, "R")),
        Rbar_(symmetrized(Rbar, "Rbar")) {
    const auto n = Q_.rows();
    const auto m = R_.rows();
    if (n < 1 || m < 1) {
      throw Error(ErrorKind::DimensionMismatch, "weights need n >= 1 and m >= 1");
    }
    detail::require_shape(Qbar_, n, n, "Qbar");
    detail::require_shape(S_, m, n, "S");
    detail::require_shape(Sbar_, m, n, "Sbar");
    detail::require_shape(Rbar_, m, m, "Rbar");
  }

  Eigen::Index n() const { return Q_.rows(); }
  Eigen::Index m() const { return R_.rows(); }

  const Matrix& Q() const { return Q_; }
  const Matrix& Qbar() const { return Qbar_; }
  const Matrix& S() const { return S_; }
  const Matrix& Sbar() const { return Sbar_; }
  const Matrix& R() const { return R_; }
  const Matrix& Rbar() const { return Rbar_; }

  Matrix Qhat() const { return Q_ + Qbar_; }
  Matrix Shat() const { return S_ + Sbar_; }
  Matrix Rhat() const { return R_ + Rbar_; }

 private:
  Matrix Q_, Qbar_, S_, Sbar_, R_, Rbar_;
};

/// Block-diagonal forms 𝐐 = diag(Q, Q̂), 𝐒 = diag(S, Ŝ), 𝐑 = diag(R, R̂).
struct BlockWeights {
  Matrix Q, S, R;
};

inline BlockWeights block_weights(const CostWeights& w) {
  const auto n = w.n();
  const auto m = w.m();
  BlockWeights b{Matrix::Zero(2 * n, 2 * n), Matrix::Zero(2 * m, 2 * n),
                 Matrix::Zero(2 * m, 2 * m)};
  b.Q.topLeftCorner(n, n) = w.Q();
  b.Q.bottomRightCorner(n, n) = w.Qhat();
  b.S.topLeftCorner(m, n) = w.S();
  b.S.bottomRightCorner(m, n) = w.Shat();
  b.R.topLeftCorner(m, m) = w.R();
  b.R.bottomRightCorner(m, m) = w.Rhat();
  return b;
}

struct PdcReport {
  bool satisfied = false;
  /// Smallest eigenvalue of 𝐑.
  double min_eig_R = 0.0;
  /// Smallest eigenvalue of 𝐐 − 𝐒ᵀ𝐑⁻¹𝐒; NaN when 𝐑 is singular.
  double min_eig_schur = std::numeric_limits<double>::quiet_NaN();
};

/// Positive-definiteness condition on the block weights: 𝐑 ≻ 0 and 𝐐 − 𝐒ᵀ𝐑⁻¹𝐒 ≻ 0.
inline PdcReport check_pdc(const CostWeights& w) {
  const BlockWeights b = block_weights(w);
  PdcReport report;
  report.min_eig_R = min_eigenvalue(b.R);
  const bool r_pd = is_positive_definite(b.R);
  Eigen::FullPivLU<Matrix> lu(b.R);
  if (!lu.isInvertible()) return report;
  const Matrix schur = b.Q - b.S.transpose() * lu.solve(b.S);
  report.min_eig_schur = min_eigenvalue(schur);
  report.satisfied = r_pd && is_positive_definite(schur);
  return report;
}

/// A feedback gain pair (K, K̂), both m×n.
class FeedbackGain {
 public:
  FeedbackGain(Matrix K, Matrix Khat) : K_(std::move(K)), Khat_(std::move(Khat)) {
    detail::require_shape(Khat_, K_.rows(), K_.cols(), "Khat");
  }

  static FeedbackGain zero(Eigen::Index m, Eigen::Index n) {
    return {Matrix::Zero(m, n), Matrix::Zero(m, n)};
  }

  Eigen::Index m() const { return K_.rows(); }
  Eigen::Index n() const { return K_.cols(); }
  const Matrix& K() const { return K_; }
  const Matrix& Khat() const { return Khat_; }

 private:
  Matrix K_, Khat_;
};

/// A pair (P, P̂) of symmetric n×n matrices.
class RiccatiPair {
 public:
  RiccatiPair(const Matrix& P, const Matrix& Phat)
      : P_(symmetrized(P, "P")), Phat_(symmetrized(Phat, "Phat")) {
    detail::require_shape(Phat_, P_.rows(), P_.rows(), "Phat");
  }

  Eigen::Index n() const { return P_.rows(); }
  const Matrix& P() const { return P_; }
  const Matrix& Phat() const { return Phat_; }

  bool positive_definite() const {
    return is_positive_definite(P_) && is_positive_definite(Phat_);
  }

 private:
  Matrix P_, Phat_;
};

inline void require_compatible(const MfSystem& sys, const CostWeights& w) {
  if (sys.n() != w.n() || sys.m() != w.m()) {
    throw Error(ErrorKind::DimensionMismatch,
                "system is n=" + std::to_string(sys.n()) + ", m=" + std::to_string(sys.m()) +
                    " but weights are n=" + std::to_string(w.n()) +
                    ", m=" + std::to_string(w.m()));
  }
}

inline void require_compatible(const MfSystem& sys, const FeedbackGain& g) {
  if (sys.n() != g.n() || sys.m() != g.m()) {
    throw Error(ErrorKind::DimensionMismatch,
                "gain must be " + std::to_string(sys.m()) + "x" + std::to_string(sys.n()) +
                    ", got " + detail::shape(g.K()));
  }
}

}  // namespace mflq
