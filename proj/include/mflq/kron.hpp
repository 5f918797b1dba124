#pragma once

#include <Eigen/Dense>

#include <string>

#include "mflq/error.hpp"
#include "mflq/model.hpp"

namespace mflq {

/// Singular values below this fraction of the largest count as zero.
inline constexpr double kRankRelTol = 1e-8;

/// Column-major stacking: vec(M)[i + rows*j] = M(i, j).
inline Vector vec(const Matrix& M) { return M.reshaped(); }

inline Matrix unvec(const Vector& v, Eigen::Index rows, Eigen::Index cols) {
  if (v.size() != rows * cols) {
    throw Error(ErrorKind::DimensionMismatch,
                "cannot reshape length " + std::to_string(v.size()) + " into " +
                    std::to_string(rows) + "x" + std::to_string(cols));
  }
  return v.reshaped(rows, cols);
}

inline Eigen::Index half_vec_size(Eigen::Index n) { return n * (n + 1) / 2; }

/// Half-vectorization of a symmetric matrix: for each column j, the entries
/// P(j..n-1, j), with every off-diagonal entry doubled.
inline Vector vec_plus(const Matrix& P) {
  if (P.rows() != P.cols()) {
    throw Error(ErrorKind::DimensionMismatch, "vec_plus needs a square matrix");
  }
  const double asym = asymmetry(P);
  if (asym > kSymTol) {
    throw Error(ErrorKind::Asymmetric,
                "vec_plus input asymmetry " + std::to_string(asym) + " exceeds tolerance");
  }
  const auto n = P.rows();
  Vector v(half_vec_size(n));
  Eigen::Index k = 0;
  for (Eigen::Index j = 0; j < n; ++j) {
    v(k++) = P(j, j);
    for (Eigen::Index i = j + 1; i < n; ++i) v(k++) = P(i, j) + P(j, i);
  }
  return v;
}

/// Inverse of vec_plus.
inline Matrix unvec_plus(const Vector& v, Eigen::Index n) {
  if (v.size() != half_vec_size(n)) {
    throw Error(ErrorKind::DimensionMismatch,
                "half-vector of length " + std::to_string(v.size()) +
                    " does not match n=" + std::to_string(n));
  }
  Matrix P(n, n);
  Eigen::Index k = 0;
  for (Eigen::Index j = 0; j < n; ++j) {
    P(j, j) = v(k++);
    for (Eigen::Index i = j + 1; i < n; ++i) {
      P(i, j) = P(j, i) = 0.5 * v(k++);
    }
  }
  return P;
}

/// T with vec(P) = T·vec_plus(P) for symmetric P. Because vec_plus doubles the
/// off-diagonals, the off-diagonal columns carry 1/2 in both mirrored rows.
struct DuplicationMatrix {
  Eigen::Index n = 0;
  Matrix T;
};

inline DuplicationMatrix duplication_matrix(Eigen::Index n) {
  if (n < 1) throw Error(ErrorKind::DimensionMismatch, "duplication matrix needs n >= 1");
  Matrix T = Matrix::Zero(n * n, half_vec_size(n));
  Eigen::Index k = 0;
  for (Eigen::Index j = 0; j < n; ++j) {
    T(j + n * j, k++) = 1.0;
    for (Eigen::Index i = j + 1; i < n; ++i) {
      T(i + n * j, k) = 0.5;
      T(j + n * i, k) = 0.5;
      ++k;
    }
  }
  return {n, std::move(T)};
}

inline Matrix kron(const Matrix& A, const Matrix& B) {
  Matrix out(A.rows() * B.rows(), A.cols() * B.cols());
  for (Eigen::Index i = 0; i < A.rows(); ++i) {
    for (Eigen::Index j = 0; j < A.cols(); ++j) {
      out.block(i * B.rows(), j * B.cols(), B.rows(), B.cols()) = A(i, j) * B;
    }
  }
  return out;
}

/// 𝒦(A) = Aᵀ ⊗ Aᵀ.
inline Matrix kcal(const Matrix& A) {
  const Matrix At = A.transpose();
  return kron(At, At);
}

/// Row vector vᵀ ⊗ vᵀ, so that kcal_row(v)·vec(P) = vᵀPv.
inline Eigen::RowVectorXd kcal_row(const Vector& v) {
  const auto n = v.size();
  Eigen::RowVectorXd row(n * n);
  for (Eigen::Index a = 0; a < n; ++a) {
    for (Eigen::Index b = 0; b < n; ++b) row(a * n + b) = v(a) * v(b);
  }
  return row;
}

inline Vector singular_values(const Matrix& M) {
  if (M.size() == 0) return Vector();
  Eigen::JacobiSVD<Matrix> svd(M);
  return svd.singularValues();
}

/// Number of singular values above kRankRelTol · σ_max.
inline Eigen::Index numerical_rank(const Matrix& M) {
  const Vector s = singular_values(M);
  if (s.size() == 0 || !(s(0) > 0.0)) return 0;
  const double cutoff = kRankRelTol * s(0);
  Eigen::Index r = 0;
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    if (s(i) > cutoff) ++r;
  }
  return r;
}

/// Unique minimizer of ‖Mx − b‖₂ for full-column-rank M, via column-pivoted
/// Householder QR. Throws RankDeficientError otherwise.
inline Vector solve_least_squares(const Matrix& M, const Vector& b,
                                  const std::string& what = "least-squares system") {
  if (M.rows() != b.size()) {
    throw Error(ErrorKind::DimensionMismatch,
                what + ": matrix has " + std::to_string(M.rows()) +
                    " rows but right-hand side has " + std::to_string(b.size()));
  }
  if (!M.allFinite() || !b.allFinite()) {
    throw Error(ErrorKind::NotSolvable, what + ": non-finite entries");
  }
  const auto rank = numerical_rank(M);
  if (rank < M.cols()) throw RankDeficientError(what, rank, M.cols());
  return M.colPivHouseholderQr().solve(b);
}

/// Same minimizer as the normal-equations formula (MᵀM)⁻¹Mᵀb, computed by QR.
inline Vector lstsq_normal(const Matrix& M, const Vector& b) { return solve_least_squares(M, b); }

}  // namespace mflq
