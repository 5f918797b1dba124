#include <gtest/gtest.h>

#include <random>

#include "mflq/kron.hpp"
#include "test_util.hpp"

namespace mflq {
namespace {

using testing::random_matrix;

Matrix random_symmetric(std::mt19937_64& rng, Eigen::Index n) {
  const Matrix G = random_matrix(rng, n, n, 1.0);
  return G + G.transpose();
}

GTEST_TEST(Vec, IsColumnMajor) {
  const Matrix M = (Matrix(2, 3) << 1, 2, 3, 4, 5, 6).finished();
  const Vector expected = (Vector(6) << 1, 4, 2, 5, 3, 6).finished();
  EXPECT_EQ(vec(M), expected);
  EXPECT_EQ(unvec(expected, 2, 3), M);
  EXPECT_THROW(unvec(expected, 4, 2), Error);
}

GTEST_TEST(VecPlus, DoublesOffDiagonals) {
  const Matrix P = (Matrix(2, 2) << 1, 2, 2, 3).finished();
  const Vector expected = (Vector(3) << 1, 4, 3).finished();
  EXPECT_EQ(vec_plus(P), expected);
  EXPECT_EQ(unvec_plus(expected, 2), P);
}

GTEST_TEST(VecPlus, ThreeByThreeOrdering) {
  Matrix P(3, 3);
  P << 1, 2, 3,
       2, 4, 5,
       3, 5, 6;
  // Diagonal then lower part of each column, left to right.
  const Vector expected = (Vector(6) << 1, 4, 6, 4, 10, 6).finished();
  EXPECT_EQ(vec_plus(P), expected);
}

GTEST_TEST(VecPlus, RejectsAsymmetricInput) {
  const Matrix P = (Matrix(2, 2) << 1, 2, 2.1, 3).finished();
  try {
    vec_plus(P);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Asymmetric);
  }
}

GTEST_TEST(Duplication, ReconstructsVecForEverySize) {
  std::mt19937_64 rng(11);
  for (Eigen::Index n = 1; n <= 6; ++n) {
    const DuplicationMatrix T = duplication_matrix(n);
    ASSERT_EQ(T.T.rows(), n * n);
    ASSERT_EQ(T.T.cols(), n * (n + 1) / 2);
    for (int trial = 0; trial < 20; ++trial) {
      const Matrix P = random_symmetric(rng, n);
      EXPECT_EQ(T.T * vec_plus(P), vec(P)) << "n=" << n;
    }
    EXPECT_EQ(numerical_rank(T.T), n * (n + 1) / 2);
  }
}

GTEST_TEST(Duplication, EntriesAreZeroHalfOrOne) {
  const DuplicationMatrix T = duplication_matrix(3);
  for (Eigen::Index i = 0; i < T.T.size(); ++i) {
    const double v = T.T.data()[i];
    EXPECT_TRUE(v == 0.0 || v == 0.5 || v == 1.0);
  }
  // Off-diagonal column for (1, 0): rows vec-index 1 and 3.
  EXPECT_EQ(T.T(1, 1), 0.5);
  EXPECT_EQ(T.T(3, 1), 0.5);
}

GTEST_TEST(Kron, SmallExample) {
  const Matrix A = (Matrix(2, 2) << 1, 2, 3, 4).finished();
  const Matrix B = (Matrix(1, 2) << 0, 1).finished();
  Matrix expected(2, 4);
  expected << 0, 1, 0, 2,
              0, 3, 0, 4;
  EXPECT_EQ(kron(A, B), expected);
}

GTEST_TEST(Kron, VecOfProductIdentity) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const Eigen::Index p = 1 + trial % 4, q = 1 + trial % 3, r = 1 + trial % 5, t = 2;
    const Matrix A = random_matrix(rng, p, q, 1.0);
    const Matrix B = random_matrix(rng, q, r, 1.0);
    const Matrix C = random_matrix(rng, r, t, 1.0);
    const Vector lhs = vec(A * B * C);
    const Vector rhs = kron(C.transpose(), A) * vec(B);
    EXPECT_LE((lhs - rhs).norm(), 1e-12 * std::max(1.0, lhs.norm()));
  }
}

GTEST_TEST(Kcal, RowGivesQuadraticForm) {
  std::mt19937_64 rng(8);
  for (Eigen::Index n = 1; n <= 5; ++n) {
    const Vector v = random_matrix(rng, n, 1, 1.0);
    const Matrix P = random_symmetric(rng, n);
    EXPECT_NEAR(kcal_row(v).dot(vec(P)), v.dot(P * v), 1e-12 * (1 + P.norm() * v.squaredNorm()));
  }
  const Vector zero = Vector::Zero(3);
  EXPECT_TRUE(kcal_row(zero).isZero(0));
}

GTEST_TEST(Kcal, MatrixFormIsKronOfTransposes) {
  const Matrix A = (Matrix(2, 2) << 1, 2, 3, 4).finished();
  EXPECT_EQ(kcal(A), kron(A.transpose(), A.transpose()));
}

GTEST_TEST(LeastSquares, IdentityReturnsRightHandSide) {
  const Vector b = (Vector(3) << 3, -1, 2).finished();
  EXPECT_LE((lstsq_normal(Matrix::Identity(3, 3), b) - b).norm(), 1e-15);
}

GTEST_TEST(LeastSquares, ConsistentSquareSystem) {
  const Matrix M = (Matrix(2, 2) << 2, 1, 1, 3).finished();
  const Vector x = (Vector(2) << 1, 2).finished();
  EXPECT_LE((solve_least_squares(M, M * x) - x).norm(), 1e-14);
}

GTEST_TEST(LeastSquares, PlantedSolutionRecovery) {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix M = random_matrix(rng, 10, 4, 1.0);
    const Vector x = random_matrix(rng, 4, 1, 1.0);
    EXPECT_LE((solve_least_squares(M, M * x) - x).norm(), 1e-12 * x.norm());
  }
}

GTEST_TEST(LeastSquares, MatchesNormalEquationsOnNoisyData) {
  std::mt19937_64 rng(3);
  const Matrix M = random_matrix(rng, 12, 3, 1.0);
  const Vector b = random_matrix(rng, 12, 1, 1.0);
  const Vector normal = (M.transpose() * M).inverse() * (M.transpose() * b);
  EXPECT_LE((solve_least_squares(M, b) - normal).norm(), 1e-12);
}

GTEST_TEST(LeastSquares, RankDeficiencyCarriesRank) {
  Matrix M(4, 3);
  M << 1, 2, 3,
       2, 4, 6,
       1, 0, 1,
       0, 0, 0;
  try {
    solve_least_squares(M, Vector::Ones(4));
    FAIL();
  } catch (const RankDeficientError& e) {
    EXPECT_EQ(e.rank(), 2);
    EXPECT_EQ(e.required(), 3);
    EXPECT_EQ(e.kind(), ErrorKind::RankDeficient);
  }
}

GTEST_TEST(LeastSquares, ZeroMatrixHasRankZero) {
  EXPECT_EQ(numerical_rank(Matrix::Zero(5, 3)), 0);
  EXPECT_THROW(solve_least_squares(Matrix::Zero(5, 3), Vector::Zero(5)), RankDeficientError);
}

GTEST_TEST(LeastSquares, RelativeRankThreshold) {
  Matrix M = Matrix::Identity(3, 3);
  M(2, 2) = 1e-9;  // below 1e-8 · σmax
  EXPECT_EQ(numerical_rank(M), 2);
  M(2, 2) = 1e-7;
  EXPECT_EQ(numerical_rank(M), 3);
}

}  // namespace
}  // namespace mflq
