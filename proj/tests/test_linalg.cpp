#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "oracles.hpp"
#include "volmin/linalg.hpp"

using namespace volmin;

TEST(Matrix, RejectsWrongLengthAndNonFinite) {
  EXPECT_THROW(Matrix(2, 2, std::vector<double>{1, 2, 3}), ShapeError);
  EXPECT_THROW(Matrix(1, 2, std::vector<double>{1, std::nan("")}), ValueError);
  EXPECT_THROW(Matrix(1, 1, std::numeric_limits<double>::infinity()), ValueError);
  EXPECT_THROW((Matrix{{1, 2}, {3}}), ShapeError);
}

TEST(Matmul, IdentityLeavesMatrixUnchanged) {
  auto eng = make_engine(1);
  const Matrix m = oracle::random_matrix(eng, 3, 3);
  EXPECT_EQ(matmul(Matrix::identity(3), m), m);
}

TEST(Matmul, HandComputedSwap) {
  const Matrix a{{1, 2}, {3, 4}};
  const Matrix p{{0, 1}, {1, 0}};
  EXPECT_EQ(matmul(a, p), (Matrix{{2, 1}, {4, 3}}));
}

TEST(Matmul, MatchesNaiveTripleLoop) {
  auto eng = make_engine(2);
  for (int rep = 0; rep < 20; ++rep) {
    const Matrix a = oracle::random_matrix(eng, 5, 4);
    const Matrix b = oracle::random_matrix(eng, 4, 3);
    EXPECT_LT(max_abs_diff(matmul(a, b), oracle::naive_matmul(a, b)), 1e-12);
  }
}

TEST(Matmul, ShapeMismatchNamesShapes) {
  try {
    matmul(Matrix(2, 3), Matrix(2, 3));
    FAIL();
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("2x3"), std::string::npos) << e.what();
  }
}

TEST(Matvec, AgreesWithMatmul) {
  auto eng = make_engine(3);
  const Matrix a = oracle::random_matrix(eng, 4, 3);
  const Matrix x = oracle::random_matrix(eng, 3, 1);
  const Vector y = matvec(a, x.data());
  const Matrix ref = oracle::naive_matmul(a, x);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(y[i], ref(i, 0), 1e-14);
  EXPECT_THROW(matvec(a, Vector{1, 2}), ShapeError);
}

TEST(SignedLogDet, Identity) {
  for (std::size_t c = 1; c <= 6; ++c) {
    const auto d = signed_logdet(Matrix::identity(c));
    EXPECT_EQ(d.sign, 1);
    EXPECT_EQ(d.log_abs, 0.0);
  }
}

TEST(SignedLogDet, Diagonal) {
  const auto d = signed_logdet(Matrix{{2, 0}, {0, 3}});
  EXPECT_EQ(d.sign, 1);
  EXPECT_NEAR(d.log_abs, 1.791759469228055, 1e-14);
}

TEST(SignedLogDet, MatchesCofactorExpansion) {
  auto eng = make_engine(4);
  int negatives = 0;
  for (int rep = 0; rep < 200; ++rep) {
    const std::size_t n = 1 + rep % 4;
    const Matrix a = oracle::random_matrix(eng, n, n);
    const double det = oracle::cofactor_det(a);
    const auto d = signed_logdet(a);
    EXPECT_EQ(d.sign, det > 0 ? 1 : -1);
    EXPECT_NEAR(d.log_abs, std::log(std::abs(det)), 1e-10);
    negatives += det < 0;
  }
  EXPECT_GT(negatives, 0);
}

TEST(SignedLogDet, SingularGivesZeroSign) {
  const auto d = signed_logdet(Matrix{{1, 2}, {2, 4}});
  EXPECT_EQ(d.sign, 0);
  EXPECT_EQ(d.log_abs, -std::numeric_limits<double>::infinity());
  EXPECT_THROW(signed_logdet(Matrix(2, 3)), ShapeError);
}

TEST(Inverse, IdentityAndDiagonal) {
  EXPECT_EQ(inverse(Matrix::identity(4)), Matrix::identity(4));
  EXPECT_LT(max_abs_diff(inverse(Matrix{{2, 0}, {0, 4}}), Matrix{{0.5, 0}, {0, 0.25}}), 1e-15);
}

TEST(InverseTranspose, MultiplyBack) {
  auto eng = make_engine(5);
  for (int rep = 0; rep < 20; ++rep) {
    Matrix a = oracle::random_matrix(eng, 5, 5);
    for (std::size_t i = 0; i < 5; ++i) a(i, i) += 3.0;
    EXPECT_LT(max_abs_diff(matmul(a.transpose(), inverse_transpose(a)), Matrix::identity(5)), 1e-8);
  }
}

TEST(InverseTranspose, SingularThrows) {
  EXPECT_THROW(inverse_transpose(Matrix{{1, 1}, {1, 1}}), NumericalError);
}

TEST(Cholesky, ReproducesSpdMatrix) {
  auto eng = make_engine(6);
  const Matrix b = oracle::random_matrix(eng, 4, 4);
  Matrix a = oracle::naive_matmul(b, b.transpose());
  for (std::size_t i = 0; i < 4; ++i) a(i, i) += 1.0;
  const Matrix l = cholesky(a);
  EXPECT_LT(max_abs_diff(oracle::naive_matmul(l, l.transpose()), a), 1e-12);
  EXPECT_THROW(cholesky(Matrix{{1, 2}, {2, 1}}), ValueError);
}

TEST(Nnls, ExactColumnMember) {
  auto eng = make_engine(7);
  const Matrix a = oracle::random_matrix(eng, 4, 6, 0.0, 1.0);
  for (std::size_t j = 0; j < 6; ++j) {
    const auto r = nnls(a, a.column(j));
    EXPECT_TRUE(r.converged);
    EXPECT_LT(r.residual, 1e-10);
  }
  const auto r = nnls(Matrix::identity(3), Vector{0, 1, 0});
  EXPECT_NEAR(r.alpha[1], 1.0, 1e-14);
  EXPECT_EQ(r.alpha[0], 0.0);
  EXPECT_EQ(r.alpha[2], 0.0);
}

TEST(Nnls, ProjectionOntoOrthant) {
  const auto r = nnls(Matrix::identity(2), Vector{1, -1});
  EXPECT_TRUE(r.converged);
  EXPECT_NEAR(r.alpha[0], 1.0, 1e-14);
  EXPECT_EQ(r.alpha[1], 0.0);
  EXPECT_NEAR(r.residual, 1.0, 1e-14);
}

TEST(Nnls, PlantedSolution) {
  auto eng = make_engine(8);
  for (int rep = 0; rep < 50; ++rep) {
    const std::size_t m = 3 + rep % 5, k = 2 + rep % 7;
    const Matrix a = oracle::random_matrix(eng, m, k);
    Vector alpha(k);
    for (auto& x : alpha) x = uniform01(eng) < 0.4 ? 0.0 : uniform(eng, 0.1, 2.0);
    const auto r = nnls(a, matvec(a, alpha));
    EXPECT_TRUE(r.converged);
    EXPECT_LT(r.residual, 1e-8);
    for (double x : r.alpha) EXPECT_GE(x, 0.0);
  }
}

TEST(Nnls, KktConditionsOnRandomProblems) {
  auto eng = make_engine(9);
  for (int rep = 0; rep < 50; ++rep) {
    const Matrix a = oracle::random_matrix(eng, 5, 8);
    const Matrix b = oracle::random_matrix(eng, 5, 1);
    const auto r = nnls(a, b.data());
    ASSERT_TRUE(r.converged);
    Vector resid = matvec(a, r.alpha);
    for (std::size_t i = 0; i < 5; ++i) resid[i] = b(i, 0) - resid[i];
    EXPECT_NEAR(norm2(resid), r.residual, 1e-12);
    // dual w = a^T (b - a alpha) must be <= 0 off the support and 0 on it
    const Vector w = matvec(a.transpose(), resid);
    for (std::size_t j = 0; j < 8; ++j) {
      EXPECT_GE(r.alpha[j], 0.0);
      if (r.alpha[j] > 0) EXPECT_NEAR(w[j], 0.0, 1e-9);
      else EXPECT_LE(w[j], 1e-9);
    }
  }
}

TEST(MatrixText, RoundTripIsExact) {
  auto eng = make_engine(10);
  const Matrix a = oracle::random_matrix(eng, 3, 4, -1e3, 1e3);
  EXPECT_EQ(matrix_from_text(matrix_to_text(a)), a);
  EXPECT_EQ(matrix_from_text("# comment\n\n1, 2\n3,4e0\n"), (Matrix{{1, 2}, {3, 4}}));
}

TEST(MatrixText, ErrorsCarryLineNumbers) {
  try {
    matrix_from_text("1,2\n3,x\n");
    FAIL();
  } catch (const ValueError& e) {
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos);
  }
  EXPECT_THROW(matrix_from_text("1,2\n3\n"), ValueError);
}
