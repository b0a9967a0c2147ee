#include <gtest/gtest.h>

#include <cmath>

#include "oracles.hpp"
#include "volmin/geometry.hpp"

using namespace volmin;

namespace {

// Six columns 0.9 e_i + 0.1 e_j for i != j: every edge of the simplex is
// covered between 0.1 and 0.9, no vertex is reached.
PosteriorMatrix hexagon() {
  Matrix h(3, 6);
  std::size_t col = 0;
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) {
      if (i == j) continue;
      h(i, col) = 0.9;
      h(j, col) = 0.1;
      ++col;
    }
  return PosteriorMatrix(h);
}

PosteriorMatrix uniform_columns(std::size_t c, std::size_t m) { return PosteriorMatrix(Matrix(c, m, 1.0 / static_cast<double>(c))); }

}  // namespace

TEST(PosteriorMatrix, ValidatesColumns) {
  EXPECT_THROW(PosteriorMatrix(Matrix{{0.5, 0.2}, {0.4, 0.8}}), ValueError);
  EXPECT_THROW(PosteriorMatrix(Matrix{{1.1}, {-0.1}}), ValueError);
  EXPECT_EQ(PosteriorMatrix::from_rows(Matrix{{0.3, 0.7}}).matrix(), (Matrix{{0.3}, {0.7}}));
}

TEST(Rays, ConstructionContract) {
  for (std::size_t c = 2; c <= 10; ++c) {
    for (const auto& v : sample_R_rays(c, 200, c)) {
      double s = 0.0;
      for (double x : v) {
        s += x;
        EXPECT_GE(x, -1e-9);
      }
      EXPECT_NEAR(norm2(v), 1.0, 1e-12);
      EXPECT_NEAR(s, std::sqrt(static_cast<double>(c) - 1.0), 1e-9);
    }
  }
  EXPECT_THROW(sample_R_rays(1, 5, 0), ValueError);
}

TEST(Rays, TwoClassBoundaryIsTheAxes) {
  for (const auto& v : sample_R_rays(2, 50, 4)) {
    const bool e1 = std::abs(v[0] - 1.0) < 1e-12 && std::abs(v[1]) < 1e-12;
    const bool e2 = std::abs(v[1] - 1.0) < 1e-12 && std::abs(v[0]) < 1e-12;
    EXPECT_TRUE(e1 || e2) << v[0] << "," << v[1];
  }
}

TEST(Condition1, IdentityPasses) {
  for (std::size_t c = 2; c <= 10; ++c) {
    const auto r = check_condition1(PosteriorMatrix(Matrix::identity(c)), sample_R_rays(c, 256, 1), 1e-9);
    EXPECT_TRUE(r.verdict) << c;
    EXPECT_EQ(r.pass_fraction, 1.0);
  }
}

TEST(Condition1, UniformColumnsFail) {
  for (std::size_t c = 2; c <= 6; ++c) {
    const auto r = check_condition1(uniform_columns(c, 4), sample_R_rays(c, 64, 2), 1e-6);
    EXPECT_FALSE(r.verdict);
    EXPECT_EQ(r.pass_fraction, 0.0);
    // residual of a boundary ray against the barycenter ray: sin of the cone half-angle
    EXPECT_NEAR(r.worst_residual, std::sqrt(1.0 / static_cast<double>(c)), 1e-9);
  }
}

TEST(Condition1, HexagonPassesWithoutAnchors) {
  const auto h = hexagon();
  EXPECT_TRUE(check_condition1(h, sample_R_rays(3, 512, 3), 1e-6).verdict);
  const auto a = anchor_presence(h, 0.05);
  EXPECT_FALSE(a.verdict);
  for (double m : a.class_max) EXPECT_LT(m, 0.95);
}

TEST(Condition2, IdentityHasNoWitness) {
  for (std::size_t c : {2, 3, 4}) {
    const auto r = check_condition2(PosteriorMatrix(Matrix::identity(c)), 2000, 5, 1e-9);
    EXPECT_FALSE(r.falsified) << c;
    EXPECT_EQ(r.trials, 2000u);
  }
}

TEST(Condition2, InteriorTwoClassDataIsFalsified) {
  Matrix h(2, 5);
  const double vals[] = {0.2, 0.35, 0.5, 0.65, 0.8};
  for (std::size_t k = 0; k < 5; ++k) {
    h(0, k) = vals[k];
    h(1, k) = 1.0 - vals[k];
  }
  const auto r = check_condition2(PosteriorMatrix(h), 200, 6, 1e-9);
  ASSERT_TRUE(r.falsified);
  const Matrix& q = *r.witness;
  EXPECT_LT(max_abs_diff(matmul(q.transpose(), q), Matrix::identity(2)), 1e-12);
  EXPECT_GT(distance_to_signed_permutation(q), kPermutationTol);
  EXPECT_GE(cone_margin(q, h), -1e-9);
  // the hand construction: rotation by an angle below arctan(0.2/0.8)
  const double a = 0.9 * std::atan(0.25);
  const Matrix rot{{std::cos(a), -std::sin(a)}, {std::sin(a), std::cos(a)}};
  EXPECT_GE(cone_margin(rot, h), 0.0);
}

TEST(Condition2, HexagonHasNoWitness) {
  EXPECT_FALSE(check_condition2(hexagon(), 1000, 7, 1e-9).falsified);
}

TEST(Orthogonal, RandomIsOrthogonalAndPermutationDistance) {
  auto eng = make_engine(8);
  for (std::size_t n = 2; n <= 6; ++n) {
    const Matrix q = random_orthogonal(n, eng);
    EXPECT_LT(max_abs_diff(matmul(q.transpose(), q), Matrix::identity(n)), 1e-12);
  }
  EXPECT_EQ(distance_to_signed_permutation(Matrix{{0, -1}, {1, 0}}), 0.0);
  EXPECT_GT(distance_to_signed_permutation(Matrix{{0.8, 0.6}, {-0.6, 0.8}}), 0.1);
}

TEST(AnchorPresence, Cases) {
  EXPECT_TRUE(anchor_presence(PosteriorMatrix(Matrix{{1, 0, 0.5}, {0, 1, 0.5}}), 0.0).verdict);
  EXPECT_TRUE(anchor_presence(uniform_columns(3, 2), 1.0).verdict);
  EXPECT_FALSE(anchor_presence(uniform_columns(3, 2), 0.5).verdict);
}

TEST(MinvolOracle, EndpointsAndInterval) {
  EXPECT_EQ(minvol_interval_oracle(Vector{0.0, 0.4, 1.0}).matrix(), Matrix::identity(2));
  const auto t = minvol_interval_oracle(Vector{0.5, 0.3, 0.8, 0.6});
  EXPECT_EQ(t(0, 0), 0.8);
  EXPECT_EQ(t(0, 1), 0.3);
  EXPECT_NEAR(t(1, 0), 0.2, 1e-15);
  EXPECT_NEAR(t(1, 1), 0.7, 1e-15);
  EXPECT_THROW(minvol_interval_oracle(Vector{0.6, 0.7}), NumericalError);
  EXPECT_THROW(minvol_interval_oracle(Vector{0.6}), ValueError);
}

TEST(MinvolOracle, MatchesGridSearch) {
  auto eng = make_engine(9);
  for (int rep = 0; rep < 20; ++rep) {
    // values on the 1e-3 grid so the grid optimum is exact
    Vector p;
    const int lo = 50 + static_cast<int>(uniform_index(eng, 400));
    const int hi = 510 + static_cast<int>(uniform_index(eng, 440));
    p.push_back(lo / 1000.0);
    p.push_back(hi / 1000.0);
    for (int k = 0; k < 30; ++k) p.push_back((lo + static_cast<int>(uniform_index(eng, hi - lo + 1))) / 1000.0);
    double best = 2.0;
    int b11 = -1, b12 = -1;
    for (int a = 0; a <= 1000; ++a)
      for (int b = 0; b <= 1000; ++b) {
        // dominance: T11 > T21 = 1 - T11 and T22 = 1 - T12 > T12
        if (!(2 * a > 1000 && 2 * b < 1000)) continue;
        if (!(a >= hi && b <= lo)) continue;  // every value inside [T12, T11]
        const double width = (a - b) / 1000.0;
        if (width < best) {
          best = width;
          b11 = a;
          b12 = b;
        }
      }
    const auto t = minvol_interval_oracle(p);
    EXPECT_EQ(t(0, 0), b11 / 1000.0);
    EXPECT_EQ(t(0, 1), b12 / 1000.0);
  }
}

TEST(SimplexVolume, IdentityAndDegenerate) {
  const auto v = simplex_volume(Matrix::identity(3));
  EXPECT_NEAR(v.det_proxy, 1.0, 1e-15);
  EXPECT_NEAR(v.true_volume, std::sqrt(3.0) / 2.0, 1e-12);
  EXPECT_NEAR(v.true_volume, 0.866025, 1e-6);
  const auto d = simplex_volume(Matrix{{0.6, 0.6, 0.2}, {0.4, 0.4, 0.3}, {0.0, 0.0, 0.5}});
  EXPECT_EQ(d.det_proxy, 0.0);
  EXPECT_EQ(d.true_volume, 0.0);
}

TEST(SimplexVolume, ProxyIsProportionalForStochasticMatrices) {
  auto eng = make_engine(10);
  for (std::size_t c = 2; c <= 6; ++c) {
    double fact = 1.0;
    for (std::size_t k = 2; k < c; ++k) fact *= static_cast<double>(k);
    const double factor = std::sqrt(static_cast<double>(c)) / fact;
    for (int rep = 0; rep < 20; ++rep) {
      Matrix t(c, c);
      for (std::size_t j = 0; j < c; ++j) t.set_column(j, sample_dirichlet(eng, c, 1.0));
      const auto v = simplex_volume(t);
      EXPECT_NEAR(v.true_volume, std::abs(v.det_proxy) * factor, 1e-10 * std::max(1.0, v.true_volume));
    }
  }
}

TEST(ScatterReport, TextIsStable) {
  ScatterOptions opt;
  opt.rays = 32;
  opt.condition2_trials = 20;
  const auto a = check_scattered(hexagon(), opt);
  const auto b = check_scattered(hexagon(), opt);
  EXPECT_EQ(a.to_text(), b.to_text());
  EXPECT_NE(a.to_text().find("condition1_verdict=pass"), std::string::npos);
  EXPECT_NE(a.to_text().find("anchor_verdict=absent"), std::string::npos);
  EXPECT_NE(a.to_text().find("no witness found in 20 trials"), std::string::npos);
}
