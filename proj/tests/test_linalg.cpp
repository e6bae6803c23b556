#include <cmath>
#include <limits>

#include <gtest/gtest.h>

#include "elsd/linalg.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace elsd;

namespace {

void expect_orthonormal_columns(const Matrix& Q, double tol) {
  const Matrix gram = Q.transpose() * Q;
  EXPECT_LE((gram - Matrix::Identity(Q.cols(), Q.cols())).cwiseAbs().maxCoeff(), tol);
}

} // namespace

TEST(ThinSvd, IdentityHasUnitSingularValues) {
  const SvdFactors f = thin_svd(Matrix::Identity(3, 3));
  ASSERT_EQ(f.sigma.size(), 3);
  for (Index i = 0; i < 3; ++i) EXPECT_NEAR(f.sigma(i), 1.0, 1e-14);
}

TEST(ThinSvd, RankOneOuterProduct) {
  Vector u(4), v(3);
  u << 2, 0, 0, 0; // |u| = 2
  v << 0, 3, 0;    // |v| = 3
  const SvdFactors f = thin_svd(u * v.transpose());
  EXPECT_NEAR(f.sigma(0), 6.0, 1e-13);
  EXPECT_NEAR(f.sigma(1), 0.0, 1e-13);
  EXPECT_NEAR(f.sigma(2), 0.0, 1e-13);
}

TEST(ThinSvd, ReconstructsRandom8x5) {
  const Matrix m = testutil::gaussian(8, 5, 11);
  const SvdFactors f = thin_svd(m);
  EXPECT_EQ(f.U.cols(), 5);
  EXPECT_EQ(f.V.rows(), 5);
  const Matrix r = f.U * f.sigma.asDiagonal() * f.V.transpose();
  EXPECT_LE((r - m).norm() / m.norm(), 1e-10);
}

TEST(ThinSvd, FactorInvariantsOnRandomShapes) {
  const std::pair<Index, Index> shapes[] = {{1, 1}, {1, 7}, {7, 1}, {30, 12}, {12, 30}, {200, 200}, {150, 40}};
  std::uint64_t seed = 100;
  for (auto [r, c] : shapes) {
    const Matrix m = testutil::gaussian(r, c, seed++);
    const SvdFactors f = thin_svd(m);
    const Index k = std::min(r, c);
    ASSERT_EQ(f.sigma.size(), k);
    ASSERT_EQ(f.U.rows(), r);
    ASSERT_EQ(f.U.cols(), k);
    ASSERT_EQ(f.V.rows(), c);
    ASSERT_EQ(f.V.cols(), k);
    for (Index i = 0; i < k; ++i) {
      EXPECT_GE(f.sigma(i), 0.0);
      if (i > 0) {
        EXPECT_LE(f.sigma(i), f.sigma(i - 1));
      }
    }
    expect_orthonormal_columns(f.U, 1e-10);
    expect_orthonormal_columns(f.V, 1e-10);
    const Matrix rec = f.U * f.sigma.asDiagonal() * f.V.transpose();
    EXPECT_LE((rec - m).norm() / std::max(m.norm(), 1e-300), 1e-10) << r << "x" << c;
  }
}

TEST(ThinSvd, RejectsNonFinite) {
  Matrix m = Matrix::Ones(3, 3);
  m(1, 2) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(thin_svd(m), InvalidInput);
  m(1, 2) = std::numeric_limits<double>::infinity();
  EXPECT_THROW(thin_svd(m), InvalidInput);
  EXPECT_THROW(thin_svd(Matrix(0, 0)), InvalidInput);
}

TEST(ShrinkSingularValues, Examples) {
  Vector s(3);
  s << 5, 3, 1;
  const Vector a = shrink_singular_values(s, 1.0);
  EXPECT_EQ(a, (Vector(3) << 4, 2, 0).finished());

  Vector half(1);
  half << 0.5;
  EXPECT_EQ(shrink_singular_values(half, 1.0)(0), 0.0);

  const Vector flat = shrink_singular_values(Vector::Constant(3, 2.0), 0.5);
  EXPECT_EQ(flat, Vector::Constant(3, 1.5));
}

TEST(ShrinkSingularValues, RejectsNonPositiveThreshold) {
  const Vector s = Vector::Ones(2);
  EXPECT_THROW(shrink_singular_values(s, 0.0), InvalidParameter);
  EXPECT_THROW(shrink_singular_values(s, -1.0), InvalidParameter);
}

TEST(ShrinkSingularValues, PreservesOrder) {
  Vector s = testutil::gaussian_vec(20, 3).cwiseAbs();
  std::sort(s.data(), s.data() + s.size(), std::greater<>());
  const Vector out = shrink_singular_values(s, 0.4);
  for (Index i = 1; i < out.size(); ++i) EXPECT_LE(out(i), out(i - 1));
}

TEST(NumericalRank, ToleranceRule) {
  Vector s(3);
  s << 1.0, 1e-9, 1e-12;
  // tolerance = max(10, 3) * 1 * 1e-12 = 1e-11
  EXPECT_EQ(numerical_rank(s, 10, 3), 2);
  EXPECT_EQ(numerical_rank(Vector::Zero(4), 4, 4), 0);
}

TEST(Svt, DiagonalCase) {
  Matrix g = Matrix::Zero(3, 3);
  g.diagonal() << 5, 3, 1;
  const SvtResult r = svt(g, 2.0);
  Matrix expect = Matrix::Zero(3, 3);
  expect.diagonal() << 3, 1, 0;
  EXPECT_LE((r.value - expect).cwiseAbs().maxCoeff(), 1e-13);
  EXPECT_EQ(r.rank, 2);
}

TEST(Svt, OverThresholdGivesZero) {
  const Matrix g = testutil::gaussian(7, 4, 5);
  const SvtResult r = svt(g, thin_svd(g).sigma(0) * 1.01);
  EXPECT_EQ(r.rank, 0);
  EXPECT_EQ(r.value.norm(), 0.0);
}

TEST(Svt, PerturbationOracle) {
  std::mt19937_64 rng(77);
  for (int inst = 0; inst < 5; ++inst) {
    const Matrix g = testutil::gaussian(10, 6, 1000 + inst);
    const double t = 0.1 * thin_svd(g).sigma(0);
    const Matrix b = svt(g, t).value;
    const double f0 = oracle::svt_objective(b, g, t);
    for (int k = 0; k < 1000; ++k) {
      Matrix d = testutil::gaussian(10, 6, rng());
      d *= 1e-3 / d.norm();
      EXPECT_LE(f0, oracle::svt_objective(b + d, g, t) + 1e-12);
    }
  }
}

TEST(Svt, ShrinksNuclearNorm) {
  for (int s = 0; s < 10; ++s) {
    const Matrix g = testutil::gaussian(9, 5, 300 + s);
    EXPECT_LE(nuclear_norm(svt(g, 0.3).value), nuclear_norm(g) + 1e-12);
  }
}

TEST(Svt, Nonexpansive) {
  for (int s = 0; s < 20; ++s) {
    const Matrix g1 = testutil::gaussian(8, 6, 500 + s);
    const Matrix g2 = g1 + testutil::gaussian(8, 6, 900 + s, 0.3);
    const double d = (svt(g1, 0.7).value - svt(g2, 0.7).value).norm();
    EXPECT_LE(d, (g1 - g2).norm() + 1e-12);
  }
}

TEST(Svt, RejectsNonPositiveThreshold) {
  EXPECT_THROW(svt(Matrix::Ones(2, 2), 0.0), InvalidParameter);
}

TEST(Norms, Examples) {
  const Norms a = norms(Matrix::Identity(2, 2));
  EXPECT_NEAR(a.frobenius, std::sqrt(2.0), 1e-15);
  EXPECT_NEAR(a.spectral, 1.0, 1e-15);
  EXPECT_EQ(a.max_abs, 1.0);

  const Norms z = norms(Matrix::Zero(3, 2));
  EXPECT_EQ(z.frobenius, 0.0);
  EXPECT_EQ(z.spectral, 0.0);
  EXPECT_EQ(z.max_abs, 0.0);

  Matrix m(2, 2);
  m << 3, 0, 4, 0;
  const Norms c = norms(m);
  EXPECT_NEAR(c.frobenius, 5.0, 1e-14);
  EXPECT_NEAR(c.spectral, 5.0, 1e-14);
  EXPECT_EQ(c.max_abs, 4.0);
}

TEST(Norms, RejectsNonFinite) {
  Matrix m = Matrix::Ones(2, 2);
  m(0, 0) = std::numeric_limits<double>::infinity();
  EXPECT_THROW(norms(m), InvalidInput);
}

TEST(FrameMatrix, Validation) {
  EXPECT_NO_THROW(FrameMatrix(Matrix::Zero(6, 2), 2, 3));
  EXPECT_THROW(FrameMatrix(Matrix::Zero(6, 2), 2, 2), InvalidGeometry);
  EXPECT_THROW(FrameMatrix(Matrix::Zero(6, 0), 2, 3), InvalidInput);
  EXPECT_THROW(FrameMatrix(Matrix::Zero(0, 1), 0, 3), InvalidGeometry);
  Matrix bad = Matrix::Zero(4, 1);
  bad(2, 0) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(FrameMatrix(bad, 2, 2), InvalidInput);
}
