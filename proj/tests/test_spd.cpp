#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "gmmspd/spd.hpp"
#include "test_util.hpp"

using namespace gmmspd;
using gmmspd::testing::random_spd;
using gmmspd::testing::rel_err;

namespace {

Matrix random_invertible(int n, std::mt19937_64& rng) {
  std::normal_distribution<double> normal;
  Matrix g(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) g(i, j) = normal(rng);
  return g + 0.5 * n * Matrix::Identity(n, n);
}

SpdMatrix diag(std::initializer_list<double> values) {
  Vector v(static_cast<Eigen::Index>(values.size()));
  Eigen::Index i = 0;
  for (double x : values) v(i++) = x;
  return SpdMatrix(v.asDiagonal().toDenseMatrix());
}

// Brute-force distance from the generalized eigenvalues of (P, Q), computed
// through a Cholesky whitening instead of the symmetric square root.
double oracle_distance(const SpdMatrix& p, const SpdMatrix& q) {
  const Matrix l = p.matrix().llt().matrixL();
  const Matrix linv = l.inverse();
  const Matrix m = linv * q.matrix() * linv.transpose();
  Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (m + m.transpose()));
  return es.eigenvalues().array().log().matrix().norm();
}

}  // namespace

TEST(Eigh, IdentityAndDiagonal) {
  const Eigh id = eigh(Matrix::Identity(3, 3));
  EXPECT_TRUE(id.values.isApprox(Vector::Ones(3)));
  Matrix d = Matrix::Zero(3, 3);
  d.diagonal() << 9.0, 1.0, 4.0;
  const Eigh e = eigh(d);
  EXPECT_DOUBLE_EQ(e.values(0), 1.0);
  EXPECT_DOUBLE_EQ(e.values(1), 4.0);
  EXPECT_DOUBLE_EQ(e.values(2), 9.0);
  EXPECT_NEAR(std::abs(e.vectors(1, 0)), 1.0, 1e-15);
  EXPECT_NEAR(std::abs(e.vectors(2, 1)), 1.0, 1e-15);
  EXPECT_NEAR(std::abs(e.vectors(0, 2)), 1.0, 1e-15);
}

TEST(Eigh, ReconstructsRandomSymmetric) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> normal;
  for (int trial = 0; trial < 20; ++trial) {
    Matrix a(6, 6);
    for (int i = 0; i < 6; ++i)
      for (int j = 0; j < 6; ++j) a(i, j) = normal(rng);
    a = 0.5 * (a + a.transpose()).eval();
    const Eigh e = eigh(a);
    for (int i = 1; i < 6; ++i) EXPECT_LE(e.values(i - 1), e.values(i));
    EXPECT_LE(rel_err(e.vectors * e.values.asDiagonal() * e.vectors.transpose(), a), 1e-12);
    EXPECT_LE((e.vectors.transpose() * e.vectors - Matrix::Identity(6, 6)).norm(), 1e-12);
  }
}

TEST(Eigh, RejectsNonFinite) {
  Matrix a = Matrix::Identity(2, 2);
  a(0, 0) = std::nan("");
  EXPECT_THROW(eigh(a), NumericalError);
}

TEST(SpdMatrix, ValidatesAndSymmetrizes) {
  Matrix a(2, 2);
  a << 2.0, 1.0, 0.0, 2.0;
  const SpdMatrix s(a);
  EXPECT_EQ(s.matrix()(0, 1), s.matrix()(1, 0));
  EXPECT_DOUBLE_EQ(s.matrix()(0, 1), 0.5);
  Matrix b(2, 2);
  b << 1.0, 2.0, 2.0, 1.0;
  EXPECT_THROW(SpdMatrix{b}, DataError);
  EXPECT_THROW(SpdMatrix{Matrix::Zero(3, 3)}, DataError);
}

TEST(SqrtInvSqrt, Examples) {
  const SqrtPair id = spd_sqrt_inv_sqrt(SpdMatrix::identity(3));
  EXPECT_TRUE(id.half.matrix().isApprox(Matrix::Identity(3, 3)));
  EXPECT_TRUE(id.neg_half.matrix().isApprox(Matrix::Identity(3, 3)));

  const SqrtPair d = spd_sqrt_inv_sqrt(diag({4.0, 9.0}));
  EXPECT_NEAR(d.half.matrix()(0, 0), 2.0, 1e-14);
  EXPECT_NEAR(d.half.matrix()(1, 1), 3.0, 1e-14);
  EXPECT_NEAR(d.neg_half.matrix()(0, 0), 0.5, 1e-15);
  EXPECT_NEAR(d.neg_half.matrix()(1, 1), 1.0 / 3.0, 1e-15);

  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const SpdMatrix s = random_spd(5, rng, 100.0);
    const SqrtPair p = spd_sqrt_inv_sqrt(s);
    EXPECT_LE(rel_err(p.neg_half.matrix() * s.matrix() * p.neg_half.matrix(), Matrix::Identity(5, 5)), 1e-9);
    EXPECT_LE(rel_err(p.half.matrix() * p.half.matrix(), s.matrix()), 1e-10);
    EXPECT_LE(rel_err(p.half.matrix() * p.neg_half.matrix(), Matrix::Identity(5, 5)), 1e-10);
  }
}

TEST(SqrtInvSqrt, ClampsSmallEigenvalues) {
  const SqrtPair p = spd_sqrt_inv_sqrt(diag({1.0, 1e-14}), 1e-10);
  EXPECT_NEAR(p.half.matrix()(1, 1), 1e-5, 1e-18);
  EXPECT_NEAR(p.neg_half.matrix()(1, 1), 1e5, 1e-6);
}

TEST(AffineDistance, Examples) {
  std::mt19937_64 rng(7);
  const SpdMatrix p = random_spd(4, rng);
  EXPECT_LE(affine_distance(p, p), 1e-10);
  const double e2 = std::exp(2.0);
  EXPECT_NEAR(affine_distance(SpdMatrix::identity(2), diag({e2, 1.0})), 2.0, 1e-12);
  EXPECT_NEAR(affine_distance(SpdMatrix::identity(2), diag({e2, 1.0}), MetricScale::half_trace),
              2.0 * std::sqrt(0.5), 1e-12);
  EXPECT_THROW(affine_distance(SpdMatrix::identity(2), SpdMatrix::identity(3)), DimensionError);
}

TEST(AffineDistance, MatchesCholeskyOracle) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 1 + trial % 7;
    const SpdMatrix p = random_spd(n, rng, 1e3);
    const SpdMatrix q = random_spd(n, rng, 1e3);
    EXPECT_LE(rel_err(affine_distance(p, q), oracle_distance(p, q)), 1e-9);
  }
}

TEST(AffineDistanceProperty, AffineInvariance) {
  std::mt19937_64 rng(13);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 1 + trial % 6;
    const SpdMatrix p = random_spd(n, rng, 100.0);
    const SpdMatrix q = random_spd(n, rng, 100.0);
    const Matrix g = random_invertible(n, rng);
    const double d = affine_distance(p, q);
    const double dg = affine_distance(p.congruence(g), q.congruence(g));
    EXPECT_LE(rel_err(dg, d), 1e-8) << "trial " << trial;
  }
}

TEST(AffineDistanceProperty, Symmetry) {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 1 + trial % 8;
    const SpdMatrix p = random_spd(n, rng, 1e3);
    const SpdMatrix q = random_spd(n, rng, 1e3);
    EXPECT_LE(rel_err(affine_distance(p, q), affine_distance(q, p)), 1e-10);
  }
}

TEST(AffineDistanceProperty, TriangleInequality) {
  std::mt19937_64 rng(19);
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = 1 + trial % 8;
    const SpdMatrix p = random_spd(n, rng, 50.0);
    const SpdMatrix q = random_spd(n, rng, 50.0);
    const SpdMatrix r = random_spd(n, rng, 50.0);
    EXPECT_LE(affine_distance(p, r), affine_distance(p, q) + affine_distance(q, r) + 1e-9);
  }
}

TEST(AffineDistanceProperty, InversionInvariance) {
  std::mt19937_64 rng(23);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 1 + trial % 6;
    const SpdMatrix p = random_spd(n, rng, 100.0);
    const SpdMatrix q = random_spd(n, rng, 100.0);
    EXPECT_LE(rel_err(affine_distance(p.inverse(), q.inverse()), affine_distance(p, q)), 1e-8);
  }
}

TEST(Geodesic, EndpointsAndMidpoint) {
  std::mt19937_64 rng(29);
  const SpdMatrix a = random_spd(4, rng);
  const SpdMatrix b = random_spd(4, rng);
  EXPECT_LE(rel_err(geodesic_point(a, b, 0.0).matrix(), a.matrix()), 1e-10);
  EXPECT_LE(rel_err(geodesic_point(a, b, 1.0).matrix(), b.matrix()), 1e-10);
  const double e = std::numbers::e;
  const SpdMatrix mid = geodesic_point(SpdMatrix::identity(2), diag({e * e, e * e}), 0.5);
  EXPECT_NEAR(mid.matrix()(0, 0), e, 1e-12);
  EXPECT_NEAR(mid.matrix()(1, 1), e, 1e-12);
  EXPECT_NEAR(mid.matrix()(0, 1), 0.0, 1e-12);
  EXPECT_THROW(geodesic_point(a, b, 1.5), UsageError);
  EXPECT_THROW(geodesic_point(a, b, -0.1), UsageError);
  EXPECT_THROW(geodesic_point(a, SpdMatrix::identity(3), 0.5), DimensionError);
}

TEST(GeodesicProperty, DistanceLinearInT) {
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 1 + trial % 6;
    const SpdMatrix a = random_spd(n, rng, 100.0);
    const SpdMatrix b = random_spd(n, rng, 100.0);
    const double t = unit(rng);
    const SpdMatrix g = geodesic_point(a, b, t);
    const double d = affine_distance(a, b);
    EXPECT_LE(rel_err(affine_distance(a, g), t * d), 1e-8);
    EXPECT_LE(rel_err(affine_distance(a, g) + affine_distance(g, b), d), 1e-8);
  }
}

TEST(ExpLog, Examples) {
  const SpdMatrix i2 = SpdMatrix::identity(2);
  EXPECT_TRUE(exp_map(i2, SymMatrix::zero(2)).matrix().isApprox(i2.matrix()));
  Matrix x = Matrix::Zero(2, 2);
  x.diagonal() << 1.0, 2.0;
  const SpdMatrix e = exp_map(i2, SymMatrix(x));
  EXPECT_NEAR(e.matrix()(0, 0), std::numbers::e, 1e-12);
  EXPECT_NEAR(e.matrix()(1, 1), std::exp(2.0), 1e-12);
  EXPECT_THROW(exp_map(i2, SymMatrix::zero(3)), DimensionError);
  EXPECT_THROW(log_map(i2, SpdMatrix::identity(3)), DimensionError);
}

TEST(ExpLogProperty, Roundtrip) {
  std::mt19937_64 rng(37);
  std::normal_distribution<double> normal;
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 1 + trial % 6;
    const SpdMatrix a = random_spd(n, rng, 100.0);
    Matrix x(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) x(i, j) = normal(rng);
    x = 0.5 * (x + x.transpose()).eval();
    x /= std::max(1.0, x.norm());
    const SymMatrix xs(x);
    const SymMatrix back = log_map(a, exp_map(a, xs));
    EXPECT_LE(rel_err(back.matrix(), xs.matrix()), 1e-9);
    EXPECT_LE(rel_err(exp_map(a, SymMatrix::zero(n)).matrix(), a.matrix()), 1e-12);
  }
}

TEST(ExpLogProperty, LogMapMatchesGeodesicVelocity) {
  std::mt19937_64 rng(41);
  for (int trial = 0; trial < 20; ++trial) {
    const SpdMatrix a = random_spd(3, rng);
    const SpdMatrix b = random_spd(3, rng);
    const SymMatrix v = log_map(a, b);
    const Matrix a_inv = a.inverse().matrix();
    const double norm = std::sqrt((a_inv * v.matrix() * a_inv * v.matrix()).trace());
    EXPECT_LE(rel_err(norm, affine_distance(a, b)), 1e-9);
    const double h = 1e-6;
    const Matrix fd = (geodesic_point(a, b, h).matrix() - a.matrix()) / h;
    EXPECT_LE(rel_err(fd, v.matrix()), 1e-5);
  }
}

TEST(Jbld, Examples) {
  std::mt19937_64 rng(43);
  const SpdMatrix p = random_spd(4, rng);
  EXPECT_NEAR(jbld_distance(p, p), 0.0, 1e-7);
  const double want = std::sqrt(std::log(2.0) - 0.5 * std::log(3.0));
  EXPECT_NEAR(jbld_distance(diag({1.0}), diag({3.0})), want, 1e-12);
  EXPECT_NEAR(want, 0.3792, 1e-4);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 1 + trial % 6;
    const SpdMatrix a = random_spd(n, rng, 100.0);
    const SpdMatrix b = random_spd(n, rng, 100.0);
    EXPECT_LE(rel_err(jbld_distance(a, b), jbld_distance(b, a)), 1e-12);
    EXPECT_GT(jbld_distance(a, b), 0.0);
  }
  EXPECT_THROW(jbld_distance(p, SpdMatrix::identity(2)), DimensionError);
}
