#pragma once

// Geometry of the manifold of symmetric positive definite matrices under the
// affine-invariant metric, plus the Jensen-Bregman LogDet distance.
//
// Every matrix function in this header goes through `eigh` on an explicitly
// symmetrized argument.

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <utility>

#include "gmmspd/error.hpp"

namespace gmmspd {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

inline constexpr double kDefaultEpsilonRel = 1e-10;

inline Matrix symmetrized(const Matrix& m) {
  if (m.rows() != m.cols()) {
    throw DimensionError("matrix is not square: " + std::to_string(m.rows()) + "x" +
                         std::to_string(m.cols()));
  }
  return 0.5 * (m + m.transpose());
}

/// Dense real symmetric matrix. Tangent vectors of SPD live here.
class SymMatrix {
public:
  SymMatrix() = default;
  explicit SymMatrix(const Matrix& m) : m_(symmetrized(m)) {}

  static SymMatrix zero(Eigen::Index dim) { return SymMatrix(Matrix::Zero(dim, dim)); }

  Eigen::Index dim() const { return m_.rows(); }
  const Matrix& matrix() const { return m_; }
  double operator()(Eigen::Index i, Eigen::Index j) const { return m_(i, j); }

private:
  Matrix m_;
};

struct Eigh {
  Vector values;   // ascending
  Matrix vectors;  // columns are orthonormal eigenvectors
};

/// Symmetric eigendecomposition. Throws NumericalError if the solver fails to
/// converge or the input contains non-finite entries.
inline Eigh eigh(const Matrix& sym) {
  if (!sym.allFinite()) throw NumericalError("eigh: non-finite matrix entries");
  Eigen::SelfAdjointEigenSolver<Matrix> solver(symmetrized(sym));
  if (solver.info() != Eigen::Success) throw NumericalError("eigh: eigensolver did not converge");
  return {solver.eigenvalues(), solver.eigenvectors()};
}

inline Eigh eigh(const SymMatrix& s) { return eigh(s.matrix()); }

/// Eigenvalues only, ascending.
inline Vector eigvalsh(const Matrix& sym) {
  if (!sym.allFinite()) throw NumericalError("eigvalsh: non-finite matrix entries");
  Eigen::SelfAdjointEigenSolver<Matrix> solver(symmetrized(sym), Eigen::EigenvaluesOnly);
  if (solver.info() != Eigen::Success) throw NumericalError("eigvalsh: eigensolver did not converge");
  return solver.eigenvalues();
}

/// V f(lambda) V^T, symmetrized on output.
template <typename F>
Matrix spectral_apply(const Eigh& e, F&& f) {
  Vector mapped = e.values.unaryExpr(std::forward<F>(f));
  Matrix out = e.vectors * mapped.asDiagonal() * e.vectors.transpose();
  return 0.5 * (out + out.transpose());
}

class SpdMatrix {
public:
  SpdMatrix() = default;

  /// Symmetrizes `m` and rejects it unless its smallest eigenvalue is positive.
  explicit SpdMatrix(const Matrix& m) : m_(symmetrized(m)) {
    if (m_.rows() == 0) throw DataError("SpdMatrix: empty matrix");
    const double min_eig = eigvalsh(m_)(0);
    if (!(min_eig > 0.0)) {
      throw DataError("SpdMatrix: not positive definite (min eigenvalue " +
                      std::to_string(min_eig) + ")");
    }
  }

  /// Skips the spectrum check. Only for results that are SPD by construction
  /// (matrix powers and exponentials of valid inputs).
  static SpdMatrix assume_valid(const Matrix& m) {
    SpdMatrix s;
    s.m_ = symmetrized(m);
    return s;
  }

  static SpdMatrix identity(Eigen::Index dim) { return assume_valid(Matrix::Identity(dim, dim)); }

  Eigen::Index dim() const { return m_.rows(); }
  const Matrix& matrix() const { return m_; }
  double operator()(Eigen::Index i, Eigen::Index j) const { return m_(i, j); }

  SpdMatrix inverse() const {
    Eigen::LLT<Matrix> llt(m_);
    if (llt.info() != Eigen::Success) throw NumericalError("SpdMatrix::inverse: Cholesky failed");
    return assume_valid(llt.solve(Matrix::Identity(dim(), dim())));
  }

  double logdet() const {
    Eigen::LLT<Matrix> llt(m_);
    if (llt.info() != Eigen::Success) throw NumericalError("SpdMatrix::logdet: Cholesky failed");
    return 2.0 * llt.matrixLLT().diagonal().array().log().sum();
  }

  /// Congruence G^T S G.
  SpdMatrix congruence(const Matrix& g) const {
    return assume_valid(g.transpose() * m_ * g);
  }

private:
  Matrix m_;
};

/// Two conventions for the affine-invariant distance. `frobenius` is
/// ||log(P^-1/2 Q P^-1/2)||_F; `half_trace` is the distance induced by
/// ds^2 = 1/2 tr((S^-1 dS)^2), i.e. sqrt(1/2) times the former.
enum class MetricScale { frobenius, half_trace };

inline double scale_factor(MetricScale scale) {
  return scale == MetricScale::half_trace ? std::sqrt(0.5) : 1.0;
}

struct SqrtPair {
  SpdMatrix half;
  SpdMatrix neg_half;
};

/// S^{1/2} and S^{-1/2}, with eigenvalues clamped to at least
/// epsilon_rel * max(lambda) first.
inline SqrtPair spd_sqrt_inv_sqrt(const SpdMatrix& s, double epsilon_rel = kDefaultEpsilonRel) {
  if (!(epsilon_rel >= 0.0)) throw UsageError("spd_sqrt_inv_sqrt: epsilon_rel must be >= 0");
  Eigh e = eigh(s.matrix());
  const double floor = epsilon_rel * e.values.maxCoeff();
  e.values = e.values.cwiseMax(floor).cwiseMax(std::numeric_limits<double>::min());
  return {SpdMatrix::assume_valid(spectral_apply(e, [](double l) { return std::sqrt(l); })),
          SpdMatrix::assume_valid(spectral_apply(e, [](double l) { return 1.0 / std::sqrt(l); }))};
}

inline Matrix sym_log(const Matrix& m) {
  Eigh e = eigh(m);
  return spectral_apply(e, [](double l) {
    return std::log(std::max(l, std::numeric_limits<double>::min()));
  });
}

inline Matrix sym_exp(const Matrix& m) {
  return spectral_apply(eigh(m), [](double l) { return std::exp(l); });
}

namespace detail {

inline void require_same_dim(Eigen::Index a, Eigen::Index b, const char* where) {
  if (a != b) {
    throw DimensionError(std::string(where) + ": dimension mismatch (" + std::to_string(a) +
                         " vs " + std::to_string(b) + ")");
  }
}

}  // namespace detail

/// Distance given a precomputed P^{-1/2}. The intermediate
/// M = P^{-1/2} Q P^{-1/2} is symmetrized before its eigenvalues are taken.
inline double affine_distance_from_inv_sqrt(const Matrix& p_neg_half, const Matrix& q,
                                            MetricScale scale = MetricScale::frobenius) {
  detail::require_same_dim(p_neg_half.rows(), q.rows(), "affine_distance");
  const Matrix m = p_neg_half * q * p_neg_half;
  const Vector lambda = eigvalsh(m);
  double sq = 0.0;
  for (Eigen::Index i = 0; i < lambda.size(); ++i) {
    const double l = std::log(std::max(lambda(i), std::numeric_limits<double>::min()));
    sq += l * l;
  }
  return scale_factor(scale) * std::sqrt(sq);
}

inline double affine_distance(const SpdMatrix& p, const SpdMatrix& q,
                              MetricScale scale = MetricScale::frobenius,
                              double epsilon_rel = kDefaultEpsilonRel) {
  detail::require_same_dim(p.dim(), q.dim(), "affine_distance");
  if (p.matrix() == q.matrix()) return 0.0;
  return affine_distance_from_inv_sqrt(spd_sqrt_inv_sqrt(p, epsilon_rel).neg_half.matrix(),
                                       q.matrix(), scale);
}

/// gamma(t) = A^{1/2} (A^{-1/2} B A^{-1/2})^t A^{1/2}.
inline SpdMatrix geodesic_point(const SpdMatrix& a, const SpdMatrix& b, double t) {
  detail::require_same_dim(a.dim(), b.dim(), "geodesic_point");
  if (!(t >= 0.0 && t <= 1.0)) throw UsageError("geodesic_point: t must lie in [0, 1]");
  const SqrtPair r = spd_sqrt_inv_sqrt(a, 0.0);
  const Matrix m = r.neg_half.matrix() * b.matrix() * r.neg_half.matrix();
  const Matrix mt = spectral_apply(eigh(m), [t](double l) {
    return std::pow(std::max(l, std::numeric_limits<double>::min()), t);
  });
  return SpdMatrix::assume_valid(r.half.matrix() * mt * r.half.matrix());
}

/// Exp_A(X) = A^{1/2} exp(A^{-1/2} X A^{-1/2}) A^{1/2}.
inline SpdMatrix exp_map(const SpdMatrix& a, const SymMatrix& x) {
  detail::require_same_dim(a.dim(), x.dim(), "exp_map");
  const SqrtPair r = spd_sqrt_inv_sqrt(a, 0.0);
  const Matrix inner = sym_exp(r.neg_half.matrix() * x.matrix() * r.neg_half.matrix());
  return SpdMatrix::assume_valid(r.half.matrix() * inner * r.half.matrix());
}

/// Log_A(B) = A^{1/2} log(A^{-1/2} B A^{-1/2}) A^{1/2}.
inline SymMatrix log_map(const SpdMatrix& a, const SpdMatrix& b) {
  detail::require_same_dim(a.dim(), b.dim(), "log_map");
  const SqrtPair r = spd_sqrt_inv_sqrt(a, 0.0);
  const Matrix inner = sym_log(r.neg_half.matrix() * b.matrix() * r.neg_half.matrix());
  return SymMatrix(r.half.matrix() * inner * r.half.matrix());
}

/// sqrt(logdet((P+Q)/2) - 1/2 logdet(PQ)).
inline double jbld_distance(const SpdMatrix& p, const SpdMatrix& q) {
  detail::require_same_dim(p.dim(), q.dim(), "jbld_distance");
  const SpdMatrix mid = SpdMatrix::assume_valid(0.5 * (p.matrix() + q.matrix()));
  const double j = mid.logdet() - 0.5 * (p.logdet() + q.logdet());
  return std::sqrt(std::max(j, 0.0));
}

}  // namespace gmmspd
