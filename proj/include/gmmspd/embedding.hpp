#pragma once

// Embedding of K-component Gaussian mixtures in R^n into SPD_{K(n+1)}.
//
// Dense layout (dimension K(n+1)):
//
//   S = [ A   X ]      A = blockdiag(Sigma_k + pi_k mu_k mu_k^T)   (Kn x Kn)
//       [ X^T B ]      X = blockdiag(pi_k mu_k)                     (Kn x K)
//                      B = diag(pi_k)                               (K x K)
//
// Component k owns rows [k n, (k+1) n) of A and row K n + k of B.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <istream>
#include <locale>
#include <numeric>
#include <ostream>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "gmmspd/error.hpp"
#include "gmmspd/gmm.hpp"
#include "gmmspd/spd.hpp"

namespace gmmspd {

/// Perturbation (d pi_k, d mu_k, d Sigma_k) at a mixture. The weight part sums
/// to zero so the simplex constraint holds to first order.
struct GmmTangent {
  Vector d_weights;
  std::vector<Vector> d_means;
  std::vector<SymMatrix> d_covs;

  static GmmTangent zero(int k, int n) {
    GmmTangent t;
    t.d_weights = Vector::Zero(k);
    t.d_means.assign(static_cast<std::size_t>(k), Vector::Zero(n));
    t.d_covs.assign(static_cast<std::size_t>(k), SymMatrix::zero(n));
    return t;
  }

  int K() const { return static_cast<int>(d_weights.size()); }

  void validate_for(const Gmm& g) const {
    const auto k = static_cast<std::size_t>(g.K());
    if (d_weights.size() != g.K() || d_means.size() != k || d_covs.size() != k) {
      throw DimensionError("GmmTangent: component count does not match the mixture");
    }
    for (std::size_t i = 0; i < k; ++i) {
      if (d_means[i].size() != g.n() || d_covs[i].dim() != g.n()) {
        throw DimensionError("GmmTangent: dimension does not match the mixture");
      }
    }
    if (std::abs(d_weights.sum()) > 1e-12) {
      throw DataError("GmmTangent: weight differentials must sum to zero");
    }
  }
};

class EmbeddedGmm {
public:
  EmbeddedGmm() = default;

  /// Assembles the dense matrix and asserts it is positive definite.
  EmbeddedGmm(std::vector<Matrix> a_blocks, std::vector<Vector> x_cols, Vector b_diag)
      : a_blocks_(std::move(a_blocks)), x_cols_(std::move(x_cols)), b_diag_(std::move(b_diag)) {
    k_ = static_cast<int>(b_diag_.size());
    if (k_ < 1 || a_blocks_.size() != static_cast<std::size_t>(k_) ||
        x_cols_.size() != static_cast<std::size_t>(k_)) {
      throw DimensionError("EmbeddedGmm: inconsistent block counts");
    }
    n_ = static_cast<int>(x_cols_.front().size());
    for (int k = 0; k < k_; ++k) {
      if (a_blocks_[static_cast<std::size_t>(k)].rows() != n_ ||
          a_blocks_[static_cast<std::size_t>(k)].cols() != n_ ||
          x_cols_[static_cast<std::size_t>(k)].size() != n_) {
        throw DimensionError("EmbeddedGmm: inconsistent block sizes");
      }
    }
    if (!(b_diag_.minCoeff() > 0.0) || std::abs(b_diag_.sum() - 1.0) > kWeightSumTolerance) {
      throw DataError("EmbeddedGmm: weight block must be positive and sum to 1");
    }
    try {
      dense_ = SpdMatrix(assemble());
    } catch (const DataError& e) {
      throw NumericalError(std::string("EmbeddedGmm: dense matrix lost definiteness: ") + e.what());
    }
  }

  int K() const { return k_; }
  int n() const { return n_; }
  int dim() const { return k_ * (n_ + 1); }
  const std::vector<Matrix>& a_blocks() const { return a_blocks_; }
  const std::vector<Vector>& x_cols() const { return x_cols_; }
  const Vector& b_diag() const { return b_diag_; }
  const SpdMatrix& dense() const { return dense_; }

private:
  Matrix assemble() const {
    const int nk = k_ * n_;
    Matrix s = Matrix::Zero(dim(), dim());
    for (int k = 0; k < k_; ++k) {
      const auto ku = static_cast<std::size_t>(k);
      s.block(k * n_, k * n_, n_, n_) = a_blocks_[ku];
      s.block(k * n_, nk + k, n_, 1) = x_cols_[ku];
      s.block(nk + k, k * n_, 1, n_) = x_cols_[ku].transpose();
      s(nk + k, nk + k) = b_diag_(k);
    }
    return s;
  }

  int k_ = 0;
  int n_ = 0;
  std::vector<Matrix> a_blocks_;
  std::vector<Vector> x_cols_;
  Vector b_diag_;
  SpdMatrix dense_;
};

inline EmbeddedGmm embed(const Gmm& g) {
  std::vector<Matrix> a;
  std::vector<Vector> x;
  a.reserve(static_cast<std::size_t>(g.K()));
  x.reserve(static_cast<std::size_t>(g.K()));
  for (int k = 0; k < g.K(); ++k) {
    const double pi = g.weight(k);
    const Vector& mu = g.mean(k);
    a.push_back(g.cov(k).matrix() + pi * mu * mu.transpose());
    x.push_back(pi * mu);
  }
  return EmbeddedGmm(std::move(a), std::move(x), g.weights());
}

/// Inverse of `embed`. Throws DataError if a recovered covariance is not
/// positive definite, i.e. the input does not lie in the image.
inline Gmm recover(const EmbeddedGmm& e) {
  std::vector<Vector> means;
  std::vector<SpdMatrix> covs;
  for (int k = 0; k < e.K(); ++k) {
    const auto ku = static_cast<std::size_t>(k);
    const double pi = e.b_diag()(k);
    Vector mu = e.x_cols()[ku] / pi;
    Matrix sigma = e.a_blocks()[ku] - pi * mu * mu.transpose();
    try {
      covs.emplace_back(sigma);
    } catch (const DataError&) {
      throw DataError("recover: component " + std::to_string(k) +
                      " covariance is not positive definite");
    }
    means.push_back(std::move(mu));
  }
  return Gmm(e.b_diag(), std::move(means), std::move(covs));
}

/// Reads the structured blocks out of a dense K(n+1) matrix. Entries outside
/// the block pattern are ignored; see `structure_residual`. Throws DataError
/// if the blocks do not assemble into a positive definite matrix.
inline EmbeddedGmm embedded_from_dense(const Matrix& s, int k, int n) {
  if (s.rows() != k * (n + 1) || s.cols() != s.rows()) {
    throw DimensionError("embedded_from_dense: matrix size does not match K(n+1)");
  }
  const int nk = k * n;
  std::vector<Matrix> a;
  std::vector<Vector> x;
  Vector b(k);
  for (int c = 0; c < k; ++c) {
    a.push_back(s.block(c * n, c * n, n, n));
    x.push_back(0.5 * (s.block(c * n, nk + c, n, 1) + s.block(nk + c, c * n, 1, n).transpose()));
    b(c) = s(nk + c, nk + c);
  }
  try {
    return EmbeddedGmm(std::move(a), std::move(x), std::move(b));
  } catch (const NumericalError& e) {
    throw DataError(std::string("embedded_from_dense: not in the image of embed: ") + e.what());
  }
}

/// Closed-form block inverse. Component k contributes
///   [ Sigma_k^-1            -Sigma_k^-1 mu_k              ]
///   [ -mu_k^T Sigma_k^-1    1/pi_k + mu_k^T Sigma_k^-1 mu_k ]
/// in the same layout as the embedding.
inline SpdMatrix embedded_inverse(const EmbeddedGmm& e) {
  const int k_count = e.K();
  const int n = e.n();
  const int nk = k_count * n;
  Matrix inv = Matrix::Zero(e.dim(), e.dim());
  for (int k = 0; k < k_count; ++k) {
    const auto ku = static_cast<std::size_t>(k);
    const double pi = e.b_diag()(k);
    const Vector mu = e.x_cols()[ku] / pi;
    const Matrix sigma = e.a_blocks()[ku] - pi * mu * mu.transpose();
    Eigen::LLT<Matrix> llt(sigma);
    if (llt.info() != Eigen::Success) throw NumericalError("embedded_inverse: Cholesky failed");
    const Matrix sigma_inv = llt.solve(Matrix::Identity(n, n));
    const Vector sigma_inv_mu = llt.solve(mu);
    inv.block(k * n, k * n, n, n) = sigma_inv;
    inv.block(k * n, nk + k, n, 1) = -sigma_inv_mu;
    inv.block(nk + k, k * n, 1, n) = -sigma_inv_mu.transpose();
    inv(nk + k, nk + k) = 1.0 / pi + mu.dot(sigma_inv_mu);
  }
  return SpdMatrix::assume_valid(inv);
}

/// Diagonal of B - X^T A^-1 X, evaluated as pi_k / (1 + pi_k mu_k^T Sigma_k^-1 mu_k).
inline Vector schur_complement_diag(const Gmm& g) {
  Vector out(g.K());
  for (int k = 0; k < g.K(); ++k) {
    Eigen::LLT<Matrix> llt(g.cov(k).matrix());
    const double q = g.mean(k).dot(llt.solve(g.mean(k)));
    out(k) = g.weight(k) / (1.0 + g.weight(k) * q);
  }
  return out;
}

/// Differential dS of the embedding along `t`, in the dense layout.
inline SymMatrix embedding_differential(const Gmm& g, const GmmTangent& t) {
  t.validate_for(g);
  const int n = g.n();
  const int nk = g.K() * n;
  Matrix ds = Matrix::Zero(g.K() * (n + 1), g.K() * (n + 1));
  for (int k = 0; k < g.K(); ++k) {
    const auto ku = static_cast<std::size_t>(k);
    const double pi = g.weight(k);
    const double dpi = t.d_weights(k);
    const Vector& mu = g.mean(k);
    const Vector& dmu = t.d_means[ku];
    ds.block(k * n, k * n, n, n) = t.d_covs[ku].matrix() + dpi * mu * mu.transpose() +
                                   pi * (dmu * mu.transpose() + mu * dmu.transpose());
    const Vector dx = dpi * mu + pi * dmu;
    ds.block(k * n, nk + k, n, 1) = dx;
    ds.block(nk + k, k * n, 1, n) = dx.transpose();
    ds(nk + k, nk + k) = dpi;
  }
  return SymMatrix(ds);
}

/// Pulled-back metric
///   sum_k [ 1/2 (d pi_k / pi_k)^2 + pi_k dmu_k^T Sigma_k^-1 dmu_k
///           + 1/2 tr((Sigma_k^-1 dSigma_k)^2) ].
inline double pullback_ds2(const Gmm& g, const GmmTangent& t) {
  t.validate_for(g);
  double total = 0.0;
  for (int k = 0; k < g.K(); ++k) {
    const auto ku = static_cast<std::size_t>(k);
    const double pi = g.weight(k);
    Eigen::LLT<Matrix> llt(g.cov(k).matrix());
    const double ratio = t.d_weights(k) / pi;
    const Matrix w = llt.solve(t.d_covs[ku].matrix());
    total += 0.5 * ratio * ratio + pi * t.d_means[ku].dot(llt.solve(t.d_means[ku])) +
             0.5 * (w * w).trace();
  }
  return std::max(total, 0.0);
}

/// g (+) eps t: additive in every parameter, weights renormalized and
/// covariances symmetrized afterwards.
inline Gmm perturb(const Gmm& g, const GmmTangent& t, double eps) {
  t.validate_for(g);
  Vector w = g.weights() + eps * t.d_weights;
  std::vector<Vector> means;
  std::vector<SpdMatrix> covs;
  for (int k = 0; k < g.K(); ++k) {
    const auto ku = static_cast<std::size_t>(k);
    means.push_back(g.mean(k) + eps * t.d_means[ku]);
    covs.emplace_back(g.cov(k).matrix() + eps * t.d_covs[ku].matrix());
  }
  return Gmm::normalized(std::move(w), std::move(means), std::move(covs));
}

/// Basis of the tangent space: K-1 weight directions e_k - e_K, then K n mean
/// directions, then K n(n+1)/2 symmetric covariance directions. Its size is
/// K(n+1)(n+2)/2 - 1.
inline std::vector<GmmTangent> tangent_basis(int k_count, int n) {
  std::vector<GmmTangent> basis;
  for (int k = 0; k + 1 < k_count; ++k) {
    GmmTangent t = GmmTangent::zero(k_count, n);
    t.d_weights(k) = 1.0;
    t.d_weights(k_count - 1) = -1.0;
    basis.push_back(std::move(t));
  }
  for (int k = 0; k < k_count; ++k) {
    for (int i = 0; i < n; ++i) {
      GmmTangent t = GmmTangent::zero(k_count, n);
      t.d_means[static_cast<std::size_t>(k)](i) = 1.0;
      basis.push_back(std::move(t));
    }
  }
  for (int k = 0; k < k_count; ++k) {
    for (int i = 0; i < n; ++i) {
      for (int j = i; j < n; ++j) {
        GmmTangent t = GmmTangent::zero(k_count, n);
        Matrix e = Matrix::Zero(n, n);
        e(i, j) = 1.0;
        e(j, i) = 1.0;
        t.d_covs[static_cast<std::size_t>(k)] = SymMatrix(e);
        basis.push_back(std::move(t));
      }
    }
  }
  return basis;
}

// ---------------------------------------------------------------------------
// Distances

enum class Align { none, canonical };

/// Components sorted by descending weight, then lexicographic mean, then
/// covariance trace. The embedding is not permutation invariant, so refits
/// with relabelled components need a common order.
inline Gmm canonical_order(const Gmm& g) {
  std::vector<int> order(static_cast<std::size_t>(g.K()));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&g](int a, int b) {
    if (g.weight(a) != g.weight(b)) return g.weight(a) > g.weight(b);
    const Vector& ma = g.mean(a);
    const Vector& mb = g.mean(b);
    for (Eigen::Index i = 0; i < ma.size(); ++i) {
      if (ma(i) != mb(i)) return ma(i) < mb(i);
    }
    return g.cov(a).matrix().trace() < g.cov(b).matrix().trace();
  });
  Vector w(g.K());
  std::vector<Vector> means;
  std::vector<SpdMatrix> covs;
  for (int i = 0; i < g.K(); ++i) {
    const int src = order[static_cast<std::size_t>(i)];
    w(i) = g.weight(src);
    means.push_back(g.mean(src));
    covs.push_back(g.cov(src));
  }
  return Gmm(std::move(w), std::move(means), std::move(covs));
}

namespace detail {

inline void require_same_shape(const Gmm& a, const Gmm& b, const char* where) {
  if (a.K() != b.K() || a.n() != b.n()) {
    throw DimensionError(std::string(where) + ": mixtures differ in shape (K=" +
                         std::to_string(a.K()) + ", n=" + std::to_string(a.n()) + " vs K=" +
                         std::to_string(b.K()) + ", n=" + std::to_string(b.n()) + ")");
  }
}

}  // namespace detail

/// Affine-invariant distance between the embeddings of two mixtures.
inline double gmm_distance(const Gmm& g1, const Gmm& g2, MetricScale scale = MetricScale::frobenius,
                           Align align = Align::canonical) {
  detail::require_same_shape(g1, g2, "gmm_distance");
  if (align == Align::canonical) {
    return affine_distance(embed(canonical_order(g1)).dense(), embed(canonical_order(g2)).dense(),
                           scale);
  }
  return affine_distance(embed(g1).dense(), embed(g2).dense(), scale);
}

/// Sum of gmm_distance over consecutive waypoints.
inline double path_length(std::span<const Gmm> waypoints, MetricScale scale = MetricScale::frobenius,
                          Align align = Align::none) {
  if (waypoints.size() < 2) throw UsageError("path_length: need at least two waypoints");
  double total = 0.0;
  for (std::size_t i = 1; i < waypoints.size(); ++i) {
    total += gmm_distance(waypoints[i - 1], waypoints[i], scale, align);
  }
  return total;
}

/// Straight line in parameter space: weights, means and covariances
/// interpolated linearly.
inline Gmm parameter_segment(const Gmm& g1, const Gmm& g2, double s) {
  detail::require_same_shape(g1, g2, "parameter_segment");
  Vector w = (1.0 - s) * g1.weights() + s * g2.weights();
  std::vector<Vector> means;
  std::vector<SpdMatrix> covs;
  for (int k = 0; k < g1.K(); ++k) {
    means.push_back((1.0 - s) * g1.mean(k) + s * g2.mean(k));
    covs.push_back(SpdMatrix::assume_valid((1.0 - s) * g1.cov(k).matrix() + s * g2.cov(k).matrix()));
  }
  return Gmm::normalized(std::move(w), std::move(means), std::move(covs));
}

/// Weights and means of g1 kept, covariances moved along their own
/// affine-invariant geodesics towards those of g2.
inline Gmm covariance_geodesic_segment(const Gmm& g1, const Gmm& g2, double s) {
  detail::require_same_shape(g1, g2, "covariance_geodesic_segment");
  std::vector<SpdMatrix> covs;
  for (int k = 0; k < g1.K(); ++k) covs.push_back(geodesic_point(g1.cov(k), g2.cov(k), s));
  return Gmm(g1.weights(), g1.means(), std::move(covs));
}

// ---------------------------------------------------------------------------
// Submanifold checks

namespace detail {

// Zeroes every entry the embedding pattern allows; what remains is off-pattern.
inline Matrix off_pattern(const Matrix& s, int k_count, int n) {
  const int nk = k_count * n;
  Matrix d = s;
  for (int k = 0; k < k_count; ++k) {
    d.block(k * n, k * n, n, n).setZero();
    d.block(k * n, nk + k, n, 1).setZero();
    d.block(nk + k, k * n, 1, n).setZero();
    d(nk + k, nk + k) = 0.0;
  }
  return d;
}

}  // namespace detail

/// Distance of a dense K(n+1) matrix from the image of the embedding:
/// Frobenius norm of its off-pattern entries combined with the deviation of
/// the weight block's trace from 1.
inline double structure_residual(const Matrix& s, int k_count, int n) {
  if (s.rows() != k_count * (n + 1)) throw DimensionError("structure_residual: size mismatch");
  const int nk = k_count * n;
  const double off = detail::off_pattern(s, k_count, n).squaredNorm();
  const double trace_dev = s.block(nk, nk, k_count, k_count).diagonal().sum() - 1.0;
  return std::sqrt(off + trace_dev * trace_dev);
}

/// structure_residual of the ambient geodesic point between two embeddings.
/// No preconditions; nonzero values show the image is not totally geodesic.
inline double geodesic_structure_residual(const Gmm& g1, const Gmm& g2, double t) {
  detail::require_same_shape(g1, g2, "geodesic_structure_residual");
  const SpdMatrix mid = geodesic_point(embed(g1).dense(), embed(g2).dense(), t);
  return structure_residual(mid.matrix(), g1.K(), g1.n());
}

/// For mixtures sharing means and uniform weights: deviation of the ambient
/// geodesic point from the embedding of a mixture with those same means and
/// weights (off-pattern entries plus the X and B blocks).
inline double geodesic_submanifold_residual(const Gmm& g1, const Gmm& g2, double t) {
  detail::require_same_shape(g1, g2, "geodesic_submanifold_residual");
  const int k_count = g1.K();
  const int n = g1.n();
  const double uniform = 1.0 / static_cast<double>(k_count);
  for (int k = 0; k < k_count; ++k) {
    if (g1.mean(k) != g2.mean(k)) {
      throw DataError("geodesic_submanifold_residual: means must coincide");
    }
    if (std::abs(g1.weight(k) - uniform) > kWeightSumTolerance ||
        std::abs(g2.weight(k) - uniform) > kWeightSumTolerance) {
      throw DataError("geodesic_submanifold_residual: weights must be uniform");
    }
  }
  const Matrix mid = geodesic_point(embed(g1).dense(), embed(g2).dense(), t).matrix();
  const int nk = k_count * n;
  Matrix dev = detail::off_pattern(mid, k_count, n);
  for (int k = 0; k < k_count; ++k) {
    const Vector target = g1.weight(k) * g1.mean(k);
    dev.block(k * n, nk + k, n, 1) = mid.block(k * n, nk + k, n, 1) - target;
    dev.block(nk + k, k * n, 1, n) = mid.block(nk + k, k * n, 1, n) - target.transpose();
    dev(nk + k, nk + k) = mid(nk + k, nk + k) - g1.weight(k);
  }
  return dev.norm();
}

// ---------------------------------------------------------------------------
// Fisher information versus the pulled-back metric

struct FisherComparison {
  double fisher_form = 0.0;     // Monte Carlo estimate of t^T G(theta) t
  double fisher_std_error = 0.0;
  double pullback_form = 0.0;   // pullback_ds2(g, t)
};

/// Estimates E[(d/de log p(x; theta + e t))^2] over x ~ p with the score
/// taken by central differences of the mixture log-density.
inline FisherComparison fisher_pullback_gap(const Gmm& g, const GmmTangent& t, int mc_samples,
                                            std::uint64_t seed, double step = 1e-5) {
  t.validate_for(g);
  if (mc_samples < 1) throw UsageError("fisher_pullback_gap: mc_samples must be >= 1");
  const GmmDensity plus(perturb(g, t, step));
  const GmmDensity minus(perturb(g, t, -step));
  const Matrix xs = sample(g, mc_samples, seed);
  double mean = 0.0;
  double m2 = 0.0;
  for (int i = 0; i < mc_samples; ++i) {
    const Vector x = xs.row(i).transpose();
    const double score = (plus.logpdf(x) - minus.logpdf(x)) / (2.0 * step);
    const double v = score * score;
    const double delta = v - mean;
    mean += delta / (i + 1);
    m2 += delta * (v - mean);
  }
  FisherComparison out;
  out.fisher_form = mean;
  out.fisher_std_error =
      mc_samples > 1 ? std::sqrt(m2 / (mc_samples - 1) / static_cast<double>(mc_samples)) : 0.0;
  out.pullback_form = pullback_ds2(g, t);
  return out;
}

// ---------------------------------------------------------------------------
// Dense export: a header line `spd <dim>` then one row per line.

inline void write_spd(std::ostream& os, const SpdMatrix& s) {
  std::ostringstream out;
  out.imbue(std::locale::classic());
  out << std::setprecision(17) << "spd " << s.dim() << '\n';
  for (Eigen::Index i = 0; i < s.dim(); ++i) {
    for (Eigen::Index j = 0; j < s.dim(); ++j) out << (j ? " " : "") << s(i, j);
    out << '\n';
  }
  os << out.str();
}

inline SpdMatrix read_spd(std::istream& is) {
  is.imbue(std::locale::classic());
  std::string tag;
  Eigen::Index dim = 0;
  if (!(is >> tag >> dim) || tag != "spd" || dim < 1) throw DataError("read_spd: bad header");
  Matrix m(dim, dim);
  for (Eigen::Index i = 0; i < dim; ++i) {
    for (Eigen::Index j = 0; j < dim; ++j) {
      if (!(is >> m(i, j))) throw DataError("read_spd: truncated matrix");
    }
  }
  return SpdMatrix(m);
}

}  // namespace gmmspd
