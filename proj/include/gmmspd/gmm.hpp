#pragma once

// Gaussian mixture models: representation, densities, sampling, EM fitting,
// the closed-form Gaussian KL divergence and a plain-text model format.

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <istream>
#include <limits>
#include <locale>
#include <numbers>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "gmmspd/error.hpp"
#include "gmmspd/spd.hpp"

namespace gmmspd {

inline constexpr double kWeightSumTolerance = 1e-12;
inline constexpr double kWeightFloor = 1e-8;

/// K-component mixture in R^n. Weights lie strictly inside the simplex.
class Gmm {
public:
  Gmm() = default;

  Gmm(Vector weights, std::vector<Vector> means, std::vector<SpdMatrix> covs)
      : weights_(std::move(weights)), means_(std::move(means)), covs_(std::move(covs)) {
    validate();
  }

  /// Rescales `weights` to sum to one before validating.
  static Gmm normalized(Vector weights, std::vector<Vector> means, std::vector<SpdMatrix> covs) {
    const double total = weights.sum();
    if (!(total > 0.0)) throw DataError("Gmm: weights must have a positive sum");
    weights /= total;
    return Gmm(std::move(weights), std::move(means), std::move(covs));
  }

  static Gmm single(Vector mean, SpdMatrix cov) {
    return Gmm(Vector::Ones(1), {std::move(mean)}, {std::move(cov)});
  }

  int K() const { return static_cast<int>(weights_.size()); }
  int n() const { return means_.empty() ? 0 : static_cast<int>(means_.front().size()); }

  const Vector& weights() const { return weights_; }
  double weight(int k) const { return weights_(k); }
  const std::vector<Vector>& means() const { return means_; }
  const Vector& mean(int k) const { return means_[static_cast<std::size_t>(k)]; }
  const std::vector<SpdMatrix>& covs() const { return covs_; }
  const SpdMatrix& cov(int k) const { return covs_[static_cast<std::size_t>(k)]; }

private:
  void validate() const {
    const auto k = static_cast<std::size_t>(weights_.size());
    if (k == 0) throw DataError("Gmm: at least one component required");
    if (means_.size() != k || covs_.size() != k) {
      throw DimensionError("Gmm: weights, means and covariances disagree on K");
    }
    const Eigen::Index dim = means_.front().size();
    if (dim == 0) throw DataError("Gmm: dimension must be >= 1");
    for (std::size_t i = 0; i < k; ++i) {
      if (means_[i].size() != dim || covs_[i].dim() != dim) {
        throw DimensionError("Gmm: component " + std::to_string(i) + " has the wrong dimension");
      }
      if (!means_[i].allFinite()) throw DataError("Gmm: non-finite mean");
      if (!(weights_(static_cast<Eigen::Index>(i)) > 0.0)) {
        throw DataError("Gmm: weights must be strictly positive");
      }
    }
    if (std::abs(weights_.sum() - 1.0) > kWeightSumTolerance) {
      throw DataError("Gmm: weights must sum to 1");
    }
  }

  Vector weights_;
  std::vector<Vector> means_;
  std::vector<SpdMatrix> covs_;
};

/// Cholesky-factored Gaussian for repeated density evaluation.
class GaussianDensity {
public:
  GaussianDensity(const Vector& mean, const SpdMatrix& cov) : mean_(mean), llt_(cov.matrix()) {
    if (llt_.info() != Eigen::Success) throw NumericalError("GaussianDensity: Cholesky failed");
    const double logdet = 2.0 * llt_.matrixLLT().diagonal().array().log().sum();
    log_norm_ = -0.5 * (static_cast<double>(mean.size()) * std::log(2.0 * std::numbers::pi) + logdet);
  }

  double logpdf(const Vector& x) const {
    const Vector z = llt_.matrixL().solve(x - mean_);
    return log_norm_ - 0.5 * z.squaredNorm();
  }

  Eigen::Index dim() const { return mean_.size(); }

private:
  Vector mean_;
  Eigen::LLT<Matrix> llt_;
  double log_norm_ = 0.0;
};

inline double log_sum_exp(const Vector& v) {
  const double m = v.maxCoeff();
  if (!std::isfinite(m)) return m;
  return m + std::log((v.array() - m).exp().sum());
}

/// -1/2 [n log 2pi + log|Sigma| + (x-mu)^T Sigma^-1 (x-mu)].
inline double gaussian_logpdf(const Vector& x, const Vector& mean, const SpdMatrix& cov) {
  detail::require_same_dim(x.size(), mean.size(), "gaussian_logpdf");
  detail::require_same_dim(x.size(), cov.dim(), "gaussian_logpdf");
  return GaussianDensity(mean, cov).logpdf(x);
}

/// Mixture density with all Cholesky factors precomputed.
class GmmDensity {
public:
  explicit GmmDensity(const Gmm& g) : log_weights_(g.weights().array().log()) {
    components_.reserve(static_cast<std::size_t>(g.K()));
    for (int k = 0; k < g.K(); ++k) components_.emplace_back(g.mean(k), g.cov(k));
  }

  double logpdf(const Vector& x) const {
    detail::require_same_dim(x.size(), components_.front().dim(), "gmm_logpdf");
    Vector terms(static_cast<Eigen::Index>(components_.size()));
    for (std::size_t k = 0; k < components_.size(); ++k) {
      terms(static_cast<Eigen::Index>(k)) =
          log_weights_(static_cast<Eigen::Index>(k)) + components_[k].logpdf(x);
    }
    return log_sum_exp(terms);
  }

private:
  Vector log_weights_;
  std::vector<GaussianDensity> components_;
};

inline double gmm_logpdf(const Vector& x, const Gmm& g) { return GmmDensity(g).logpdf(x); }

/// `count` x n draws. Component index is categorical in the weights, then
/// mean + L z with L the Cholesky factor of the component covariance.
inline Matrix sample(const Gmm& g, int count, std::uint64_t seed) {
  if (count < 1) throw UsageError("sample: count must be >= 1");
  std::mt19937_64 rng(seed);
  std::discrete_distribution<int> pick(g.weights().data(), g.weights().data() + g.K());
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<Matrix> chol;
  chol.reserve(static_cast<std::size_t>(g.K()));
  for (const auto& c : g.covs()) {
    Eigen::LLT<Matrix> llt(c.matrix());
    if (llt.info() != Eigen::Success) throw NumericalError("sample: Cholesky failed");
    chol.emplace_back(llt.matrixL());
  }
  Matrix out(count, g.n());
  Vector z(g.n());
  for (int i = 0; i < count; ++i) {
    const int k = pick(rng);
    for (int j = 0; j < g.n(); ++j) z(j) = normal(rng);
    out.row(i) = (g.mean(k) + chol[static_cast<std::size_t>(k)] * z).transpose();
  }
  return out;
}

/// Closed-form KL(p || q) between two Gaussians.
inline double kl_gaussian(const Vector& mean_p, const SpdMatrix& cov_p, const Vector& mean_q,
                          const SpdMatrix& cov_q) {
  detail::require_same_dim(mean_p.size(), mean_q.size(), "kl_gaussian");
  detail::require_same_dim(cov_p.dim(), cov_q.dim(), "kl_gaussian");
  detail::require_same_dim(mean_p.size(), cov_p.dim(), "kl_gaussian");
  if (mean_p == mean_q && cov_p.matrix() == cov_q.matrix()) return 0.0;
  Eigen::LLT<Matrix> lq(cov_q.matrix());
  Eigen::LLT<Matrix> lp(cov_p.matrix());
  if (lq.info() != Eigen::Success || lp.info() != Eigen::Success) {
    throw NumericalError("kl_gaussian: Cholesky failed");
  }
  const double logdet_q = 2.0 * lq.matrixLLT().diagonal().array().log().sum();
  const double logdet_p = 2.0 * lp.matrixLLT().diagonal().array().log().sum();
  const double trace_term = lq.solve(cov_p.matrix()).trace();
  const Vector diff = mean_p - mean_q;
  const double maha = diff.dot(lq.solve(diff));
  const double d = static_cast<double>(mean_p.size());
  return std::max(0.0, 0.5 * (logdet_q - logdet_p + trace_term + maha - d));
}

// ---------------------------------------------------------------------------
// EM fitting

enum class EmInit { kmeans_pp, random_assign };

struct EmConfig {
  int K = 5;
  int max_iters = 200;
  double rel_tol = 1e-6;
  double cov_reg_rel = 1e-6;
  EmInit init = EmInit::kmeans_pp;
  std::uint64_t seed = 0;

  void validate() const {
    if (K < 1) throw UsageError("EmConfig: K must be >= 1");
    if (max_iters < 1) throw UsageError("EmConfig: max_iters must be >= 1");
    if (!(rel_tol > 0.0)) throw UsageError("EmConfig: rel_tol must be > 0");
    if (!(cov_reg_rel >= 0.0)) throw UsageError("EmConfig: cov_reg_rel must be >= 0");
  }
};

struct EmResult {
  Gmm gmm;
  double final_loglik = 0.0;           // mean per-point log-likelihood
  int iters = 0;
  std::vector<double> loglik_trace;    // one entry per E-step
  int reinitialized = 0;               // components restarted after collapse
};

namespace detail {

inline constexpr int kLloydIterations = 10;
inline constexpr double kCollapseFraction = 1e-10;

// k-means++ seeding followed by Lloyd iterations; returns a hard assignment.
inline std::vector<int> kmeans_pp_assign(const Matrix& data, int k, std::mt19937_64& rng) {
  const Eigen::Index m = data.rows();
  std::vector<Eigen::Index> chosen;
  std::uniform_int_distribution<Eigen::Index> first(0, m - 1);
  chosen.push_back(first(rng));
  Vector d2 = (data.rowwise() - data.row(chosen[0])).rowwise().squaredNorm();
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  while (static_cast<int>(chosen.size()) < k) {
    const double total = d2.sum();
    Eigen::Index next = 0;
    if (total > 0.0) {
      double target = unif(rng) * total;
      for (next = 0; next < m - 1; ++next) {
        target -= d2(next);
        if (target <= 0.0) break;
      }
    } else {
      next = first(rng);
    }
    chosen.push_back(next);
    d2 = d2.cwiseMin((data.rowwise() - data.row(next)).rowwise().squaredNorm());
  }
  Matrix centers(k, data.cols());
  for (int j = 0; j < k; ++j) centers.row(j) = data.row(chosen[static_cast<std::size_t>(j)]);

  std::vector<int> assign(static_cast<std::size_t>(m), 0);
  for (int it = 0; it < kLloydIterations; ++it) {
    for (Eigen::Index i = 0; i < m; ++i) {
      Eigen::Index best = 0;
      (centers.rowwise() - data.row(i)).rowwise().squaredNorm().minCoeff(&best);
      assign[static_cast<std::size_t>(i)] = static_cast<int>(best);
    }
    Matrix sums = Matrix::Zero(k, data.cols());
    std::vector<int> counts(static_cast<std::size_t>(k), 0);
    for (Eigen::Index i = 0; i < m; ++i) {
      sums.row(assign[static_cast<std::size_t>(i)]) += data.row(i);
      ++counts[static_cast<std::size_t>(assign[static_cast<std::size_t>(i)])];
    }
    for (int j = 0; j < k; ++j) {
      if (counts[static_cast<std::size_t>(j)] > 0) {
        centers.row(j) = sums.row(j) / counts[static_cast<std::size_t>(j)];
      }
    }
  }
  return assign;
}

// Adds reg_rel * (trace / n) * I. A zero-trace covariance (all points equal)
// borrows `fallback_scale` instead.
inline Matrix regularized(const Matrix& cov, double reg_rel, double fallback_scale) {
  const auto n = cov.rows();
  double scale = cov.trace() / static_cast<double>(n);
  if (!(scale > 0.0)) scale = fallback_scale > 0.0 ? fallback_scale : 1.0;
  Matrix out = 0.5 * (cov + cov.transpose());
  out.diagonal().array() += reg_rel * scale;
  return out;
}

}  // namespace detail

/// Full-covariance EM. `data` is m x n, one point per row.
inline EmResult fit_em(const Matrix& data, const EmConfig& cfg) {
  cfg.validate();
  const Eigen::Index m = data.rows();
  const Eigen::Index n = data.cols();
  const int k = cfg.K;
  if (n < 1) throw DataError("fit_em: data has no columns");
  if (m <= k) throw DataError("fit_em: need more points than components");
  if (!data.allFinite()) throw DataError("fit_em: non-finite data");

  std::mt19937_64 rng(cfg.seed);
  Matrix resp = Matrix::Zero(m, k);  // responsibilities
  if (cfg.init == EmInit::kmeans_pp) {
    const auto assign = detail::kmeans_pp_assign(data, k, rng);
    for (Eigen::Index i = 0; i < m; ++i) resp(i, assign[static_cast<std::size_t>(i)]) = 1.0;
  } else {
    std::uniform_int_distribution<int> pick(0, k - 1);
    for (Eigen::Index i = 0; i < m; ++i) resp(i, pick(rng)) = 1.0;
  }

  const Vector global_mean = data.colwise().mean().transpose();
  const Matrix centered_all = data.rowwise() - global_mean.transpose();
  const Matrix global_cov = centered_all.transpose() * centered_all / static_cast<double>(m);
  const double global_scale = global_cov.trace() / static_cast<double>(n);

  Vector weights(k);
  std::vector<Vector> means(static_cast<std::size_t>(k), Vector::Zero(n));
  std::vector<Matrix> covs(static_cast<std::size_t>(k), Matrix::Identity(n, n));
  Vector point_loglik = Vector::Zero(m);
  EmResult result;

  auto m_step = [&] {
    const Vector mass = resp.colwise().sum().transpose();
    for (int j = 0; j < k; ++j) {
      const auto ju = static_cast<std::size_t>(j);
      if (mass(j) < detail::kCollapseFraction * static_cast<double>(m)) {
        // Restart from the worst-explained point with the pooled covariance.
        Eigen::Index worst = 0;
        point_loglik.minCoeff(&worst);
        means[ju] = data.row(worst).transpose();
        covs[ju] = detail::regularized(global_cov, cfg.cov_reg_rel, global_scale);
        weights(j) = 1.0 / static_cast<double>(m);
        ++result.reinitialized;
        continue;
      }
      means[ju] = data.transpose() * resp.col(j) / mass(j);
      const Matrix centered = data.rowwise() - means[ju].transpose();
      const Matrix cov =
          centered.transpose() * resp.col(j).asDiagonal() * centered / mass(j);
      covs[ju] = detail::regularized(cov, cfg.cov_reg_rel, global_scale);
      weights(j) = mass(j) / static_cast<double>(m);
    }
    weights = weights.cwiseMax(kWeightFloor);
    weights /= weights.sum();
  };

  auto e_step = [&]() -> double {
    std::vector<GaussianDensity> dens;
    dens.reserve(static_cast<std::size_t>(k));
    for (int j = 0; j < k; ++j) {
      dens.emplace_back(means[static_cast<std::size_t>(j)],
                        SpdMatrix::assume_valid(covs[static_cast<std::size_t>(j)]));
    }
    const Vector log_w = weights.array().log();
    Vector terms(k);
    for (Eigen::Index i = 0; i < m; ++i) {
      const Vector x = data.row(i).transpose();
      for (int j = 0; j < k; ++j) terms(j) = log_w(j) + dens[static_cast<std::size_t>(j)].logpdf(x);
      const double lse = log_sum_exp(terms);
      point_loglik(i) = lse;
      resp.row(i) = (terms.array() - lse).exp().transpose();
    }
    return point_loglik.mean();
  };

  m_step();
  double prev = -std::numeric_limits<double>::infinity();
  for (int it = 1; it <= cfg.max_iters; ++it) {
    const double ll = e_step();
    if (!std::isfinite(ll)) throw NumericalError("fit_em: log-likelihood is not finite");
    result.loglik_trace.push_back(ll);
    result.iters = it;
    result.final_loglik = ll;
    const bool converged =
        std::isfinite(prev) && std::abs(ll - prev) < cfg.rel_tol * std::max(std::abs(prev), 1e-300);
    if (converged || it == cfg.max_iters) break;
    prev = ll;
    m_step();
  }

  std::vector<SpdMatrix> spd_covs;
  spd_covs.reserve(static_cast<std::size_t>(k));
  for (const auto& c : covs) spd_covs.emplace_back(c);
  result.gmm = Gmm::normalized(weights, means, std::move(spd_covs));
  return result;
}

// ---------------------------------------------------------------------------
// Text format
//
//   gmm 1
//   K <components>
//   n <dimension>
//   weights w_1 ... w_K
//   mean <k> m_1 ... m_n                 (K lines)
//   cov <k> c_11 c_12 ... c_nn           (K lines, row-major)
//
// Numbers are written with 17 significant digits in the classic locale.

inline void write_gmm(std::ostream& os, const Gmm& g) {
  std::ostringstream out;
  out.imbue(std::locale::classic());
  out << std::setprecision(17);
  out << "gmm 1\nK " << g.K() << "\nn " << g.n() << "\nweights";
  for (int k = 0; k < g.K(); ++k) out << ' ' << g.weight(k);
  out << '\n';
  for (int k = 0; k < g.K(); ++k) {
    out << "mean " << k;
    for (int i = 0; i < g.n(); ++i) out << ' ' << g.mean(k)(i);
    out << '\n';
  }
  for (int k = 0; k < g.K(); ++k) {
    out << "cov " << k;
    for (int i = 0; i < g.n(); ++i) {
      for (int j = 0; j < g.n(); ++j) out << ' ' << g.cov(k)(i, j);
    }
    out << '\n';
  }
  os << out.str();
}

inline std::string to_text(const Gmm& g) {
  std::ostringstream os;
  write_gmm(os, g);
  return os.str();
}

inline Gmm read_gmm(std::istream& is) {
  auto expect = [](bool ok, const std::string& msg) {
    if (!ok) throw DataError("read_gmm: " + msg);
  };
  auto next_line = [&](const char* tag) {
    std::string line;
    while (std::getline(is, line)) {
      if (!line.empty() && line.find_first_not_of(" \t\r") != std::string::npos) break;
    }
    expect(static_cast<bool>(is) || !line.empty(), std::string("missing '") + tag + "' line");
    std::istringstream ls(line);
    ls.imbue(std::locale::classic());
    std::string key;
    ls >> key;
    expect(key == tag, std::string("expected '") + tag + "', found '" + key + "'");
    return ls;
  };

  {
    auto ls = next_line("gmm");
    int version = 0;
    expect(static_cast<bool>(ls >> version) && version == 1, "unsupported version");
  }
  int k = 0;
  int n = 0;
  {
    auto ls = next_line("K");
    expect(static_cast<bool>(ls >> k) && k >= 1, "bad K");
  }
  {
    auto ls = next_line("n");
    expect(static_cast<bool>(ls >> n) && n >= 1, "bad n");
  }
  Vector weights(k);
  {
    auto ls = next_line("weights");
    for (int i = 0; i < k; ++i) expect(static_cast<bool>(ls >> weights(i)), "short weights line");
  }
  std::vector<Vector> means(static_cast<std::size_t>(k), Vector(n));
  for (int c = 0; c < k; ++c) {
    auto ls = next_line("mean");
    int idx = -1;
    expect(static_cast<bool>(ls >> idx) && idx == c, "mean lines out of order");
    for (int i = 0; i < n; ++i) {
      expect(static_cast<bool>(ls >> means[static_cast<std::size_t>(c)](i)), "short mean line");
    }
  }
  std::vector<SpdMatrix> covs;
  for (int c = 0; c < k; ++c) {
    auto ls = next_line("cov");
    int idx = -1;
    expect(static_cast<bool>(ls >> idx) && idx == c, "cov lines out of order");
    Matrix m(n, n);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) expect(static_cast<bool>(ls >> m(i, j)), "short cov line");
    }
    covs.emplace_back(m);
  }
  return Gmm(std::move(weights), std::move(means), std::move(covs));
}

inline Gmm gmm_from_text(const std::string& text) {
  std::istringstream is(text);
  return read_gmm(is);
}

}  // namespace gmmspd
