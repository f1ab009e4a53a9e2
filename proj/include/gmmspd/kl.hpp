#pragma once

// KL divergence between Gaussian mixtures: Monte Carlo estimate and the
// weighted-average, matching-based and variational approximations.

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>

#include "gmmspd/error.hpp"
#include "gmmspd/gmm.hpp"

namespace gmmspd {

enum class KlMethod { mc, wa, mb, va };

inline std::string to_string(KlMethod m) {
  switch (m) {
    case KlMethod::mc: return "mc";
    case KlMethod::wa: return "wa";
    case KlMethod::mb: return "mb";
    case KlMethod::va: return "va";
  }
  return "?";
}

struct DivergenceResult {
  double value = 0.0;
  std::optional<double> std_error;  // set only for KlMethod::mc
  KlMethod method = KlMethod::wa;
};

namespace detail {

inline void require_same_ambient(const Gmm& p, const Gmm& q, const char* where) {
  if (p.n() != q.n()) {
    throw DimensionError(std::string(where) + ": ambient dimensions differ (" +
                         std::to_string(p.n()) + " vs " + std::to_string(q.n()) + ")");
  }
}

// kl(i, j) = KL(a_i || b_j)
inline Matrix pairwise_kl(const Gmm& a, const Gmm& b) {
  Matrix out(a.K(), b.K());
  for (int i = 0; i < a.K(); ++i) {
    for (int j = 0; j < b.K(); ++j) out(i, j) = kl_gaussian(a.mean(i), a.cov(i), b.mean(j), b.cov(j));
  }
  return out;
}

}  // namespace detail

/// (1/N) sum log p(x_i)/q(x_i) over x_i ~ p, evaluated as a difference of
/// log-densities.
inline DivergenceResult kl_mc(const Gmm& p, const Gmm& q, int n_samples, std::uint64_t seed) {
  detail::require_same_ambient(p, q, "kl_mc");
  if (n_samples < 1) throw UsageError("kl_mc: n_samples must be >= 1");
  const GmmDensity dp(p);
  const GmmDensity dq(q);
  const Matrix xs = sample(p, n_samples, seed);
  double mean = 0.0;
  double m2 = 0.0;
  for (int i = 0; i < n_samples; ++i) {
    const Vector x = xs.row(i).transpose();
    const double v = dp.logpdf(x) - dq.logpdf(x);
    if (!std::isfinite(v)) throw NumericalError("kl_mc: non-finite log-density ratio");
    const double delta = v - mean;
    mean += delta / (i + 1);
    m2 += delta * (v - mean);
  }
  const double se =
      n_samples > 1 ? std::sqrt(m2 / (n_samples - 1) / static_cast<double>(n_samples)) : 0.0;
  return {mean, se, KlMethod::mc};
}

/// sum_{i,j} alpha_i beta_j KL(p_i || q_j).
inline DivergenceResult kl_wa(const Gmm& p, const Gmm& q) {
  detail::require_same_ambient(p, q, "kl_wa");
  const Matrix kl = detail::pairwise_kl(p, q);
  return {p.weights().dot(kl * q.weights()), std::nullopt, KlMethod::wa};
}

/// sum_i alpha_i min_j [KL(p_i || q_j) + log(alpha_i / beta_j)].
inline DivergenceResult kl_mb(const Gmm& p, const Gmm& q) {
  detail::require_same_ambient(p, q, "kl_mb");
  const Matrix kl = detail::pairwise_kl(p, q);
  double total = 0.0;
  for (int i = 0; i < p.K(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (int j = 0; j < q.K(); ++j) {
      best = std::min(best, kl(i, j) + std::log(p.weight(i)) - std::log(q.weight(j)));
    }
    total += p.weight(i) * best;
  }
  return {total, std::nullopt, KlMethod::mb};
}

/// sum_i alpha_i log[ sum_i' alpha_i' e^{-KL(p_i||p_i')} / sum_j beta_j e^{-KL(p_i||q_j)} ],
/// both sums taken with log-sum-exp.
inline DivergenceResult kl_va(const Gmm& p, const Gmm& q) {
  detail::require_same_ambient(p, q, "kl_va");
  const Matrix self = detail::pairwise_kl(p, p);
  const Matrix cross = detail::pairwise_kl(p, q);
  const Vector log_alpha = p.weights().array().log();
  const Vector log_beta = q.weights().array().log();
  double total = 0.0;
  for (int i = 0; i < p.K(); ++i) {
    const Vector num = log_alpha - self.row(i).transpose();
    const Vector den = log_beta - cross.row(i).transpose();
    total += p.weight(i) * (log_sum_exp(num) - log_sum_exp(den));
  }
  return {total, std::nullopt, KlMethod::va};
}

}  // namespace gmmspd
