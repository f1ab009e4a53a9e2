#pragma once

// Two-level k-nearest-neighbour texture classifier. Every image quadrant is a
// fitted GMM; a quadrant is labelled by majority over its k nearest training
// quadrants, and an image by majority over its four quadrant labels.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gmmspd/embedding.hpp"
#include "gmmspd/error.hpp"
#include "gmmspd/features.hpp"
#include "gmmspd/gmm.hpp"
#include "gmmspd/kl.hpp"
#include "gmmspd/spd.hpp"

namespace gmmspd {

enum class Backend { spd_embed, kl_wa, kl_mb, kl_mc, kl_va, jbld };

inline std::string to_string(Backend b) {
  switch (b) {
    case Backend::spd_embed: return "spd_embed";
    case Backend::kl_wa: return "kl_wa";
    case Backend::kl_mb: return "kl_mb";
    case Backend::kl_mc: return "kl_mc";
    case Backend::kl_va: return "kl_va";
    case Backend::jbld: return "jbld";
  }
  return "?";
}

inline Backend parse_backend(const std::string& s) {
  for (Backend b : {Backend::spd_embed, Backend::kl_wa, Backend::kl_mb, Backend::kl_mc,
                    Backend::kl_va, Backend::jbld}) {
    if (to_string(b) == s) return b;
  }
  throw UsageError("unknown distance backend '" + s + "'");
}

inline std::string to_string(MetricScale s) {
  return s == MetricScale::half_trace ? "half_trace" : "frobenius";
}

inline MetricScale parse_metric_scale(const std::string& s) {
  if (s == "frobenius") return MetricScale::frobenius;
  if (s == "half_trace") return MetricScale::half_trace;
  throw UsageError("unknown metric scale '" + s + "'");
}

struct ClassifierOptions {
  int k_neighbors = 5;
  Backend backend = Backend::spd_embed;
  MetricScale scale = MetricScale::frobenius;
  bool symmetrize = false;  // KL backends: 1/2 (KL(p||q) + KL(q||p))
  double epsilon_rel = kDefaultEpsilonRel;
  int mc_samples = 2000;     // kl_mc only
  std::uint64_t mc_seed = 0;

  void validate() const {
    if (k_neighbors < 1) throw UsageError("k_neighbors must be >= 1");
    if (!(epsilon_rel >= 0.0)) throw UsageError("epsilon_rel must be >= 0");
    if (mc_samples < 1) throw UsageError("mc_samples must be >= 1");
  }
};

/// A fitted quadrant GMM together with whatever the backend precomputes.
struct GmmQuery {
  Gmm gmm;                          // canonical component order
  std::optional<SpdMatrix> embedding;
  std::optional<SpdMatrix> inv_sqrt;  // training entries only
};

struct ModelEntry {
  int label = 0;
  int quadrant = 0;
  GmmQuery item;
};

struct ClassificationModel {
  static constexpr int kFormatVersion = 1;

  std::vector<std::string> classes;
  std::vector<ModelEntry> entries;
  ClassifierOptions options;
  EmConfig em;
};

/// One image: its label and the descriptor matrix (m x 15) of each quadrant.
struct LabeledImage {
  std::string name;
  int label = 0;
  std::array<Matrix, kQuadrants> quadrants;
};

inline GmmQuery make_query(const Gmm& g, const ClassifierOptions& opt, bool training) {
  GmmQuery q{canonical_order(g), std::nullopt, std::nullopt};
  if (opt.backend == Backend::spd_embed) {
    q.embedding = embed(q.gmm).dense();
    if (training) q.inv_sqrt = spd_sqrt_inv_sqrt(*q.embedding, opt.epsilon_rel).neg_half;
  }
  return q;
}

inline Gmm fit_quadrant(const Matrix& descriptors, const EmConfig& em) {
  if (descriptors.rows() <= em.K) {
    throw DataError("quadrant has " + std::to_string(descriptors.rows()) +
                    " descriptors; EM with K=" + std::to_string(em.K) + " needs more");
  }
  return fit_em(descriptors, em).gmm;
}

inline ClassificationModel fit(std::span<const LabeledImage> training,
                               std::vector<std::string> classes, const EmConfig& em,
                               const ClassifierOptions& opt) {
  opt.validate();
  em.validate();
  ClassificationModel model;
  model.classes = std::move(classes);
  model.options = opt;
  model.em = em;
  for (const auto& img : training) {
    if (img.label < 0 || img.label >= static_cast<int>(model.classes.size())) {
      throw DataError("training image '" + img.name + "' has an unknown label");
    }
    for (int q = 0; q < kQuadrants; ++q) {
      const Gmm g = fit_quadrant(img.quadrants[static_cast<std::size_t>(q)], em);
      model.entries.push_back({img.label, q, make_query(g, opt, true)});
    }
  }
  std::vector<bool> seen(model.classes.size(), false);
  for (const auto& e : model.entries) seen[static_cast<std::size_t>(e.label)] = true;
  if (std::count(seen.begin(), seen.end(), true) < 2) {
    throw DataError("training set must cover at least two classes");
  }
  return model;
}

// ---------------------------------------------------------------------------
// Distances

/// Gaussian component embedded as |Sigma|^{-1/(d+1)} [Sigma + mu mu^T, mu; mu^T, 1].
inline SpdMatrix component_embedding(const Vector& mean, const SpdMatrix& cov) {
  const auto n = mean.size();
  Matrix p(n + 1, n + 1);
  p.topLeftCorner(n, n) = cov.matrix() + mean * mean.transpose();
  p.topRightCorner(n, 1) = mean;
  p.bottomLeftCorner(1, n) = mean.transpose();
  p(n, n) = 1.0;
  const double scale = std::exp(-cov.logdet() / static_cast<double>(n + 1));
  return SpdMatrix::assume_valid(scale * p);
}

/// Weighted minimum component JBLD: sum_i pi_i min_j delta(P_i, Q_j).
inline double jbld_gmm_distance(const Gmm& query, const Gmm& reference) {
  std::vector<SpdMatrix> ref;
  for (int j = 0; j < reference.K(); ++j) {
    ref.push_back(component_embedding(reference.mean(j), reference.cov(j)));
  }
  double total = 0.0;
  for (int i = 0; i < query.K(); ++i) {
    const SpdMatrix p = component_embedding(query.mean(i), query.cov(i));
    double best = std::numeric_limits<double>::infinity();
    for (const auto& r : ref) best = std::min(best, jbld_distance(p, r));
    total += query.weight(i) * best;
  }
  return total;
}

/// d(train, test). KL backends use KL(test || train), or the symmetrized mean.
inline double backend_distance(const GmmQuery& train, const GmmQuery& test,
                               const ClassifierOptions& opt) {
  auto kl = [&opt](const Gmm& p, const Gmm& q) {
    switch (opt.backend) {
      case Backend::kl_wa: return kl_wa(p, q).value;
      case Backend::kl_mb: return kl_mb(p, q).value;
      case Backend::kl_va: return kl_va(p, q).value;
      case Backend::kl_mc: return kl_mc(p, q, opt.mc_samples, opt.mc_seed).value;
      default: break;
    }
    throw UsageError("backend_distance: not a KL backend");
  };
  switch (opt.backend) {
    case Backend::spd_embed: {
      if (!train.embedding || !test.embedding) {
        throw UsageError("spd_embed backend needs embedded queries");
      }
      if (train.inv_sqrt) {
        return affine_distance_from_inv_sqrt(train.inv_sqrt->matrix(), test.embedding->matrix(),
                                             opt.scale);
      }
      return affine_distance(*train.embedding, *test.embedding, opt.scale, opt.epsilon_rel);
    }
    case Backend::jbld:
      return jbld_gmm_distance(test.gmm, train.gmm);
    default: {
      const double forward = kl(test.gmm, train.gmm);
      return opt.symmetrize ? 0.5 * (forward + kl(train.gmm, test.gmm)) : forward;
    }
  }
}

// ---------------------------------------------------------------------------
// Voting

struct Neighbor {
  double distance = 0.0;
  int label = 0;
  std::size_t entry = 0;
};

struct QuadrantDecision {
  int label = 0;
  std::vector<Neighbor> neighbors;  // ascending distance, at most k
  double mean_distance = 0.0;       // over `neighbors`
};

/// Majority label; ties go to the smaller mean distance among the tied
/// labels' neighbours, then to the lower class index.
inline int vote_quadrant(std::span<const Neighbor> nearest) {
  if (nearest.empty()) throw UsageError("vote_quadrant: no neighbours");
  std::map<int, std::pair<int, double>> tally;  // label -> (votes, distance sum)
  for (const auto& nb : nearest) {
    auto& t = tally[nb.label];
    ++t.first;
    t.second += nb.distance;
  }
  int best = -1;
  int best_votes = -1;
  double best_mean = std::numeric_limits<double>::infinity();
  for (const auto& [label, t] : tally) {  // ascending label order
    const double mean = t.second / t.first;
    if (t.first > best_votes || (t.first == best_votes && mean < best_mean)) {
      best = label;
      best_votes = t.first;
      best_mean = mean;
    }
  }
  return best;
}

/// Majority over quadrant labels; ties go to the label whose quadrants have
/// the smaller summed mean k-NN distance, then to the lower class index.
inline int vote_image(std::span<const QuadrantDecision> quadrants) {
  if (quadrants.empty()) throw UsageError("vote_image: no quadrant decisions");
  std::map<int, std::pair<int, double>> tally;
  for (const auto& q : quadrants) {
    auto& t = tally[q.label];
    ++t.first;
    t.second += q.mean_distance;
  }
  int best = -1;
  int best_votes = -1;
  double best_sum = std::numeric_limits<double>::infinity();
  for (const auto& [label, t] : tally) {
    if (t.first > best_votes || (t.first == best_votes && t.second < best_sum)) {
      best = label;
      best_votes = t.first;
      best_sum = t.second;
    }
  }
  return best;
}

/// k nearest training entries (ties in distance resolved by entry order).
inline QuadrantDecision classify_quadrant(const GmmQuery& query, const ClassificationModel& model) {
  if (model.entries.empty()) throw UsageError("classify_quadrant: model has no entries");
  std::vector<Neighbor> all;
  all.reserve(model.entries.size());
  for (std::size_t i = 0; i < model.entries.size(); ++i) {
    const auto& e = model.entries[i];
    all.push_back({backend_distance(e.item, query, model.options), e.label, i});
  }
  const auto k = std::min(all.size(), static_cast<std::size_t>(model.options.k_neighbors));
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(k), all.end(),
                    [](const Neighbor& a, const Neighbor& b) {
                      return a.distance < b.distance || (a.distance == b.distance && a.entry < b.entry);
                    });
  all.resize(k);
  QuadrantDecision d;
  d.label = vote_quadrant(all);
  for (const auto& nb : all) d.mean_distance += nb.distance;
  d.mean_distance /= static_cast<double>(k);
  d.neighbors = std::move(all);
  return d;
}

struct ImageAudit {
  std::string name;
  int true_label = -1;  // -1 when unknown
  std::array<int, kQuadrants> quadrant_labels{};
  std::array<double, kQuadrants> quadrant_mean_distances{};
  int predicted = 0;
};

inline ImageAudit classify_image(std::span<const GmmQuery> quadrant_queries,
                                 const ClassificationModel& model) {
  if (quadrant_queries.size() != kQuadrants) {
    throw UsageError("classify_image: exactly four quadrant queries required");
  }
  std::array<QuadrantDecision, kQuadrants> decisions;
  ImageAudit audit;
  for (std::size_t q = 0; q < kQuadrants; ++q) {
    decisions[q] = classify_quadrant(quadrant_queries[q], model);
    audit.quadrant_labels[q] = decisions[q].label;
    audit.quadrant_mean_distances[q] = decisions[q].mean_distance;
  }
  audit.predicted = vote_image(decisions);
  return audit;
}

struct ClassificationReport {
  std::vector<std::string> classes;
  double accuracy = 0.0;
  std::vector<std::vector<int>> confusion;  // [true][predicted]
  std::vector<ImageAudit> per_image;
};

/// Fits each test quadrant with the model's EM settings and classifies it.
inline ImageAudit classify_descriptors(const LabeledImage& img, const ClassificationModel& model) {
  std::vector<GmmQuery> queries;
  for (int q = 0; q < kQuadrants; ++q) {
    queries.push_back(make_query(fit_quadrant(img.quadrants[static_cast<std::size_t>(q)], model.em),
                                 model.options, false));
  }
  ImageAudit audit = classify_image(queries, model);
  audit.name = img.name;
  audit.true_label = img.label;
  return audit;
}

inline ClassificationReport evaluate(std::span<const LabeledImage> test,
                                     const ClassificationModel& model) {
  const int c = static_cast<int>(model.classes.size());
  ClassificationReport report;
  report.classes = model.classes;
  report.confusion.assign(static_cast<std::size_t>(c), std::vector<int>(static_cast<std::size_t>(c), 0));
  int correct = 0;
  for (const auto& img : test) {
    if (img.label < 0 || img.label >= c) {
      throw DataError("test image '" + img.name + "' belongs to a class the model does not know");
    }
    ImageAudit audit = classify_descriptors(img, model);
    ++report.confusion[static_cast<std::size_t>(img.label)][static_cast<std::size_t>(audit.predicted)];
    if (audit.predicted == img.label) ++correct;
    report.per_image.push_back(std::move(audit));
  }
  report.accuracy = test.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(test.size());
  return report;
}

}  // namespace gmmspd
