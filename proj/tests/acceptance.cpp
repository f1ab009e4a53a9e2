#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "gmmspd/classifier.hpp"
#include "gmmspd/dataset.hpp"
#include "gmmspd/embedding.hpp"
#include "gmmspd/kl.hpp"
#include "gmmspd/pipeline.hpp"

using namespace gmmspd;
namespace fs = std::filesystem;

namespace {

using LongMatrix = Eigen::Matrix<long double, Eigen::Dynamic, Eigen::Dynamic>;

// Eigenvalues spread log-uniformly between s and s * cond.
SpdMatrix random_spd(int n, std::mt19937_64& rng, double cond) {
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Matrix a(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) a(i, j) = normal(rng);
  const Matrix q = Eigen::HouseholderQR<Matrix>(a).householderQ();
  const double scale = std::exp(0.5 * normal(rng));
  Vector ev(n);
  for (int i = 0; i < n; ++i) ev(i) = scale * std::pow(cond, unit(rng));
  if (n > 1) {
    ev(0) = scale;
    ev(n - 1) = scale * cond;
  }
  return SpdMatrix(q * ev.asDiagonal() * q.transpose());
}

Gmm random_gmm(int k, int n, std::mt19937_64& rng, double cond, double weight_floor) {
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Vector w(k);
  for (int i = 0; i < k; ++i) w(i) = weight_floor + unit(rng);
  w /= w.sum();
  std::vector<Vector> means;
  std::vector<SpdMatrix> covs;
  for (int i = 0; i < k; ++i) {
    Vector m(n);
    for (int j = 0; j < n; ++j) m(j) = normal(rng);
    means.push_back(m);
    covs.push_back(random_spd(n, rng, cond));
  }
  return Gmm(w, means, covs);
}

// Sweep shared by A1 and A2: K in 1..4, n in 1..6, condition up to 1e6 and
// one weight pushed to the 1e-6 floor every third draw.
std::vector<Gmm> validity_sweep() {
  std::mt19937_64 rng(20261016);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<Gmm> out;
  for (int i = 0; i < 1000; ++i) {
    const int k = 1 + i % 4;
    const int n = 1 + (i / 4) % 6;
    const double cond = std::pow(10.0, 6.0 * unit(rng));
    Gmm g = random_gmm(k, n, rng, cond, 1e-6);
    if (k > 1 && i % 3 == 0) {
      Vector w = g.weights();
      w(0) = 1e-6;
      w.tail(k - 1) *= (1.0 - 1e-6) / w.tail(k - 1).sum();
      g = Gmm(w, g.means(), g.covs());
    }
    out.push_back(std::move(g));
  }
  return out;
}

GmmTangent random_tangent(const Gmm& g, std::mt19937_64& rng) {
  std::normal_distribution<double> normal;
  GmmTangent t = GmmTangent::zero(g.K(), g.n());
  for (int k = 0; k < g.K(); ++k) t.d_weights(k) = normal(rng) * g.weight(k);
  t.d_weights.array() -= t.d_weights.mean();
  for (int k = 0; k < g.K(); ++k) {
    for (int i = 0; i < g.n(); ++i) t.d_means[static_cast<std::size_t>(k)](i) = normal(rng);
    Matrix d(g.n(), g.n());
    for (int i = 0; i < g.n(); ++i)
      for (int j = 0; j < g.n(); ++j) d(i, j) = normal(rng);
    t.d_covs[static_cast<std::size_t>(k)] = SymMatrix(d);
  }
  return t;
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

bool run_criterion(const char* id, const char* title, double budget_s,
                   const std::function<Outcome()>& body) {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const bool in_time = s <= budget_s;
  if (!in_time) o.detail += "; over the " + std::to_string(static_cast<int>(budget_s)) + " s budget";
  const bool pass = o.pass && in_time;
  std::printf("%s %s: %s (%.1f s) %s\n", id, title, pass ? "PASS" : "FAIL", s, o.detail.c_str());
  std::fflush(stdout);
  return pass;
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// A1: positive definiteness and the closed-form Schur complement. The dense
// reference is computed in extended precision.
Outcome a1() {
  double min_eig = std::numeric_limits<double>::infinity();
  double worst = 0.0;
  int non_pd = 0;
  for (const Gmm& g : validity_sweep()) {
    const Matrix s = embed(g).dense().matrix();
    const double lo = Eigen::SelfAdjointEigenSolver<Matrix>(s, Eigen::EigenvaluesOnly).eigenvalues()(0);
    min_eig = std::min(min_eig, lo);
    if (!(lo > 0.0)) ++non_pd;
    const int nk = g.K() * g.n();
    const LongMatrix sl = s.cast<long double>();
    const LongMatrix x = sl.topRightCorner(nk, g.K());
    const LongMatrix dense = sl.bottomRightCorner(g.K(), g.K()) -
                             x.transpose() * sl.topLeftCorner(nk, nk).ldlt().solve(x);
    const Vector closed = schur_complement_diag(g);
    for (int k = 0; k < g.K(); ++k) {
      for (int j = 0; j < g.K(); ++j) {
        const double want = j == k ? closed(k) : 0.0;
        const double err = std::abs(static_cast<double>(dense(k, j)) - want) / closed(k);
        worst = std::max(worst, err);
      }
    }
  }
  return {non_pd == 0 && worst <= 1e-10,
          "min eigenvalue " + fmt("%.3g", min_eig) + ", non-PD " + std::to_string(non_pd) +
              ", worst Schur rel err " + fmt("%.3g", worst)};
}

// A2: closed-form inverse times the dense embedding.
Outcome a2() {
  double worst = 0.0;
  for (const Gmm& g : validity_sweep()) {
    const EmbeddedGmm e = embed(g);
    const Matrix prod = embedded_inverse(e).matrix() * e.dense().matrix();
    const Matrix id = Matrix::Identity(e.dim(), e.dim());
    worst = std::max(worst, (prod - id).norm() / id.norm());
  }
  return {worst <= 1e-9, "worst ||inv*S - I||/||I|| " + fmt("%.3g", worst)};
}

// A3: d^2 / (eps^2 ds^2) at eps = 1e-4 and 1e-5, plus the Richardson
// estimate R = (10 r(1e-5) - r(1e-4)) / 9 for an O(eps) leading error.
Outcome a3() {
  std::mt19937_64 rng(3);
  double worst5 = 0.0;
  double worst_rich = 0.0;
  int out_of_band = 0;
  int not_converging = 0;
  for (int i = 0; i < 200; ++i) {
    const Gmm g = random_gmm(1 + i % 3, 1 + (i / 3) % 4, rng, 10.0, 0.2);
    const GmmTangent t = random_tangent(g, rng);
    const double ds2 = pullback_ds2(g, t);
    auto ratio = [&](double eps) {
      const double d = gmm_distance(g, perturb(g, t, eps), MetricScale::half_trace, Align::none);
      return d * d / (eps * eps * ds2);
    };
    const double r4 = ratio(1e-4);
    const double r5 = ratio(1e-5);
    const double rich = (10.0 * r5 - r4) / 9.0;
    worst5 = std::max(worst5, std::abs(r5 - 1.0));
    worst_rich = std::max(worst_rich, std::abs(rich - 1.0));
    if (r5 < 0.999 || r5 > 1.001) ++out_of_band;
    // Round-off in d^2 at eps = 1e-5 is about 1e-6 relative.
    if (std::abs(rich - 1.0) > std::abs(r5 - 1.0) + 1e-5) ++not_converging;
  }
  return {out_of_band == 0 && not_converging == 0,
          "max |r(1e-5)-1| " + fmt("%.3g", worst5) + ", max |R-1| " + fmt("%.3g", worst_rich) +
              ", outside band " + std::to_string(out_of_band) + ", Richardson regressions " +
              std::to_string(not_converging)};
}

// A4: (a) fixed means, uniform weights; (b) distinct means; (c) discretized
// parameter segments; (d) 1000-point covariance-geodesic segment.
Outcome a4() {
  std::mt19937_64 rng(4);
  double worst_a = 0.0;
  for (int i = 0; i < 50; ++i) {
    const int k = 1 + i % 3;
    const int n = 1 + i % 4;
    std::vector<Vector> means;
    std::normal_distribution<double> normal;
    for (int c = 0; c < k; ++c) means.push_back(Vector::NullaryExpr(n, [&](Eigen::Index) { return normal(rng); }));
    std::vector<SpdMatrix> c1, c2;
    for (int c = 0; c < k; ++c) {
      c1.push_back(random_spd(n, rng, 100.0));
      c2.push_back(random_spd(n, rng, 100.0));
    }
    const Vector w = Vector::Constant(k, 1.0 / k);
    const Gmm g1(w, means, c1), g2(w, means, c2);
    for (double t : {0.25, 0.5, 0.75}) worst_a = std::max(worst_a, geodesic_submanifold_residual(g1, g2, t));
  }

  Vector wa(2), wb(2);
  wa << 0.3, 0.7;
  wb << 0.6, 0.4;
  Vector m1(2), m2(2), m3(2), m4(2);
  m1 << 2.0, 0.0;
  m2 << -1.0, 1.0;
  m3 << -1.0, 3.0;
  m4 << 0.5, -2.0;
  const Gmm ga(wa, {m1, m2}, {SpdMatrix::identity(2), SpdMatrix(0.5 * Matrix::Identity(2, 2))});
  const Gmm gb(wb, {m3, m4}, {SpdMatrix(2.0 * Matrix::Identity(2, 2)), SpdMatrix::identity(2)});
  const double res_b = geodesic_structure_residual(ga, gb, 0.5);

  int c_failures = 0;
  double worst_c = std::numeric_limits<double>::infinity();
  for (int i = 0; i < 100; ++i) {
    const int k = 1 + i % 3;
    const int n = 1 + (i / 3) % 3;
    const Gmm a = random_gmm(k, n, rng, 10.0, 0.05);
    const Gmm b = random_gmm(k, n, rng, 10.0, 0.05);
    std::vector<Gmm> pts;
    for (int s = 0; s <= 20; ++s) pts.push_back(parameter_segment(a, b, s / 20.0));
    const double gap = path_length(pts, MetricScale::half_trace) -
                       gmm_distance(a, b, MetricScale::half_trace, Align::none);
    worst_c = std::min(worst_c, gap);
    if (gap < -1e-9) ++c_failures;
  }

  std::vector<Vector> means = {m1, m2};
  const Vector w = Vector::Constant(2, 0.5);
  const Gmm d1(w, means, {random_spd(2, rng, 10.0), random_spd(2, rng, 10.0)});
  const Gmm d2(w, means, {random_spd(2, rng, 10.0), random_spd(2, rng, 10.0)});
  std::vector<Gmm> pts;
  for (int s = 0; s < 1000; ++s) pts.push_back(covariance_geodesic_segment(d1, d2, s / 999.0));
  const double endpoint = gmm_distance(d1, d2, MetricScale::half_trace, Align::none);
  const double excess = (path_length(pts, MetricScale::half_trace) - endpoint) / endpoint;

  const bool pass = worst_a <= 1e-8 && res_b >= 1e-3 && c_failures == 0 && excess <= 1e-4 && excess >= -1e-9;
  return {pass, "(a) max residual " + fmt("%.3g", worst_a) + ", (b) residual " + fmt("%.3g", res_b) +
                    ", (c) min length-distance " + fmt("%.3g", worst_c) + " with " +
                    std::to_string(c_failures) + " violations, (d) relative excess " +
                    fmt("%.3g", excess)};
}

// A5: synthetic corpus, default configuration, three backends on one split.
Outcome a5() {
  const fs::path root = fs::path(GMMSPD_TEST_TMP) / "acceptance_corpus";
  fs::remove_all(root);
  write_synthetic_corpus(root, 5, 20, 128, 0);
  const Dataset ds = scan_dataset(root);
  RunConfig cfg;
  cfg.dataset_root = root;
  auto accuracy = [&](Backend b) {
    RunConfig c = cfg;
    c.classifier.backend = b;
    return run_benchmark(ds, c).report.accuracy;
  };
  const double spd = accuracy(Backend::spd_embed);
  const double wa = accuracy(Backend::kl_wa);
  const double mb = accuracy(Backend::kl_mb);
  return {spd >= 0.90 && spd > wa && spd > mb,
          "spd_embed " + fmt("%.3f", spd) + ", kl_wa " + fmt("%.3f", wa) + ", kl_mb " + fmt("%.3f", mb) +
              " (corpus seed 0, split seed 0)"};
}

// A6: Monte Carlo against the closed form, K=1 reductions and self-divergence.
Outcome a6() {
  std::mt19937_64 rng(6);
  int mc_misses = 0;
  for (int i = 0; i < 5; ++i) {
    const Gmm p = random_gmm(1, 1 + i, rng, 10.0, 0.0);
    const Gmm q = random_gmm(1, 1 + i, rng, 10.0, 0.0);
    const double exact = kl_gaussian(p.mean(0), p.cov(0), q.mean(0), q.cov(0));
    const DivergenceResult r = kl_mc(p, q, 100000, 100 + static_cast<std::uint64_t>(i));
    if (std::abs(r.value - exact) > 3.0 * *r.std_error) ++mc_misses;
  }
  double worst_reduction = 0.0;
  for (int i = 0; i < 100; ++i) {
    const int n = 1 + i % 6;
    const Gmm p = random_gmm(1, n, rng, 100.0, 0.0);
    const Gmm q = random_gmm(1, n, rng, 100.0, 0.0);
    const double exact = kl_gaussian(p.mean(0), p.cov(0), q.mean(0), q.cov(0));
    for (double v : {kl_wa(p, q).value, kl_mb(p, q).value, kl_va(p, q).value}) {
      worst_reduction = std::max(worst_reduction, std::abs(v - exact) / std::max(1.0, std::abs(exact)));
    }
  }
  int va_nonzero = 0;
  int mb_nonzero = 0;
  int mb_generic_negative = 0;
  for (int i = 0; i < 1000; ++i) {
    const int k = 1 + i % 4;
    const int n = 1 + i % 6;
    const Gmm p = random_gmm(k, n, rng, 10.0, 1e-6);
    if (kl_va(p, p).value != 0.0) ++va_nonzero;
    if (kl_mb(p, p).value < 0.0) ++mb_generic_negative;
    // Components spread far apart so that every component's best match is itself.
    std::vector<Vector> spread;
    for (int c = 0; c < k; ++c) spread.push_back(p.mean(c) + Vector::Constant(n, 50.0 * c));
    const Gmm s(p.weights(), spread, p.covs());
    if (kl_mb(s, s).value != 0.0) ++mb_nonzero;
  }
  const bool pass = mc_misses == 0 && worst_reduction <= 1e-12 && va_nonzero == 0 && mb_nonzero == 0;
  return {pass, "MC misses " + std::to_string(mc_misses) + "/5, worst K=1 rel err " +
                    fmt("%.3g", worst_reduction) + ", kl_va(p,p)!=0 " + std::to_string(va_nonzero) +
                    "/1000, kl_mb(p,p)!=0 on self-matching mixtures " + std::to_string(mb_nonzero) +
                    "/1000 (note: on generic overlapping mixtures kl_mb(p,p)<0 in " +
                    std::to_string(mb_generic_negative) + "/1000)"};
}

// A7: rank of the central-difference Jacobian over the tangent basis.
Outcome a7() {
  std::mt19937_64 rng(7);
  int bad = 0;
  std::string ranks;
  for (auto [k, n] : {std::pair{2, 2}, std::pair{3, 2}, std::pair{2, 3}}) {
    const std::vector<GmmTangent> basis = tangent_basis(k, n);
    const int want = k * (n + 1) * (n + 2) / 2 - 1;
    const int dim = k * (n + 1);
    int min_rank = want;
    for (int trial = 0; trial < 20; ++trial) {
      const Gmm g = random_gmm(k, n, rng, 10.0, 0.2);
      Matrix jac(dim * (dim + 1) / 2, static_cast<Eigen::Index>(basis.size()));
      const double h = 1e-6;
      for (std::size_t b = 0; b < basis.size(); ++b) {
        const Matrix d = (embed(perturb(g, basis[b], h)).dense().matrix() -
                          embed(perturb(g, basis[b], -h)).dense().matrix()) /
                         (2.0 * h);
        int row = 0;
        for (int i = 0; i < dim; ++i)
          for (int j = i; j < dim; ++j) jac(row++, static_cast<Eigen::Index>(b)) = d(i, j);
      }
      const Vector sv = Eigen::JacobiSVD<Matrix>(jac).singularValues();
      int rank = 0;
      for (Eigen::Index i = 0; i < sv.size(); ++i) rank += sv(i) > 1e-8 * sv(0);
      min_rank = std::min(min_rank, rank);
      if (rank != want) ++bad;
    }
    ranks += "(" + std::to_string(k) + "," + std::to_string(n) + ") expected " + std::to_string(want) +
             " min " + std::to_string(min_rank) + "; ";
  }
  return {bad == 0, ranks + "mismatches " + std::to_string(bad) + "/60"};
}

}  // namespace

int main() {
  bool ok = true;
  ok &= run_criterion("A1", "embedding validity", 30, a1);
  ok &= run_criterion("A2", "closed-form inverse", 30, a2);
  ok &= run_criterion("A3", "first-order isometry", 120, a3);
  ok &= run_criterion("A4", "geodesic properties", 120, a4);
  ok &= run_criterion("A5", "synthetic benchmark", 600, a5);
  ok &= run_criterion("A6", "KL baselines", 60, a6);
  ok &= run_criterion("A7", "submanifold dimension", 60, a7);
  std::printf("%s\n", ok ? "ALL PASS" : "SOME CRITERIA FAILED");
  return ok ? 0 : 1;
}
