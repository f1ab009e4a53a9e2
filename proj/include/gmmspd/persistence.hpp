#pragma once

// JSON persistence for classification models and reports, CSV confusion
// matrices, and atomic file output.

#include "json.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <locale>
#include <sstream>
#include <string>

#include "gmmspd/classifier.hpp"
#include "gmmspd/error.hpp"
#include "gmmspd/gmm.hpp"

namespace gmmspd {

using json = nlohmann::json;

/// Writes to `<path>.tmp` and renames over `path`.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& contents) {
  namespace fs = std::filesystem;
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
    if (ec) throw DataError("cannot create directory " + path.parent_path().string());
  }
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + tmp.string());
    out << contents;
    if (!out.flush()) throw DataError("failed writing " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw DataError("cannot rename " + tmp.string() + " to " + path.string());
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline json matrix_to_json(const Matrix& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline Matrix matrix_from_json(const json& j) {
  const auto rows = static_cast<Eigen::Index>(j.size());
  const auto cols = rows == 0 ? 0 : static_cast<Eigen::Index>(j.at(0).size());
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    if (static_cast<Eigen::Index>(j.at(static_cast<std::size_t>(i)).size()) != cols) {
      throw DataError("ragged matrix in JSON");
    }
    for (Eigen::Index k = 0; k < cols; ++k) {
      m(i, k) = j.at(static_cast<std::size_t>(i)).at(static_cast<std::size_t>(k)).get<double>();
    }
  }
  return m;
}

inline json gmm_to_json(const Gmm& g) {
  json comps = json::array();
  for (int k = 0; k < g.K(); ++k) {
    comps.push_back({{"weight", g.weight(k)},
                     {"mean", std::vector<double>(g.mean(k).data(), g.mean(k).data() + g.n())},
                     {"cov", matrix_to_json(g.cov(k).matrix())}});
  }
  return {{"K", g.K()}, {"n", g.n()}, {"components", comps}};
}

inline Gmm gmm_from_json(const json& j) {
  const int k = j.at("K").get<int>();
  const int n = j.at("n").get<int>();
  const auto& comps = j.at("components");
  if (static_cast<int>(comps.size()) != k) throw DataError("GMM JSON: component count mismatch");
  Vector w(k);
  std::vector<Vector> means;
  std::vector<SpdMatrix> covs;
  for (int c = 0; c < k; ++c) {
    const auto& comp = comps.at(static_cast<std::size_t>(c));
    w(c) = comp.at("weight").get<double>();
    const auto mean = comp.at("mean").get<std::vector<double>>();
    if (static_cast<int>(mean.size()) != n) throw DataError("GMM JSON: mean length mismatch");
    means.push_back(Eigen::Map<const Vector>(mean.data(), n));
    covs.emplace_back(matrix_from_json(comp.at("cov")));
  }
  return Gmm(std::move(w), std::move(means), std::move(covs));
}

inline json em_to_json(const EmConfig& em) {
  return {{"K", em.K},
          {"max_iters", em.max_iters},
          {"rel_tol", em.rel_tol},
          {"cov_reg_rel", em.cov_reg_rel},
          {"init", em.init == EmInit::kmeans_pp ? "kmeans_pp" : "random_assign"},
          {"seed", em.seed}};
}

inline EmConfig em_from_json(const json& j) {
  EmConfig em;
  em.K = j.at("K").get<int>();
  em.max_iters = j.at("max_iters").get<int>();
  em.rel_tol = j.at("rel_tol").get<double>();
  em.cov_reg_rel = j.at("cov_reg_rel").get<double>();
  const auto init = j.at("init").get<std::string>();
  if (init == "kmeans_pp") {
    em.init = EmInit::kmeans_pp;
  } else if (init == "random_assign") {
    em.init = EmInit::random_assign;
  } else {
    throw DataError("unknown EM init '" + init + "'");
  }
  em.seed = j.at("seed").get<std::uint64_t>();
  em.validate();
  return em;
}

inline json options_to_json(const ClassifierOptions& o) {
  return {{"k_neighbors", o.k_neighbors},
          {"backend", to_string(o.backend)},
          {"metric_scale", to_string(o.scale)},
          {"symmetrize", o.symmetrize},
          {"epsilon_rel", o.epsilon_rel},
          {"mc_samples", o.mc_samples},
          {"mc_seed", o.mc_seed}};
}

inline ClassifierOptions options_from_json(const json& j) {
  ClassifierOptions o;
  o.k_neighbors = j.at("k_neighbors").get<int>();
  o.backend = parse_backend(j.at("backend").get<std::string>());
  o.scale = parse_metric_scale(j.at("metric_scale").get<std::string>());
  o.symmetrize = j.at("symmetrize").get<bool>();
  o.epsilon_rel = j.at("epsilon_rel").get<double>();
  o.mc_samples = j.at("mc_samples").get<int>();
  o.mc_seed = j.at("mc_seed").get<std::uint64_t>();
  o.validate();
  return o;
}

inline json model_to_json(const ClassificationModel& m) {
  json entries = json::array();
  for (const auto& e : m.entries) {
    json je = {{"label", e.label}, {"quadrant", e.quadrant}, {"gmm", gmm_to_json(e.item.gmm)}};
    if (e.item.embedding) je["embedding"] = matrix_to_json(e.item.embedding->matrix());
    entries.push_back(std::move(je));
  }
  return {{"format", "gmmspd-model"},
          {"format_version", ClassificationModel::kFormatVersion},
          {"classes", m.classes},
          {"options", options_to_json(m.options)},
          {"em", em_to_json(m.em)},
          {"entries", entries}};
}

/// Inverse square roots are recomputed from the stored embeddings.
inline ClassificationModel model_from_json(const json& j) {
  if (j.value("format", "") != "gmmspd-model") throw DataError("not a model file");
  if (j.at("format_version").get<int>() != ClassificationModel::kFormatVersion) {
    throw DataError("unsupported model format version");
  }
  ClassificationModel m;
  m.classes = j.at("classes").get<std::vector<std::string>>();
  m.options = options_from_json(j.at("options"));
  m.em = em_from_json(j.at("em"));
  for (const auto& je : j.at("entries")) {
    ModelEntry e;
    e.label = je.at("label").get<int>();
    e.quadrant = je.at("quadrant").get<int>();
    e.item.gmm = gmm_from_json(je.at("gmm"));
    if (m.options.backend == Backend::spd_embed) {
      e.item.embedding = je.contains("embedding") ? SpdMatrix(matrix_from_json(je.at("embedding")))
                                                  : embed(e.item.gmm).dense();
      e.item.inv_sqrt = spd_sqrt_inv_sqrt(*e.item.embedding, m.options.epsilon_rel).neg_half;
    }
    m.entries.push_back(std::move(e));
  }
  return m;
}

inline json report_to_json(const ClassificationReport& r) {
  json images = json::array();
  for (const auto& a : r.per_image) {
    images.push_back({{"image", a.name},
                      {"true_label", a.true_label},
                      {"quadrant_labels", a.quadrant_labels},
                      {"quadrant_mean_distances", a.quadrant_mean_distances},
                      {"predicted", a.predicted}});
  }
  return {{"classes", r.classes},
          {"accuracy", r.accuracy},
          {"confusion", r.confusion},
          {"per_image", images}};
}

inline ClassificationReport report_from_json(const json& j) {
  ClassificationReport r;
  r.classes = j.at("classes").get<std::vector<std::string>>();
  r.accuracy = j.at("accuracy").get<double>();
  r.confusion = j.at("confusion").get<std::vector<std::vector<int>>>();
  for (const auto& ji : j.at("per_image")) {
    ImageAudit a;
    a.name = ji.at("image").get<std::string>();
    a.true_label = ji.at("true_label").get<int>();
    a.quadrant_labels = ji.at("quadrant_labels").get<std::array<int, kQuadrants>>();
    a.quadrant_mean_distances =
        ji.at("quadrant_mean_distances").get<std::array<double, kQuadrants>>();
    a.predicted = ji.at("predicted").get<int>();
    r.per_image.push_back(std::move(a));
  }
  return r;
}

/// Header row of predicted class names; one row per true class.
inline std::string confusion_csv(const ClassificationReport& r) {
  std::ostringstream os;
  os.imbue(std::locale::classic());
  os << "true\\predicted";
  for (const auto& c : r.classes) os << ',' << c;
  os << '\n';
  for (std::size_t i = 0; i < r.confusion.size(); ++i) {
    os << r.classes[i];
    for (int v : r.confusion[i]) os << ',' << v;
    os << '\n';
  }
  return os.str();
}

}  // namespace gmmspd
