#pragma once

// End-to-end texture pipeline: dataset scan, descriptor extraction, model
// fitting, evaluation and run configuration.

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "gmmspd/classifier.hpp"
#include "gmmspd/dataset.hpp"
#include "gmmspd/error.hpp"
#include "gmmspd/features.hpp"
#include "gmmspd/image_io.hpp"
#include "gmmspd/persistence.hpp"

namespace gmmspd {

/// Settings for a full run. The INI form uses these sections and keys
/// (all optional, defaults shown):
///
///   [dataset]    root =            resize = (empty, or WxH)
///                train_ratio = 0.5 seed = 0
///   [patch]      size = 32         step = 16
///   [em]         components = 5    max_iters = 200   rel_tol = 1e-6
///                cov_reg_rel = 1e-6 init = kmeans_pp  seed = 0
///   [classifier] k = 5  backend = spd_embed  metric_scale = frobenius
///                symmetrize = false  epsilon_rel = 1e-10
///                mc_samples = 2000  mc_seed = 0
///   [output]     dir = out
struct RunConfig {
  std::filesystem::path dataset_root;
  std::optional<std::pair<int, int>> resize;
  PatchConfig patch;
  EmConfig em;
  ClassifierOptions classifier;
  double train_ratio = 0.5;
  std::uint64_t seed = 0;
  std::filesystem::path output_dir = "out";

  void validate() const {
    patch.validate();
    em.validate();
    classifier.validate();
    if (!(train_ratio > 0.0 && train_ratio < 1.0)) {
      throw UsageError("train_ratio must lie strictly between 0 and 1");
    }
    if (resize && (resize->first < 5 || resize->second < 5)) {
      throw UsageError("resize dimensions must be at least 5x5");
    }
  }
};

inline std::optional<std::pair<int, int>> parse_resize(const std::string& s) {
  if (s.empty() || s == "none") return std::nullopt;
  const auto x = s.find('x');
  try {
    if (x == std::string::npos) throw std::invalid_argument(s);
    return std::make_pair(std::stoi(s.substr(0, x)), std::stoi(s.substr(x + 1)));
  } catch (const std::exception&) {
    throw UsageError("resize must look like WxH, got '" + s + "'");
  }
}

inline EmInit parse_em_init(const std::string& s) {
  if (s == "kmeans_pp") return EmInit::kmeans_pp;
  if (s == "random_assign") return EmInit::random_assign;
  throw UsageError("unknown EM init '" + s + "'");
}

namespace detail {

// Falls back only when the key is absent; malformed values throw.
template <class T>
T ini_get(const boost::property_tree::ptree& tree, const std::string& key, T fallback) {
  return tree.get_optional<std::string>(key) ? tree.get<T>(key) : fallback;
}

}  // namespace detail

inline RunConfig run_config_from_ini(std::istream& in) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw UsageError(std::string("config: ") + e.what());
  }
  static const std::vector<std::string> kKnown = {
      "dataset.root", "dataset.resize", "dataset.train_ratio", "dataset.seed",
      "patch.size", "patch.step",
      "em.components", "em.max_iters", "em.rel_tol", "em.cov_reg_rel", "em.init", "em.seed",
      "classifier.k", "classifier.backend", "classifier.metric_scale", "classifier.symmetrize",
      "classifier.epsilon_rel", "classifier.mc_samples", "classifier.mc_seed",
      "output.dir"};
  for (const auto& [section, body] : tree) {
    for (const auto& [key, value] : body) {
      const std::string full = section + "." + key;
      if (std::find(kKnown.begin(), kKnown.end(), full) == kKnown.end()) {
        throw UsageError("config: unknown key '" + full + "'");
      }
    }
  }
  RunConfig c;
  try {
    c.dataset_root = detail::ini_get<std::string>(tree, "dataset.root", "");
    c.resize = parse_resize(detail::ini_get<std::string>(tree, "dataset.resize", ""));
    c.train_ratio = detail::ini_get<double>(tree, "dataset.train_ratio", c.train_ratio);
    c.seed = detail::ini_get<std::uint64_t>(tree, "dataset.seed", c.seed);
    c.patch.patch_size = detail::ini_get<int>(tree, "patch.size", c.patch.patch_size);
    c.patch.step = detail::ini_get<int>(tree, "patch.step", c.patch.step);
    c.em.K = detail::ini_get<int>(tree, "em.components", c.em.K);
    c.em.max_iters = detail::ini_get<int>(tree, "em.max_iters", c.em.max_iters);
    c.em.rel_tol = detail::ini_get<double>(tree, "em.rel_tol", c.em.rel_tol);
    c.em.cov_reg_rel = detail::ini_get<double>(tree, "em.cov_reg_rel", c.em.cov_reg_rel);
    c.em.init = parse_em_init(detail::ini_get<std::string>(tree, "em.init", "kmeans_pp"));
    c.em.seed = detail::ini_get<std::uint64_t>(tree, "em.seed", c.em.seed);
    c.classifier.k_neighbors = detail::ini_get<int>(tree, "classifier.k", c.classifier.k_neighbors);
    c.classifier.backend = parse_backend(detail::ini_get<std::string>(tree, "classifier.backend", "spd_embed"));
    c.classifier.scale =
        parse_metric_scale(detail::ini_get<std::string>(tree, "classifier.metric_scale", "frobenius"));
    c.classifier.symmetrize = detail::ini_get<bool>(tree, "classifier.symmetrize", false);
    c.classifier.epsilon_rel = detail::ini_get<double>(tree, "classifier.epsilon_rel", c.classifier.epsilon_rel);
    c.classifier.mc_samples = detail::ini_get<int>(tree, "classifier.mc_samples", c.classifier.mc_samples);
    c.classifier.mc_seed = detail::ini_get<std::uint64_t>(tree, "classifier.mc_seed", c.classifier.mc_seed);
    c.output_dir = detail::ini_get<std::string>(tree, "output.dir", c.output_dir.string());
  } catch (const boost::property_tree::ptree_error& e) {
    throw UsageError(std::string("config: ") + e.what());
  }
  return c;
}

inline RunConfig run_config_from_ini_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open config file " + path.string());
  return run_config_from_ini(in);
}

inline json run_config_to_json(const RunConfig& c) {
  return {{"dataset_root", c.dataset_root.string()},
          {"resize", c.resize ? std::to_string(c.resize->first) + "x" + std::to_string(c.resize->second)
                              : std::string("none")},
          {"train_ratio", c.train_ratio},
          {"seed", c.seed},
          {"patch", {{"size", c.patch.patch_size}, {"step", c.patch.step}}},
          {"em", em_to_json(c.em)},
          {"classifier", options_to_json(c.classifier)},
          {"output_dir", c.output_dir.string()}};
}

/// Loads, optionally resizes, and extracts quadrant descriptors.
inline QuadrantDescriptors extract_image(const std::filesystem::path& path, const RunConfig& cfg) {
  GrayImage img = load_image(path);
  if (cfg.resize) img = resize_bilinear(img, cfg.resize->first, cfg.resize->second);
  return extract_quadrant_descriptors(img, cfg.patch);
}

inline LabeledImage to_labeled(const QuadrantDescriptors& d, std::string name, int label) {
  LabeledImage out;
  out.name = std::move(name);
  out.label = label;
  for (int q = 0; q < kQuadrants; ++q) {
    out.quadrants[static_cast<std::size_t>(q)] = descriptor_matrix(d.quadrants[static_cast<std::size_t>(q)]);
  }
  return out;
}

struct PhaseTimings {
  double extract_s = 0.0;
  double fit_s = 0.0;       // EM on training quadrants
  double embed_s = 0.0;     // embedding and inverse square roots
  double classify_s = 0.0;  // test EM, embedding and voting
};

struct BenchmarkResult {
  ClassificationReport report;
  ClassificationModel model;
  PhaseTimings timings;
  std::size_t train_images = 0;
  std::size_t test_images = 0;
};

/// Builds a model from already fitted quadrant GMMs.
inline ClassificationModel build_model(std::vector<std::string> classes,
                                       const std::vector<std::pair<int, std::array<Gmm, kQuadrants>>>& fitted,
                                       const EmConfig& em, const ClassifierOptions& opt) {
  ClassificationModel model;
  model.classes = std::move(classes);
  model.options = opt;
  model.em = em;
  for (const auto& [label, gmms] : fitted) {
    for (int q = 0; q < kQuadrants; ++q) {
      model.entries.push_back({label, q, make_query(gmms[static_cast<std::size_t>(q)], opt, true)});
    }
  }
  return model;
}

inline BenchmarkResult run_benchmark(const Dataset& ds, const RunConfig& cfg) {
  cfg.validate();
  using clock = std::chrono::steady_clock;
  auto seconds_since = [](clock::time_point t0) {
    return std::chrono::duration<double>(clock::now() - t0).count();
  };
  BenchmarkResult out;
  const Split split = stratified_split(ds, cfg.train_ratio, cfg.seed);
  out.train_images = split.train.size();
  out.test_images = split.test.size();

  auto t0 = clock::now();
  std::vector<LabeledImage> train;
  std::vector<LabeledImage> test;
  for (std::size_t i : split.train) {
    const auto& di = ds.images[i];
    train.push_back(to_labeled(extract_image(di.path, cfg), di.relative, di.label));
  }
  for (std::size_t i : split.test) {
    const auto& di = ds.images[i];
    test.push_back(to_labeled(extract_image(di.path, cfg), di.relative, di.label));
  }
  out.timings.extract_s = seconds_since(t0);

  t0 = clock::now();
  std::vector<std::pair<int, std::array<Gmm, kQuadrants>>> fitted;
  for (const auto& img : train) {
    std::array<Gmm, kQuadrants> gmms;
    for (int q = 0; q < kQuadrants; ++q) {
      gmms[static_cast<std::size_t>(q)] = fit_quadrant(img.quadrants[static_cast<std::size_t>(q)], cfg.em);
    }
    fitted.emplace_back(img.label, std::move(gmms));
  }
  out.timings.fit_s = seconds_since(t0);

  t0 = clock::now();
  out.model = build_model(ds.classes, fitted, cfg.em, cfg.classifier);
  out.timings.embed_s = seconds_since(t0);

  t0 = clock::now();
  out.report = evaluate(test, out.model);
  out.timings.classify_s = seconds_since(t0);
  return out;
}

inline json benchmark_to_json(const BenchmarkResult& r, const RunConfig& cfg) {
  json j = report_to_json(r.report);
  j["config"] = run_config_to_json(cfg);
  j["train_images"] = r.train_images;
  j["test_images"] = r.test_images;
  return j;
}

/// Wall-clock seconds per phase; kept out of the report so reports stay
/// byte-identical across runs.
inline json timings_to_json(const PhaseTimings& t) {
  return {{"extract", t.extract_s}, {"fit", t.fit_s}, {"embed", t.embed_s}, {"classify", t.classify_s}};
}

}  // namespace gmmspd
