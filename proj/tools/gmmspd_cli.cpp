#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <locale>
#include <sstream>
#include <string>
#include <vector>

#include "gmmspd/classifier.hpp"
#include "gmmspd/dataset.hpp"
#include "gmmspd/embedding.hpp"
#include "gmmspd/error.hpp"
#include "gmmspd/features.hpp"
#include "gmmspd/gmm.hpp"
#include "gmmspd/persistence.hpp"
#include "gmmspd/pipeline.hpp"

namespace fs = std::filesystem;
using namespace gmmspd;

namespace {

// Flags shared by the commands that take a RunConfig. Only flags given on
// the command line override values loaded from --config.
struct RunFlags {
  std::string config;
  std::string dataset;
  std::string out;
  std::string resize;
  int patch = 0;
  int step = 0;
  int components = 0;
  int max_iters = 0;
  double cov_reg_rel = 0.0;
  std::string init;
  std::uint64_t em_seed = 0;
  int k = 0;
  std::string backend;
  std::string scale;
  bool symmetrize = false;
  double epsilon_rel = 0.0;
  int mc_samples = 0;
  std::uint64_t mc_seed = 0;
  double train_ratio = 0.0;
  std::uint64_t seed = 0;
  std::vector<CLI::Option*> opts;

  void add_patch(CLI::App* app) {
    opts.push_back(app->add_option("--resize", resize, "Resize images to WxH before extraction"));
    opts.push_back(app->add_option("--patch", patch, "Patch side in pixels (default 32)"));
    opts.push_back(app->add_option("--step", step, "Patch stride in pixels (default 16)"));
  }

  void add_em(CLI::App* app) {
    opts.push_back(app->add_option("--components", components, "GMM components (default 5)"));
    opts.push_back(app->add_option("--max-iters", max_iters, "EM iteration cap (default 200)"));
    opts.push_back(app->add_option("--cov-reg", cov_reg_rel, "Relative covariance ridge (default 1e-6)"));
    opts.push_back(app->add_option("--init", init, "EM init: kmeans_pp or random_assign"));
    opts.push_back(app->add_option("--em-seed", em_seed, "EM seed"));
  }

  void add_classifier(CLI::App* app) {
    opts.push_back(app->add_option("-k,--neighbors", k, "Neighbors per quadrant vote (default 5)"));
    opts.push_back(app->add_option("--backend", backend,
                                   "spd_embed, kl_wa, kl_mb, kl_mc, kl_va or jbld"));
    opts.push_back(app->add_option("--scale", scale, "frobenius or half_trace"));
    opts.push_back(app->add_flag("--symmetrize", symmetrize, "Average KL in both directions"));
    opts.push_back(app->add_option("--epsilon", epsilon_rel, "Relative eigenvalue floor for P^-1/2"));
    opts.push_back(app->add_option("--mc-samples", mc_samples, "Samples for kl_mc"));
    opts.push_back(app->add_option("--mc-seed", mc_seed, "Seed for kl_mc"));
  }

  bool given(const std::string& name) const {
    for (const auto* o : opts) {
      if (o->check_name(name) && o->count() > 0) return true;
    }
    return false;
  }

  RunConfig resolve() const {
    RunConfig c = config.empty() ? RunConfig{} : run_config_from_ini_file(config);
    if (given("--dataset")) c.dataset_root = dataset;
    if (given("--out")) c.output_dir = out;
    if (given("--resize")) c.resize = parse_resize(resize);
    if (given("--patch")) c.patch.patch_size = patch;
    if (given("--step")) c.patch.step = step;
    if (given("--components")) c.em.K = components;
    if (given("--max-iters")) c.em.max_iters = max_iters;
    if (given("--cov-reg")) c.em.cov_reg_rel = cov_reg_rel;
    if (given("--init")) c.em.init = parse_em_init(init);
    if (given("--em-seed")) c.em.seed = em_seed;
    if (given("--neighbors")) c.classifier.k_neighbors = k;
    if (given("--backend")) c.classifier.backend = parse_backend(backend);
    if (given("--scale")) c.classifier.scale = parse_metric_scale(scale);
    if (given("--symmetrize")) c.classifier.symmetrize = symmetrize;
    if (given("--epsilon")) c.classifier.epsilon_rel = epsilon_rel;
    if (given("--mc-samples")) c.classifier.mc_samples = mc_samples;
    if (given("--mc-seed")) c.classifier.mc_seed = mc_seed;
    if (given("--train-ratio")) c.train_ratio = train_ratio;
    if (given("--seed")) c.seed = seed;
    c.validate();
    return c;
  }
};

std::string to_text_stream(const auto& writer) {
  std::ostringstream os;
  writer(os);
  return os.str();
}

Gmm load_gmm(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  return read_gmm(in);
}

std::string format_distance(double d) {
  std::ostringstream os;
  os.imbue(std::locale::classic());
  os << std::setprecision(12) << d;
  return os.str();
}

int cmd_synth(int classes, int per_class, int size, std::uint64_t seed, const std::string& out) {
  const int n = write_synthetic_corpus(out, classes, per_class, size, seed);
  std::cout << "wrote " << n << " images to " << out << '\n';
  return 0;
}

fs::path dump_path(const fs::path& out, const DatasetImage& img) {
  fs::path p = out / img.relative;
  p += ".desc";
  return p;
}

int cmd_extract(const RunConfig& cfg) {
  if (cfg.dataset_root.empty()) throw UsageError("extract: --dataset (or [dataset] root) is required");
  const Dataset ds = scan_dataset(cfg.dataset_root);
  std::vector<int> ok_per_class(ds.classes.size(), 0);
  std::vector<std::string> failures;
  for (const auto& img : ds.images) {
    try {
      const QuadrantDescriptors d = extract_image(img.path, cfg);
      write_file_atomic(dump_path(cfg.output_dir, img), to_text_stream([&](std::ostream& os) {
                          write_descriptor_dump(os, img.relative, d, cfg.patch);
                        }));
      ++ok_per_class[static_cast<std::size_t>(img.label)];
    } catch (const DataError& e) {
      failures.push_back(img.relative + ": " + e.what());
    }
  }
  for (const auto& f : failures) std::cerr << "unreadable: " << f << '\n';
  for (std::size_t c = 0; c < ds.classes.size(); ++c) {
    if (ok_per_class[c] == 0) throw DataError("class '" + ds.classes[c] + "' has no usable images");
  }
  std::cout << "extracted " << ds.images.size() - failures.size() << " of " << ds.images.size()
            << " images to " << cfg.output_dir.string() << '\n';
  return 0;
}

int cmd_fit(const std::string& descriptors, const std::string& out, const RunConfig& cfg) {
  std::ifstream in(descriptors);
  if (!in) throw DataError("cannot open " + descriptors);
  const DescriptorDump dump = read_descriptor_dump(in);
  for (int q = 0; q < kQuadrants; ++q) {
    const Gmm g = fit_quadrant(descriptor_matrix(dump.descriptors.quadrants[static_cast<std::size_t>(q)]),
                               cfg.em);
    const fs::path path = fs::path(out) / ("q" + std::to_string(q) + ".gmm");
    write_file_atomic(path, to_text(g));
    std::cout << path.string() << '\n';
  }
  return 0;
}

int cmd_embed(const std::string& gmm_file, const std::string& out) {
  const SpdMatrix s = embed(load_gmm(gmm_file)).dense();
  const std::string text = to_text_stream([&](std::ostream& os) { write_spd(os, s); });
  if (out.empty()) {
    std::cout << text;
  } else {
    write_file_atomic(out, text);
  }
  return 0;
}

int cmd_distance(const std::string& a, const std::string& b, const ClassifierOptions& opt) {
  const Gmm ga = load_gmm(a);
  const Gmm gb = load_gmm(b);
  double d = 0.0;
  if (opt.backend == Backend::spd_embed) {
    d = gmm_distance(ga, gb, opt.scale);
  } else {
    d = backend_distance(make_query(gb, opt, false), make_query(ga, opt, false), opt);
  }
  std::cout << format_distance(d) << '\n';
  return 0;
}

int cmd_benchmark(const RunConfig& cfg) {
  if (cfg.dataset_root.empty()) throw UsageError("benchmark: --dataset (or [dataset] root) is required");
  const Dataset ds = scan_dataset(cfg.dataset_root);
  const BenchmarkResult r = run_benchmark(ds, cfg);
  const fs::path dir = cfg.output_dir;
  write_file_atomic(dir / "report.json", benchmark_to_json(r, cfg).dump(2) + "\n");
  write_file_atomic(dir / "confusion.csv", confusion_csv(r.report));
  write_file_atomic(dir / "timings.json", timings_to_json(r.timings).dump(2) + "\n");
  write_file_atomic(dir / "model.json", model_to_json(r.model).dump() + "\n");
  std::cout << "backend " << to_string(cfg.classifier.backend) << ": accuracy "
            << format_distance(r.report.accuracy) << " on " << r.test_images << " test images\n";
  std::cout << "timings (s): extract " << r.timings.extract_s << ", fit " << r.timings.fit_s
            << ", embed " << r.timings.embed_s << ", classify " << r.timings.classify_s << '\n';
  return 0;
}

int cmd_report(const std::string& path, bool csv) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw DataError("cannot parse " + path + ": " + e.what());
  }
  ClassificationReport r;
  try {
    r = report_from_json(j);
  } catch (const json::exception& e) {
    throw DataError("not a report file " + path + ": " + e.what());
  }
  if (csv) {
    std::cout << confusion_csv(r);
    return 0;
  }
  std::cout << "accuracy " << format_distance(r.accuracy) << " (" << r.per_image.size()
            << " images)\n";
  for (std::size_t c = 0; c < r.classes.size(); ++c) {
    int total = 0;
    for (int v : r.confusion[c]) total += v;
    std::cout << "  " << r.classes[c] << ": " << r.confusion[c][c] << "/" << total << '\n';
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"GMM embedding into SPD matrices and texture classification benchmark"};
  app.require_subcommand(1);

  auto* synth = app.add_subcommand("synth", "Write a synthetic texture corpus");
  int synth_classes = 5;
  int synth_per_class = 20;
  int synth_size = 128;
  std::uint64_t synth_seed = 0;
  std::string synth_out;
  synth->add_option("--classes", synth_classes, "Number of classes")->capture_default_str();
  synth->add_option("--per-class", synth_per_class, "Images per class")->capture_default_str();
  synth->add_option("--size", synth_size, "Image side in pixels")->capture_default_str();
  synth->add_option("--seed", synth_seed, "Corpus seed")->capture_default_str();
  synth->add_option("--out", synth_out, "Output directory")->required();

  RunFlags extract_flags;
  auto* extract = app.add_subcommand("extract", "Write one descriptor dump per image");
  extract->add_option("--config", extract_flags.config, "INI run configuration");
  extract_flags.opts.push_back(extract->add_option("--dataset", extract_flags.dataset, "Dataset root"));
  extract_flags.opts.push_back(extract->add_option("--out", extract_flags.out, "Output directory"));
  extract_flags.add_patch(extract);

  RunFlags fit_flags;
  std::string fit_descriptors;
  std::string fit_out;
  auto* fit = app.add_subcommand("fit", "Fit one GMM per quadrant of a descriptor dump");
  fit->add_option("descriptors", fit_descriptors, "Descriptor dump")->required();
  fit->add_option("--out", fit_out, "Output directory for q0..q3.gmm")->required();
  fit->add_option("--config", fit_flags.config, "INI run configuration");
  fit_flags.add_em(fit);

  std::string embed_gmm;
  std::string embed_out;
  auto* embed_cmd = app.add_subcommand("embed", "Print the SPD embedding of a GMM file");
  embed_cmd->add_option("gmm", embed_gmm, "GMM file")->required();
  embed_cmd->add_option("--out", embed_out, "Write to a file instead of stdout");

  RunFlags dist_flags;
  std::string dist_a;
  std::string dist_b;
  auto* distance = app.add_subcommand("distance", "Distance between two GMM files");
  distance->add_option("a", dist_a, "First GMM file")->required();
  distance->add_option("b", dist_b, "Second GMM file")->required();
  dist_flags.add_classifier(distance);

  RunFlags bench_flags;
  auto* benchmark = app.add_subcommand("benchmark", "Fit, classify and write reports");
  benchmark->add_option("--config", bench_flags.config, "INI run configuration");
  bench_flags.opts.push_back(benchmark->add_option("--dataset", bench_flags.dataset, "Dataset root"));
  bench_flags.opts.push_back(benchmark->add_option("--out", bench_flags.out, "Output directory"));
  bench_flags.opts.push_back(
      benchmark->add_option("--train-ratio", bench_flags.train_ratio, "Per-class train fraction"));
  bench_flags.opts.push_back(benchmark->add_option("--seed", bench_flags.seed, "Split seed"));
  bench_flags.add_patch(benchmark);
  bench_flags.add_em(benchmark);
  bench_flags.add_classifier(benchmark);

  std::string report_path;
  bool report_csv = false;
  auto* report = app.add_subcommand("report", "Summarize a report.json");
  report->add_option("report", report_path, "report.json from benchmark")->required();
  report->add_flag("--csv", report_csv, "Print the confusion matrix as CSV");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : static_cast<int>(ExitCode::usage);
  }

  try {
    if (*synth) return cmd_synth(synth_classes, synth_per_class, synth_size, synth_seed, synth_out);
    if (*extract) return cmd_extract(extract_flags.resolve());
    if (*fit) return cmd_fit(fit_descriptors, fit_out, fit_flags.resolve());
    if (*embed_cmd) return cmd_embed(embed_gmm, embed_out);
    if (*distance) return cmd_distance(dist_a, dist_b, dist_flags.resolve().classifier);
    if (*benchmark) return cmd_benchmark(bench_flags.resolve());
    if (*report) return cmd_report(report_path, report_csv);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.exit_code();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(ExitCode::data);
  }
  return 0;
}
