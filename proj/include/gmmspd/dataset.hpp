#pragma once

// Dataset layout `root/<class_name>/<image files>` and the synthetic texture
// corpus generator.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "gmmspd/error.hpp"
#include "gmmspd/image_io.hpp"

namespace gmmspd {

struct DatasetImage {
  std::filesystem::path path;
  std::string relative;  // "<class>/<file>"
  int label = 0;
};

struct Dataset {
  std::filesystem::path root;
  std::vector<std::string> classes;  // index = label
  std::vector<DatasetImage> images;  // class-major, lexicographic
};

inline bool is_image_file(const std::filesystem::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return ext == ".pgm" || ext == ".ppm" || ext == ".pnm" || ext == ".png";
}

/// Classes are the sorted subdirectory names; images within a class are
/// sorted by file name. A class without images is an error.
inline Dataset scan_dataset(const std::filesystem::path& root) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(root)) throw DataError("dataset root is not a directory: " + root.string());
  Dataset ds;
  ds.root = root;
  std::vector<fs::path> dirs;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (entry.is_directory()) dirs.push_back(entry.path());
  }
  std::sort(dirs.begin(), dirs.end());
  for (const auto& dir : dirs) {
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir)) {
      if (entry.is_regular_file() && is_image_file(entry.path())) files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) throw DataError("class directory has no images: " + dir.string());
    const int label = static_cast<int>(ds.classes.size());
    ds.classes.push_back(dir.filename().string());
    for (const auto& f : files) {
      ds.images.push_back({f, dir.filename().string() + "/" + f.filename().string(), label});
    }
  }
  if (ds.classes.size() < 2) throw DataError("dataset needs at least two classes: " + root.string());
  return ds;
}

struct Split {
  std::vector<std::size_t> train;  // indices into Dataset::images
  std::vector<std::size_t> test;
};

/// Per class: shuffle with `seed`, put round(ratio * count) images in train.
/// Every class must keep at least one image on each side.
inline Split stratified_split(const Dataset& ds, double train_ratio, std::uint64_t seed) {
  if (!(train_ratio > 0.0 && train_ratio < 1.0)) {
    throw UsageError("train_ratio must lie strictly between 0 and 1");
  }
  Split split;
  std::mt19937_64 rng(seed);
  for (int label = 0; label < static_cast<int>(ds.classes.size()); ++label) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < ds.images.size(); ++i) {
      if (ds.images[i].label == label) members.push_back(i);
    }
    std::shuffle(members.begin(), members.end(), rng);
    const auto n_train = static_cast<std::size_t>(std::lround(train_ratio * members.size()));
    if (n_train < 1 || n_train >= members.size()) {
      throw DataError("class '" + ds.classes[static_cast<std::size_t>(label)] +
                      "' cannot be split: " + std::to_string(members.size()) +
                      " images at train_ratio " + std::to_string(train_ratio));
    }
    std::sort(members.begin(), members.begin() + static_cast<std::ptrdiff_t>(n_train));
    std::sort(members.begin() + static_cast<std::ptrdiff_t>(n_train), members.end());
    split.train.insert(split.train.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(n_train));
    split.test.insert(split.test.end(), members.begin() + static_cast<std::ptrdiff_t>(n_train), members.end());
  }
  return split;
}

// ---------------------------------------------------------------------------
// Synthetic textures

struct SynthClassStyle {
  double orientation = 0.0;  // radians; direction of elongation of the smoothing kernel
  double length = 2.0;       // kernel standard deviation along the orientation
  double width = 0.8;        // kernel standard deviation across it
};

/// Class c of n: orientation c*pi/n and kernel length 2 + c/2.
inline SynthClassStyle synth_class_style(int c, int n_classes) {
  SynthClassStyle s;
  s.orientation = c * std::numbers::pi / n_classes;
  s.length = 2.0 + 0.5 * c;
  return s;
}

/// White Gaussian noise smoothed by an oriented anisotropic Gaussian kernel
/// (periodic boundary), standardized and mapped to 0.5 + 0.15 z clipped to [0, 1].
inline GrayImage synth_texture(int size, const SynthClassStyle& style, std::uint64_t seed) {
  if (size < 8) throw UsageError("synth_texture: size must be >= 8");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> noise(static_cast<std::size_t>(size) * size);
  for (double& v : noise) v = normal(rng);

  const int radius = static_cast<int>(std::ceil(3.0 * std::max(style.length, style.width)));
  const double c = std::cos(style.orientation);
  const double s = std::sin(style.orientation);
  std::vector<double> kernel;
  for (int dy = -radius; dy <= radius; ++dy) {
    for (int dx = -radius; dx <= radius; ++dx) {
      const double along = c * dx + s * dy;
      const double across = -s * dx + c * dy;
      kernel.push_back(std::exp(-0.5 * (along * along / (style.length * style.length) +
                                        across * across / (style.width * style.width))));
    }
  }

  std::vector<double> field(noise.size(), 0.0);
  const int span = 2 * radius + 1;
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      double acc = 0.0;
      for (int dy = -radius; dy <= radius; ++dy) {
        const int yy = ((y + dy) % size + size) % size;
        for (int dx = -radius; dx <= radius; ++dx) {
          const int xx = ((x + dx) % size + size) % size;
          acc += kernel[static_cast<std::size_t>((dy + radius) * span + dx + radius)] *
                 noise[static_cast<std::size_t>(yy) * size + xx];
        }
      }
      field[static_cast<std::size_t>(y) * size + x] = acc;
    }
  }

  double mean = 0.0;
  for (double v : field) mean += v;
  mean /= static_cast<double>(field.size());
  double var = 0.0;
  for (double v : field) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / static_cast<double>(field.size()));

  GrayImage img(size, size);
  for (std::size_t i = 0; i < field.size(); ++i) {
    img.pixels[i] = std::clamp(0.5 + 0.15 * (field[i] - mean) / sd, 0.0, 1.0);
  }
  return img;
}

/// Writes `root/class_<c>/img_<i>.pgm`. Returns the number of files written.
inline int write_synthetic_corpus(const std::filesystem::path& root, int n_classes,
                                  int images_per_class, int size, std::uint64_t seed) {
  namespace fs = std::filesystem;
  if (n_classes < 2) throw UsageError("synth: need at least two classes");
  if (images_per_class < 1) throw UsageError("synth: need at least one image per class");
  std::error_code ec;
  fs::create_directories(root, ec);
  if (ec) throw DataError("cannot create output directory " + root.string() + ": " + ec.message());
  std::seed_seq base{seed};
  std::vector<std::uint64_t> seeds(static_cast<std::size_t>(n_classes * images_per_class));
  {
    std::vector<std::uint32_t> raw(seeds.size() * 2);
    base.generate(raw.begin(), raw.end());
    for (std::size_t i = 0; i < seeds.size(); ++i) {
      seeds[i] = (static_cast<std::uint64_t>(raw[2 * i]) << 32) | raw[2 * i + 1];
    }
  }
  int written = 0;
  for (int c = 0; c < n_classes; ++c) {
    char dir_name[32];
    std::snprintf(dir_name, sizeof dir_name, "class_%02d", c);
    const fs::path dir = root / dir_name;
    fs::create_directories(dir, ec);
    if (ec) throw DataError("cannot create " + dir.string() + ": " + ec.message());
    const SynthClassStyle style = synth_class_style(c, n_classes);
    for (int i = 0; i < images_per_class; ++i) {
      char file_name[32];
      std::snprintf(file_name, sizeof file_name, "img_%03d.pgm", i);
      write_pgm(dir / file_name,
                synth_texture(size, style, seeds[static_cast<std::size_t>(c * images_per_class + i)]));
      ++written;
    }
  }
  return written;
}

}  // namespace gmmspd
