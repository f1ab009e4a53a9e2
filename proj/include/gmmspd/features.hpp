#pragma once

// Region covariance descriptors: per-pixel features
// [I, |I_x|, |I_y|, |I_xx|, |I_yy|], 5x5 patch covariances over quadrant
// patch grids, vectorized by their upper triangle.

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <iomanip>
#include <istream>
#include <locale>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "gmmspd/error.hpp"
#include "gmmspd/image_io.hpp"

namespace gmmspd {

inline constexpr int kFeatureCount = 5;
inline constexpr int kDescriptorSize = kFeatureCount * (kFeatureCount + 1) / 2;  // 15
inline constexpr int kQuadrants = 4;

using Descriptor = std::array<double, kDescriptorSize>;

struct PatchConfig {
  int patch_size = 32;
  int step = 16;

  void validate() const {
    if (patch_size < 1) throw UsageError("PatchConfig: patch_size must be >= 1");
    if (step < 1) throw UsageError("PatchConfig: step must be >= 1");
  }
};

/// Feature planes, each the size of the source image.
struct FeatureMaps {
  int width = 0;
  int height = 0;
  std::array<std::vector<double>, kFeatureCount> planes;

  double at(int channel, int x, int y) const {
    return planes[static_cast<std::size_t>(channel)][static_cast<std::size_t>(y) * width + x];
  }
};

namespace detail {

// Correlation with [[-1,0,1],[-2,0,2],[-1,0,1]] (transpose = true gives the
// y kernel), replicate padding.
inline GrayImage sobel(const GrayImage& img, bool transpose) {
  static constexpr int kKernel[3][3] = {{-1, 0, 1}, {-2, 0, 2}, {-1, 0, 1}};
  GrayImage out(img.width, img.height);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      double acc = 0.0;
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          const int w = transpose ? kKernel[dx + 1][dy + 1] : kKernel[dy + 1][dx + 1];
          if (w != 0) acc += w * img.clamped(x + dx, y + dy);
        }
      }
      out.at(x, y) = acc;
    }
  }
  return out;
}

}  // namespace detail

/// Second derivatives are Sobel applied twice; absolute values are taken last.
inline FeatureMaps feature_maps(const GrayImage& img) {
  if (img.width < 5 || img.height < 5) throw DataError("feature_maps: image smaller than 5x5");
  const GrayImage ix = detail::sobel(img, false);
  const GrayImage iy = detail::sobel(img, true);
  const GrayImage ixx = detail::sobel(ix, false);
  const GrayImage iyy = detail::sobel(iy, true);
  FeatureMaps f;
  f.width = img.width;
  f.height = img.height;
  f.planes[0] = img.pixels;
  const GrayImage* derivs[] = {&ix, &iy, &ixx, &iyy};
  for (int c = 0; c < 4; ++c) {
    auto& plane = f.planes[static_cast<std::size_t>(c + 1)];
    plane = derivs[c]->pixels;
    for (double& v : plane) v = std::abs(v);
  }
  return f;
}

/// Row-major upper triangle including the diagonal: (0,0),(0,1),...,(0,4),(1,1),...,(4,4).
inline Descriptor vectorize(const Eigen::Matrix<double, kFeatureCount, kFeatureCount>& c) {
  Descriptor d{};
  int idx = 0;
  for (int i = 0; i < kFeatureCount; ++i) {
    for (int j = i; j < kFeatureCount; ++j) d[static_cast<std::size_t>(idx++)] = c(i, j);
  }
  return d;
}

inline Eigen::Matrix<double, kFeatureCount, kFeatureCount> devectorize(const Descriptor& d) {
  Eigen::Matrix<double, kFeatureCount, kFeatureCount> c;
  int idx = 0;
  for (int i = 0; i < kFeatureCount; ++i) {
    for (int j = i; j < kFeatureCount; ++j) {
      c(i, j) = d[static_cast<std::size_t>(idx)];
      c(j, i) = d[static_cast<std::size_t>(idx)];
      ++idx;
    }
  }
  return c;
}

/// Sample covariance (1/(m-1) normalization) of the features inside the
/// patch with top-left corner (x0, y0). A single-pixel patch gives zeros.
inline Eigen::Matrix<double, kFeatureCount, kFeatureCount> patch_covariance(const FeatureMaps& f,
                                                                            int x0, int y0,
                                                                            int size) {
  using Vec5 = Eigen::Matrix<double, kFeatureCount, 1>;
  const int m = size * size;
  Vec5 mean = Vec5::Zero();
  for (int y = y0; y < y0 + size; ++y) {
    for (int x = x0; x < x0 + size; ++x) {
      for (int c = 0; c < kFeatureCount; ++c) mean(c) += f.at(c, x, y);
    }
  }
  mean /= m;
  Eigen::Matrix<double, kFeatureCount, kFeatureCount> cov =
      Eigen::Matrix<double, kFeatureCount, kFeatureCount>::Zero();
  if (m < 2) return cov;
  Vec5 v;
  for (int y = y0; y < y0 + size; ++y) {
    for (int x = x0; x < x0 + size; ++x) {
      for (int c = 0; c < kFeatureCount; ++c) v(c) = f.at(c, x, y) - mean(c);
      cov.noalias() += v * v.transpose();
    }
  }
  return cov / (m - 1);
}

struct PatchDescriptor {
  int quadrant = 0;  // 0 top-left, 1 top-right, 2 bottom-left, 3 bottom-right
  int row = 0;       // patch grid row within the quadrant
  int col = 0;
  Descriptor value{};
};

struct QuadrantDescriptors {
  std::array<std::vector<PatchDescriptor>, kQuadrants> quadrants;
};

inline int patches_per_axis(int quadrant_side, const PatchConfig& cfg) {
  return quadrant_side < cfg.patch_size ? 0 : (quadrant_side - cfg.patch_size) / cfg.step + 1;
}

/// Quadrants are the four floor(w/2) x floor(h/2) corners; patches are
/// anchored at each quadrant's top-left corner and partial patches dropped.
inline QuadrantDescriptors extract_quadrant_descriptors(const GrayImage& img,
                                                        const PatchConfig& cfg) {
  cfg.validate();
  const int qw = img.width / 2;
  const int qh = img.height / 2;
  if (qw < cfg.patch_size || qh < cfg.patch_size) {
    throw DataError("extract_quadrant_descriptors: quadrant " + std::to_string(qw) + "x" +
                    std::to_string(qh) + " is smaller than patch " +
                    std::to_string(cfg.patch_size));
  }
  const FeatureMaps f = feature_maps(img);
  const int nx = patches_per_axis(qw, cfg);
  const int ny = patches_per_axis(qh, cfg);
  QuadrantDescriptors out;
  for (int q = 0; q < kQuadrants; ++q) {
    const int ox = (q % 2) * qw;
    const int oy = (q / 2) * qh;
    auto& list = out.quadrants[static_cast<std::size_t>(q)];
    list.reserve(static_cast<std::size_t>(nx * ny));
    for (int r = 0; r < ny; ++r) {
      for (int c = 0; c < nx; ++c) {
        list.push_back({q, r, c,
                        vectorize(patch_covariance(f, ox + c * cfg.step, oy + r * cfg.step,
                                                   cfg.patch_size))});
      }
    }
  }
  return out;
}

/// Descriptors of one quadrant stacked as an m x 15 matrix.
inline Eigen::MatrixXd descriptor_matrix(const std::vector<PatchDescriptor>& list) {
  Eigen::MatrixXd m(static_cast<Eigen::Index>(list.size()), kDescriptorSize);
  for (std::size_t i = 0; i < list.size(); ++i) {
    for (int j = 0; j < kDescriptorSize; ++j) {
      m(static_cast<Eigen::Index>(i), j) = list[i].value[static_cast<std::size_t>(j)];
    }
  }
  return m;
}

// ---------------------------------------------------------------------------
// Descriptor dump
//
//   descriptors 1 <patch_size> <step>
//   @ <image> <quadrant> <row> <col>
//   d_1 ... d_15
//   @ ...
//
// Each descriptor is a header line followed by one line of 15 reals
// (17 significant digits, classic locale). <image> contains no whitespace.

inline void write_descriptor_dump(std::ostream& os, const std::string& image,
                                  const QuadrantDescriptors& d, const PatchConfig& cfg) {
  std::ostringstream out;
  out.imbue(std::locale::classic());
  out << std::setprecision(17);
  out << "descriptors 1 " << cfg.patch_size << ' ' << cfg.step << '\n';
  for (const auto& list : d.quadrants) {
    for (const auto& p : list) {
      out << "@ " << image << ' ' << p.quadrant << ' ' << p.row << ' ' << p.col << '\n';
      for (int j = 0; j < kDescriptorSize; ++j) {
        out << (j ? " " : "") << p.value[static_cast<std::size_t>(j)];
      }
      out << '\n';
    }
  }
  os << out.str();
}

struct DescriptorDump {
  std::string image;
  PatchConfig patch;
  QuadrantDescriptors descriptors;
};

inline DescriptorDump read_descriptor_dump(std::istream& is) {
  is.imbue(std::locale::classic());
  DescriptorDump dump;
  std::string tag;
  int version = 0;
  if (!(is >> tag >> version >> dump.patch.patch_size >> dump.patch.step) ||
      tag != "descriptors" || version != 1) {
    throw DataError("read_descriptor_dump: bad header");
  }
  while (is >> tag) {
    if (tag != "@") throw DataError("read_descriptor_dump: expected '@' record");
    PatchDescriptor p;
    std::string image;
    if (!(is >> image >> p.quadrant >> p.row >> p.col) || p.quadrant < 0 ||
        p.quadrant >= kQuadrants) {
      throw DataError("read_descriptor_dump: bad record header");
    }
    dump.image = image;
    for (auto& v : p.value) {
      if (!(is >> v)) throw DataError("read_descriptor_dump: truncated descriptor");
    }
    dump.descriptors.quadrants[static_cast<std::size_t>(p.quadrant)].push_back(p);
  }
  return dump;
}

}  // namespace gmmspd
