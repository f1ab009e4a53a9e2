#pragma once

// Grayscale image type and file I/O: PGM/PPM (binary and ASCII) and PNG.

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <csetjmp>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "gmmspd/error.hpp"

namespace gmmspd {

/// Row-major intensities in [0, 1].
struct GrayImage {
  int width = 0;
  int height = 0;
  std::vector<double> pixels;

  GrayImage() = default;
  GrayImage(int w, int h, double fill = 0.0)
      : width(w), height(h), pixels(static_cast<std::size_t>(w) * static_cast<std::size_t>(h), fill) {
    if (w < 1 || h < 1) throw DataError("GrayImage: zero-size image");
  }

  double& at(int x, int y) { return pixels[static_cast<std::size_t>(y) * width + x]; }
  double at(int x, int y) const { return pixels[static_cast<std::size_t>(y) * width + x]; }

  // Replicate padding outside the image.
  double clamped(int x, int y) const {
    return at(std::clamp(x, 0, width - 1), std::clamp(y, 0, height - 1));
  }
};

inline double luminance(double r, double g, double b) { return 0.299 * r + 0.587 * g + 0.114 * b; }

namespace detail {

inline std::vector<unsigned char> read_all(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open image: " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Netpbm header token reader that skips whitespace and '#' comments.
class PnmCursor {
public:
  PnmCursor(const std::vector<unsigned char>& bytes, const std::string& name)
      : bytes_(bytes), name_(name) {}

  long next_int() {
    skip_space();
    if (pos_ >= bytes_.size() || !std::isdigit(bytes_[pos_])) fail("expected integer");
    long v = 0;
    while (pos_ < bytes_.size() && std::isdigit(bytes_[pos_])) {
      v = v * 10 + (bytes_[pos_++] - '0');
      if (v > 1'000'000'000) fail("integer overflow");
    }
    return v;
  }

  // Exactly one whitespace byte separates the header from binary data.
  void skip_single_space() {
    if (pos_ >= bytes_.size() || !std::isspace(bytes_[pos_])) fail("malformed header");
    ++pos_;
  }

  std::size_t pos() const { return pos_; }
  [[noreturn]] void fail(const std::string& what) const {
    throw DataError("malformed netpbm file " + name_ + ": " + what);
  }

private:
  void skip_space() {
    while (pos_ < bytes_.size()) {
      if (std::isspace(bytes_[pos_])) {
        ++pos_;
      } else if (bytes_[pos_] == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else {
        break;
      }
    }
  }

  const std::vector<unsigned char>& bytes_;
  std::string name_;
  std::size_t pos_ = 2;
};

inline GrayImage decode_pnm(const std::vector<unsigned char>& bytes, const std::string& name) {
  const char kind = static_cast<char>(bytes[1]);
  const bool binary = kind == '5' || kind == '6';
  const int channels = (kind == '3' || kind == '6') ? 3 : 1;
  PnmCursor cur(bytes, name);
  const long w = cur.next_int();
  const long h = cur.next_int();
  const long maxval = cur.next_int();
  if (w < 1 || h < 1) throw DataError("zero-size image: " + name);
  if (maxval < 1 || maxval > 65535) cur.fail("maxval out of range");
  GrayImage img(static_cast<int>(w), static_cast<int>(h));
  const auto count = static_cast<std::size_t>(w) * static_cast<std::size_t>(h) * channels;
  std::vector<double> raw(count);
  const double scale = 1.0 / static_cast<double>(maxval);
  if (binary) {
    cur.skip_single_space();
    const std::size_t bps = maxval > 255 ? 2 : 1;
    const std::size_t start = cur.pos();
    if (bytes.size() < start + count * bps) cur.fail("truncated pixel data");
    for (std::size_t i = 0; i < count; ++i) {
      const std::size_t o = start + i * bps;
      const unsigned v = bps == 2 ? (static_cast<unsigned>(bytes[o]) << 8) | bytes[o + 1] : bytes[o];
      raw[i] = std::min(1.0, v * scale);
    }
  } else {
    for (std::size_t i = 0; i < count; ++i) raw[i] = std::min(1.0, cur.next_int() * scale);
  }
  for (std::size_t p = 0; p < img.pixels.size(); ++p) {
    img.pixels[p] = channels == 1 ? raw[p] : luminance(raw[3 * p], raw[3 * p + 1], raw[3 * p + 2]);
  }
  return img;
}

struct PngReadState {
  std::FILE* file = nullptr;
  png_structp png = nullptr;
  png_infop info = nullptr;
  ~PngReadState() {
    if (png) png_destroy_read_struct(&png, info ? &info : nullptr, nullptr);
    if (file) std::fclose(file);
  }
};

// Fills `buffer` and returns an empty string on success, an error message
// otherwise. Holds no non-trivial locals, so a longjmp out of libpng is safe.
inline const char* png_decode_rows(PngReadState& st, png_uint_32& w, png_uint_32& h, int& channels,
                                   int& depth, std::vector<png_byte>& buffer,
                                   std::vector<png_bytep>& rows) {
  if (setjmp(png_jmpbuf(st.png))) return "libpng error";
  png_init_io(st.png, st.file);
  png_read_info(st.png, st.info);
  const int color = png_get_color_type(st.png, st.info);
  depth = png_get_bit_depth(st.png, st.info);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(st.png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(st.png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(st.png);
  if (depth == 16) png_set_swap(st.png);  // host-order 16-bit samples
  png_read_update_info(st.png, st.info);
  w = png_get_image_width(st.png, st.info);
  h = png_get_image_height(st.png, st.info);
  channels = png_get_channels(st.png, st.info);
  depth = png_get_bit_depth(st.png, st.info);
  if (w == 0 || h == 0) return "zero-size image";
  const std::size_t rowbytes = png_get_rowbytes(st.png, st.info);
  buffer.resize(rowbytes * h);
  rows.resize(h);
  for (png_uint_32 y = 0; y < h; ++y) rows[y] = buffer.data() + y * rowbytes;
  png_read_image(st.png, rows.data());
  png_read_end(st.png, nullptr);
  return "";
}

inline GrayImage decode_png(const std::filesystem::path& path) {
  PngReadState st;
  st.file = std::fopen(path.string().c_str(), "rb");
  if (!st.file) throw DataError("cannot open image: " + path.string());
  st.png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!st.png) throw DataError("libpng initialisation failed");
  png_set_error_fn(
      st.png, nullptr, [](png_structp p, png_const_charp) { png_longjmp(p, 1); },
      [](png_structp, png_const_charp) {});
  st.info = png_create_info_struct(st.png);
  if (!st.info) throw DataError("libpng initialisation failed");
  png_uint_32 w = 0;
  png_uint_32 h = 0;
  int channels = 0;
  int depth = 0;
  std::vector<png_byte> buffer;
  std::vector<png_bytep> rows;
  const std::string err = png_decode_rows(st, w, h, channels, depth, buffer, rows);
  if (!err.empty()) throw DataError("unreadable PNG " + path.string() + ": " + err);
  GrayImage img(static_cast<int>(w), static_cast<int>(h));
  const double maxval = depth == 16 ? 65535.0 : 255.0;
  const std::size_t bps = depth == 16 ? 2 : 1;
  auto sample = [&](std::size_t idx) {
    if (bps == 2) {
      std::uint16_t v = 0;
      std::memcpy(&v, buffer.data() + idx * 2, 2);
      return v / maxval;
    }
    return buffer[idx] / maxval;
  };
  for (std::size_t p = 0; p < img.pixels.size(); ++p) {
    const std::size_t base = p * static_cast<std::size_t>(channels);
    img.pixels[p] = channels >= 3 ? luminance(sample(base), sample(base + 1), sample(base + 2))
                                  : sample(base);
  }
  return img;
}

}  // namespace detail

/// Reads PGM/PPM (P2, P3, P5, P6; 8 or 16 bit) or PNG. Colour is reduced to
/// luminance 0.299 R + 0.587 G + 0.114 B; samples are scaled to [0, 1].
inline GrayImage load_image(const std::filesystem::path& path) {
  const auto bytes = detail::read_all(path);
  if (bytes.size() < 8 && !(bytes.size() >= 2 && bytes[0] == 'P')) {
    throw DataError("unsupported or truncated image: " + path.string());
  }
  static constexpr unsigned char kPngMagic[8] = {0x89, 'P', 'N', 'G', 0x0D, 0x0A, 0x1A, 0x0A};
  if (bytes.size() >= 8 && std::equal(kPngMagic, kPngMagic + 8, bytes.begin())) {
    return detail::decode_png(path);
  }
  if (bytes.size() >= 2 && bytes[0] == 'P' &&
      (bytes[1] == '2' || bytes[1] == '3' || bytes[1] == '5' || bytes[1] == '6')) {
    return detail::decode_pnm(bytes, path.string());
  }
  throw DataError("unsupported image format: " + path.string());
}

namespace detail {

inline std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

}  // namespace detail

/// Binary 8-bit PGM.
inline void write_pgm(const std::filesystem::path& path, const GrayImage& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write image: " + path.string());
  out << "P5\n" << img.width << ' ' << img.height << "\n255\n";
  std::vector<char> row(static_cast<std::size_t>(img.width));
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) row[static_cast<std::size_t>(x)] = static_cast<char>(detail::to_byte(img.at(x, y)));
    out.write(row.data(), static_cast<std::streamsize>(row.size()));
  }
  if (!out) throw DataError("failed writing image: " + path.string());
}

/// 8-bit grayscale PNG.
inline void write_png(const std::filesystem::path& path, const GrayImage& img) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.width);
  image.height = static_cast<png_uint_32>(img.height);
  image.format = PNG_FORMAT_GRAY;
  std::vector<png_byte> buffer(img.pixels.size());
  for (std::size_t i = 0; i < buffer.size(); ++i) buffer[i] = detail::to_byte(img.pixels[i]);
  if (!png_image_write_to_file(&image, path.string().c_str(), 0, buffer.data(), 0, nullptr)) {
    throw DataError("cannot write PNG " + path.string() + ": " + image.message);
  }
}

/// Bilinear resampling to `width` x `height` (pixel centres aligned).
inline GrayImage resize_bilinear(const GrayImage& img, int width, int height) {
  GrayImage out(width, height);
  const double sx = static_cast<double>(img.width) / width;
  const double sy = static_cast<double>(img.height) / height;
  for (int y = 0; y < height; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(img.height - 1));
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, img.height - 1);
    const double wy = fy - y0;
    for (int x = 0; x < width; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(img.width - 1));
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, img.width - 1);
      const double wx = fx - x0;
      out.at(x, y) = (1 - wy) * ((1 - wx) * img.at(x0, y0) + wx * img.at(x1, y0)) +
                     wy * ((1 - wx) * img.at(x0, y1) + wx * img.at(x1, y1));
    }
  }
  return out;
}

}  // namespace gmmspd
