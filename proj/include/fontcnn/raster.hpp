#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fontcnn/error.hpp"

namespace fontcnn {

/// Round half away from zero, then clamp into the 8-bit intensity range.
/// This is the single rounding rule used for every pixel computation.
inline std::uint8_t to_intensity(double v) {
  const double r = std::round(v);
  return static_cast<std::uint8_t>(std::clamp(r, 0.0, 255.0));
}

/// 8-bit single-channel raster, row-major.
class GrayImage {
 public:
  GrayImage() = default;

  GrayImage(int width, int height, std::uint8_t fill = 0) : width_(width), height_(height) {
    if (width <= 0 || height <= 0) {
      throw DataError("GrayImage dimensions must be positive, got " + std::to_string(width) + "x" +
                      std::to_string(height));
    }
    pixels_.assign(static_cast<std::size_t>(width) * static_cast<std::size_t>(height), fill);
  }

  GrayImage(int width, int height, std::vector<std::uint8_t> pixels)
      : width_(width), height_(height), pixels_(std::move(pixels)) {
    if (width <= 0 || height <= 0) throw DataError("GrayImage dimensions must be positive");
    if (pixels_.size() != static_cast<std::size_t>(width) * static_cast<std::size_t>(height)) {
      throw DataError("GrayImage pixel count does not match " + std::to_string(width) + "x" +
                      std::to_string(height));
    }
  }

  int width() const { return width_; }
  int height() const { return height_; }
  bool empty() const { return pixels_.empty(); }
  std::size_t size() const { return pixels_.size(); }

  std::uint8_t at(int x, int y) const { return pixels_[index(x, y)]; }
  std::uint8_t& at(int x, int y) { return pixels_[index(x, y)]; }

  std::span<const std::uint8_t> pixels() const { return pixels_; }
  std::span<std::uint8_t> pixels() { return pixels_; }
  std::span<const std::uint8_t> row(int y) const {
    return std::span<const std::uint8_t>(pixels_).subspan(index(0, y), static_cast<std::size_t>(width_));
  }

  friend bool operator==(const GrayImage&, const GrayImage&) = default;

 private:
  std::size_t index(int x, int y) const {
    return static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) + static_cast<std::size_t>(x);
  }

  int width_ = 0;
  int height_ = 0;
  std::vector<std::uint8_t> pixels_;
};

/// Exact sub-rectangle copy. The window must lie inside the image.
inline GrayImage crop(const GrayImage& img, int x0, int y0, int w, int h) {
  if (x0 < 0 || y0 < 0 || w <= 0 || h <= 0 || x0 + w > img.width() || y0 + h > img.height()) {
    throw DataError("crop window " + std::to_string(w) + "x" + std::to_string(h) + "+" + std::to_string(x0) +
                    "+" + std::to_string(y0) + " outside " + std::to_string(img.width()) + "x" +
                    std::to_string(img.height()) + " image");
  }
  GrayImage out(w, h);
  for (int y = 0; y < h; ++y) {
    auto src = img.row(y0 + y).subspan(static_cast<std::size_t>(x0), static_cast<std::size_t>(w));
    std::copy(src.begin(), src.end(), out.pixels().begin() + static_cast<std::ptrdiff_t>(y) * w);
  }
  return out;
}

/// Central size x size window (validation patches, 256 -> 227).
inline GrayImage center_crop(const GrayImage& img, int size) {
  return crop(img, (img.width() - size) / 2, (img.height() - size) / 2, size, size);
}

/// Pads with `fill` so that the result is at least min_w x min_h. Content is
/// centered; when the padding is odd the extra column goes right and the
/// extra row goes below.
inline GrayImage pad_to_min(const GrayImage& img, int min_w, int min_h, std::uint8_t fill = 255) {
  const int w = std::max(img.width(), min_w);
  const int h = std::max(img.height(), min_h);
  if (w == img.width() && h == img.height()) return img;
  GrayImage out(w, h, fill);
  const int left = (w - img.width()) / 2;
  const int top = (h - img.height()) / 2;
  for (int y = 0; y < img.height(); ++y) {
    auto src = img.row(y);
    std::copy(src.begin(), src.end(),
              out.pixels().begin() + static_cast<std::ptrdiff_t>(top + y) * w + left);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Binary PGM (P5)
// ---------------------------------------------------------------------------

/// Decodes a binary P5 graymap held in memory. Header comments are accepted.
inline GrayImage decode_pgm(std::span<const std::uint8_t> bytes) {
  std::size_t pos = 0;
  auto is_space = [](std::uint8_t c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f'; };
  auto skip_space_and_comments = [&] {
    while (pos < bytes.size()) {
      if (is_space(bytes[pos])) {
        ++pos;
      } else if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else {
        break;
      }
    }
  };
  auto read_uint = [&](const char* field) -> long {
    skip_space_and_comments();
    const std::size_t start = pos;
    long value = 0;
    while (pos < bytes.size() && bytes[pos] >= '0' && bytes[pos] <= '9') {
      value = value * 10 + (bytes[pos] - '0');
      if (value > 1'000'000'000L) throw ParseError(std::string("pgm ") + field + " too large", start);
      ++pos;
    }
    if (pos == start) throw ParseError(std::string("pgm header: expected ") + field, start);
    return value;
  };

  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5') throw ParseError("not a binary PGM (missing P5 magic)", 0);
  pos = 2;
  skip_space_and_comments();
  const std::size_t width_at = pos;
  const long width = read_uint("width");
  const long height = read_uint("height");
  if (width <= 0 || height <= 0) throw ParseError("pgm dimensions must be positive", width_at);
  skip_space_and_comments();
  const std::size_t maxval_at = pos;
  const long maxval = read_uint("maxval");
  if (maxval != 255) throw ParseError("unsupported maxval " + std::to_string(maxval), maxval_at);
  if (pos >= bytes.size() || !is_space(bytes[pos])) throw ParseError("pgm header must end with one whitespace byte", pos);
  ++pos;
  const std::size_t need = static_cast<std::size_t>(width) * static_cast<std::size_t>(height);
  if (bytes.size() - pos < need) {
    throw ParseError("truncated pgm payload: expected " + std::to_string(need) + " bytes, found " +
                         std::to_string(bytes.size() - pos),
                     bytes.size());
  }
  std::vector<std::uint8_t> pixels(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                                   bytes.begin() + static_cast<std::ptrdiff_t>(pos + need));
  return GrayImage(static_cast<int>(width), static_cast<int>(height), std::move(pixels));
}

/// Canonical P5 encoding: "P5\n<w> <h>\n255\n" followed by raw bytes.
inline std::vector<std::uint8_t> encode_pgm(const GrayImage& img) {
  const std::string header =
      "P5\n" + std::to_string(img.width()) + " " + std::to_string(img.height()) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), img.pixels().begin(), img.pixels().end());
  return out;
}

inline std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

inline GrayImage load_pgm(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  try {
    return decode_pgm(bytes);
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what(), e.offset());
  }
}

inline void save_pgm(const GrayImage& img, const std::filesystem::path& path) {
  if (img.empty()) throw DataError("cannot save an empty image");
  write_file_bytes(path, encode_pgm(img));
}

// ---------------------------------------------------------------------------
// Resampling
// ---------------------------------------------------------------------------

namespace detail {

/// Closest fraction p/q to `scale` with q <= max_den (smallest q on ties).
inline std::pair<std::int64_t, std::int64_t> rational_scale(double scale, std::int64_t max_den = 10000) {
  std::int64_t best_p = 1, best_q = 1;
  double best_err = std::abs(scale - 1.0);
  for (std::int64_t q = 1; q <= max_den && best_err > 1e-12; ++q) {
    const auto p = static_cast<std::int64_t>(std::llround(scale * static_cast<double>(q)));
    const double err = std::abs(scale - static_cast<double>(p) / static_cast<double>(q));
    if (p > 0 && err < best_err - 1e-15) {
      best_p = p;
      best_q = q;
      best_err = err;
    }
  }
  return {best_p, best_q};
}

struct Tap {
  int src;
  std::int64_t weight;
};

// With scale p/q, source pixel s spans [s*p, (s+1)*p) and output pixel i
// spans [i*q, (i+1)*q) in a common integer unit, so coverage weights are
// exact integers summing to q.
inline std::vector<std::vector<Tap>> area_taps(int dst_len, std::int64_t p, std::int64_t q) {
  std::vector<std::vector<Tap>> taps(static_cast<std::size_t>(dst_len));
  for (int i = 0; i < dst_len; ++i) {
    const std::int64_t lo = i * q, hi = (i + 1) * q;
    for (auto s = static_cast<int>(lo / p); static_cast<std::int64_t>(s) * p < hi; ++s) {
      const std::int64_t overlap = std::min(hi, (s + 1) * p) - std::max(lo, s * p);
      if (overlap > 0) taps[static_cast<std::size_t>(i)].push_back({s, overlap});
    }
  }
  return taps;
}

}  // namespace detail

/// Area-average downsampling to floor(dim * scale) per axis. The scale is
/// taken as the nearest fraction with denominator <= 10000 and the average
/// is computed exactly in integers, then rounded half up. scale == 1
/// returns an exact copy.
inline GrayImage resize_scale(const GrayImage& img, double scale) {
  if (!(scale > 0.0) || scale > 1.0) throw DataError("resize scale must be in (0, 1], got " + std::to_string(scale));
  if (scale == 1.0) return img;
  const auto [p, q] = detail::rational_scale(scale);
  const auto out_w = static_cast<int>(img.width() * p / q);
  const auto out_h = static_cast<int>(img.height() * p / q);
  if (out_w < 1 || out_h < 1) throw DataError("resize scale too small for image size");

  const auto xt = detail::area_taps(out_w, p, q);
  const auto yt = detail::area_taps(out_h, p, q);

  // Horizontal pass (sums up to 255*q), then vertical (up to 255*q*q).
  std::vector<std::int64_t> tmp(static_cast<std::size_t>(out_w) * static_cast<std::size_t>(img.height()));
  for (int y = 0; y < img.height(); ++y) {
    auto row = img.row(y);
    for (int x = 0; x < out_w; ++x) {
      std::int64_t acc = 0;
      for (const auto& t : xt[static_cast<std::size_t>(x)]) acc += t.weight * row[static_cast<std::size_t>(t.src)];
      tmp[static_cast<std::size_t>(y) * out_w + x] = acc;
    }
  }
  const std::int64_t area = q * q;
  GrayImage out(out_w, out_h);
  for (int y = 0; y < out_h; ++y) {
    for (int x = 0; x < out_w; ++x) {
      std::int64_t acc = 0;
      for (const auto& t : yt[static_cast<std::size_t>(y)]) acc += t.weight * tmp[static_cast<std::size_t>(t.src) * out_w + x];
      out.at(x, y) = static_cast<std::uint8_t>((2 * acc + area) / (2 * area));
    }
  }
  return out;
}

inline double mean_intensity(const GrayImage& img) {
  double sum = 0.0;
  for (auto p : img.pixels()) sum += p;
  return img.empty() ? 0.0 : sum / static_cast<double>(img.size());
}

}  // namespace fontcnn
