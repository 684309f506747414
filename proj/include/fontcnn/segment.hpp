#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include <boost/multiprecision/cpp_int.hpp>

#include "fontcnn/error.hpp"
#include "fontcnn/raster.hpp"

namespace fontcnn {

/// Boolean raster marking text pixels (true = foreground).
class ForegroundMask {
 public:
  ForegroundMask() = default;
  ForegroundMask(int width, int height, bool fill = false)
      : width_(width), height_(height),
        bits_(static_cast<std::size_t>(width) * static_cast<std::size_t>(height), fill ? 1 : 0) {}

  int width() const { return width_; }
  int height() const { return height_; }
  std::size_t size() const { return bits_.size(); }

  bool at(int x, int y) const { return bits_[index(x, y)] != 0; }
  void set(int x, int y, bool v) { bits_[index(x, y)] = v ? 1 : 0; }
  bool operator[](std::size_t i) const { return bits_[i] != 0; }
  void set(std::size_t i, bool v) { bits_[i] = v ? 1 : 0; }

  std::size_t count() const {
    std::size_t n = 0;
    for (auto b : bits_) n += b;
    return n;
  }

  bool matches(const GrayImage& img) const { return img.width() == width_ && img.height() == height_; }

  friend bool operator==(const ForegroundMask&, const ForegroundMask&) = default;

 private:
  std::size_t index(int x, int y) const {
    return static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) + static_cast<std::size_t>(x);
  }

  int width_ = 0;
  int height_ = 0;
  std::vector<std::uint8_t> bits_;
};

inline std::array<std::uint64_t, 256> histogram(const GrayImage& img) {
  std::array<std::uint64_t, 256> h{};
  for (auto p : img.pixels()) ++h[p];
  return h;
}

/// Otsu threshold over the 256-bin histogram: the t maximizing the
/// between-class variance of {p <= t} vs {p > t}, smallest t on ties.
///
/// The variance w0*w1*(mu0-mu1)^2 equals (N*S0 - S*n0)^2 / (N^2 * n0 * n1),
/// so candidates are compared as exact rationals; equal splits can never be
/// separated by float rounding.
inline int otsu_threshold(const GrayImage& img) {
  if (img.empty()) throw DataError("otsu_threshold: empty image");
  using boost::multiprecision::uint256_t;
  const auto hist = histogram(img);
  const std::uint64_t total_n = img.size();
  std::uint64_t total_s = 0;
  for (int v = 0; v < 256; ++v) total_s += hist[v] * static_cast<std::uint64_t>(v);

  int best_t = 0;
  uint256_t best_num = 0;
  uint256_t best_den = 1;
  std::uint64_t n0 = 0;
  std::uint64_t s0 = 0;
  for (int t = 0; t < 256; ++t) {
    n0 += hist[t];
    s0 += hist[t] * static_cast<std::uint64_t>(t);
    const std::uint64_t n1 = total_n - n0;
    if (n0 == 0 || n1 == 0) continue;  // one class empty: zero variance
    const auto a = static_cast<unsigned __int128>(total_n) * s0;
    const auto b = static_cast<unsigned __int128>(total_s) * n0;
    const auto d = a > b ? a - b : b - a;
    const uint256_t num = uint256_t(d) * uint256_t(d);
    const uint256_t den = uint256_t(n0) * uint256_t(n1);
    if (num * best_den > best_num * den) {
      best_num = num;
      best_den = den;
      best_t = t;
    }
  }
  return best_t;
}

/// Dark-is-foreground mask: pixel <= Otsu threshold. Constant images carry no
/// text and yield an all-background mask.
inline ForegroundMask foreground_mask(const GrayImage& img) {
  if (img.empty()) throw DataError("foreground_mask: empty image");
  const auto [lo, hi] = std::minmax_element(img.pixels().begin(), img.pixels().end());
  ForegroundMask mask(img.width(), img.height(), false);
  if (*lo == *hi) return mask;
  const int t = otsu_threshold(img);
  for (std::size_t i = 0; i < img.size(); ++i) mask.set(i, img.pixels()[i] <= t);
  return mask;
}

inline double foreground_fraction(const GrayImage& img) {
  return static_cast<double>(foreground_mask(img).count()) / static_cast<double>(img.size());
}

/// Patches with fewer than this fraction of Otsu-foreground pixels count as
/// text-free samples for background estimation.
inline constexpr double kBackgroundForegroundFraction = 0.005;

inline bool is_text_free(const GrayImage& patch, double max_fraction = kBackgroundForegroundFraction) {
  return foreground_fraction(patch) < max_fraction;
}

/// Pixel-wise average of text-free patches.
struct BackgroundEstimate {
  GrayImage image;
};

inline BackgroundEstimate estimate_background(std::span<const GrayImage> patches, int target_w, int target_h) {
  if (patches.empty()) throw DataError("estimate_background: no patches");
  std::vector<std::uint64_t> sum(static_cast<std::size_t>(target_w) * static_cast<std::size_t>(target_h), 0);
  for (const auto& p : patches) {
    if (p.width() != target_w || p.height() != target_h) {
      throw DataError("estimate_background: patch is " + std::to_string(p.width()) + "x" +
                      std::to_string(p.height()) + ", expected " + std::to_string(target_w) + "x" +
                      std::to_string(target_h));
    }
    for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += p.pixels()[i];
  }
  GrayImage out(target_w, target_h);
  const double k = static_cast<double>(patches.size());
  for (std::size_t i = 0; i < sum.size(); ++i) out.pixels()[i] = to_intensity(static_cast<double>(sum[i]) / k);
  return {std::move(out)};
}

/// Mask rendered as a {0,255} graymap (255 = foreground) for inspection.
inline GrayImage mask_to_image(const ForegroundMask& mask) {
  GrayImage out(mask.width(), mask.height(), 0);
  for (std::size_t i = 0; i < mask.size(); ++i) out.pixels()[i] = mask[i] ? 255 : 0;
  return out;
}

inline ForegroundMask image_to_mask(const GrayImage& img) {
  ForegroundMask m(img.width(), img.height());
  for (std::size_t i = 0; i < img.size(); ++i) m.set(i, img.pixels()[i] >= 128);
  return m;
}

inline ForegroundMask crop(const ForegroundMask& m, int x0, int y0, int w, int h) {
  if (x0 < 0 || y0 < 0 || x0 + w > m.width() || y0 + h > m.height()) throw DataError("mask crop outside bounds");
  ForegroundMask out(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) out.set(x, y, m.at(x0 + x, y0 + y));
  return out;
}

}  // namespace fontcnn
