#pragma once

#include <cmath>
#include <string>

#include "fontcnn/error.hpp"
#include "fontcnn/random.hpp"
#include "fontcnn/raster.hpp"
#include "fontcnn/segment.hpp"

namespace fontcnn {

inline constexpr int kInputSize = 227;

enum class JitterMode { none, whole, fg_bg };

inline JitterMode parse_jitter_mode(const std::string& s) {
  if (s == "none") return JitterMode::none;
  if (s == "whole") return JitterMode::whole;
  if (s == "fg_bg") return JitterMode::fg_bg;
  throw DataError("unknown jitter mode '" + s + "'");
}

inline const char* to_string(JitterMode m) {
  switch (m) {
    case JitterMode::none: return "none";
    case JitterMode::whole: return "whole";
    case JitterMode::fg_bg: return "fg_bg";
  }
  return "?";
}

struct AugmentConfig {
  int crop_size = kInputSize;
  double jitter_mu = 0.0;
  double jitter_sigma = 30.0;
  JitterMode mode = JitterMode::fg_bg;
  std::uint64_t seed = 0;

  void validate() const {
    if (crop_size <= 0) throw DataError("augment crop_size must be positive");
    if (jitter_sigma < 0) throw DataError("augment jitter_sigma must be >= 0");
  }
};

struct CropResult {
  GrayImage image;
  int offset_x = 0;
  int offset_y = 0;
};

/// Uniformly placed crop_size x crop_size window.
inline CropResult random_crop(const GrayImage& patch, RngStream& rng, int crop_size = kInputSize) {
  if (patch.width() < crop_size || patch.height() < crop_size) {
    throw DataError("random_crop: patch " + std::to_string(patch.width()) + "x" + std::to_string(patch.height()) +
                    " smaller than crop " + std::to_string(crop_size));
  }
  const int ox = static_cast<int>(rng.uniform_int(0, patch.width() - crop_size));
  const int oy = static_cast<int>(rng.uniform_int(0, patch.height() - crop_size));
  return {crop(patch, ox, oy, crop_size, crop_size), ox, oy};
}

enum class JitterRegion { foreground, background, all };

/// Adds an integer shift to the pixels of one region, saturating at [0,255].
/// Pixels outside the region are copied bit-for-bit.
inline GrayImage apply_shift(const GrayImage& img, const ForegroundMask& mask, JitterRegion region, int shift) {
  if (region != JitterRegion::all && !mask.matches(img)) throw DataError("jitter: mask does not match image size");
  GrayImage out = img;
  auto px = out.pixels();
  for (std::size_t i = 0; i < px.size(); ++i) {
    const bool selected = region == JitterRegion::all || (mask[i] == (region == JitterRegion::foreground));
    if (selected) px[i] = static_cast<std::uint8_t>(std::clamp(px[i] + shift, 0, 255));
  }
  return out;
}

/// Single Gaussian draw rounded half away from zero.
inline int draw_shift(RngStream& rng, double mu, double sigma) {
  return static_cast<int>(std::round(rng.normal(mu, sigma)));
}

/// Brightens or darkens the whole image by one N(mu, sigma^2) draw.
inline GrayImage jitter_whole(const GrayImage& img, RngStream& rng, const AugmentConfig& cfg) {
  return apply_shift(img, ForegroundMask{}, JitterRegion::all, draw_shift(rng, cfg.jitter_mu, cfg.jitter_sigma));
}

struct JitterResult {
  GrayImage image;
  JitterRegion region = JitterRegion::foreground;
  int shift = 0;
};

/// Foreground/background jitter: a fair coin picks the text or the page
/// region, and one N(mu, sigma^2) draw is added to that region only.
inline JitterResult jitter_fg_bg_detailed(const GrayImage& img, const ForegroundMask& mask, RngStream& rng,
                                          const AugmentConfig& cfg) {
  if (!mask.matches(img)) throw DataError("jitter_fg_bg: mask does not match image size");
  const JitterRegion region = rng.coin() ? JitterRegion::foreground : JitterRegion::background;
  const int shift = draw_shift(rng, cfg.jitter_mu, cfg.jitter_sigma);
  return {apply_shift(img, mask, region, shift), region, shift};
}

inline GrayImage jitter_fg_bg(const GrayImage& img, const ForegroundMask& mask, RngStream& rng,
                              const AugmentConfig& cfg) {
  return jitter_fg_bg_detailed(img, mask, rng, cfg).image;
}

/// Full training-time transform for one 256x256 patch: crop, then jitter per
/// cfg.mode. `mask` is the mask of the uncropped patch (unused for mode none
/// or whole).
inline GrayImage augment_patch(const GrayImage& patch, const ForegroundMask& mask, RngStream& rng,
                               const AugmentConfig& cfg) {
  CropResult c = random_crop(patch, rng, cfg.crop_size);
  switch (cfg.mode) {
    case JitterMode::none: return std::move(c.image);
    case JitterMode::whole: return jitter_whole(c.image, rng, cfg);
    case JitterMode::fg_bg:
      return jitter_fg_bg(c.image, crop(mask, c.offset_x, c.offset_y, cfg.crop_size, cfg.crop_size), rng, cfg);
  }
  return std::move(c.image);
}

}  // namespace fontcnn
