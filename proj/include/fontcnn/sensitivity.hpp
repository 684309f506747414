#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "fontcnn/error.hpp"
#include "fontcnn/infer.hpp"
#include "fontcnn/random.hpp"
#include "fontcnn/raster.hpp"
#include "fontcnn/segment.hpp"
#include "fontcnn/synthgen.hpp"

namespace fontcnn {

// ---------------------------------------------------------------------------
// Curves
// ---------------------------------------------------------------------------

struct SweepCurve {
  std::string factor_name = "factor";
  std::vector<double> factors;              // strictly increasing
  std::vector<double> accuracy;             // per factor
  std::vector<std::string> classes;         // may be empty
  std::vector<std::vector<double>> per_class;  // [class][factor], NaN where a class has no samples

  friend bool operator==(const SweepCurve& a, const SweepCurve& b) {
    auto same = [](const std::vector<double>& x, const std::vector<double>& y) {
      return x.size() == y.size() && std::equal(x.begin(), x.end(), y.begin(), [](double p, double q) {
               return p == q || (std::isnan(p) && std::isnan(q));
             });
    };
    if (a.factor_name != b.factor_name || a.classes != b.classes || !same(a.factors, b.factors) ||
        !same(a.accuracy, b.accuracy) || a.per_class.size() != b.per_class.size()) {
      return false;
    }
    for (std::size_t i = 0; i < a.per_class.size(); ++i)
      if (!same(a.per_class[i], b.per_class[i])) return false;
    return true;
  }
};

/// Header row: factor name, "accuracy", class names. Then one row per factor.
inline std::string format_curve(const SweepCurve& c) {
  std::ostringstream os;
  os.precision(17);
  os << c.factor_name << "\taccuracy";
  for (const auto& n : c.classes) os << '\t' << n;
  os << '\n';
  for (std::size_t i = 0; i < c.factors.size(); ++i) {
    os << c.factors[i] << '\t' << c.accuracy[i];
    for (const auto& pc : c.per_class) os << '\t' << pc[i];
    os << '\n';
  }
  return os.str();
}

inline void write_curve(const SweepCurve& c, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << format_curve(c);
  if (!out) throw IoError("cannot write " + path.string());
}

inline SweepCurve read_curve(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw DataError(path.string() + ": empty curve file");
  auto header = detail::split_tabs(line);
  if (header.size() < 2 || header[1] != "accuracy") throw DataError(path.string() + ": bad curve header");
  SweepCurve c;
  c.factor_name = header[0];
  c.classes.assign(header.begin() + 2, header.end());
  c.per_class.assign(c.classes.size(), {});
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto f = detail::split_tabs(line);
    if (f.size() != header.size()) throw DataError(path.string() + ":" + std::to_string(lineno) + ": wrong field count");
    try {
      c.factors.push_back(std::stod(f[0]));
      c.accuracy.push_back(std::stod(f[1]));
      for (std::size_t k = 0; k < c.classes.size(); ++k) c.per_class[k].push_back(std::stod(f[k + 2]));
    } catch (const std::logic_error&) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": bad number");
    }
  }
  return c;
}

/// One classification made during a sweep.
struct SweepPrediction {
  double factor = 0.0;
  std::size_t item = 0;
  int label = 0;
  int predicted = 0;
};

struct SweepResult {
  SweepCurve curve;
  std::vector<SweepPrediction> log;
};

/// Tab-separated: factor, item, true class, predicted class.
inline std::string format_sweep_log(const std::vector<SweepPrediction>& log, const std::vector<std::string>& classes) {
  std::ostringstream os;
  os.precision(17);
  os << "# factor\titem\ttrue\tpredicted\n";
  for (const auto& p : log) {
    os << p.factor << '\t' << p.item << '\t' << classes.at(static_cast<std::size_t>(p.label)) << '\t'
       << classes.at(static_cast<std::size_t>(p.predicted)) << '\n';
  }
  return os.str();
}

inline void write_sweep_log(const std::vector<SweepPrediction>& log, const std::vector<std::string>& classes,
                            const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << format_sweep_log(log, classes);
}

// ---------------------------------------------------------------------------
// Text darkness
// ---------------------------------------------------------------------------

inline constexpr int kDarknessLevels = 100;
inline constexpr int kOriginalLevel = 50;

/// Ordered darkest (level 1) to lightest (level 100); levels[k - 1] is level k.
struct DarknessSeries {
  std::vector<GrayImage> levels;
  const GrayImage& level(int k) const { return levels.at(static_cast<std::size_t>(k - 1)); }
};

/// Constant subtracted from foreground pixels at darker level i in [1, 49]:
/// round((50 - i) / 49 * M).
inline int darkening_offset(int level, int max_fg) {
  return (2 * (kOriginalLevel - level) * max_fg + 49) / 98;
}

/// Levels 1-49 subtract a growing constant from foreground pixels (clamped
/// at 0; level 1 makes them all 0), level 50 is the patch itself, and levels
/// 51-100 blend towards the background estimate with weight
/// a = (100 - j) / 50 on the original.
inline DarknessSeries darkness_series(const GrayImage& patch, const ForegroundMask& mask,
                                      const BackgroundEstimate& background) {
  if (!mask.matches(patch)) throw DataError("darkness_series: mask does not match patch");
  if (background.image.width() != patch.width() || background.image.height() != patch.height()) {
    throw DataError("darkness_series: background estimate does not match patch");
  }
  int max_fg = -1;
  for (std::size_t i = 0; i < patch.size(); ++i)
    if (mask[i]) max_fg = std::max(max_fg, static_cast<int>(patch.pixels()[i]));
  if (max_fg < 0) throw DataError("darkness_series: patch has no foreground pixels");

  DarknessSeries s;
  s.levels.reserve(kDarknessLevels);
  for (int i = 1; i < kOriginalLevel; ++i) {
    const int c = darkening_offset(i, max_fg);
    GrayImage out = patch;
    for (std::size_t k = 0; k < out.size(); ++k)
      if (mask[k]) out.pixels()[k] = static_cast<std::uint8_t>(std::max(0, out.pixels()[k] - c));
    s.levels.push_back(std::move(out));
  }
  s.levels.push_back(patch);
  const auto bg = background.image.pixels();
  for (int j = kOriginalLevel + 1; j <= kDarknessLevels; ++j) {
    GrayImage out = patch;
    const int wo = kDarknessLevels - j, wb = j - kOriginalLevel;  // weights out of 50
    for (std::size_t k = 0; k < out.size(); ++k) {
      const int num = wo * patch.pixels()[k] + wb * bg[k];
      out.pixels()[k] = static_cast<std::uint8_t>((2 * num + 50) / 100);
    }
    s.levels.push_back(std::move(out));
  }
  return s;
}

struct SweepPatch {
  GrayImage image;
  ForegroundMask mask;
  int label = 0;
};

inline SweepCurve tally_curve(std::string factor_name, std::vector<double> factors,
                              const std::vector<std::string>& classes, const std::vector<SweepPrediction>& log) {
  SweepCurve c;
  c.factor_name = std::move(factor_name);
  c.factors = std::move(factors);
  c.classes = classes;
  const std::size_t nf = c.factors.size(), nc = classes.size();
  std::vector<double> hit(nf, 0), total(nf, 0);
  std::vector<std::vector<double>> chit(nc, std::vector<double>(nf, 0)), ctot(nc, std::vector<double>(nf, 0));
  for (const auto& p : log) {
    const auto f = static_cast<std::size_t>(std::lower_bound(c.factors.begin(), c.factors.end(), p.factor) - c.factors.begin());
    const double ok = p.label == p.predicted ? 1.0 : 0.0;
    hit[f] += ok;
    total[f] += 1;
    if (p.label >= 0 && static_cast<std::size_t>(p.label) < nc) {
      chit[static_cast<std::size_t>(p.label)][f] += ok;
      ctot[static_cast<std::size_t>(p.label)][f] += 1;
    }
  }
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (std::size_t f = 0; f < nf; ++f) c.accuracy.push_back(total[f] > 0 ? hit[f] / total[f] : nan);
  c.per_class.assign(nc, std::vector<double>(nf, nan));
  for (std::size_t k = 0; k < nc; ++k)
    for (std::size_t f = 0; f < nf; ++f)
      if (ctot[k][f] > 0) c.per_class[k][f] = chit[k][f] / ctot[k][f];
  return c;
}

/// Classifies every level of every patch's darkness series. The curve value
/// at level k is the fraction of patches classified correctly at that level.
/// Patches larger than the network input are center-cropped after the series
/// is built.
inline SweepResult darkness_sweep(PatchClassifier& clf, const std::vector<SweepPatch>& patches,
                                  const BackgroundEstimate& background, const std::set<int>& disallowed = {}) {
  if (patches.empty()) throw DataError("darkness_sweep: no patches");
  SweepResult r;
  std::vector<GrayImage> batch;
  for (std::size_t i = 0; i < patches.size(); ++i) {
    const auto& p = patches[i];
    const auto series = darkness_series(p.image, p.mask, background);
    batch.clear();
    for (const auto& lvl : series.levels) {
      batch.push_back(lvl.width() > kInputSize || lvl.height() > kInputSize ? center_crop(lvl, kInputSize) : lvl);
    }
    const auto probs = clf.classify(batch);
    for (int k = 1; k <= kDarknessLevels; ++k) {
      r.log.push_back({static_cast<double>(k), i, p.label,
                       argmax_allowed(probs[static_cast<std::size_t>(k - 1)], disallowed)});
    }
  }
  std::vector<double> levels;
  for (int k = 1; k <= kDarknessLevels; ++k) levels.push_back(k);
  r.curve = tally_curve("level", std::move(levels), clf.classes(), r.log);
  return r;
}

/// Up to `per_class` patches of each class, chosen by seeded sampling
/// without replacement; dataset order is kept within the selection.
inline std::vector<std::size_t> sample_per_class(const PatchDataset& ds, std::size_t per_class, std::uint64_t seed) {
  std::vector<std::size_t> out;
  RngStream root(seed);
  for (std::size_t c = 0; c < ds.classes.size(); ++c) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < ds.patches.size(); ++i)
      if (ds.patches[i].label == static_cast<int>(c)) idx.push_back(i);
    RngStream r = root.split(c);
    r.shuffle(std::span<std::size_t>(idx));
    if (idx.size() > per_class) idx.resize(per_class);
    out.insert(out.end(), idx.begin(), idx.end());
  }
  std::sort(out.begin(), out.end());
  return out;
}

/// Background estimate from the text-free members of `candidates`.
inline BackgroundEstimate estimate_background_from(std::span<const GrayImage> candidates, int width, int height) {
  std::vector<GrayImage> free;
  for (const auto& c : candidates)
    if (c.width() == width && c.height() == height && is_text_free(c)) free.push_back(c);
  if (free.empty()) throw DataError("no text-free patches to estimate the background from");
  return estimate_background(free, width, height);
}

// ---------------------------------------------------------------------------
// Line spacing
// ---------------------------------------------------------------------------

inline const std::vector<int>& default_spacings() {
  static const std::vector<int> s{0, 5, 10, 15, 20, 30, 40, 60};
  return s;
}

/// Lines stacked with exactly `spacing` empty rows between consecutive ink
/// boxes, left edges at `left`, first box at `top`.
inline GrayImage render_line_spacing(const std::vector<TextLine>& lines, const GrayImage& background, int spacing,
                                     int left, int top) {
  return composite_on_background(lines, background, spacing, left, top);
}

/// Pre-cut text lines of one image plus its clean background.
struct LineSet {
  std::vector<TextLine> lines;
  GrayImage background;
  int label = 0;
  int left = 0;
  int top = 0;
};

/// For each spacing, re-renders every image, classifies its dense test
/// patches (stride 100, background windows dropped) and records the
/// image's patch accuracy. The curve value is the mean over images.
inline SweepResult spacing_sweep(PatchClassifier& clf, const std::vector<LineSet>& images,
                                 const std::vector<int>& spacings, const std::set<int>& disallowed = {}) {
  if (spacings.empty()) throw DataError("spacing_sweep: no spacings");
  if (images.empty()) throw DataError("spacing_sweep: no images");
  std::vector<int> sorted = spacings;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) throw DataError("spacing_sweep: duplicate spacing");

  SweepResult r;
  const std::size_t nc = clf.classes().size();
  const double nan = std::numeric_limits<double>::quiet_NaN();
  r.curve.factor_name = "spacing";
  r.curve.classes = clf.classes();
  r.curve.per_class.assign(nc, {});
  for (int s : sorted) {
    double sum = 0;
    std::vector<double> csum(nc, 0.0), ccount(nc, 0.0);
    for (std::size_t i = 0; i < images.size(); ++i) {
      const auto& img = images[i];
      const GrayImage page = render_line_spacing(img.lines, img.background, s, img.left, img.top);
      const auto patches = extract_test_patches(page, kTestStride, true);
      if (patches.empty()) throw NoContentError("spacing_sweep: image " + std::to_string(i) + " has no text patches");
      std::size_t correct = 0;
      for (const auto& d : clf.classify(patches)) {
        const int pred = argmax_allowed(d, disallowed);
        correct += pred == img.label;
        r.log.push_back({static_cast<double>(s), i, img.label, pred});
      }
      const double acc = static_cast<double>(correct) / static_cast<double>(patches.size());
      sum += acc;
      if (img.label >= 0 && static_cast<std::size_t>(img.label) < nc) {
        csum[static_cast<std::size_t>(img.label)] += acc;
        ccount[static_cast<std::size_t>(img.label)] += 1;
      }
    }
    r.curve.factors.push_back(s);
    r.curve.accuracy.push_back(sum / static_cast<double>(images.size()));
    for (std::size_t k = 0; k < nc; ++k) r.curve.per_class[k].push_back(ccount[k] > 0 ? csum[k] / ccount[k] : nan);
  }
  return r;
}

}  // namespace fontcnn
