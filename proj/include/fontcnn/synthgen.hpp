#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "fontcnn/dataset.hpp"
#include "fontcnn/error.hpp"
#include "fontcnn/random.hpp"
#include "fontcnn/raster.hpp"
#include "fontcnn/segment.hpp"

#ifndef FONTCNN_ASSET_DIR
#define FONTCNN_ASSET_DIR "assets"
#endif

namespace fontcnn {

// ---------------------------------------------------------------------------
// Glyph atlas
// ---------------------------------------------------------------------------

struct Glyph {
  GrayImage coverage;  // 0..255, 255 = solid ink
  int baseline = 0;    // baseline row counted from the bitmap top
  int advance = 0;
  bool descender = false;
};

inline std::filesystem::path default_atlas_dir() { return std::filesystem::path(FONTCNN_ASSET_DIR) / "atlas"; }

/// Pre-rasterized glyphs keyed by character ("a", "Q") or by name for
/// alternates ("long_s", "space").
class GlyphAtlas {
 public:
  std::string id;
  std::map<std::string, Glyph> glyphs;

  static std::string file_name(const std::string& key) {
    if (key.size() == 1) {
      char buf[16];
      std::snprintf(buf, sizeof buf, "U+%04X.pgm", static_cast<unsigned>(static_cast<unsigned char>(key[0])));
      return buf;
    }
    return key + ".pgm";
  }

  /// Reads `dir`/metrics.tsv (glyph, baseline, advance, descender) and one
  /// PGM per glyph.
  static GlyphAtlas load(const std::filesystem::path& dir = default_atlas_dir()) {
    GlyphAtlas atlas;
    atlas.id = dir.filename().string();
    if (atlas.id.empty()) atlas.id = dir.parent_path().filename().string();
    detail::for_each_data_line(dir / "metrics.tsv", [&](const std::vector<std::string>& f, int lineno) {
      if (f.size() != 4) throw DataError("metrics.tsv:" + std::to_string(lineno) + ": expected 4 fields");
      Glyph g;
      try {
        g.baseline = std::stoi(f[1]);
        g.advance = std::stoi(f[2]);
        g.descender = std::stoi(f[3]) != 0;
      } catch (const std::logic_error&) {
        throw DataError("metrics.tsv:" + std::to_string(lineno) + ": bad number");
      }
      g.coverage = load_pgm(dir / file_name(f[0]));
      atlas.glyphs[f[0]] = std::move(g);
    });
    atlas.validate();
    return atlas;
  }

  void validate() const {
    for (char c = 'A'; c <= 'Z'; ++c) {
      for (char x : {c, static_cast<char>(c - 'A' + 'a')}) {
        if (!glyphs.count(std::string(1, x))) throw DataError("atlas " + id + " lacks glyph '" + x + "'");
      }
    }
  }

  bool contains(const std::string& key) const { return glyphs.count(key) != 0; }

  const Glyph& at(const std::string& key) const {
    auto it = glyphs.find(key);
    if (it == glyphs.end()) throw DataError("unknown glyph '" + key + "' in atlas " + id);
    return it->second;
  }

  /// Largest extent below the baseline among descending glyphs.
  int descender_height() const {
    int d = 0;
    for (const auto& [k, g] : glyphs)
      if (g.descender) d = std::max(d, g.coverage.height() - g.baseline);
    return d;
  }

  int max_ascent() const {
    int a = 0;
    for (const auto& [k, g] : glyphs) a = std::max(a, g.baseline);
    return a;
  }

  int max_descent() const {
    int d = 0;
    for (const auto& [k, g] : glyphs) d = std::max(d, g.coverage.height() - g.baseline);
    return d;
  }

  int space_advance() const {
    auto it = glyphs.find("space");
    return it != glyphs.end() ? it->second.advance : std::max(1, at("n").advance / 2);
  }
};

// ---------------------------------------------------------------------------
// Class specifications
// ---------------------------------------------------------------------------

struct SyntheticClassSpec {
  SyntheticClassSpec() = default;
  explicit SyntheticClassSpec(std::string n) : name(std::move(n)) {}

  std::string name;
  bool capitals_only = false;
  std::string shift_up;    // glyphs moved up by the descender height
  std::string shift_down;  // glyphs moved down by the descender height
  std::map<char, std::string> substitute;
  std::string atlas;  // required atlas id; empty accepts any

  friend bool operator==(const SyntheticClassSpec&, const SyntheticClassSpec&) = default;

  /// Glyph key drawn for character `c` (after upcasing).
  std::string glyph_key(char c) const {
    auto it = substitute.find(c);
    return it != substitute.end() ? it->second : std::string(1, c);
  }

  /// Vertical offset in units of the descender height: -1, 0 or +1.
  int shift_of(char c) const {
    if (shift_down.find(c) != std::string::npos) return 1;
    if (shift_up.find(c) != std::string::npos) return -1;
    return 0;
  }

  void validate() const {
    if (name.empty()) throw DataError("class spec without a name");
    for (char c : shift_up) {
      if (!std::isalpha(static_cast<unsigned char>(c))) throw DataError(name + ": shift_up holds non-letter");
      if (shift_down.find(c) != std::string::npos) {
        throw DataError(name + ": glyph '" + std::string(1, c) + "' is in both shift lists");
      }
    }
    for (char c : shift_down)
      if (!std::isalpha(static_cast<unsigned char>(c))) throw DataError(name + ": shift_down holds non-letter");
    for (const auto& [c, alt] : substitute) {
      if (!std::isalpha(static_cast<unsigned char>(c)) || alt.empty()) throw DataError(name + ": bad substitution");
    }
  }

  void validate(const GlyphAtlas& a) const {
    validate();
    if (!atlas.empty() && atlas != a.id) throw DataError(name + ": needs atlas " + atlas + ", got " + a.id);
    for (const auto& [c, alt] : substitute) {
      if (!a.contains(alt)) throw DataError(name + ": substituted glyph '" + alt + "' missing from atlas " + a.id);
    }
  }
};

/// One class per line: name, then tab-separated directives
/// (capitals_only, shift_up=<glyphs>, shift_down=<glyphs>,
/// substitute=<c>:<glyph>[,<c>:<glyph>...], atlas=<id>).
inline std::string format_class_spec(const SyntheticClassSpec& s) {
  std::string out = s.name;
  if (s.capitals_only) out += "\tcapitals_only";
  if (!s.shift_up.empty()) out += "\tshift_up=" + s.shift_up;
  if (!s.shift_down.empty()) out += "\tshift_down=" + s.shift_down;
  if (!s.substitute.empty()) {
    out += "\tsubstitute=";
    bool first = true;
    for (const auto& [c, alt] : s.substitute) {
      if (!first) out += ',';
      first = false;
      out += c;
      out += ':' + alt;
    }
  }
  if (!s.atlas.empty()) out += "\tatlas=" + s.atlas;
  return out;
}

inline SyntheticClassSpec parse_class_spec(const std::vector<std::string>& fields, int lineno) {
  auto fail = [&](const std::string& msg) -> DataError {
    return DataError("class spec line " + std::to_string(lineno) + ": " + msg);
  };
  if (fields.empty() || fields[0].empty()) throw fail("missing class name");
  SyntheticClassSpec s;
  s.name = fields[0];
  for (std::size_t i = 1; i < fields.size(); ++i) {
    const std::string& d = fields[i];
    const auto eq = d.find('=');
    const std::string key = d.substr(0, eq);
    const std::string val = eq == std::string::npos ? "" : d.substr(eq + 1);
    if (key == "capitals_only" && eq == std::string::npos) {
      s.capitals_only = true;
    } else if (key == "shift_up") {
      s.shift_up = val;
    } else if (key == "shift_down") {
      s.shift_down = val;
    } else if (key == "atlas") {
      s.atlas = val;
    } else if (key == "substitute") {
      std::istringstream in(val);
      std::string item;
      while (std::getline(in, item, ',')) {
        if (item.size() < 3 || item[1] != ':') throw fail("bad substitution '" + item + "'");
        s.substitute[item[0]] = item.substr(2);
      }
    } else {
      throw fail("unknown directive '" + d + "'");
    }
  }
  try {
    s.validate();
  } catch (const DataError& e) {
    throw fail(e.what());
  }
  return s;
}

inline std::vector<SyntheticClassSpec> read_class_specs(const std::filesystem::path& path) {
  std::vector<SyntheticClassSpec> specs;
  detail::for_each_data_line(path, [&](const std::vector<std::string>& f, int lineno) {
    specs.push_back(parse_class_spec(f, lineno));
  });
  return specs;
}

inline void write_class_specs(const std::vector<SyntheticClassSpec>& specs, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto& s : specs) out << format_class_spec(s) << '\n';
}

// ---------------------------------------------------------------------------
// Rendering
// ---------------------------------------------------------------------------

/// A rendered line of text: ink intensities, the coverage (alpha, 0..255)
/// and the mask of pixels with non-zero coverage.
struct TextLine {
  GrayImage text;
  ForegroundMask mask;
  GrayImage coverage;  // empty: alpha is 1 on the mask and 0 elsewhere
};

inline std::string apply_case(const std::string& text, const SyntheticClassSpec& spec) {
  std::string out = text;
  if (spec.capitals_only)
    for (auto& c : out) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return out;
}

/// Lays out `text` on a common baseline. The canvas height is fixed by the
/// atlas so that vertical shifts stay visible: the baseline sits
/// max_ascent + D rows from the top, with max_descent + D rows below it,
/// where D is the descender height.
inline TextLine render_text_line(const std::string& text, const SyntheticClassSpec& spec, const GlyphAtlas& atlas,
                                 std::uint8_t ink = 0) {
  if (text.empty()) throw DataError("render_text_line: empty text");
  const std::string chars = apply_case(text, spec);
  const int d = atlas.descender_height();
  const int baseline = atlas.max_ascent() + d;
  const int height = baseline + atlas.max_descent() + d;

  struct Placed {
    const Glyph* g;
    int x, y;
  };
  std::vector<Placed> placed;
  int pen = 0, width = 1;
  for (char c : chars) {
    if (c == ' ') {
      pen += atlas.space_advance();
      continue;
    }
    const Glyph& g = atlas.at(spec.glyph_key(c));
    const int y = baseline - g.baseline + spec.shift_of(c) * d;
    placed.push_back({&g, pen, y});
    width = std::max(width, pen + g.coverage.width());
    pen += g.advance;
  }
  width = std::max(width, pen);

  TextLine line{GrayImage(width, height, 255), ForegroundMask(width, height), GrayImage(width, height, 0)};
  for (const auto& p : placed) {
    const GrayImage& cov = p.g->coverage;
    for (int y = 0; y < cov.height(); ++y) {
      for (int x = 0; x < cov.width(); ++x) {
        const std::uint8_t a = cov.at(x, y);
        if (a == 0) continue;
        auto& dst = line.coverage.at(p.x + x, p.y + y);
        dst = std::max(dst, a);
      }
    }
  }
  for (std::size_t i = 0; i < line.coverage.size(); ++i) {
    if (line.coverage.pixels()[i] != 0) {
      line.mask.set(i, true);
      line.text.pixels()[i] = ink;
    }
  }
  return line;
}

/// Adds N(0, sigma^2) to every mask-true pixel (raster order), clamped.
inline GrayImage apply_fg_noise(const GrayImage& line, const ForegroundMask& mask, double sigma, RngStream& rng) {
  if (!mask.matches(line)) throw DataError("apply_fg_noise: mask does not match image");
  GrayImage out = line;
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (!mask[i]) continue;
    out.pixels()[i] = to_intensity(static_cast<double>(out.pixels()[i]) + rng.normal(0.0, sigma));
  }
  return out;
}

struct InkBox {
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;  // half-open
  bool empty() const { return x1 <= x0 || y1 <= y0; }
  int width() const { return x1 - x0; }
  int height() const { return y1 - y0; }
};

inline InkBox ink_box(const ForegroundMask& m) {
  InkBox b{m.width(), m.height(), 0, 0};
  for (int y = 0; y < m.height(); ++y) {
    for (int x = 0; x < m.width(); ++x) {
      if (!m.at(x, y)) continue;
      b.x0 = std::min(b.x0, x);
      b.y0 = std::min(b.y0, y);
      b.x1 = std::max(b.x1, x + 1);
      b.y1 = std::max(b.y1, y + 1);
    }
  }
  if (b.empty()) return {};
  return b;
}

/// Where each line's ink box landed on the page.
struct LinePlacement {
  int x = 0, y = 0;  // top-left of the ink box on the page
  InkBox box;        // ink box in line coordinates
};

/// Ink boxes placed top to bottom from (left, top) with `spacing` empty
/// rows between consecutive boxes. Lines without ink are skipped.
inline std::vector<LinePlacement> stack_lines(const std::vector<TextLine>& lines, int width, int height, int spacing,
                                              int left, int top) {
  if (spacing < 0) throw DataError("line spacing must be non-negative");
  std::vector<LinePlacement> out;
  int cursor = top;
  for (const auto& l : lines) {
    if (!l.mask.matches(l.text)) throw DataError("line mask does not match line image");
    const InkBox b = ink_box(l.mask);
    if (b.empty()) continue;
    if (!out.empty()) cursor += spacing;
    if (left < 0 || cursor < 0 || left + b.width() > width || cursor + b.height() > height) {
      throw DataError("lines overflow the " + std::to_string(width) + "x" + std::to_string(height) + " background");
    }
    out.push_back({left, cursor, b});
    cursor += b.height();
  }
  return out;
}

/// out = round(a*text + (1-a)*background) with a = coverage/255, computed
/// in integers.
inline std::uint8_t blend(std::uint8_t text, std::uint8_t bg, std::uint8_t coverage) {
  const int a = coverage;
  return static_cast<std::uint8_t>((2 * (a * text + (255 - a) * bg) + 255) / 510);
}

inline GrayImage composite_on_background(const std::vector<TextLine>& lines, const GrayImage& background, int spacing,
                                         int left = 0, int top = 0) {
  GrayImage out = background;
  const auto placements = stack_lines(lines, background.width(), background.height(), spacing, left, top);
  std::size_t k = 0;
  for (const auto& l : lines) {
    if (ink_box(l.mask).empty()) continue;
    const auto& p = placements[k++];
    const bool has_cov = l.coverage.size() == l.text.size() && l.coverage.size() > 0;
    for (int y = 0; y < p.box.height(); ++y) {
      for (int x = 0; x < p.box.width(); ++x) {
        const int sx = p.box.x0 + x, sy = p.box.y0 + y;
        const std::uint8_t a = has_cov ? l.coverage.at(sx, sy) : (l.mask.at(sx, sy) ? 255 : 0);
        if (a == 0) continue;
        auto& dst = out.at(p.x + x, p.y + y);
        dst = blend(l.text.at(sx, sy), dst, a);
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Corpus generation
// ---------------------------------------------------------------------------

struct SynthConfig {
  int classes = 27;
  int pages_per_class = 10;
  double fg_noise_sigma = 20.0;
  int line_spacing = 12;  // empty rows between line ink boxes
  int margin = 16;
  int ink = 40;
  std::uint64_t seed = 1;

  void validate() const {
    if (classes < 2) throw ConfigError("synth classes must be >= 2", "classes");
    if (pages_per_class < 1) throw ConfigError("pages_per_class must be >= 1", "pages_per_class");
    if (!(fg_noise_sigma >= 0)) throw ConfigError("fg_noise_sigma must be >= 0", "fg_noise_sigma");
    if (line_spacing < 0) throw ConfigError("line_spacing must be >= 0", "line_spacing");
    if (margin < 0) throw ConfigError("margin must be >= 0", "margin");
    if (ink < 0 || ink > 255) throw ConfigError("ink must be in [0,255]", "ink");
  }
};

/// Relative letter frequencies of English text (per mille, a-z).
inline constexpr std::array<int, 26> kLetterWeights = {82, 15, 28, 43, 127, 22, 20, 61, 70, 2,  8,  40, 24,
                                                       67, 75, 19, 1,  60, 63,  91, 28, 10, 24, 2,  20, 1};

inline char draw_letter(RngStream& rng) {
  static const int total = [] {
    int t = 0;
    for (int w : kLetterWeights) t += w;
    return t;
  }();
  auto r = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(total)));
  for (int i = 0; i < 26; ++i) {
    if (r < kLetterWeights[static_cast<std::size_t>(i)]) return static_cast<char>('a' + i);
    r -= kLetterWeights[static_cast<std::size_t>(i)];
  }
  return 'z';
}

/// Random Latin-letter text: words of 2-10 letters drawn with English
/// letter frequencies, each capitalized with probability 1/6, until the
/// line would exceed `max_width` pixels.
inline std::string random_line_text(RngStream& rng, const SyntheticClassSpec& spec, const GlyphAtlas& atlas,
                                    int max_width) {
  auto advance = [&](char c) {
    if (c == ' ') return atlas.space_advance();
    if (spec.capitals_only) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    return atlas.at(spec.glyph_key(c)).advance;
  };
  std::string text;
  int width = 0;
  for (int attempt = 0;; ++attempt) {
    const int len = static_cast<int>(rng.uniform_int(2, 10));
    std::string word;
    int w = text.empty() ? 0 : advance(' ');
    for (int i = 0; i < len; ++i) {
      const bool upper = rng.uniform_int(6) == 0;
      const char c = draw_letter(rng);
      word += upper ? static_cast<char>(std::toupper(static_cast<unsigned char>(c))) : c;
      w += advance(word.back());
    }
    if (width + w > max_width) {
      if (!text.empty()) return text;
      // Redraw rather than fail when one long word overflows a narrow page.
      if (attempt >= 100) throw DataError("page too narrow for a single word");
      continue;
    }
    if (!text.empty()) text += ' ';
    text += word;
    width += w;
  }
}

/// Renders page `page` of class `label`: lines of random text, noised and
/// composited on a background chosen by the page's rng stream.
inline GrayImage render_synthetic_page(const SynthConfig& cfg, const SyntheticClassSpec& spec, const GlyphAtlas& atlas,
                                       const std::vector<GrayImage>& backgrounds, RngStream rng) {
  if (backgrounds.empty()) throw DataError("synthgen: no background pages");
  const GrayImage& bg = backgrounds[rng.uniform_int(backgrounds.size())];
  const int usable_w = bg.width() - 2 * cfg.margin;
  const int usable_h = bg.height() - 2 * cfg.margin;
  const int line_h = atlas.max_ascent() + atlas.max_descent() + 2 * atlas.descender_height();
  if (usable_w <= 0 || usable_h < line_h) throw DataError("synthgen: background too small");
  std::vector<TextLine> lines;
  int used = 0;
  for (;;) {
    TextLine l = render_text_line(random_line_text(rng, spec, atlas, usable_w), spec, atlas,
                                  static_cast<std::uint8_t>(cfg.ink));
    const InkBox b = ink_box(l.mask);
    const int need = (lines.empty() ? 0 : cfg.line_spacing) + b.height();
    if (used + need > usable_h) break;
    used += need;
    l.text = apply_fg_noise(l.text, l.mask, cfg.fg_noise_sigma, rng);
    lines.push_back(std::move(l));
  }
  return composite_on_background(lines, bg, cfg.line_spacing, cfg.margin, cfg.margin);
}

/// All synthetic pages, class-major. Page (k, i) uses the rng stream
/// seed -> split(k) -> split(i), so pages can be generated independently.
inline std::vector<SourceImage> generate_pages(const SynthConfig& cfg, const std::vector<SyntheticClassSpec>& specs,
                                               const GlyphAtlas& atlas, const std::vector<GrayImage>& backgrounds,
                                               int first_page = 0) {
  cfg.validate();
  if (static_cast<int>(specs.size()) != cfg.classes) {
    throw DataError("synthgen: " + std::to_string(specs.size()) + " class specs for " + std::to_string(cfg.classes) +
                    " classes");
  }
  if (backgrounds.empty()) throw DataError("synthgen: no background pages");
  for (const auto& s : specs) s.validate(atlas);
  const RngStream root(cfg.seed);
  std::vector<SourceImage> pages;
  for (int k = 0; k < cfg.classes; ++k) {
    const RngStream class_rng = root.split(static_cast<std::uint64_t>(k));
    for (int i = first_page; i < first_page + cfg.pages_per_class; ++i) {
      pages.push_back({render_synthetic_page(cfg, specs[static_cast<std::size_t>(k)], atlas, backgrounds,
                                             class_rng.split(static_cast<std::uint64_t>(i))),
                       k, "synth/" + specs[static_cast<std::size_t>(k)].name + "/" + std::to_string(i)});
    }
  }
  return pages;
}

inline std::vector<std::string> class_names(const std::vector<SyntheticClassSpec>& specs) {
  std::vector<std::string> names;
  for (const auto& s : specs) names.push_back(s.name);
  return names;
}

/// Synthetic pages cut into training patches with background discard.
inline PatchDataset generate_corpus(const SynthConfig& cfg, const std::vector<SyntheticClassSpec>& specs,
                                    const GlyphAtlas& atlas, const std::vector<GrayImage>& backgrounds,
                                    int first_page = 0) {
  return build_dataset(generate_pages(cfg, specs, atlas, backgrounds, first_page), class_names(specs), 1.0,
                       kTrainStride, true);
}

// ---------------------------------------------------------------------------
// Backgrounds and default specs
// ---------------------------------------------------------------------------

/// Procedural parchment-like page: a smooth low-frequency tone field
/// (bilinear value noise) plus fine grain and a few faint stains. Values
/// stay well above the background-patch threshold.
inline GrayImage parchment_background(int width, int height, RngStream rng) {
  const double base = 200.0 + 20.0 * rng.uniform();
  constexpr int kCell = 64;
  const int gw = width / kCell + 2, gh = height / kCell + 2;
  std::vector<double> grid(static_cast<std::size_t>(gw * gh));
  for (auto& g : grid) g = rng.normal(0.0, 6.0);
  struct Stain {
    double x, y, r, depth;
  };
  std::vector<Stain> stains(rng.uniform_int(0, 3));
  for (auto& s : stains) {
    s = {rng.uniform() * width, rng.uniform() * height, 20.0 + 60.0 * rng.uniform(), 8.0 + 12.0 * rng.uniform()};
  }
  GrayImage out(width, height);
  for (int y = 0; y < height; ++y) {
    const double fy = static_cast<double>(y) / kCell;
    const int iy = static_cast<int>(fy);
    const double ty = fy - iy;
    for (int x = 0; x < width; ++x) {
      const double fx = static_cast<double>(x) / kCell;
      const int ix = static_cast<int>(fx);
      const double tx = fx - ix;
      auto g = [&](int a, int b) { return grid[static_cast<std::size_t>(b * gw + a)]; };
      const double smooth = (1 - ty) * ((1 - tx) * g(ix, iy) + tx * g(ix + 1, iy)) +
                            ty * ((1 - tx) * g(ix, iy + 1) + tx * g(ix + 1, iy + 1));
      double v = base + smooth + rng.normal(0.0, 3.0);
      for (const auto& s : stains) {
        const double d2 = ((x - s.x) * (x - s.x) + (y - s.y) * (y - s.y)) / (s.r * s.r);
        if (d2 < 4.0) v -= s.depth * std::exp(-d2);
      }
      out.at(x, y) = to_intensity(std::clamp(v, 150.0, 245.0));
    }
  }
  return out;
}

inline std::vector<GrayImage> parchment_backgrounds(int count, int width, int height, std::uint64_t seed) {
  std::vector<GrayImage> out;
  const RngStream root = RngStream(seed).split(0xbac6);
  for (int i = 0; i < count; ++i) out.push_back(parchment_background(width, height, root.split(i)));
  return out;
}

/// True when some letter renders differently under the two specs.
inline bool renders_differ(const SyntheticClassSpec& a, const SyntheticClassSpec& b, const GlyphAtlas& atlas) {
  for (char c = 'A'; c <= 'z'; ++c) {
    if (!std::isalpha(static_cast<unsigned char>(c))) continue;
    const std::string s(1, c);
    const TextLine la = render_text_line(s, a, atlas), lb = render_text_line(s, b, atlas);
    if (la.coverage != lb.coverage) return true;
  }
  return false;
}

/// Identity class plus `count - 1` random combinations of capitals_only,
/// glyph shifts and substitutions, each distinguishable from every other.
inline std::vector<SyntheticClassSpec> default_class_specs(const GlyphAtlas& atlas, int count = 27,
                                                           std::uint64_t seed = 27) {
  // Shift candidates are limited to letters common enough to show up on
  // every page.
  static const std::string kAscending = "abcdefhilmnorstuw";
  static const std::string kDescending = "gpy";
  static const std::string kCapsPlain = "ABCDEFGHILMNOPRSTUWY";
  static const std::vector<std::pair<char, std::string>> kAlternates = {
      {'a', "single_a"}, {'s', "long_s"}, {'A', "uncial_A"}};

  RngStream rng(seed);
  auto pick = [&](const std::string& pool, int n) {
    std::string p = pool;
    rng.shuffle(std::span<char>(p));
    p.resize(static_cast<std::size_t>(n));
    std::sort(p.begin(), p.end());
    return p;
  };

  std::vector<SyntheticClassSpec> specs;
  specs.emplace_back("identity");
  for (int guard = 0; static_cast<int>(specs.size()) < count; ++guard) {
    if (guard > 100000) throw DataError("default_class_specs: could not find enough distinct classes");
    SyntheticClassSpec s;
    s.capitals_only = rng.uniform() < 0.25;
    if (rng.coin()) s.shift_down = pick(s.capitals_only ? kCapsPlain : kAscending, 1 + static_cast<int>(rng.uniform_int(3)));
    if (!s.capitals_only && rng.coin()) s.shift_up = pick(kDescending, 1 + static_cast<int>(rng.uniform_int(2)));
    if (rng.coin()) {
      for (const auto& [c, alt] : kAlternates)
        if (rng.coin() && atlas.contains(alt)) s.substitute[c] = alt;
    }
    if (s.capitals_only) std::erase_if(s.substitute, [](const auto& kv) { return std::islower(kv.first) != 0; });
    const bool distinct = std::all_of(specs.begin(), specs.end(),
                                      [&](const SyntheticClassSpec& o) { return renders_differ(s, o, atlas); });
    if (!distinct) continue;
    s.name = "synth" + std::to_string(specs.size());
    specs.push_back(std::move(s));
  }
  return specs;
}

}  // namespace fontcnn
