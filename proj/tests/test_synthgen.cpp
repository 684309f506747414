#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "fontcnn/nn/train.hpp"
#include "fontcnn/synthgen.hpp"
#include "helpers.hpp"

using namespace fontcnn;

namespace {

const GlyphAtlas& atlas() {
  static const GlyphAtlas a = GlyphAtlas::load();
  return a;
}

SyntheticClassSpec identity() { return SyntheticClassSpec("identity"); }

SyntheticClassSpec long_s() {
  SyntheticClassSpec s{"long_s"};
  s.substitute['s'] = "long_s";
  return s;
}

SyntheticClassSpec caps() {
  SyntheticClassSpec s{"caps"};
  s.capitals_only = true;
  return s;
}

// Glyphs pasted at their pen positions, max-combined; written independently
// of the renderer's canvas bookkeeping.
GrayImage compose_reference(const std::string& text, int width, int height, int baseline) {
  GrayImage out(width, height, 0);
  int pen = 0;
  for (char c : text) {
    if (c == ' ') {
      pen += atlas().at("space").advance;
      continue;
    }
    const Glyph& g = atlas().at(std::string(1, c));
    for (int y = 0; y < g.coverage.height(); ++y)
      for (int x = 0; x < g.coverage.width(); ++x) {
        auto& d = out.at(pen + x, baseline - g.baseline + y);
        d = std::max(d, g.coverage.at(x, y));
      }
    pen += g.advance;
  }
  return out;
}

}  // namespace

TEST(Atlas, HasAllLettersAndAlternates) {
  for (char c = 'a'; c <= 'z'; ++c) {
    EXPECT_TRUE(atlas().contains(std::string(1, c)));
    EXPECT_TRUE(atlas().contains(std::string(1, static_cast<char>(c - 'a' + 'A'))));
  }
  for (const char* alt : {"single_a", "long_s", "uncial_A"}) EXPECT_TRUE(atlas().contains(alt));
  for (char c : std::string("gjpqy")) EXPECT_TRUE(atlas().at(std::string(1, c)).descender) << c;
  for (char c : std::string("aceosx")) EXPECT_FALSE(atlas().at(std::string(1, c)).descender) << c;
  const Glyph& g = atlas().at("g");
  EXPECT_GT(atlas().descender_height(), 0);
  EXPECT_GE(atlas().descender_height(), g.coverage.height() - g.baseline);
}

TEST(Atlas, MissingDirectoryIsIoError) {
  EXPECT_THROW(GlyphAtlas::load("/nonexistent/atlas"), IoError);
}

TEST(Render, CapitalsOnlyUpcasesBeforeLookup) {
  const auto a = render_text_line("AA", caps(), atlas());
  const auto b = render_text_line("aa", caps(), atlas());
  EXPECT_EQ(a.coverage, b.coverage);
  EXPECT_EQ(a.mask, b.mask);
  EXPECT_NE(render_text_line("aa", identity(), atlas()).coverage, b.coverage);
}

TEST(Render, IdentityEqualsRawComposition) {
  const std::string text = "Quick brown fox jumps";
  const auto line = render_text_line(text, identity(), atlas());
  const int baseline = atlas().max_ascent() + atlas().descender_height();
  EXPECT_EQ(line.coverage, compose_reference(text, line.coverage.width(), line.coverage.height(), baseline));
  for (std::size_t i = 0; i < line.coverage.size(); ++i) {
    EXPECT_EQ(line.mask[i], line.coverage.pixels()[i] != 0);
    EXPECT_EQ(line.text.pixels()[i], line.mask[i] ? 0 : 255);
  }
}

TEST(Render, ShiftDownTranslatesByDescenderHeight) {
  SyntheticClassSpec down{"down"};
  down.shift_down = "a";
  const auto base = ink_box(render_text_line("a", identity(), atlas()).mask);
  const auto moved = ink_box(render_text_line("a", down, atlas()).mask);
  const int d = atlas().descender_height();
  EXPECT_EQ(moved.y0, base.y0 + d);
  EXPECT_EQ(moved.y1, base.y1 + d);
  EXPECT_EQ(moved.x0, base.x0);
  EXPECT_EQ(moved.x1, base.x1);

  SyntheticClassSpec up{"up"};
  up.shift_up = "g";
  const auto g0 = ink_box(render_text_line("g", identity(), atlas()).mask);
  const auto g1 = ink_box(render_text_line("g", up, atlas()).mask);
  EXPECT_EQ(g1.y0, g0.y0 - d);
}

TEST(Render, ShiftOnlyAffectsListedGlyphs) {
  SyntheticClassSpec down{"down"};
  down.shift_down = "e";
  EXPECT_EQ(render_text_line("xyz", down, atlas()).coverage, render_text_line("xyz", identity(), atlas()).coverage);
}

TEST(Render, SubstitutionReplacesBitmap) {
  SyntheticClassSpec s{"sub"};
  s.substitute['a'] = "single_a";
  const auto line = render_text_line("a", s, atlas());
  const Glyph& alt = atlas().at("single_a");
  const auto box = ink_box(line.mask);
  ForegroundMask alt_mask(alt.coverage.width(), alt.coverage.height());
  for (std::size_t i = 0; i < alt.coverage.size(); ++i) alt_mask.set(i, alt.coverage.pixels()[i] != 0);
  const auto alt_box = ink_box(alt_mask);
  EXPECT_EQ(box.width(), alt_box.width());
  EXPECT_EQ(box.height(), alt_box.height());
  EXPECT_NE(line.coverage, render_text_line("a", identity(), atlas()).coverage);
}

TEST(Render, UnknownGlyphIsError) {
  SyntheticClassSpec s{"bad"};
  s.substitute['a'] = "no_such_glyph";
  EXPECT_THROW(render_text_line("abc", s, atlas()), DataError);
  EXPECT_THROW(s.validate(atlas()), DataError);
  EXPECT_THROW(render_text_line("ab1", identity(), atlas()), DataError);
  EXPECT_THROW(render_text_line("", identity(), atlas()), DataError);
}

TEST(Render, Deterministic) {
  const auto a = render_text_line("Hello world", caps(), atlas());
  const auto b = render_text_line("Hello world", caps(), atlas());
  EXPECT_EQ(a.coverage, b.coverage);
}

TEST(FgNoise, ZeroSigmaIsIdentity) {
  std::mt19937_64 gen(1);
  const auto img = testutil::random_image(gen, 40, 30, 0, 255);
  const auto mask = foreground_mask(img);
  RngStream r(3);
  EXPECT_EQ(apply_fg_noise(img, mask, 0.0, r), img);
}

TEST(FgNoise, BackgroundUntouchedAndVarianceMatches) {
  GrayImage img(200, 100, 128);
  ForegroundMask mask(200, 100);
  for (int y = 0; y < 100; ++y)
    for (int x = 0; x < 200; ++x) mask.set(x, y, (x + y) % 3 != 0);
  RngStream r(5);
  const auto out = apply_fg_noise(img, mask, 20.0, r);
  double sum = 0, sum2 = 0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < img.size(); ++i) {
    if (!mask[i]) {
      EXPECT_EQ(out.pixels()[i], 128);
      continue;
    }
    const double d = static_cast<double>(out.pixels()[i]) - 128.0;
    sum += d;
    sum2 += d * d;
    ++n;
  }
  ASSERT_GE(n, 10000u);
  const double mean = sum / static_cast<double>(n);
  const double var = (sum2 - static_cast<double>(n) * mean * mean) / static_cast<double>(n - 1);
  EXPECT_NEAR(var, 400.0, 40.0);
}

TEST(FgNoise, MaskMismatch) {
  RngStream r(1);
  EXPECT_THROW(apply_fg_noise(GrayImage(4, 4), ForegroundMask(4, 5), 1.0, r), DataError);
}

TEST(Composite, ZeroLinesLeavesBackground) {
  std::mt19937_64 gen(2);
  const auto bg = testutil::random_image(gen, 64, 64, 150, 250);
  EXPECT_EQ(composite_on_background({}, bg, 10), bg);
}

TEST(Composite, BlendEndpointsAndRounding) {
  std::mt19937_64 gen(3);
  const auto bg = testutil::random_image(gen, 300, 200, 150, 250);
  auto line = render_text_line("Ab gy", identity(), atlas(), 30);
  const auto out = composite_on_background({line}, bg, 0, 5, 7);
  const auto box = ink_box(line.mask);
  for (int y = 0; y < bg.height(); ++y) {
    for (int x = 0; x < bg.width(); ++x) {
      const int lx = x - 5 + box.x0, ly = y - 7 + box.y0;
      const bool inside = lx >= 0 && ly >= 0 && lx < line.mask.width() && ly < line.mask.height();
      if (!inside || !line.mask.at(lx, ly)) {
        ASSERT_EQ(out.at(x, y), bg.at(x, y));
        continue;
      }
      const double a = line.coverage.at(lx, ly) / 255.0;
      const double expect = std::floor(a * 30 + (1 - a) * bg.at(x, y) + 0.5);
      ASSERT_NEAR(out.at(x, y), expect, 1e-9) << x << "," << y;
      if (line.coverage.at(lx, ly) == 255) {
        ASSERT_EQ(out.at(x, y), 30);
      }
    }
  }
}

TEST(Composite, SpacingBetweenInkBoxes) {
  const GrayImage bg(400, 300, 220);
  std::vector<TextLine> lines = {render_text_line("hello", identity(), atlas()),
                                 render_text_line("gypsy", identity(), atlas()),
                                 render_text_line("ABC", identity(), atlas())};
  for (int spacing : {0, 5, 17}) {
    const auto out = composite_on_background(lines, bg, spacing, 10, 10);
    // Recover line extents from ink rows.
    std::vector<bool> ink(300, false);
    for (int y = 0; y < 300; ++y)
      for (int x = 0; x < 400; ++x) ink[static_cast<std::size_t>(y)] = ink[static_cast<std::size_t>(y)] || out.at(x, y) != 220;
    int y = 10;
    for (const auto& l : lines) {
      const int h = ink_box(l.mask).height();
      for (int r = y; r < y + h; ++r) EXPECT_TRUE(ink[static_cast<std::size_t>(r)] || r > y) << r;
      EXPECT_TRUE(ink[static_cast<std::size_t>(y)]);
      EXPECT_TRUE(ink[static_cast<std::size_t>(y + h - 1)]);
      for (int r = y + h; r < y + h + spacing; ++r) EXPECT_FALSE(ink[static_cast<std::size_t>(r)]) << r;
      y += h + spacing;
    }
  }
}

TEST(Composite, OverflowThrows) {
  const GrayImage bg(100, 40, 220);
  EXPECT_THROW(composite_on_background({render_text_line("wide text here", identity(), atlas())}, bg, 0), DataError);
  const GrayImage tall(400, 50, 220);
  std::vector<TextLine> lines(3, render_text_line("ab", identity(), atlas()));
  EXPECT_THROW(composite_on_background(lines, tall, 2), DataError);
}

TEST(ClassSpec, FileRoundTrip) {
  testutil::TempDir dir;
  const auto specs = default_class_specs(atlas(), 27, 27);
  write_class_specs(specs, dir / "specs.tsv");
  EXPECT_EQ(read_class_specs(dir / "specs.tsv"), specs);
}

TEST(ClassSpec, ParseErrors) {
  auto parse = [](std::vector<std::string> f) { return parse_class_spec(f, 4); };
  EXPECT_THROW(parse({"x", "bogus"}), DataError);
  EXPECT_THROW(parse({"x", "shift_up=ab", "shift_down=bc"}), DataError);
  EXPECT_THROW(parse({"x", "substitute=a-single_a"}), DataError);
  EXPECT_THROW(parse({""}), DataError);
  try {
    parse({"x", "bogus"});
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("line 4"), std::string::npos);
  }
  const auto s = parse({"x", "capitals_only", "substitute=a:single_a,s:long_s"});
  EXPECT_TRUE(s.capitals_only);
  EXPECT_EQ(s.substitute.size(), 2u);
}

TEST(ClassSpec, DefaultsArePairwiseDistinguishable) {
  const auto specs = default_class_specs(atlas());
  ASSERT_EQ(specs.size(), 27u);
  EXPECT_EQ(specs, default_class_specs(atlas()));
  for (std::size_t i = 0; i < specs.size(); ++i) {
    EXPECT_NO_THROW(specs[i].validate(atlas()));
    for (std::size_t j = i + 1; j < specs.size(); ++j)
      EXPECT_TRUE(renders_differ(specs[i], specs[j], atlas())) << i << " vs " << j;
  }
}

TEST(Corpus, DeterministicAndLabelled) {
  SynthConfig cfg;
  cfg.classes = 3;
  cfg.pages_per_class = 1;
  const auto specs = std::vector<SyntheticClassSpec>{identity(), caps(), long_s()};
  const auto bgs = parchment_backgrounds(2, 300, 300, 4);
  const auto a = generate_corpus(cfg, specs, atlas(), bgs);
  const auto b = generate_corpus(cfg, specs, atlas(), bgs);
  ASSERT_EQ(a.patches.size(), b.patches.size());
  ASSERT_FALSE(a.patches.empty());
  for (std::size_t i = 0; i < a.patches.size(); ++i) {
    EXPECT_EQ(a.patches[i].image, b.patches[i].image);
    EXPECT_GE(a.patches[i].label, 0);
    EXPECT_LT(a.patches[i].label, 3);
  }
  EXPECT_EQ(a.classes, (std::vector<std::string>{"identity", "caps", "long_s"}));
  cfg.seed = 2;
  EXPECT_NE(generate_corpus(cfg, specs, atlas(), bgs).patches[0].image, a.patches[0].image);
}

TEST(Corpus, PreconditionErrors) {
  SynthConfig cfg;
  cfg.classes = 2;
  cfg.pages_per_class = 1;
  const auto bgs = parchment_backgrounds(1, 300, 300, 4);
  EXPECT_THROW(generate_corpus(cfg, {identity()}, atlas(), bgs), DataError);
  EXPECT_THROW(generate_corpus(cfg, {identity(), caps()}, atlas(), {}), DataError);
  cfg.classes = 1;
  EXPECT_THROW(generate_corpus(cfg, {identity()}, atlas(), bgs), ConfigError);
}

TEST(Backgrounds, TextFreeAndDeterministic) {
  const auto a = parchment_backgrounds(3, 256, 256, 9);
  EXPECT_EQ(a, parchment_backgrounds(3, 256, 256, 9));
  for (const auto& bg : a) {
    EXPECT_TRUE(is_background_patch(bg));
    EXPECT_EQ(bg.width(), 256);
  }
}

// mini-plain trained on identity vs capitals_only pages must beat chance.
TEST(Corpus, CapitalsOnlyIsLearnable) {
  using namespace fontcnn::nn;
  SynthConfig cfg;
  cfg.classes = 2;
  cfg.pages_per_class = 4;
  const std::vector<SyntheticClassSpec> specs{identity(), caps()};
  const auto bgs = parchment_backgrounds(4, 340, 340, 1);
  const auto train_set = generate_corpus(cfg, specs, atlas(), bgs);
  auto val_set = generate_corpus(cfg, specs, atlas(), bgs, 100);
  val_set.split = Split::validation;

  Network<float> net(mini_plain(2));
  net.init(2);
  AugmentConfig aug;
  aug.seed = 5;
  TrainConfig tc;
  tc.lr = LrSchedule::parse("0:0.05");
  tc.batch_size = 16;
  tc.max_iterations = 200;
  tc.val_interval = 25;
  const auto r = train(net, train_set, val_set, aug, tc);
  EXPECT_GT(r.best_val_accuracy, 0.75);
}
