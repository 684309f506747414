#include <gtest/gtest.h>

#include <random>

#include "fontcnn/segment.hpp"
#include "helpers.hpp"
#include "otsu_oracle.hpp"

using namespace fontcnn;

namespace {

GrayImage from_counts(std::initializer_list<std::pair<int, int>> counts) {
  std::vector<std::uint8_t> px;
  for (auto [v, n] : counts) px.insert(px.end(), static_cast<std::size_t>(n), static_cast<std::uint8_t>(v));
  return GrayImage(static_cast<int>(px.size()), 1, px);
}

}  // namespace

TEST(Otsu, TwoLevelExtremesPicksSmallestTie) {
  EXPECT_EQ(otsu_threshold(from_counts({{0, 50}, {255, 50}})), 0);
}

TEST(Otsu, BimodalPicksLowerMode) {
  const GrayImage img = from_counts({{20, 100}, {200, 100}});
  EXPECT_EQ(testutil::otsu_oracle(img), 20);
  EXPECT_EQ(otsu_threshold(img), 20);
}

TEST(Otsu, ConstantImageGivesZeroAndEmptyMask) {
  const GrayImage img(8, 8, 99);
  EXPECT_EQ(otsu_threshold(img), 0);
  EXPECT_EQ(foreground_mask(img).count(), 0u);
  EXPECT_EQ(foreground_mask(GrayImage(4, 4, 0)).count(), 0u);
}

TEST(Otsu, MatchesOracleOnRandomImages) {
  std::mt19937_64 gen(42);
  for (int i = 0; i < 200; ++i) {
    const int lo = static_cast<int>(gen() % 200);
    const int hi = lo + static_cast<int>(gen() % (256 - lo));
    const GrayImage img = testutil::random_image(gen, 1 + static_cast<int>(gen() % 40), 1 + static_cast<int>(gen() % 40), lo, hi);
    ASSERT_EQ(otsu_threshold(img), testutil::otsu_oracle(img)) << "image " << i;
  }
}

TEST(Otsu, MatchesOracleOnSparseHistograms) {
  // Few distinct values make exact ties common.
  std::mt19937_64 gen(7);
  for (int i = 0; i < 200; ++i) {
    const int k = 2 + static_cast<int>(gen() % 4);
    std::vector<std::uint8_t> levels;
    for (int j = 0; j < k; ++j) levels.push_back(static_cast<std::uint8_t>(gen() % 256));
    GrayImage img(16, 16);
    for (auto& p : img.pixels()) p = levels[gen() % levels.size()];
    ASSERT_EQ(otsu_threshold(img), testutil::otsu_oracle(img)) << "image " << i;
  }
}

TEST(Mask, CheckerboardMarksDarkSquares) {
  GrayImage img(8, 8);
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) img.at(x, y) = (x + y) % 2 ? 255 : 0;
  const ForegroundMask m = foreground_mask(img);
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) EXPECT_EQ(m.at(x, y), img.at(x, y) == 0);
}

TEST(Mask, FollowsThresholdRulePerPixel) {
  std::mt19937_64 gen(9);
  for (int i = 0; i < 20; ++i) {
    GrayImage img = testutil::random_image(gen, 30, 20);
    GrayImage inv = img;
    for (auto& p : inv.pixels()) p = static_cast<std::uint8_t>(255 - p);
    for (const auto* im : {&img, &inv}) {
      const int t = otsu_threshold(*im);
      const ForegroundMask m = foreground_mask(*im);
      for (std::size_t k = 0; k < im->size(); ++k) ASSERT_EQ(m[k], im->pixels()[k] <= t);
    }
  }
}

TEST(Mask, CountNonIncreasingUnderBrighteningAtFixedThreshold) {
  std::mt19937_64 gen(10);
  const GrayImage img = testutil::random_image(gen, 32, 32);
  const int t = otsu_threshold(img);
  std::size_t prev = img.size() + 1;
  for (int shift = 0; shift < 100; shift += 5) {
    std::size_t n = 0;
    for (auto p : img.pixels()) n += std::min(255, p + shift) <= t;
    EXPECT_LE(n, prev);
    prev = n;
  }
}

TEST(Mask, PgmRoundTrip) {
  std::mt19937_64 gen(4);
  const ForegroundMask m = foreground_mask(testutil::random_image(gen, 12, 7));
  const GrayImage img = mask_to_image(m);
  for (auto p : img.pixels()) EXPECT_TRUE(p == 0 || p == 255);
  EXPECT_EQ(image_to_mask(img), m);
}

TEST(Background, SinglePatchUnchanged) {
  std::mt19937_64 gen(1);
  const GrayImage p = testutil::random_image(gen, 5, 4);
  EXPECT_EQ(estimate_background(std::vector<GrayImage>{p}, 5, 4).image, p);
}

TEST(Background, TwoConstantsAverage) {
  const std::vector<GrayImage> ps{GrayImage(3, 3, 100), GrayImage(3, 3, 200)};
  EXPECT_EQ(estimate_background(ps, 3, 3).image, GrayImage(3, 3, 150));
}

TEST(Background, MatchesResummationAndStaysInRange) {
  std::mt19937_64 gen(8);
  std::vector<GrayImage> ps;
  for (int k = 0; k < 7; ++k) ps.push_back(testutil::random_image(gen, 9, 6, 150, 255));
  const GrayImage est = estimate_background(ps, 9, 6).image;
  for (std::size_t i = 0; i < est.size(); ++i) {
    long sum = 0;
    int lo = 255, hi = 0;
    for (const auto& p : ps) {
      sum += p.pixels()[i];
      lo = std::min<int>(lo, p.pixels()[i]);
      hi = std::max<int>(hi, p.pixels()[i]);
    }
    EXPECT_EQ(est.pixels()[i], to_intensity(static_cast<double>(sum) / 7.0));
    EXPECT_GE(est.pixels()[i], lo);
    EXPECT_LE(est.pixels()[i], hi);
  }
}

TEST(Background, Errors) {
  EXPECT_THROW(estimate_background({}, 3, 3), DataError);
  const std::vector<GrayImage> ps{GrayImage(3, 3, 1), GrayImage(4, 3, 1)};
  EXPECT_THROW(estimate_background(ps, 3, 3), DataError);
}

TEST(TextFree, FractionThreshold) {
  GrayImage img(100, 100, 230);
  EXPECT_TRUE(is_text_free(img));
  for (int i = 0; i < 40; ++i) img.pixels()[static_cast<std::size_t>(i)] = 10;  // 0.4%
  EXPECT_TRUE(is_text_free(img));
  for (int i = 40; i < 60; ++i) img.pixels()[static_cast<std::size_t>(i)] = 10;  // 0.6%
  EXPECT_FALSE(is_text_free(img));
}
