#include <gtest/gtest.h>

#include <random>
#include <string>

#include "fontcnn/raster.hpp"
#include "helpers.hpp"

using namespace fontcnn;

namespace {

std::vector<std::uint8_t> bytes_of(const std::string& s) { return {s.begin(), s.end()}; }

// Direct 2-D coverage reference for scale p/q: output pixel (i,j) covers
// [i*q/p, (i+1)*q/p) in both axes; coverage is integrated per source
// pixel in units of 1/p and the mean rounded half up in integers.
GrayImage area_resize_reference(const GrayImage& img, long p, long q) {
  const int ow = static_cast<int>(img.width() * p / q);
  const int oh = static_cast<int>(img.height() * p / q);
  GrayImage out(ow, oh);
  auto overlap = [](long a0, long a1, long b0, long b1) { return std::max(0L, std::min(a1, b1) - std::max(a0, b0)); };
  for (int oy = 0; oy < oh; ++oy) {
    for (int ox = 0; ox < ow; ++ox) {
      long sum = 0, area = 0;
      for (int y = 0; y < img.height(); ++y) {
        const long wy = overlap(oy * q, (oy + 1) * q, y * p, (y + 1) * p);
        for (int x = 0; x < img.width(); ++x) {
          const long wx = overlap(ox * q, (ox + 1) * q, x * p, (x + 1) * p);
          sum += wx * wy * img.at(x, y);
          area += wx * wy;
        }
      }
      out.at(ox, oy) = static_cast<std::uint8_t>((2 * sum + area) / (2 * area));
    }
  }
  return out;
}

}  // namespace

TEST(Intensity, RoundsHalfAwayFromZeroAndClamps) {
  EXPECT_EQ(to_intensity(127.5), 128);
  EXPECT_EQ(to_intensity(127.49), 127);
  EXPECT_EQ(to_intensity(-0.5), 0);
  EXPECT_EQ(to_intensity(-40.0), 0);
  EXPECT_EQ(to_intensity(255.4), 255);
  EXPECT_EQ(to_intensity(900.0), 255);
}

TEST(GrayImage, RejectsBadDimensions) {
  EXPECT_THROW(GrayImage(0, 3), DataError);
  EXPECT_THROW(GrayImage(2, 2, std::vector<std::uint8_t>{1, 2, 3}), DataError);
}

TEST(Pgm, DecodesTwoByTwo) {
  auto b = bytes_of("P5\n2 2\n255\n");
  b.insert(b.end(), {0, 255, 128, 7});
  const GrayImage img = decode_pgm(b);
  EXPECT_EQ(img, GrayImage(2, 2, std::vector<std::uint8_t>{0, 255, 128, 7}));
}

TEST(Pgm, EncodeHeaderIsCanonical) {
  const auto one = encode_pgm(GrayImage(1, 1, 42));
  EXPECT_EQ(one.size(), 12u);  // "P5\n1 1\n255\n" + 1 byte
  EXPECT_EQ(one.back(), 42);
  const auto six = encode_pgm(GrayImage(3, 2, 9));
  EXPECT_EQ(std::string(six.begin(), six.begin() + 11), "P5\n3 2\n255\n");
}

TEST(Pgm, AcceptsCommentsAndArbitraryWhitespace) {
  auto b = bytes_of("P5 # a comment\n# another\n 2\t1 \n255\n");
  b.insert(b.end(), {5, 6});
  EXPECT_EQ(decode_pgm(b), GrayImage(2, 1, std::vector<std::uint8_t>{5, 6}));
}

TEST(Pgm, RejectsBadMagic) {
  auto b = bytes_of("P2\n1 1\n255\n0");
  try {
    decode_pgm(b);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.offset(), 0u);
  }
}

TEST(Pgm, RejectsWideMaxval) {
  auto b = bytes_of("P5\n1 1\n65535\n");
  b.insert(b.end(), {0, 0});
  try {
    decode_pgm(b);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("unsupported maxval"), std::string::npos);
    EXPECT_EQ(e.offset(), 7u);
  }
}

TEST(Pgm, RejectsTruncatedPayload) {
  auto b = bytes_of("P5\n3 3\n255\n");
  b.insert(b.end(), {1, 2, 3});
  try {
    decode_pgm(b);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("truncated"), std::string::npos);
    EXPECT_EQ(e.offset(), 14u);  // where the data ran out
  }
}

TEST(Pgm, RejectsMissingDimensions) {
  EXPECT_THROW(decode_pgm(bytes_of("P5\nxx 3\n255\n")), ParseError);
  EXPECT_THROW(decode_pgm(bytes_of("P5\n3 3\n255")), ParseError);
}

TEST(Pgm, FileRoundTripIsByteIdentical) {
  testutil::TempDir dir;
  std::mt19937_64 gen(3);
  for (int i = 0; i < 10; ++i) {
    const GrayImage img = testutil::random_image(gen, 1 + i * 7, 1 + i * 3);
    save_pgm(img, dir / "a.pgm");
    EXPECT_EQ(load_pgm(dir / "a.pgm"), img);
    const auto bytes = read_file_bytes(dir / "a.pgm");
    save_pgm(load_pgm(dir / "a.pgm"), dir / "b.pgm");
    EXPECT_EQ(read_file_bytes(dir / "b.pgm"), bytes);
  }
}

TEST(Pgm, MissingFileIsIoError) { EXPECT_THROW(load_pgm("/nonexistent/x.pgm"), IoError); }

TEST(Resize, ScaleOneIsCopy) {
  std::mt19937_64 gen(1);
  const GrayImage img = testutil::random_image(gen, 13, 9);
  EXPECT_EQ(resize_scale(img, 1.0), img);
}

TEST(Resize, HalfOfTwoByTwo) {
  const GrayImage img(2, 2, std::vector<std::uint8_t>{0, 0, 255, 255});
  EXPECT_EQ(resize_scale(img, 0.5), GrayImage(1, 1, 128));
}

TEST(Resize, ConstantImagesStayConstant) {
  for (double s : {0.5, 0.3, 0.37, 0.9}) {
    const GrayImage out = resize_scale(GrayImage(40, 31, 7), s);
    for (auto p : out.pixels()) ASSERT_EQ(p, 7);
  }
  EXPECT_EQ(resize_scale(GrayImage(4, 4, 7), 0.5), GrayImage(2, 2, 7));
}

TEST(Resize, OutputDimensionsFloor) {
  const GrayImage out = resize_scale(GrayImage(100, 51, 1), 0.3);
  EXPECT_EQ(out.width(), 30);
  EXPECT_EQ(out.height(), 15);
}

TEST(Resize, MatchesCoverageReference) {
  std::mt19937_64 gen(11);
  const std::pair<long, long> scales[] = {{1, 2}, {1, 4}, {3, 10}, {7, 10}, {9, 20}, {2, 3}, {13, 17}};
  for (auto [p, q] : scales) {
    for (int rep = 0; rep < 5; ++rep) {
      const GrayImage img = testutil::random_image(gen, 37, 23);
      const double s = static_cast<double>(p) / static_cast<double>(q);
      ASSERT_EQ(resize_scale(img, s), area_resize_reference(img, p, q)) << "scale " << p << "/" << q;
    }
  }
}

TEST(Resize, MeanPreservedForIntegerFootprints) {
  std::mt19937_64 gen(5);
  for (int k : {2, 4, 5}) {
    const GrayImage img = testutil::random_image(gen, 20 * k, 10 * k);
    EXPECT_NEAR(mean_intensity(resize_scale(img, 1.0 / k)), mean_intensity(img), 1.0);
  }
}

TEST(Resize, RejectsBadScale) {
  const GrayImage img(4, 4);
  EXPECT_THROW(resize_scale(img, 0.0), DataError);
  EXPECT_THROW(resize_scale(img, 1.5), DataError);
  EXPECT_THROW(resize_scale(img, 0.1), DataError);  // floor(0.4) == 0
}

TEST(Crop, CopiesSubRectangle) {
  std::mt19937_64 gen(2);
  const GrayImage img = testutil::random_image(gen, 10, 8);
  const GrayImage c = crop(img, 3, 2, 4, 5);
  for (int y = 0; y < 5; ++y)
    for (int x = 0; x < 4; ++x) ASSERT_EQ(c.at(x, y), img.at(x + 3, y + 2));
  EXPECT_THROW(crop(img, 7, 0, 4, 1), DataError);
}

TEST(Pad, CentersWithExtraRowBelow) {
  const GrayImage img(3, 3, 0);
  const GrayImage p = pad_to_min(img, 6, 6);
  EXPECT_EQ(p.width(), 6);
  EXPECT_EQ(p.height(), 6);
  // 3 extra columns: 1 left, 2 right; same vertically.
  EXPECT_EQ(p.at(0, 1), 255);
  EXPECT_EQ(p.at(1, 1), 0);
  EXPECT_EQ(p.at(3, 3), 0);
  EXPECT_EQ(p.at(4, 3), 255);
  EXPECT_EQ(p.at(1, 4), 255);
}
