#include <gtest/gtest.h>

#include <cmath>

#include "bdlab/error.hpp"
#include "bdlab/image_io.hpp"
#include "bdlab/imaging.hpp"
#include "support.hpp"

namespace bdlab {
namespace {

using testing::random_image;

TEST(Clip, ClampsAndRoundsHalfAwayFromZero) {
  FloatImage f(Shape{1, 4, 1});
  f.pixels = {267.0, -3.2, 127.5, -0.5};
  const Image out = clip(f);
  EXPECT_EQ(out.pixels(), (std::vector<std::uint8_t>{255, 0, 128, 0}));
  EXPECT_EQ(clip_value(0.49999), 0);
  EXPECT_EQ(clip_value(254.5), 255);
  EXPECT_EQ(clip_value(2.5), 3);
  EXPECT_EQ(clip_value(std::nan("")), 0);
  EXPECT_EQ(clip_value(INFINITY), 255);
  EXPECT_EQ(clip_value(-INFINITY), 0);
}

TEST(Clip, IdempotentAndAlwaysInRange) {
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    FloatImage f(Shape{5, 7, 3});
    for (auto& v : f.pixels) v = rng.uniform(-400.0, 700.0);
    const Image once = clip(f);
    EXPECT_EQ(once.shape(), f.shape);
    EXPECT_EQ(once.pixels().size(), f.shape.size());
    EXPECT_EQ(clip(to_float(once)), once);
  }
}

TEST(UniformNoise, DegenerateIntervalIsZero) {
  const NoiseField n = uniform_noise(Shape{3, 3, 3}, 0.0, 0.0, Rng(1));
  for (double v : n.values) EXPECT_EQ(v, 0.0);
}

TEST(UniformNoise, SameSeedSameField) {
  const auto a = uniform_noise(Shape{8, 8, 3}, -5, 5, Rng(42));
  const auto b = uniform_noise(Shape{8, 8, 3}, -5, 5, Rng(42));
  EXPECT_EQ(a.values, b.values);
  const auto c = uniform_noise(Shape{8, 8, 3}, -5, 5, Rng(43));
  EXPECT_NE(a.values, c.values);
}

TEST(UniformNoise, LargeSampleStatistics) {
  const auto n = uniform_noise(Shape{1000, 1000, 1}, -5, 5, Rng(7));
  double sum = 0.0;
  for (double v : n.values) {
    ASSERT_GE(v, -5.0);
    ASSERT_LE(v, 5.0);
    sum += v;
  }
  EXPECT_NEAR(sum / static_cast<double>(n.values.size()), 0.0, 0.05);
}

TEST(UniformNoise, RejectsInvertedRange) {
  EXPECT_BDLAB_ERROR(uniform_noise(Shape{2, 2, 1}, 1.0, -1.0, Rng(1)), ErrorCode::invalid_range);
}

TEST(ResizeNearest, IdentityAtSameSize) {
  const Image img = random_image(Shape{6, 9, 3}, Rng(3));
  EXPECT_EQ(resize_nearest(img, 6, 9), img);
}

TEST(ResizeNearest, UpscaleRepeatsBlocks) {
  const Image src(Shape{2, 2, 1}, std::vector<std::uint8_t>{1, 2, 3, 4});
  const Image out = resize_nearest(src, 4, 4);
  const std::vector<std::uint8_t> want{1, 1, 2, 2, 1, 1, 2, 2, 3, 3, 4, 4, 3, 3, 4, 4};
  EXPECT_EQ(out.pixels(), want);
}

TEST(ResizeNearest, MatchesIndexFormula) {
  const Image src = random_image(Shape{7, 11, 3}, Rng(5));
  for (auto [h, w] : {std::pair{3, 4}, {13, 5}, {7, 22}, {1, 1}}) {
    const Image out = resize_nearest(src, h, w);
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j)
        for (int c = 0; c < 3; ++c) ASSERT_EQ(out.at(i, j, c), src.at(i * 7 / h, j * 11 / w, c));
  }
}

TEST(ResizeNearest, MaskStaysBoolean) {
  Mask m(5, 5);
  m.set(1, 1, true);
  m.set(3, 4, true);
  const Mask out = resize_nearest(m, 9, 13);
  for (auto b : out.bits) EXPECT_TRUE(b == 0 || b == 1);
  EXPECT_BDLAB_ERROR(resize_nearest(m, 0, 3), ErrorCode::invalid_size);
}

TEST(PlaceAt, FullCanvasCoversEverything) {
  const Image patch = random_image(Shape{4, 5, 3}, Rng(1));
  const Placement p = place_at(Shape{4, 5, 3}, patch, {0, 0});
  EXPECT_TRUE(p.coverage.all());
  EXPECT_EQ(p.overlay, patch);
}

TEST(PlaceAt, SinglePixel) {
  const Image patch(Shape{1, 1, 1}, 200);
  const Placement p = place_at(Shape{5, 5, 1}, patch, {2, 3});
  EXPECT_EQ(p.coverage.count(), 1u);
  EXPECT_TRUE(p.coverage.at(2, 3));
  EXPECT_EQ(p.overlay.at(2, 3), 200);
  EXPECT_EQ(count_differing_values(p.overlay, Image(Shape{5, 5, 1})), 1u);
}

TEST(PlaceAt, OutOfBoundsIsPlacementError) {
  const Image patch(Shape{2, 3, 1}, 1);
  EXPECT_BDLAB_ERROR(place_at(Shape{5, 5, 1}, patch, {0, 3}), ErrorCode::placement);
  EXPECT_BDLAB_ERROR(place_at(Shape{5, 5, 1}, patch, {-1, 0}), ErrorCode::placement);
}

TEST(PlaceAt, CoverageCountMatchesPatchArea) {
  Rng rng(9);
  for (int t = 0; t < 20; ++t) {
    const int h = 1 + static_cast<int>(rng.below(6)), w = 1 + static_cast<int>(rng.below(6));
    const Image patch = random_image(Shape{h, w, 3}, rng.derive("p", t));
    const Anchor a{static_cast<int>(rng.below(static_cast<std::uint64_t>(10 - h + 1))), static_cast<int>(rng.below(static_cast<std::uint64_t>(10 - w + 1)))};
    EXPECT_EQ(place_at(Shape{10, 10, 3}, patch, a).coverage.count(), patch.size() / 3);
  }
}

TEST(Img1, ExactByteLayout) {
  const Image img(Shape{2, 3, 1}, std::vector<std::uint8_t>{1, 2, 3, 4, 5, 6});
  const auto bytes = encode_img1(img);
  const std::vector<std::uint8_t> want{'I', 'M', 'G', '1', 2, 0, 3, 0, 1, 0, 1, 2, 3, 4, 5, 6};
  EXPECT_EQ(bytes, want);
  EXPECT_EQ(decode_img1(bytes), img);
}

TEST(Img1, LittleEndianDimensions) {
  const Image img(Shape{300, 2, 3}, 7);
  const auto bytes = encode_img1(img);
  EXPECT_EQ(bytes[4], 300 & 0xFF);
  EXPECT_EQ(bytes[5], 300 >> 8);
  EXPECT_EQ(decode_img1(bytes), img);
}

TEST(Img1, RejectsTruncatedPayload) {
  auto bytes = encode_img1(Image(Shape{2, 2, 3}, 1));
  bytes.pop_back();
  EXPECT_BDLAB_ERROR(decode_img1(bytes), ErrorCode::io);
  bytes[0] = 'X';
  EXPECT_BDLAB_ERROR(decode_img1(bytes), ErrorCode::io);
}

TEST(Png, LosslessRoundTrip) {
  testing::TempDir dir("png");
  const Image rgb = random_image(Shape{9, 13, 3}, Rng(21));
  const Image grey = random_image(Shape{4, 6, 1}, Rng(22));
  write_image(dir.path() / "rgb.png", rgb);
  write_image(dir.path() / "grey.png", grey);
  write_image(dir.path() / "rgb.img", rgb);
  EXPECT_EQ(read_image(dir.path() / "rgb.png"), rgb);
  EXPECT_EQ(read_image(dir.path() / "grey.png"), grey);
  EXPECT_EQ(read_image(dir.path() / "rgb.img"), rgb);
}

TEST(Png, MaskConvention) {
  testing::TempDir dir("mask");
  Mask m(3, 4);
  m.set(0, 1, true);
  m.set(2, 3, true);
  write_mask_png(dir.path() / "m.png", m);
  const Image raw = read_png(dir.path() / "m.png");
  EXPECT_EQ(raw.at(0, 1), 255);
  EXPECT_EQ(raw.at(0, 0), 0);
  EXPECT_EQ(read_mask_png(dir.path() / "m.png"), m);
}

}  // namespace
}  // namespace bdlab
