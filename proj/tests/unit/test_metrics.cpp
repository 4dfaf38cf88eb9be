#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "mimicforge/metrics.hpp"
#include "mimicforge/rng.hpp"

using namespace mimicforge;
using img::ImageBuf;

namespace {

ImageBuf noise(int h, int w, int c, std::uint64_t seed) {
  Rng rng(seed);
  ImageBuf im(h, w, c);
  for (auto& v : im.data()) v = static_cast<float>(uniform01(rng));
  return im;
}

}  // namespace

TEST(Ssim, SelfSimilarityIsOne) {
  const ImageBuf a = noise(32, 40, 3, 1);
  EXPECT_NEAR(metrics::ssim(a, a), 1.0, 1e-6);
}

TEST(Ssim, ConstantImagesMatchClosedForm) {
  const double c1 = 1e-4, c2 = 9e-4;
  const double want = (2 * 0.5 * 0.6 + c1) * c2 / ((0.25 + 0.36 + c1) * c2);
  EXPECT_NEAR(want, 0.9836, 1e-4);
  EXPECT_NEAR(metrics::ssim(ImageBuf(16, 16, 1, 0.5f), ImageBuf(16, 16, 1, 0.6f)), want, 1e-6);
}

TEST(Ssim, AntiCorrelatedBinaryIsNegative) {
  ImageBuf a(24, 24, 1);
  for (int y = 0; y < 24; ++y)
    for (int x = 0; x < 24; ++x) a.at(y, x) = (x + y) % 2 ? 1.0f : 0.0f;
  ImageBuf b = a;
  for (auto& v : b.data()) v = 1.0f - v;
  EXPECT_LT(metrics::ssim(a, b), 0.0);
}

TEST(Ssim, RgbIsComputedOnGray) {
  const ImageBuf a = noise(20, 20, 3, 2), b = noise(20, 20, 3, 3);
  EXPECT_DOUBLE_EQ(metrics::ssim(a, b), metrics::ssim(img::to_gray(a), img::to_gray(b)));
}

TEST(Ssim, RejectsBadInputs) {
  EXPECT_THROW(metrics::ssim(ImageBuf(16, 16, 1), ImageBuf(16, 17, 1)), InvalidInput);
  EXPECT_THROW(metrics::ssim(ImageBuf(8, 8, 1), ImageBuf(8, 8, 1)), InvalidInput);
  metrics::SsimParams p;
  p.window = 4;
  EXPECT_THROW(metrics::ssim(ImageBuf(16, 16, 1), ImageBuf(16, 16, 1), p), InvalidInput);
}

TEST(Psnr, Sentinels) {
  const ImageBuf a = noise(8, 8, 3, 4);
  EXPECT_EQ(metrics::psnr(a, a), metrics::kPsnrInfinity);
  EXPECT_TRUE(std::isinf(metrics::psnr(a, a)));
  EXPECT_EQ(metrics::psnr(ImageBuf(4, 4, 1, 0.0f), ImageBuf(4, 4, 1, 1.0f)), 0.0);
}

TEST(Psnr, TwentyDecibelsAtMseHundredth) {
  ImageBuf a(10, 10, 1, 0.0f), b(10, 10, 1, 0.0f);
  for (int x = 0; x < 10; ++x) b.at(0, x) = 1.0f;  // MSE 0.1
  EXPECT_DOUBLE_EQ(metrics::psnr(a, b), 10.0);
  ImageBuf c(1, 100, 1, 0.0f), d(1, 100, 1, 0.0f);
  d.at(0, 0) = 1.0f;  // MSE 0.01
  EXPECT_DOUBLE_EQ(metrics::mse(c, d), 0.01);
  EXPECT_DOUBLE_EQ(metrics::psnr(c, d), 20.0);
}

TEST(MaskedCrop, AllOnesIsWholeImage) {
  const ImageBuf im = noise(6, 7, 3, 5);
  EXPECT_EQ(metrics::masked_crop(im, ImageBuf(6, 7, 1, 1.0f)), im);
}

TEST(MaskedCrop, SinglePixel) {
  const ImageBuf im = noise(8, 8, 3, 6);
  ImageBuf m(8, 8, 1);
  m.at(3, 5) = 1.0f;
  const ImageBuf c = metrics::masked_crop(im, m);
  ASSERT_EQ(c.height(), 1);
  ASSERT_EQ(c.width(), 1);
  for (int ch = 0; ch < 3; ++ch) EXPECT_EQ(c.at(0, 0, ch), im.at(3, 5, ch));
}

TEST(MaskedCrop, LShapeZeroesOutside) {
  const ImageBuf im = noise(6, 6, 1, 7);
  ImageBuf m(6, 6, 1);
  for (int y = 1; y <= 4; ++y) m.at(y, 1) = 1.0f;  // vertical bar
  for (int x = 1; x <= 3; ++x) m.at(4, x) = 1.0f;  // foot
  const ImageBuf c = metrics::masked_crop(im, m);
  ASSERT_EQ(c.height(), 4);
  ASSERT_EQ(c.width(), 3);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 3; ++x) {
      const bool in = x == 0 || y == 3;
      EXPECT_EQ(c.at(y, x), in ? im.at(y + 1, x + 1) : 0.0f) << y << "," << x;
    }
}

TEST(MaskedCrop, EmptyOrNonBinaryRejected) {
  EXPECT_THROW(metrics::masked_crop(ImageBuf(4, 4, 3), ImageBuf(4, 4, 1)), InvalidInput);
  EXPECT_THROW(metrics::masked_crop(ImageBuf(4, 4, 3), ImageBuf(4, 4, 1, 0.5f)), InvalidInput);
}

TEST(Cosine, Oracles) {
  const std::vector<double> u{1, 2}, v{2, 1}, e0{1, 0}, e1{0, 1};
  EXPECT_DOUBLE_EQ(metrics::cosine_similarity(u, u), 1.0);
  EXPECT_DOUBLE_EQ(metrics::cosine_similarity(e0, e1), 0.0);
  EXPECT_NEAR(metrics::cosine_similarity(u, v), 0.8, 1e-15);
  EXPECT_THROW(metrics::cosine_similarity(u, std::vector<double>{1, 2, 3}), InvalidInput);
  EXPECT_THROW(metrics::cosine_similarity(u, std::vector<double>{0, 0}), InvalidInput);
}
