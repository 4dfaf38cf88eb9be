#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "mimicforge/imgcore.hpp"
#include "mimicforge/imgio.hpp"
#include "mimicforge/rng.hpp"

using namespace mimicforge;
using img::ImageBuf;
using img::Homography;

namespace {

ImageBuf random_image(int h, int w, int c, std::uint64_t seed) {
  Rng rng(seed);
  ImageBuf im(h, w, c);
  for (auto& v : im.data()) v = static_cast<float>(uniform01(rng));
  return im;
}

std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("mf_unit_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace

TEST(ImageBuf, RejectsBadShapes) {
  EXPECT_THROW(ImageBuf(0, 4, 3), InvalidInput);
  EXPECT_THROW(ImageBuf(4, 4, 2), InvalidInput);
  EXPECT_THROW(ImageBuf(2, 2, 1, std::vector<float>(3)), InvalidInput);
  EXPECT_NO_THROW(ImageBuf(2, 2, 4));
}

TEST(PadToSquare, SquareInputUnchanged) {
  const ImageBuf im = random_image(16, 16, 3, 1);
  const auto p = img::pad_to_square(im);
  EXPECT_EQ(p.image, im);
  EXPECT_EQ(p.padding.top, 0);
  EXPECT_EQ(p.padding.left, 0);
}

TEST(PadToSquare, TallInputCentersColumns) {
  ImageBuf im(4, 2, 1, 1.0f);
  const auto p = img::pad_to_square(im, 0.0f);
  ASSERT_EQ(p.image.height(), 4);
  ASSERT_EQ(p.image.width(), 4);
  EXPECT_EQ(p.padding.top, 0);
  EXPECT_EQ(p.padding.left, 1);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) EXPECT_EQ(p.image.at(y, x), (x == 1 || x == 2) ? 1.0f : 0.0f);
}

TEST(PadToSquare, OddLeftoverGoesBottomRight) {
  ImageBuf im(2, 5, 1, 1.0f);
  const auto p = img::pad_to_square(im);
  EXPECT_EQ(p.padding.top, 1);
  EXPECT_EQ(p.image.at(0, 0), 0.0f);
  EXPECT_EQ(p.image.at(1, 0), 1.0f);
  EXPECT_EQ(p.image.at(2, 0), 1.0f);
  EXPECT_EQ(p.image.at(3, 0), 0.0f);
  EXPECT_EQ(p.image.at(4, 0), 0.0f);
}

TEST(PadToSquare, UnpadRecoversOriginalExactly) {
  for (auto [h, w] : {std::pair{6, 4}, {3, 9}, {7, 7}, {1, 5}}) {
    const ImageBuf im = random_image(h, w, 3, h * 31 + w);
    const auto p = img::pad_to_square(im, 0.25f);
    EXPECT_EQ(img::unpad(p.image, p.padding), im);
  }
}

TEST(PadToSquare, SixByFourThenResizeKeepsAspect) {
  // 6x4 pads to 6x6 with one zero column on each side; at 12x12 that becomes
  // two-column bands of exact zeros, and the content keeps aspect 6:4.
  ImageBuf im(6, 4, 1, 1.0f);
  const auto p = img::pad_to_square(im);
  const ImageBuf big = img::resize_nearest(p.image, 12, 12);
  for (int y = 0; y < 12; ++y)
    for (int x = 0; x < 12; ++x) EXPECT_EQ(big.at(y, x), (x >= 2 && x < 10) ? 1.0f : 0.0f) << y << "," << x;
  // Bilinear keeps the interior of the content band exactly 1.
  const ImageBuf bl = img::resize_bilinear(p.image, 12, 12);
  for (int y = 0; y < 12; ++y) EXPECT_FLOAT_EQ(bl.at(y, 6), 1.0f);
}

TEST(PadToSquare, RejectsEmpty) { EXPECT_THROW(img::pad_to_square(ImageBuf{}), InvalidInput); }

TEST(Resize, SameSizeIsBitIdentical) {
  const ImageBuf im = random_image(7, 5, 3, 4);
  EXPECT_EQ(img::resize_bilinear(im, 7, 5), im);
}

TEST(Resize, HalfPixelCenters) {
  ImageBuf im(1, 2, 1, std::vector<float>{0.0f, 1.0f});
  const ImageBuf r = img::resize_bilinear(im, 1, 4);
  const float want[4] = {0.0f, 0.25f, 0.75f, 1.0f};
  for (int x = 0; x < 4; ++x) EXPECT_NEAR(r.at(0, x), want[x], 1e-7);
}

TEST(Resize, ConstantStaysConstant) {
  ImageBuf im(5, 3, 3, 0.37f);
  for (auto [h, w] : {std::pair{1, 1}, {17, 2}, {9, 31}}) {
    const ImageBuf r = img::resize_bilinear(im, h, w);
    for (float v : r.data()) EXPECT_EQ(v, 0.37f);
  }
}

TEST(Resize, RejectsBadDims) { EXPECT_THROW(img::resize_bilinear(ImageBuf(2, 2, 1), 0, 3), InvalidInput); }

TEST(Homography, ComposeWithInverseIsIdentity) {
  Homography h{{1.1, 0.05, 3.0, -0.02, 0.93, -2.0, 1e-4, -2e-4, 1}};
  const Homography id = img::compose(h, img::invert(h));
  for (int i = 0; i < 9; ++i) EXPECT_NEAR(id.m[i], Homography::identity().m[i], 1e-6);
}

TEST(Homography, SingularRejected) {
  Homography s{{1, 2, 3, 2, 4, 6, 0, 0, 1}};
  EXPECT_FALSE(s.invertible());
  EXPECT_THROW(img::invert(s), InvalidInput);
  EXPECT_THROW(img::warp_perspective(ImageBuf(4, 4, 1), s, 4, 4), InvalidInput);
}

TEST(Warp, IdentityIsExact) {
  const ImageBuf im = random_image(9, 11, 3, 5);
  EXPECT_EQ(img::warp_perspective(im, Homography::identity(), 9, 11), im);
}

TEST(Warp, TranslationMovesImpulse) {
  ImageBuf im(8, 8, 1);
  im.at(3, 2) = 1.0f;
  const ImageBuf out = img::warp_perspective(im, Homography::translation(2, 0), 8, 8);
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) EXPECT_NEAR(out.at(y, x), (y == 3 && x == 4) ? 1.0f : 0.0f, 1e-7);
}

TEST(Warp, OutOfBoundsFillsZero) {
  ImageBuf im(6, 6, 1, 1.0f);
  const ImageBuf out = img::warp_perspective(im, Homography::translation(3, 0), 6, 6);
  for (int y = 0; y < 6; ++y) {
    EXPECT_EQ(out.at(y, 0), 0.0f);
    EXPECT_EQ(out.at(y, 2), 0.0f);
    EXPECT_EQ(out.at(y, 5), 1.0f);
  }
}

TEST(Warp, RoundTripAwayFromBorders) {
  // Band-limited content: bilinear resampling error stays far below 2/255.
  ImageBuf im(64, 64, 3);
  for (int y = 0; y < 64; ++y)
    for (int x = 0; x < 64; ++x)
      for (int c = 0; c < 3; ++c)
        im.at(y, x, c) = static_cast<float>(0.5 + 0.2 * std::sin(0.19 * x + c) * std::cos(0.13 * y - 0.5 * c));
  const Homography h =
      img::about_center(img::compose(Homography::rotation(0.2), Homography::scaling(1.1, 0.95)), 64, 64);
  const ImageBuf back = img::warp_perspective(img::warp_perspective(im, h, 64, 64), img::invert(h), 64, 64);
  double worst = 0;
  for (int y = 12; y < 52; ++y)
    for (int x = 12; x < 52; ++x)
      for (int c = 0; c < 3; ++c) worst = std::max(worst, static_cast<double>(std::abs(back.at(y, x, c) - im.at(y, x, c))));
  EXPECT_LT(worst, 2.0 / 255);
}

TEST(Warp, OutputsStayInUnitRange) {
  const ImageBuf im = random_image(12, 12, 3, 9);
  const Homography h{{1.2, 0.3, -1, 0.1, 0.9, 2, 0.01, 0.002, 1}};
  const ImageBuf out = img::warp_perspective(im, h, 12, 12);
  for (float v : out.data()) {
    EXPECT_GE(v, 0.0f);
    EXPECT_LE(v, 1.0f);
  }
}

TEST(Ops, PureAndDeterministic) {
  const ImageBuf im = random_image(10, 13, 3, 11);
  EXPECT_EQ(img::resize_bilinear(im, 7, 21), img::resize_bilinear(im, 7, 21));
  const Homography h = Homography::rotation(0.3);
  EXPECT_EQ(img::warp_perspective(im, h, 10, 13), img::warp_perspective(im, h, 10, 13));
}

TEST(Ops, FlipsAndRotation) {
  const ImageBuf im = random_image(3, 4, 3, 12);
  EXPECT_EQ(img::flip_horizontal(img::flip_horizontal(im)), im);
  EXPECT_EQ(img::flip_vertical(img::flip_vertical(im)), im);
  const ImageBuf r = img::rotate90(im);
  EXPECT_EQ(r.height(), 4);
  EXPECT_EQ(r.width(), 3);
  EXPECT_EQ(img::rotate90(img::rotate90(img::rotate90(r))), im);
  EXPECT_EQ(img::flip_horizontal(im).at(1, 0, 2), im.at(1, 3, 2));
}

TEST(ImageIO, PngRoundTripIs8Bit) {
  const auto dir = temp_dir("png");
  const ImageBuf im = random_image(5, 7, 3, 13);
  img::write_png(dir / "a.png", im);
  const ImageBuf back = img::read_png(dir / "a.png");
  ASSERT_TRUE(back.same_shape(im));
  for (std::size_t i = 0; i < im.size(); ++i) EXPECT_NEAR(back.data()[i], im.data()[i], 0.5 / 255 + 1e-6);
  // Already-quantized data round-trips exactly.
  img::write_png(dir / "b.png", back);
  EXPECT_EQ(img::read_png(dir / "b.png"), back);
}

TEST(ImageIO, GrayPngStaysGray) {
  const auto dir = temp_dir("gray");
  ImageBuf g(4, 4, 1, 0.0f);
  g.at(1, 2) = 1.0f;
  img::write_png(dir / "g.png", g);
  EXPECT_EQ(img::read_png(dir / "g.png"), g);
}

TEST(ImageIO, MaskRoundTrip) {
  const auto dir = temp_dir("mask");
  ImageBuf m(9, 11, 1);
  for (int y = 0; y < 9; ++y)
    for (int x = 0; x < 11; ++x) m.at(y, x) = (x + y) % 3 == 0 ? 1.0f : 0.0f;
  img::write_mask_png(dir / "m.png", m);
  EXPECT_EQ(img::read_mask_png(dir / "m.png"), m);
}

TEST(ImageIO, TensorDumpRoundTripAndHeader) {
  const auto dir = temp_dir("tensor");
  const ImageBuf im = random_image(3, 5, 4, 14);
  img::write_tensor(dir / "t.bin", im);
  EXPECT_EQ(img::read_tensor(dir / "t.bin"), im);
  EXPECT_EQ(std::filesystem::file_size(dir / "t.bin"), 16u + im.size() * 4);
  std::ifstream in(dir / "t.bin", std::ios::binary);
  char magic[4];
  in.read(magic, 4);
  EXPECT_EQ(std::string(magic, 4), "IMGT");
}

TEST(ImageIO, MissingFileIsInvalidInput) {
  EXPECT_THROW(img::read_png("/nonexistent/none.png"), InvalidInput);
  EXPECT_THROW(img::read_tensor("/nonexistent/none.bin"), InvalidInput);
}
