#include <gtest/gtest.h>

#include "mimicforge/augment.hpp"
#include "mimicforge/metrics.hpp"
#include "mimicforge/synthetic.hpp"

using namespace mimicforge;
using augment::AugmentConfig;
using augment::Point;
using img::ImageBuf;

TEST(Projective, ZeroJitterIsIdentity) {
  EXPECT_EQ(augment::sample_projective(0.0, 32, 32, 1).m, img::Homography::identity().m);
}

TEST(Projective, DltReproducesCorners) {
  const auto from = augment::image_corners(40, 60);
  const std::array<Point, 4> to{Point{3, -2}, Point{58, 4}, Point{63, 37}, Point{-4, 44}};
  const auto h = augment::solve_homography(from, to);
  for (int i = 0; i < 4; ++i) {
    const auto p = h.apply(from[i][0], from[i][1]);
    EXPECT_NEAR(p[0], to[i][0], 1e-6);
    EXPECT_NEAR(p[1], to[i][1], 1e-6);
  }
}

TEST(Projective, DegenerateCorrespondencesRejected) {
  const std::array<Point, 4> line{Point{0, 0}, Point{1, 1}, Point{2, 2}, Point{3, 3}};
  EXPECT_THROW(augment::solve_homography(line, line), InvalidInput);
}

TEST(Projective, SweepAllInvertible) {
  for (std::uint64_t s = 0; s < 1000; ++s) EXPECT_TRUE(augment::sample_projective(0.2, 64, 64, s).invertible());
  EXPECT_THROW(augment::sample_projective(0.5, 64, 64, 0), InvalidInput);
}

TEST(Color, NeutralParamsIdentical) {
  const ImageBuf im = synth::natural_image(16, 16, 1);
  EXPECT_EQ(augment::apply_color(im, {}), im);
}

TEST(Color, BrightnessAdds) {
  const ImageBuf out = augment::apply_color(ImageBuf(4, 4, 3, 0.5f), {0.1, 1.0, 1.0});
  for (float v : out.data()) EXPECT_NEAR(v, 0.6f, 1e-6);
}

TEST(Color, ContrastScalesAboutMean) {
  ImageBuf im(1, 2, 3);
  for (int c = 0; c < 3; ++c) {
    im.at(0, 0, c) = 0.4f;
    im.at(0, 1, c) = 0.6f;
  }
  const ImageBuf out = augment::apply_color(im, {0.0, 2.0, 1.0});
  for (int c = 0; c < 3; ++c) {
    EXPECT_NEAR(out.at(0, 0, c), 0.3f, 1e-6);
    EXPECT_NEAR(out.at(0, 1, c), 0.7f, 1e-6);
  }
}

TEST(Color, RequiresRgb) { EXPECT_THROW(augment::apply_color(ImageBuf(4, 4, 1), {}), InvalidInput); }

TEST(Full, IdentityConfigIdentical) {
  const ImageBuf im = synth::natural_image(32, 32, 2);
  EXPECT_EQ(augment::apply_full_augmentation(im, AugmentConfig::identity(), 9), im);
}

TEST(Full, HflipOnlyMirrors) {
  const ImageBuf im = synth::natural_image(24, 30, 3);
  AugmentConfig c;
  c.hflip_prob = 1.0;
  EXPECT_EQ(augment::apply_full_augmentation(im, c, 4), img::flip_horizontal(im));
}

TEST(Full, StrongPresetIsNonTrivial) {
  const ImageBuf im = synth::natural_image(64, 64, 5);
  const ImageBuf out = augment::apply_full_augmentation(im, AugmentConfig::strong(), 6);
  EXPECT_LT(metrics::ssim(im, out), 0.95);
}

TEST(Full, SeededDeterminism) {
  const ImageBuf im = synth::natural_image(40, 40, 7);
  EXPECT_EQ(augment::apply_full_augmentation(im, AugmentConfig::strong(), 8),
            augment::apply_full_augmentation(im, AugmentConfig::strong(), 8));
}

TEST(Full, InvalidConfigRejected) {
  AugmentConfig c;
  c.scale_range = {1.2, 0.8};
  EXPECT_THROW(c.validate(), InvalidInput);
  c = {};
  c.hflip_prob = 1.5;
  EXPECT_THROW(augment::apply_full_augmentation(ImageBuf(8, 8, 3), c, 0), InvalidInput);
}
