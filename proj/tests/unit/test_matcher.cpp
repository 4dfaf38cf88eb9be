#include <gtest/gtest.h>

#include <cmath>

#include "mimicforge/imgcore.hpp"
#include "mimicforge/matcher.hpp"
#include "mimicforge/rng.hpp"
#include "mimicforge/synthetic.hpp"

using namespace mimicforge;
using img::ImageBuf;

namespace {

ImageBuf blob(int size, double cx, double cy, double sigma) {
  ImageBuf im(size, size, 1);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
      im.at(y, x) = static_cast<float>(0.1 + 0.8 * std::exp(-(dx * dx + dy * dy) / (2 * sigma * sigma)));
    }
  return im;
}

ImageBuf checkerboard(int size, int cell) {
  ImageBuf im(size, size, 1);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) im.at(y, x) = ((x / cell + y / cell) % 2) ? 0.85f : 0.15f;
  return im;
}

ImageBuf noise(int size, std::uint64_t seed) {
  Rng rng(seed);
  ImageBuf im(size, size, 1);
  for (auto& v : im.data()) v = static_cast<float>(uniform01(rng));
  return im;
}

}  // namespace

TEST(Detect, ConstantImageHasNoKeypoints) {
  EXPECT_TRUE(match::detect_and_describe(ImageBuf(64, 64, 3, 0.4f)).empty());
}

TEST(Detect, GaussianBlobFoundNearCenter) {
  const auto feats = match::detect_and_describe(blob(64, 30.0, 34.0, 4.0));
  ASSERT_FALSE(feats.empty());
  double best = 1e9;
  for (const auto& f : feats) best = std::min(best, std::hypot(f.kp.x - 30.0, f.kp.y - 34.0));
  EXPECT_LE(best, 1.5);
}

TEST(Detect, CheckerboardCountStableUnderRotation) {
  const ImageBuf cb = checkerboard(96, 12);
  const double n0 = static_cast<double>(match::detect_and_describe(cb).size());
  const double n1 = static_cast<double>(match::detect_and_describe(img::rotate90(cb)).size());
  ASSERT_GT(n0, 0);
  EXPECT_LE(std::abs(n1 - n0), 0.1 * n0);
}

TEST(Detect, DescriptorsAreUnitNorm) {
  for (const auto& f : match::detect_and_describe(synth::natural_image(96, 96, 1))) {
    double n = 0;
    for (float v : f.desc) n += static_cast<double>(v) * v;
    EXPECT_NEAR(std::sqrt(n), 1.0, 1e-5);
  }
}

TEST(Detect, TooSmallRejected) { EXPECT_THROW(match::detect_and_describe(ImageBuf(8, 8, 1)), InvalidInput); }

TEST(Match, SelfMatchHasZeroDistance) {
  const auto feats = match::detect_and_describe(synth::natural_image(256, 256, 2));
  ASSERT_GT(feats.size(), 10u);
  for (std::size_t i = 0; i < feats.size(); ++i) EXPECT_EQ(match::descriptor_distance(feats[i].desc, feats[i].desc), 0.0);
  const auto m = match::match_ratio_test(feats, feats);
  ASSERT_FALSE(m.empty());
  for (const auto& x : m.matches) EXPECT_EQ(x.distance, 0.0);
}

TEST(Match, TranslationRecovered) {
  const ImageBuf a = synth::natural_image(256, 256, 3);
  const ImageBuf b = img::warp_perspective(a, img::Homography::translation(5, 0), 256, 256);
  const auto m = match::match_ratio_test(match::detect_and_describe(a), match::detect_and_describe(b));
  ASSERT_GT(m.size(), 10u);
  int good = 0;
  for (const auto& x : m.matches) good += std::hypot(x.ref.x - x.src.x - 5.0, x.ref.y - x.src.y) <= 2.0;
  EXPECT_GE(good, 0.8 * m.size());
}

TEST(Match, UnrelatedNoiseMatchesRarely) {
  const auto fa = match::detect_and_describe(synth::natural_image(256, 256, 4));
  const auto fb = match::detect_and_describe(noise(256, 5));
  ASSERT_FALSE(fa.empty());
  EXPECT_LE(match::match_ratio_test(fa, fb).size(), 0.1 * fa.size());
}

TEST(Match, StricterRatioNeverAddsMatches) {
  const ImageBuf a = synth::natural_image(96, 96, 6);
  const auto fa = match::detect_and_describe(a);
  const auto fb = match::detect_and_describe(img::warp_perspective(a, img::Homography::rotation(0.05), 96, 96));
  std::size_t prev = 0;
  for (double r : {0.5, 0.6, 0.7, 0.8, 0.9}) {
    const auto n = match::match_ratio_test(fa, fb, r).size();
    EXPECT_GE(n, prev);
    prev = n;
  }
  EXPECT_THROW(match::match_ratio_test(fa, fb, 1.0), InvalidInput);
}

TEST(Match, Deterministic) {
  const ImageBuf a = synth::natural_image(80, 80, 7);
  const auto f1 = match::detect_and_describe(a), f2 = match::detect_and_describe(a);
  ASSERT_EQ(f1.size(), f2.size());
  for (std::size_t i = 0; i < f1.size(); ++i) {
    EXPECT_EQ(f1[i].kp.x, f2[i].kp.x);
    EXPECT_EQ(f1[i].desc, f2[i].desc);
  }
}
