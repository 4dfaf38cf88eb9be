#include <gtest/gtest.h>

#include <set>

#include "mimicforge/metrics.hpp"
#include "mimicforge/sampler.hpp"
#include "mimicforge/synthetic.hpp"

using namespace mimicforge;
using img::ImageBuf;
using sampler::FramePair;

namespace {

ImageBuf with_noise(const ImageBuf& im, double sigma, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> n(0.0, sigma);
  ImageBuf out = im;
  for (auto& v : out.data()) v = static_cast<float>(std::clamp(v + n(rng), 0.0, 1.0));
  return out;
}

ImageBuf pure_noise(int size, std::uint64_t seed) {
  Rng rng(seed);
  ImageBuf im(size, size, 3);
  for (auto& v : im.data()) v = static_cast<float>(uniform01(rng));
  return im;
}

}  // namespace

TEST(SelectPairs, IdenticalFramesRejected) {
  const ImageBuf f = synth::natural_image(64, 64, 1);
  EXPECT_TRUE(sampler::select_pairs({f, f}, {}, 4, 0).empty());
}

TEST(SelectPairs, MildNoiseInBandAccepted) {
  const ImageBuf f = synth::natural_image(64, 64, 2);
  // Bisection on the noise level so the pair lands near ssim 0.7.
  double lo = 0.0, hi = 1.0;
  for (int i = 0; i < 30; ++i) {
    const double mid = 0.5 * (lo + hi);
    (metrics::selection_ssim(f, with_noise(f, mid, 3)) > 0.7 ? lo : hi) = mid;
  }
  const ImageBuf g = with_noise(f, 0.5 * (lo + hi), 3);
  const double s = metrics::selection_ssim(f, g);
  ASSERT_GT(s, 0.6);
  ASSERT_LT(s, 0.8);
  const auto pairs = sampler::select_pairs({f, g}, {}, 4, 0, "v");
  ASSERT_EQ(pairs.size(), 1u);
  EXPECT_EQ(pairs[0].origin.id, "v");
  EXPECT_DOUBLE_EQ(pairs[0].ssim_score, s);
}

TEST(SelectPairs, UnrelatedFramesRejected) {
  EXPECT_TRUE(sampler::select_pairs({synth::natural_image(64, 64, 4), pure_noise(64, 5)}, {}, 4, 0).empty());
}

TEST(SelectPairs, BandValidated) {
  EXPECT_THROW(sampler::select_pairs({}, {0.9, 0.3}, 4, 0), InvalidInput);
}

TEST(SelectPairs, CandidatesDistinctAndSeeded) {
  const auto a = sampler::candidate_pairs(8, 100, 7);
  EXPECT_EQ(a.size(), 28u);
  std::set<std::pair<int, int>> seen;
  for (const auto& c : a) {
    EXPECT_NE(c.source_idx, c.reference_idx);
    EXPECT_TRUE(seen.insert({std::min(c.source_idx, c.reference_idx), std::max(c.source_idx, c.reference_idx)}).second);
  }
  const auto b = sampler::candidate_pairs(8, 100, 7);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].source_idx, b[i].source_idx);
}

TEST(PseudoPair, IdentityConfigReferenceEqualsSource) {
  const auto still = synth::shapes_still(1, 32, "s");
  const FramePair fp = sampler::make_pseudo_pair(still, 3, augment::AugmentConfig::identity());
  EXPECT_EQ(fp.reference, fp.source);
  EXPECT_EQ(fp.origin.kind, sampler::OriginKind::pseudo);
}

TEST(PseudoPair, DefaultConfigDiffersButStaysSimilar) {
  const ImageBuf im = synth::natural_image(64, 64, 9);
  sampler::SegmentedStill still{"n", im, {ImageBuf(64, 64, 1, 1.0f)}};
  int differs = 0, similar = 0;
  for (std::uint64_t s = 0; s < 100; ++s) {
    const FramePair fp = sampler::make_pseudo_pair(still, s);
    differs += img::mean_abs_diff(fp.source, fp.reference) > 0.01;
    similar += metrics::ssim(fp.source, fp.reference) > 0.2;
  }
  EXPECT_EQ(differs, 100);
  EXPECT_GE(similar, 95);
}

TEST(PseudoPair, MaskChosenUniformly) {
  sampler::SegmentedStill still{"m", ImageBuf(16, 16, 3, 0.5f), {}};
  for (int k = 0; k < 3; ++k) {
    ImageBuf m(16, 16, 1);
    m.at(k, k) = 1.0f;
    still.object_masks.push_back(m);
  }
  int counts[3] = {0, 0, 0};
  for (std::uint64_t s = 0; s < 3000; ++s) {
    const FramePair fp = sampler::make_pseudo_pair(still, s, augment::AugmentConfig::identity());
    ASSERT_GE(fp.mask_index, 0);
    ASSERT_LT(fp.mask_index, 3);
    EXPECT_EQ(*fp.object_mask, still.object_masks[fp.mask_index]);
    ++counts[fp.mask_index];
  }
  for (int c : counts) EXPECT_NEAR(c / 3000.0, 1.0 / 3, 0.03);
}

TEST(PseudoPair, InvalidStillRejected) {
  sampler::SegmentedStill still{"x", ImageBuf(8, 8, 3), {}};
  EXPECT_THROW(sampler::make_pseudo_pair(still, 0), InvalidInput);
  still.object_masks.push_back(ImageBuf(8, 8, 1));
  EXPECT_THROW(sampler::make_pseudo_pair(still, 0), InvalidInput);
}

namespace {

sampler::PairSource endless(sampler::OriginKind kind) {
  return [kind]() -> std::optional<FramePair> {
    FramePair fp;
    fp.origin.kind = kind;
    return fp;
  };
}

double video_share(double fraction, int draws, std::uint64_t seed) {
  sampler::MixedStream mix(endless(sampler::OriginKind::video), endless(sampler::OriginKind::pseudo), fraction, seed);
  int video = 0;
  for (int i = 0; i < draws; ++i) video += mix.next()->origin.kind == sampler::OriginKind::video;
  return video / double(draws);
}

}  // namespace

TEST(MixedStream, Fractions) {
  EXPECT_EQ(video_share(1.0, 1000, 1), 1.0);
  EXPECT_EQ(video_share(0.0, 1000, 1), 0.0);
  EXPECT_NEAR(video_share(0.7, 10000, 2), 0.7, 0.02);
  EXPECT_THROW(sampler::MixedStream({}, {}, 1.5, 0), InvalidInput);
}

TEST(MixedStream, ExhaustedStreamFallsBack) {
  std::vector<FramePair> two(2);
  sampler::MixedStream mix(sampler::from_vector(two), endless(sampler::OriginKind::pseudo), 1.0, 3);
  int n = 0;
  while (n < 5 && mix.next()) ++n;
  EXPECT_EQ(n, 5);
  EXPECT_EQ(mix.video_emitted(), 2u);
  EXPECT_EQ(mix.pseudo_emitted(), 3u);
}
