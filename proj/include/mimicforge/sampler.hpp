#pragma once

// Training-pair construction: SSIM-banded frame pairs from videos, pseudo
// pairs from segmented stills, and the video/still source mix.

#include <algorithm>
#include <cstdint>
#include <functional>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "mimicforge/augment.hpp"
#include "mimicforge/error.hpp"
#include "mimicforge/imgcore.hpp"
#include "mimicforge/metrics.hpp"
#include "mimicforge/parallel.hpp"
#include "mimicforge/rng.hpp"

namespace mimicforge::sampler {

using img::ImageBuf;

struct SelectionBand {
  double t_low = 0.3;
  double t_high = 0.9;

  void validate() const {
    if (!(0 <= t_low && t_low < t_high && t_high <= 1))
      throw InvalidInput("SelectionBand: require 0 <= t_low < t_high <= 1");
  }
  bool contains(double s) const { return s >= t_low && s <= t_high; }
};

enum class OriginKind { video, pseudo };

struct Origin {
  OriginKind kind = OriginKind::video;
  std::string id;  // video id or image id
  int idx_a = -1;  // frame indices (video only): source, reference
  int idx_b = -1;
};

struct FramePair {
  ImageBuf source;
  ImageBuf reference;
  double ssim_score = 0;
  Origin origin;
  std::optional<ImageBuf> object_mask;  // pseudo pairs only
  int mask_index = -1;
};

struct SegmentedStill {
  std::string id;
  ImageBuf image;
  std::vector<ImageBuf> object_masks;

  void validate() const {
    if (object_masks.empty()) throw InvalidInput("SegmentedStill: needs at least one object mask");
    for (const auto& m : object_masks) {
      if (m.height() != image.height() || m.width() != image.width())
        throw InvalidInput("SegmentedStill: mask size differs from image");
      bool any = false;
      for (float v : m.data()) any = any || v > 0;
      if (!any) throw InvalidInput("SegmentedStill: empty object mask");
    }
  }
};

namespace detail {

// (a, b) with a < b for the k-th pair in row-major upper-triangle order.
inline std::pair<int, int> unrank_pair(std::uint64_t k, int n) {
  int a = 0;
  std::uint64_t row = static_cast<std::uint64_t>(n - 1);
  while (k >= row) {
    k -= row;
    ++a;
    --row;
  }
  return {a, a + 1 + static_cast<int>(k)};
}

// First `count` entries of a seeded permutation of [0, total), without
// materializing the permutation.
inline std::vector<std::uint64_t> sample_without_replacement(std::uint64_t total, std::uint64_t count, Rng& rng) {
  count = std::min(count, total);
  std::unordered_map<std::uint64_t, std::uint64_t> swapped;
  auto get = [&](std::uint64_t i) {
    auto it = swapped.find(i);
    return it == swapped.end() ? i : it->second;
  };
  std::vector<std::uint64_t> out;
  out.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::uint64_t j = std::uniform_int_distribution<std::uint64_t>(i, total - 1)(rng);
    const std::uint64_t vi = get(i), vj = get(j);
    swapped[j] = vi;
    out.push_back(vj);
  }
  return out;
}

}  // namespace detail

struct Candidate {
  int source_idx;
  int reference_idx;
};

// Seeded candidate sequence: distinct frame pairs in random order with a
// random source/reference role assignment; at most 20 * max_pairs entries.
inline std::vector<Candidate> candidate_pairs(int n_frames, std::size_t max_pairs, std::uint64_t seed) {
  if (n_frames < 2) return {};
  Rng rng(seed);
  const std::uint64_t total = static_cast<std::uint64_t>(n_frames) * (n_frames - 1) / 2;
  const auto picks = detail::sample_without_replacement(total, 20ULL * max_pairs, rng);
  std::vector<Candidate> out;
  out.reserve(picks.size());
  for (auto k : picks) {
    auto [a, b] = detail::unrank_pair(k, n_frames);
    if (uniform01(rng) < 0.5) std::swap(a, b);
    out.push_back({a, b});
  }
  return out;
}

// Scores candidates with the selection SSIM and keeps those inside the band,
// in candidate order, up to max_pairs.
inline std::vector<FramePair> select_pairs(const std::vector<ImageBuf>& frames, const SelectionBand& band,
                                           std::size_t max_pairs, std::uint64_t seed,
                                           const std::string& video_id = "") {
  band.validate();
  std::vector<FramePair> out;
  if (frames.size() < 2 || max_pairs == 0) return out;
  const auto cands = candidate_pairs(static_cast<int>(frames.size()), max_pairs, seed);
  // Gray 64x64 thumbnails are shared across candidates.
  std::vector<std::optional<ImageBuf>> thumbs(frames.size());
  auto thumb = [&](int i) -> const ImageBuf& {
    return *thumbs[i];
  };
  for (const auto& c : cands)
    for (int i : {c.source_idx, c.reference_idx})
      if (!thumbs[i]) thumbs[i] = img::resize_bilinear(img::to_gray(frames[i]), 64, 64);

  const std::size_t chunk = std::max<std::size_t>(8, 4 * worker_count());
  for (std::size_t start = 0; start < cands.size() && out.size() < max_pairs; start += chunk) {
    const std::size_t end = std::min(cands.size(), start + chunk);
    std::vector<double> scores(end - start);
    parallel_for(end - start, [&](std::size_t i) {
      const auto& c = cands[start + i];
      scores[i] = metrics::ssim(thumb(c.source_idx), thumb(c.reference_idx));
    });
    for (std::size_t i = 0; i < scores.size() && out.size() < max_pairs; ++i) {
      if (!band.contains(scores[i])) continue;
      const auto& c = cands[start + i];
      FramePair fp;
      fp.source = frames[c.source_idx];
      fp.reference = frames[c.reference_idx];
      fp.ssim_score = scores[i];
      fp.origin = {OriginKind::video, video_id, c.source_idx, c.reference_idx};
      out.push_back(std::move(fp));
    }
  }
  return out;
}

// Source is the still itself; reference is its full augmentation; one object
// mask is attached, chosen uniformly.
inline FramePair make_pseudo_pair(const SegmentedStill& still, std::uint64_t seed,
                                  const augment::AugmentConfig& cfg = augment::AugmentConfig::strong()) {
  still.validate();
  Rng rng(derive_seed(seed, {11}));
  FramePair fp;
  fp.mask_index = uniform_int(rng, 0, static_cast<int>(still.object_masks.size()) - 1);
  fp.object_mask = still.object_masks[fp.mask_index];
  fp.source = still.image;
  fp.reference = augment::apply_full_augmentation(still.image, cfg, derive_seed(seed, {12}));
  fp.ssim_score = metrics::selection_ssim(fp.source, fp.reference);
  fp.origin = {OriginKind::pseudo, still.id, -1, -1};
  return fp;
}

using PairSource = std::function<std::optional<FramePair>()>;

// Draws from the video stream with probability video_fraction, else from
// the pseudo stream. An exhausted stream falls back to the other.
class MixedStream {
 public:
  MixedStream(PairSource video, PairSource pseudo, double video_fraction, std::uint64_t seed)
      : video_(std::move(video)), pseudo_(std::move(pseudo)), fraction_(video_fraction), rng_(seed) {
    if (video_fraction < 0 || video_fraction > 1) throw InvalidInput("mix_sources: video_fraction must be in [0,1]");
  }

  std::optional<FramePair> next() {
    const bool want_video = uniform01(rng_) < fraction_;
    auto& first = want_video ? video_ : pseudo_;
    auto& second = want_video ? pseudo_ : video_;
    if (auto p = pull(first, want_video)) return p;
    if (!(want_video ? pseudo_done_ : video_done_))
      std::clog << "[sampler] " << (want_video ? "video" : "pseudo") << " stream exhausted, falling back\n";
    return pull(second, !want_video);
  }

  std::size_t video_emitted() const { return video_count_; }
  std::size_t pseudo_emitted() const { return pseudo_count_; }

 private:
  std::optional<FramePair> pull(PairSource& src, bool is_video) {
    bool& done = is_video ? video_done_ : pseudo_done_;
    if (done || !src) return std::nullopt;
    auto p = src();
    if (!p) {
      done = true;
      return std::nullopt;
    }
    ++(is_video ? video_count_ : pseudo_count_);
    return p;
  }

  PairSource video_, pseudo_;
  double fraction_;
  Rng rng_;
  bool video_done_ = false, pseudo_done_ = false;
  std::size_t video_count_ = 0, pseudo_count_ = 0;
};

// Adapts a vector into a PairSource that yields each element once.
inline PairSource from_vector(std::vector<FramePair> pairs) {
  auto data = std::make_shared<std::vector<FramePair>>(std::move(pairs));
  auto pos = std::make_shared<std::size_t>(0);
  return [data, pos]() -> std::optional<FramePair> {
    if (*pos >= data->size()) return std::nullopt;
    return (*data)[(*pos)++];
  };
}

}  // namespace mimicforge::sampler
