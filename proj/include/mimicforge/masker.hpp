#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <vector>

#include "mimicforge/error.hpp"
#include "mimicforge/imgcore.hpp"
#include "mimicforge/matcher.hpp"
#include "mimicforge/metrics.hpp"
#include "mimicforge/rng.hpp"

namespace mimicforge::masker {

using img::ImageBuf;

struct MaskPolicy {
  double p_matched = 0.75;
  double p_other = 0.5;

  void validate() const {
    if (p_matched < 0 || p_matched > 1 || p_other < 0 || p_other > 1)
      throw InvalidInput("MaskPolicy: probabilities must be in [0,1]");
  }
};

inline constexpr int kMinGrid = 3;
inline constexpr int kMaxGrid = 10;

// Cell boundaries along one axis: n cells of floor(len/n), the last one takes
// the remainder.
inline std::vector<int> cell_edges(int len, int n) {
  std::vector<int> e(n + 1);
  const int step = len / n;
  for (int i = 0; i < n; ++i) e[i] = i * step;
  e[n] = len;
  return e;
}

inline int cell_index(double coord, int len, int n) {
  const int px = std::clamp(static_cast<int>(std::lround(coord)), 0, len - 1);
  return std::min(px / (len / n), n - 1);
}

struct GridMask {
  int n = 0;
  std::vector<bool> cell_flags;  // row-major n*n, true = masked
  ImageBuf rendered;             // 1-channel {0,1}

  bool masked(int row, int col) const { return cell_flags[static_cast<std::size_t>(row) * n + col]; }
  int masked_count() const {
    int c = 0;
    for (bool f : cell_flags) c += f;
    return c;
  }
};

inline ImageBuf render_grid(int h, int w, int n, const std::vector<bool>& flags) {
  ImageBuf out(h, w, 1, 0.0f);
  const auto ey = cell_edges(h, n), ex = cell_edges(w, n);
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < n; ++c) {
      if (!flags[static_cast<std::size_t>(r) * n + c]) continue;
      for (int y = ey[r]; y < ey[r + 1]; ++y)
        for (int x = ex[c]; x < ex[c + 1]; ++x) out.at(y, x) = 1.0f;
    }
  return out;
}

// Cells containing at least one source-side matched keypoint.
inline std::vector<bool> matched_cells(int h, int w, int n, const match::KeypointMatchSet& matches) {
  std::vector<bool> hit(static_cast<std::size_t>(n) * n, false);
  for (const auto& m : matches.matches)
    hit[static_cast<std::size_t>(cell_index(m.src.y, h, n)) * n + cell_index(m.src.x, w, n)] = true;
  return hit;
}

// Each cell masks independently: a uniform draw u masks it when
// u < p_matched (cells with a source match) or u < p_other (others).
// All-or-none outcomes are redrawn up to 20 times, then one uniformly chosen
// cell is flipped. `force_n` pins the grid size.
inline GridMask grid_mask(int h, int w, const match::KeypointMatchSet& matches, const MaskPolicy& policy,
                          std::uint64_t seed, std::optional<int> force_n = std::nullopt) {
  policy.validate();
  if (h < kMaxGrid || w < kMaxGrid) throw InvalidInput("grid_mask: h and w must be >= 10");
  Rng rng(seed);
  GridMask g;
  g.n = force_n ? *force_n : uniform_int(rng, kMinGrid, kMaxGrid);
  if (g.n < kMinGrid || g.n > kMaxGrid) throw InvalidInput("grid_mask: n must be in [3,10]");
  const std::size_t cells = static_cast<std::size_t>(g.n) * g.n;
  const auto hit = matched_cells(h, w, g.n, matches);
  g.cell_flags.assign(cells, false);
  for (int attempt = 0; attempt < 20; ++attempt) {
    int count = 0;
    for (std::size_t i = 0; i < cells; ++i) {
      const double u = uniform01(rng);
      g.cell_flags[i] = u < (hit[i] ? policy.p_matched : policy.p_other);
      count += g.cell_flags[i];
    }
    if (count > 0 && count < static_cast<int>(cells)) break;
  }
  const int count = g.masked_count();
  if (count == 0 || count == static_cast<int>(cells)) {
    const auto flip = static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(cells) - 1));
    g.cell_flags[flip] = !g.cell_flags[flip];
  }
  g.rendered = render_grid(h, w, g.n, g.cell_flags);
  return g;
}

inline void require_binary(const ImageBuf& mask, const char* who) {
  if (!metrics::is_binary_mask(mask)) throw InvalidInput(std::string(who) + ": mask must be single-channel binary");
}

// Dilation by a diamond (4-connected) element of radius `dilate_px`. When
// `dilate_px` is empty, the radius is drawn uniformly from [0, 8].
inline ImageBuf segmentation_mask(const ImageBuf& still_mask, std::optional<int> dilate_px, std::uint64_t seed) {
  require_binary(still_mask, "segmentation_mask");
  bool any = false;
  for (float v : still_mask.data()) any = any || v > 0;
  if (!any) throw InvalidInput("segmentation_mask: empty mask");
  int radius = 0;
  if (dilate_px) {
    radius = *dilate_px;
  } else {
    Rng rng(seed);
    radius = uniform_int(rng, 0, 8);
  }
  if (radius < 0) throw InvalidInput("segmentation_mask: dilate_px must be >= 0");
  ImageBuf cur = still_mask;
  // Repeated 4-neighbour dilation yields the L1 ball.
  for (int step = 0; step < radius; ++step) {
    ImageBuf next = cur;
    for (int y = 0; y < cur.height(); ++y)
      for (int x = 0; x < cur.width(); ++x) {
        if (cur.at(y, x) > 0) continue;
        if ((y > 0 && cur.at(y - 1, x) > 0) || (y + 1 < cur.height() && cur.at(y + 1, x) > 0) ||
            (x > 0 && cur.at(y, x - 1) > 0) || (x + 1 < cur.width() && cur.at(y, x + 1) > 0))
          next.at(y, x) = 1.0f;
      }
    cur = std::move(next);
  }
  return cur;
}

// Masked (value 1) pixels become 0 in every channel.
inline ImageBuf apply_mask(const ImageBuf& img, const ImageBuf& mask) {
  require_binary(mask, "apply_mask");
  if (mask.height() != img.height() || mask.width() != img.width())
    throw InvalidInput("apply_mask: mask " + img::shape_str(mask) + " does not match image " + img::shape_str(img));
  ImageBuf out = img;
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x)
      if (mask.at(y, x) > 0)
        for (int c = 0; c < img.channels(); ++c) out.at(y, x, c) = 0.0f;
  return out;
}

}  // namespace mimicforge::masker
