#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <iostream>
#include <numbers>
#include <utility>

#include "mimicforge/error.hpp"
#include "mimicforge/imgcore.hpp"
#include "mimicforge/rng.hpp"

namespace mimicforge::augment {

using img::Homography;
using img::ImageBuf;

using Range = std::pair<double, double>;

struct AugmentConfig {
  Range brightness_delta{0.0, 0.0};
  Range contrast_range{1.0, 1.0};
  Range saturation_range{1.0, 1.0};
  double hflip_prob = 0.0;
  double vflip_prob = 0.0;
  double rotation_max_deg = 0.0;
  Range scale_range{1.0, 1.0};
  double projective_jitter = 0.0;

  static AugmentConfig identity() { return {}; }

  // Magnitudes picked so augmented pairs remain matchable.
  static AugmentConfig strong() {
    AugmentConfig c;
    c.brightness_delta = {-0.3, 0.3};
    c.contrast_range = {0.6, 1.4};
    c.saturation_range = {0.6, 1.4};
    c.hflip_prob = 0.5;
    c.vflip_prob = 0.1;
    c.rotation_max_deg = 30.0;
    c.scale_range = {0.7, 1.3};
    c.projective_jitter = 0.15;
    return c;
  }

  void validate() const {
    auto ordered = [](const Range& r) { return r.first <= r.second; };
    if (!ordered(brightness_delta) || !ordered(contrast_range) || !ordered(saturation_range) || !ordered(scale_range))
      throw InvalidInput("AugmentConfig: ranges must be ordered (lo <= hi)");
    if (hflip_prob < 0 || hflip_prob > 1 || vflip_prob < 0 || vflip_prob > 1)
      throw InvalidInput("AugmentConfig: flip probabilities must be in [0,1]");
    if (projective_jitter < 0 || projective_jitter >= 0.5)
      throw InvalidInput("AugmentConfig: projective_jitter must be in [0, 0.5)");
    if (contrast_range.first < 0 || saturation_range.first < 0 || scale_range.first <= 0)
      throw InvalidInput("AugmentConfig: contrast/saturation must be >= 0 and scale > 0");
    if (rotation_max_deg < 0) throw InvalidInput("AugmentConfig: rotation_max_deg must be >= 0");
  }
};

using Point = std::array<double, 2>;

// Direct linear transform from four correspondences (h33 fixed to 1).
inline Homography solve_homography(const std::array<Point, 4>& from, const std::array<Point, 4>& to) {
  double A[8][9] = {};
  for (int i = 0; i < 4; ++i) {
    const double x = from[i][0], y = from[i][1], u = to[i][0], v = to[i][1];
    double* r0 = A[2 * i];
    double* r1 = A[2 * i + 1];
    r0[0] = x, r0[1] = y, r0[2] = 1, r0[6] = -u * x, r0[7] = -u * y, r0[8] = u;
    r1[3] = x, r1[4] = y, r1[5] = 1, r1[6] = -v * x, r1[7] = -v * y, r1[8] = v;
  }
  for (int col = 0; col < 8; ++col) {
    int piv = col;
    for (int r = col + 1; r < 8; ++r)
      if (std::abs(A[r][col]) > std::abs(A[piv][col])) piv = r;
    if (std::abs(A[piv][col]) < 1e-12) throw InvalidInput("solve_homography: degenerate correspondences");
    if (piv != col)
      for (int k = 0; k < 9; ++k) std::swap(A[piv][k], A[col][k]);
    for (int r = 0; r < 8; ++r) {
      if (r == col) continue;
      const double f = A[r][col] / A[col][col];
      if (f == 0) continue;
      for (int k = col; k < 9; ++k) A[r][k] -= f * A[col][k];
    }
  }
  Homography h;
  for (int i = 0; i < 8; ++i) h.m[i] = A[i][8] / A[i][i];
  h.m[8] = 1.0;
  return h;
}

inline std::array<Point, 4> image_corners(int h, int w) {
  return {Point{0, 0}, Point{static_cast<double>(w), 0}, Point{static_cast<double>(w), static_cast<double>(h)},
          Point{0, static_cast<double>(h)}};
}

// Convex, counter-rotation-free quad with no three corners collinear.
inline bool well_formed_quad(const std::array<Point, 4>& q, double min_cross) {
  int sign = 0;
  for (int i = 0; i < 4; ++i) {
    const auto& a = q[i];
    const auto& b = q[(i + 1) % 4];
    const auto& c = q[(i + 2) % 4];
    const double cross = (b[0] - a[0]) * (c[1] - b[1]) - (b[1] - a[1]) * (c[0] - b[0]);
    if (std::abs(cross) < min_cross) return false;
    const int s = cross > 0 ? 1 : -1;
    if (sign == 0) sign = s;
    if (s != sign) return false;
  }
  return true;
}

inline Homography sample_projective(double jitter, int h, int w, std::uint64_t seed) {
  if (jitter < 0 || jitter >= 0.5) throw InvalidInput("sample_projective: jitter must be in [0, 0.5)");
  if (h < 1 || w < 1) throw InvalidInput("sample_projective: image dims must be >= 1");
  if (jitter == 0) return Homography::identity();
  Rng rng(seed);
  const auto from = image_corners(h, w);
  for (int attempt = 0; attempt < 10; ++attempt) {
    auto to = from;
    for (auto& p : to) {
      p[0] += uniform(rng, -jitter * w, jitter * w);
      p[1] += uniform(rng, -jitter * h, jitter * h);
    }
    if (!well_formed_quad(to, 1e-3 * h * w)) continue;
    Homography hm = solve_homography(from, to);
    if (hm.invertible()) return hm;
  }
  std::clog << "[augment] warning: degenerate projective samples, falling back to identity\n";
  return Homography::identity();
}

namespace detail {

// Order-independent mean: fixed-point accumulation is exact, so the result
// does not depend on pixel traversal order.
inline double exact_mean(const ImageBuf& im) {
  std::int64_t acc = 0;
  for (float v : im.data()) acc += static_cast<std::int64_t>(std::llround(static_cast<double>(v) * 4294967296.0));
  return static_cast<double>(acc) / 4294967296.0 / static_cast<double>(im.size());
}

}  // namespace detail

struct ColorParams {
  double brightness = 0.0;
  double contrast = 1.0;
  double saturation = 1.0;
};

// brightness (additive) -> contrast (about the image mean) -> saturation
// (blend with per-pixel gray), then clamp.
inline ImageBuf apply_color(const ImageBuf& src, const ColorParams& cp) {
  if (src.channels() != 3) throw InvalidInput("apply_color_jitter: expects a 3-channel image");
  ImageBuf out = src;
  if (cp.brightness != 0.0)
    for (auto& v : out.data()) v = static_cast<float>(v + cp.brightness);
  if (cp.contrast != 1.0) {
    const double mean = detail::exact_mean(out);
    for (auto& v : out.data()) v = static_cast<float>(mean + cp.contrast * (v - mean));
  }
  if (cp.saturation != 1.0) {
    for (int y = 0; y < out.height(); ++y)
      for (int x = 0; x < out.width(); ++x) {
        const double g = (static_cast<double>(out.at(y, x, 0)) + out.at(y, x, 1) + out.at(y, x, 2)) / 3.0;
        for (int c = 0; c < 3; ++c) out.at(y, x, c) = static_cast<float>(g + cp.saturation * (out.at(y, x, c) - g));
      }
  }
  img::clamp01(out);
  return out;
}

inline ColorParams sample_color(const AugmentConfig& cfg, Rng& rng) {
  ColorParams cp;
  cp.brightness = uniform(rng, cfg.brightness_delta.first, cfg.brightness_delta.second);
  cp.contrast = uniform(rng, cfg.contrast_range.first, cfg.contrast_range.second);
  cp.saturation = uniform(rng, cfg.saturation_range.first, cfg.saturation_range.second);
  return cp;
}

inline ImageBuf apply_color_jitter(const ImageBuf& img, const AugmentConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(derive_seed(seed, {1}));
  return apply_color(img, sample_color(cfg, rng));
}

// Geometric part of the augmentation, expressed as one homography about the
// image center: projective * scale * rotation.
inline Homography sample_geometry(const AugmentConfig& cfg, int h, int w, std::uint64_t seed) {
  Rng rng(derive_seed(seed, {3}));
  const double deg = uniform(rng, -cfg.rotation_max_deg, cfg.rotation_max_deg);
  const double s = uniform(rng, cfg.scale_range.first, cfg.scale_range.second);
  Homography g = img::about_center(compose(Homography::scaling(s, s), Homography::rotation(deg * std::numbers::pi / 180.0)), h, w);
  const Homography proj = sample_projective(cfg.projective_jitter, h, w, derive_seed(seed, {4}));
  return compose(proj, g);
}

inline bool is_identity(const Homography& h) {
  for (int i = 0; i < 9; ++i)
    if (h.m[i] != Homography::identity().m[i]) return false;
  return true;
}

// color jitter -> flips -> rotation -> scale -> projective warp.
inline ImageBuf apply_full_augmentation(const ImageBuf& img, const AugmentConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  ImageBuf out = apply_color_jitter(img, cfg, seed);
  Rng flips(derive_seed(seed, {2}));
  if (uniform01(flips) < cfg.hflip_prob) out = img::flip_horizontal(out);
  if (uniform01(flips) < cfg.vflip_prob) out = img::flip_vertical(out);
  const Homography g = sample_geometry(cfg, out.height(), out.width(), seed);
  if (!is_identity(g)) out = img::warp_perspective(out, g, out.height(), out.width());
  return out;
}

}  // namespace mimicforge::augment
