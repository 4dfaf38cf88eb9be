#pragma once

// Simplified SIFT: DoG extrema over a fixed 3-octave pyramid, quadratic
// refinement, contrast/edge rejection, one dominant orientation, 4x4x8
// descriptors, and Lowe ratio-test matching.
//
// Keypoint coordinates are in pixel-index space of the input image
// (pixel (r, c) has center (x=c, y=r)).

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numbers>
#include <vector>

#include "mimicforge/error.hpp"
#include "mimicforge/imgcore.hpp"

namespace mimicforge::match {

using img::ImageBuf;

struct SiftParams {
  int octaves = 3;
  int scales_per_octave = 3;
  double sigma = 1.6;
  double init_sigma = 0.5;
  double contrast_threshold = 0.03;  // divided by scales_per_octave before use
  double edge_ratio = 10.0;
  int border = 5;
  bool upsample = true;  // start the pyramid at twice the input resolution
};

struct Keypoint {
  double x = 0, y = 0;
  double scale = 1;
  double orientation = 0;  // radians in [0, 2*pi)
  double response = 0;
  int octave = 0;
  double layer = 0;  // fractional layer within the octave
};

using Descriptor = std::array<float, 128>;

struct Feature {
  Keypoint kp;
  Descriptor desc{};
};

struct Match {
  Keypoint src;
  Keypoint ref;
  double distance = 0;
  int src_index = -1;
  int ref_index = -1;
};

struct KeypointMatchSet {
  std::vector<Match> matches;

  std::size_t size() const { return matches.size(); }
  bool empty() const { return matches.empty(); }
  std::vector<Match> sorted_by_distance() const {
    auto m = matches;
    std::stable_sort(m.begin(), m.end(), [](const Match& a, const Match& b) { return a.distance < b.distance; });
    return m;
  }
};

namespace detail {

// Plain float raster with clamped reads.
struct Plane {
  int h = 0, w = 0;
  std::vector<float> v;
  Plane() = default;
  Plane(int h_, int w_) : h(h_), w(w_), v(static_cast<std::size_t>(h_) * w_, 0.0f) {}
  float& at(int y, int x) { return v[static_cast<std::size_t>(y) * w + x]; }
  float at(int y, int x) const { return v[static_cast<std::size_t>(y) * w + x]; }
  float clamped(int y, int x) const { return at(std::clamp(y, 0, h - 1), std::clamp(x, 0, w - 1)); }
};

inline Plane gaussian_blur(const Plane& src, double sigma) {
  if (sigma <= 0) return src;
  const int r = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> k(2 * r + 1);
  double s = 0;
  for (int i = -r; i <= r; ++i) s += k[i + r] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (auto& x : k) x /= s;
  Plane tmp(src.h, src.w), out(src.h, src.w);
  for (int y = 0; y < src.h; ++y)
    for (int x = 0; x < src.w; ++x) {
      double a = 0;
      for (int i = -r; i <= r; ++i) a += k[i + r] * src.clamped(y, x + i);
      tmp.at(y, x) = static_cast<float>(a);
    }
  for (int y = 0; y < src.h; ++y)
    for (int x = 0; x < src.w; ++x) {
      double a = 0;
      for (int i = -r; i <= r; ++i) a += k[i + r] * tmp.clamped(y + i, x);
      out.at(y, x) = static_cast<float>(a);
    }
  return out;
}

inline Plane halve(const Plane& src) {
  Plane out(std::max(1, src.h / 2), std::max(1, src.w / 2));
  for (int y = 0; y < out.h; ++y)
    for (int x = 0; x < out.w; ++x) out.at(y, x) = src.at(2 * y, 2 * x);
  return out;
}

struct Octave {
  std::vector<Plane> gauss;
  std::vector<Plane> dog;
};

inline std::vector<Octave> build_pyramid(const Plane& gray, const SiftParams& p) {
  const int s = p.scales_per_octave;
  const double k = std::pow(2.0, 1.0 / s);
  std::vector<double> sig(s + 3);
  sig[0] = p.sigma;
  for (int i = 1; i < s + 3; ++i) {
    const double prev = p.sigma * std::pow(k, i - 1), total = prev * k;
    sig[i] = std::sqrt(total * total - prev * prev);
  }
  std::vector<Octave> pyr;
  Plane base = gaussian_blur(gray, std::sqrt(std::max(0.01, p.sigma * p.sigma - p.init_sigma * p.init_sigma)));
  for (int o = 0; o < p.octaves; ++o) {
    if (o > 0) {
      base = halve(pyr.back().gauss[s]);
      if (base.h < 8 || base.w < 8) break;
    }
    Octave oct;
    oct.gauss.push_back(base);
    for (int i = 1; i < s + 3; ++i) oct.gauss.push_back(gaussian_blur(oct.gauss.back(), sig[i]));
    for (int i = 0; i + 1 < s + 3; ++i) {
      Plane d(base.h, base.w);
      for (std::size_t j = 0; j < d.v.size(); ++j) d.v[j] = oct.gauss[i + 1].v[j] - oct.gauss[i].v[j];
      oct.dog.push_back(std::move(d));
    }
    pyr.push_back(std::move(oct));
  }
  return pyr;
}

inline bool is_extremum(const std::vector<Plane>& dog, int l, int y, int x) {
  const float v = dog[l].at(y, x);
  const bool mx = v > 0;
  for (int dl = -1; dl <= 1; ++dl)
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx) {
        if (!dl && !dy && !dx) continue;
        const float n = dog[l + dl].at(y + dy, x + dx);
        if (mx ? n >= v : n <= v) return false;
      }
  return true;
}

// 3x3 solve by Cramer's rule; false when singular.
inline bool solve3(const double H[3][3], const double b[3], double out[3]) {
  const double det = H[0][0] * (H[1][1] * H[2][2] - H[1][2] * H[2][1]) -
                     H[0][1] * (H[1][0] * H[2][2] - H[1][2] * H[2][0]) +
                     H[0][2] * (H[1][0] * H[2][1] - H[1][1] * H[2][0]);
  if (std::abs(det) < 1e-12) return false;
  for (int c = 0; c < 3; ++c) {
    double M[3][3];
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) M[i][j] = (j == c) ? b[i] : H[i][j];
    out[c] = (M[0][0] * (M[1][1] * M[2][2] - M[1][2] * M[2][1]) - M[0][1] * (M[1][0] * M[2][2] - M[1][2] * M[2][0]) +
              M[0][2] * (M[1][0] * M[2][1] - M[1][1] * M[2][0])) /
             det;
  }
  return true;
}

inline bool refine(const Octave& oct, const SiftParams& p, int o, int& l, int& y, int& x, Keypoint& kp) {
  const int s = p.scales_per_octave;
  const auto& dog = oct.dog;
  const int h = dog[0].h, w = dog[0].w;
  double off[3] = {0, 0, 0};
  double grad[3] = {0, 0, 0};
  int it = 0;
  for (; it < 5; ++it) {
    const auto& c = dog[l];
    const auto& pv = dog[l - 1];
    const auto& nx = dog[l + 1];
    grad[0] = 0.5 * (c.at(y, x + 1) - c.at(y, x - 1));
    grad[1] = 0.5 * (c.at(y + 1, x) - c.at(y - 1, x));
    grad[2] = 0.5 * (nx.at(y, x) - pv.at(y, x));
    const double v2 = 2.0 * c.at(y, x);
    const double dxx = c.at(y, x + 1) + c.at(y, x - 1) - v2;
    const double dyy = c.at(y + 1, x) + c.at(y - 1, x) - v2;
    const double dss = nx.at(y, x) + pv.at(y, x) - v2;
    const double dxy = 0.25 * (c.at(y + 1, x + 1) - c.at(y + 1, x - 1) - c.at(y - 1, x + 1) + c.at(y - 1, x - 1));
    const double dxs = 0.25 * (nx.at(y, x + 1) - nx.at(y, x - 1) - pv.at(y, x + 1) + pv.at(y, x - 1));
    const double dys = 0.25 * (nx.at(y + 1, x) - nx.at(y - 1, x) - pv.at(y + 1, x) + pv.at(y - 1, x));
    const double H[3][3] = {{dxx, dxy, dxs}, {dxy, dyy, dys}, {dxs, dys, dss}};
    const double nb[3] = {-grad[0], -grad[1], -grad[2]};
    if (!solve3(H, nb, off)) return false;
    if (std::abs(off[0]) < 0.5 && std::abs(off[1]) < 0.5 && std::abs(off[2]) < 0.5) break;
    if (std::abs(off[0]) > 1e3 || std::abs(off[1]) > 1e3 || std::abs(off[2]) > 1e3) return false;
    x += static_cast<int>(std::lround(off[0]));
    y += static_cast<int>(std::lround(off[1]));
    l += static_cast<int>(std::lround(off[2]));
    if (l < 1 || l > s || x < p.border || x >= w - p.border || y < p.border || y >= h - p.border) return false;
  }
  if (it >= 5) return false;
  const auto& c = dog[l];
  const double contrast = c.at(y, x) + 0.5 * (grad[0] * off[0] + grad[1] * off[1] + grad[2] * off[2]);
  if (std::abs(contrast) * s < p.contrast_threshold) return false;
  const double v2 = 2.0 * c.at(y, x);
  const double dxx = c.at(y, x + 1) + c.at(y, x - 1) - v2;
  const double dyy = c.at(y + 1, x) + c.at(y - 1, x) - v2;
  const double dxy = 0.25 * (c.at(y + 1, x + 1) - c.at(y + 1, x - 1) - c.at(y - 1, x + 1) + c.at(y - 1, x - 1));
  const double tr = dxx + dyy, det = dxx * dyy - dxy * dxy;
  const double r = p.edge_ratio;
  if (det <= 0 || tr * tr * r >= (r + 1) * (r + 1) * det) return false;
  const double f = std::ldexp(1.0, o);
  kp.x = (x + off[0]) * f;
  kp.y = (y + off[1]) * f;
  kp.octave = o;
  kp.layer = l + off[2];
  kp.scale = p.sigma * std::pow(2.0, kp.layer / s) * f;
  kp.response = std::abs(contrast);
  return true;
}

inline double dominant_orientation(const Plane& g, double cx, double cy, double sigma_oct) {
  constexpr int kBins = 36;
  const double sw = 1.5 * sigma_oct;
  const int radius = static_cast<int>(std::lround(3.0 * sw));
  std::array<double, kBins> hist{};
  const int ix = static_cast<int>(std::lround(cx)), iy = static_cast<int>(std::lround(cy));
  for (int dy = -radius; dy <= radius; ++dy)
    for (int dx = -radius; dx <= radius; ++dx) {
      const int y = iy + dy, x = ix + dx;
      if (y <= 0 || y >= g.h - 1 || x <= 0 || x >= g.w - 1) continue;
      const double gx = g.at(y, x + 1) - g.at(y, x - 1);
      const double gy = g.at(y + 1, x) - g.at(y - 1, x);
      const double mag = std::sqrt(gx * gx + gy * gy);
      double ang = std::atan2(gy, gx);
      if (ang < 0) ang += 2 * std::numbers::pi;
      const double wgt = std::exp(-(dx * dx + dy * dy) / (2 * sw * sw));
      int bin = static_cast<int>(std::lround(ang * kBins / (2 * std::numbers::pi))) % kBins;
      hist[bin] += wgt * mag;
    }
  std::array<double, kBins> sm{};
  for (int i = 0; i < kBins; ++i)
    sm[i] = (hist[(i + kBins - 2) % kBins] + hist[(i + 2) % kBins]) * (1.0 / 16) +
            (hist[(i + kBins - 1) % kBins] + hist[(i + 1) % kBins]) * (4.0 / 16) + hist[i] * (6.0 / 16);
  int best = 0;
  for (int i = 1; i < kBins; ++i)
    if (sm[i] > sm[best]) best = i;
  const double l = sm[(best + kBins - 1) % kBins], r = sm[(best + 1) % kBins], c = sm[best];
  double denom = l - 2 * c + r;
  double bin = best + (std::abs(denom) > 1e-12 ? 0.5 * (l - r) / denom : 0.0);
  double ang = bin * 2 * std::numbers::pi / kBins;
  ang = std::fmod(ang, 2 * std::numbers::pi);
  if (ang < 0) ang += 2 * std::numbers::pi;
  if (ang >= 2 * std::numbers::pi) ang = 0;
  return ang;
}

// false when the patch carries no gradient energy.
inline bool describe(const Plane& g, double cx, double cy, double sigma_oct, double ori, Descriptor& out) {
  constexpr int d = 4, n = 8;
  const double hist_width = 3.0 * sigma_oct;
  const int radius = static_cast<int>(std::lround(hist_width * std::numbers::sqrt2 * (d + 1) * 0.5));
  const double cos_t = std::cos(ori) / hist_width, sin_t = std::sin(ori) / hist_width;
  const double exp_scale = -1.0 / (0.5 * d * d);
  std::array<double, (d + 2) * (d + 2) * (n + 2)> hist{};
  auto H = [&](int r, int c, int o) -> double& { return hist[(r * (d + 2) + c) * (n + 2) + o]; };
  const int ix = static_cast<int>(std::lround(cx)), iy = static_cast<int>(std::lround(cy));
  for (int i = -radius; i <= radius; ++i)
    for (int j = -radius; j <= radius; ++j) {
      const double c_rot = j * cos_t - i * sin_t;
      const double r_rot = j * sin_t + i * cos_t;
      const double rbin = r_rot + d / 2.0 - 0.5, cbin = c_rot + d / 2.0 - 0.5;
      const int y = iy + i, x = ix + j;
      if (rbin <= -1 || rbin >= d || cbin <= -1 || cbin >= d) continue;
      if (y <= 0 || y >= g.h - 1 || x <= 0 || x >= g.w - 1) continue;
      const double gx = g.at(y, x + 1) - g.at(y, x - 1);
      const double gy = g.at(y + 1, x) - g.at(y - 1, x);
      double ang = std::atan2(gy, gx) - ori;
      while (ang < 0) ang += 2 * std::numbers::pi;
      while (ang >= 2 * std::numbers::pi) ang -= 2 * std::numbers::pi;
      const double obin = ang * n / (2 * std::numbers::pi);
      const double mag = std::sqrt(gx * gx + gy * gy) * std::exp((c_rot * c_rot + r_rot * r_rot) * exp_scale);
      const int r0 = static_cast<int>(std::floor(rbin)), c0 = static_cast<int>(std::floor(cbin)),
                o0 = static_cast<int>(std::floor(obin));
      const double fr = rbin - r0, fc = cbin - c0, fo = obin - o0;
      for (int a = 0; a < 2; ++a)
        for (int b = 0; b < 2; ++b)
          for (int e = 0; e < 2; ++e) {
            const double wgt = (a ? fr : 1 - fr) * (b ? fc : 1 - fc) * (e ? fo : 1 - fo);
            H(r0 + 1 + a, c0 + 1 + b, (o0 + e) % n) += mag * wgt;
          }
    }
  std::array<double, 128> v{};
  for (int r = 0; r < d; ++r)
    for (int c = 0; c < d; ++c)
      for (int o = 0; o < n; ++o) v[(r * d + c) * n + o] = H(r + 1, c + 1, o);
  double norm = 0;
  for (double x : v) norm += x * x;
  norm = std::sqrt(norm);
  if (norm < 1e-12) return false;
  for (auto& x : v) x = std::min(x / norm, 0.2);
  norm = 0;
  for (double x : v) norm += x * x;
  norm = std::sqrt(norm);
  if (norm < 1e-12) return false;
  for (int i = 0; i < 128; ++i) out[i] = static_cast<float>(v[i] / norm);
  return true;
}

}  // namespace detail

inline std::vector<Feature> detect_and_describe(const ImageBuf& image, const SiftParams& p = {}) {
  img::require_nonempty(image, "detect_and_describe");
  if (std::min(image.height(), image.width()) < 16)
    throw InvalidInput("detect_and_describe: image too small (min dimension 16)");
  const ImageBuf gray = img::to_gray(image);
  const ImageBuf g0 = p.upsample ? img::resize_bilinear(gray, 2 * gray.height(), 2 * gray.width()) : gray;
  detail::Plane base(g0.height(), g0.width());
  std::copy(g0.data().begin(), g0.data().end(), base.v.begin());
  SiftParams pp = p;
  if (p.upsample) pp.init_sigma *= 2;
  const auto pyr = detail::build_pyramid(base, pp);
  const int s = p.scales_per_octave;
  const float prefilter = static_cast<float>(0.5 * p.contrast_threshold / s);

  std::vector<Feature> out;
  for (int o = 0; o < static_cast<int>(pyr.size()); ++o) {
    const auto& oct = pyr[o];
    const int h = oct.dog[0].h, w = oct.dog[0].w;
    for (int l = 1; l <= s; ++l)
      for (int y = p.border; y < h - p.border; ++y)
        for (int x = p.border; x < w - p.border; ++x) {
          if (std::abs(oct.dog[l].at(y, x)) <= prefilter) continue;
          if (!detail::is_extremum(oct.dog, l, y, x)) continue;
          int ll = l, yy = y, xx = x;
          Feature f;
          if (!detail::refine(oct, p, o, ll, yy, xx, f.kp)) continue;
          const double sigma_oct = p.sigma * std::pow(2.0, f.kp.layer / s);
          const double ox = f.kp.x / std::ldexp(1.0, o), oy = f.kp.y / std::ldexp(1.0, o);
          const auto& g = oct.gauss[ll];
          f.kp.orientation = detail::dominant_orientation(g, ox, oy, sigma_oct);
          if (!detail::describe(g, ox, oy, sigma_oct, f.kp.orientation, f.desc)) continue;
          if (p.upsample) {
            // Doubled-grid index X sits at input index X/2 - 0.25 (half-pixel centers).
            f.kp.x = f.kp.x / 2 - 0.25;
            f.kp.y = f.kp.y / 2 - 0.25;
            f.kp.scale /= 2;
          }
          f.kp.x = std::clamp(f.kp.x, 0.0, image.width() - 1.0);
          f.kp.y = std::clamp(f.kp.y, 0.0, image.height() - 1.0);
          out.push_back(f);
        }
  }
  std::sort(out.begin(), out.end(), [](const Feature& a, const Feature& b) {
    if (a.kp.y != b.kp.y) return a.kp.y < b.kp.y;
    if (a.kp.x != b.kp.x) return a.kp.x < b.kp.x;
    if (a.kp.scale != b.kp.scale) return a.kp.scale < b.kp.scale;
    return a.kp.orientation < b.kp.orientation;
  });
  // Neighbouring extrema can refine onto the same point.
  out.erase(std::unique(out.begin(), out.end(),
                        [](const Feature& a, const Feature& b) {
                          return a.kp.x == b.kp.x && a.kp.y == b.kp.y && a.kp.scale == b.kp.scale;
                        }),
            out.end());
  return out;
}

inline double descriptor_distance(const Descriptor& a, const Descriptor& b) {
  double s = 0;
  for (int i = 0; i < 128; ++i) {
    const double d = static_cast<double>(a[i]) - b[i];
    s += d * d;
  }
  return std::sqrt(s);
}

// Keeps the nearest reference descriptor when d1 < ratio * d2.
inline KeypointMatchSet match_ratio_test(const std::vector<Feature>& src, const std::vector<Feature>& ref,
                                         double ratio = 0.8) {
  if (!(ratio > 0 && ratio < 1)) throw InvalidInput("match_ratio_test: ratio must be in (0,1)");
  KeypointMatchSet out;
  if (ref.size() < 2) return out;
  for (std::size_t i = 0; i < src.size(); ++i) {
    double d1 = std::numeric_limits<double>::infinity(), d2 = d1;
    int best = -1;
    for (std::size_t j = 0; j < ref.size(); ++j) {
      const double d = descriptor_distance(src[i].desc, ref[j].desc);
      if (d < d1) {
        d2 = d1;
        d1 = d;
        best = static_cast<int>(j);
      } else if (d < d2) {
        d2 = d;
      }
    }
    if (best >= 0 && d1 < ratio * d2)
      out.matches.push_back({src[i].kp, ref[best].kp, d1, static_cast<int>(i), best});
  }
  return out;
}

}  // namespace mimicforge::match
