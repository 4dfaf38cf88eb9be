#pragma once

#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mimicforge/error.hpp"
#include "mimicforge/imgcore.hpp"

namespace mimicforge::metrics {

using img::ImageBuf;

struct SsimParams {
  int window = 11;
  double k1 = 0.01;
  double k2 = 0.03;
  double dynamic_range = 1.0;
  double sigma = 1.5;

  void validate() const {
    if (window < 3 || window % 2 == 0) throw InvalidInput("SsimParams: window must be odd and >= 3");
    if (k1 <= 0 || k2 <= 0) throw InvalidInput("SsimParams: k1, k2 must be positive");
    if (dynamic_range <= 0 || sigma <= 0) throw InvalidInput("SsimParams: range and sigma must be positive");
  }
};

inline constexpr double kPsnrInfinity = std::numeric_limits<double>::infinity();

struct MetricReport {
  std::optional<double> ssim;
  std::optional<double> psnr;
  std::map<std::string, double> embed_scores;  // dino_i, clip_i, clip_t
};

namespace detail {

inline std::vector<double> gaussian_kernel(int window, double sigma) {
  std::vector<double> k(window);
  const int r = window / 2;
  double s = 0;
  for (int i = 0; i < window; ++i) {
    k[i] = std::exp(-0.5 * (i - r) * (i - r) / (sigma * sigma));
    s += k[i];
  }
  for (auto& v : k) v /= s;
  return k;
}

// Separable 'valid' filtering: output is (h-window+1) x (w-window+1).
inline std::vector<double> filter_valid(const std::vector<double>& src, int h, int w, const std::vector<double>& k) {
  const int n = static_cast<int>(k.size());
  const int ow = w - n + 1, oh = h - n + 1;
  std::vector<double> tmp(static_cast<std::size_t>(h) * ow);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < ow; ++x) {
      double s = 0;
      for (int i = 0; i < n; ++i) s += k[i] * src[static_cast<std::size_t>(y) * w + x + i];
      tmp[static_cast<std::size_t>(y) * ow + x] = s;
    }
  std::vector<double> out(static_cast<std::size_t>(oh) * ow);
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x) {
      double s = 0;
      for (int i = 0; i < n; ++i) s += k[i] * tmp[static_cast<std::size_t>(y + i) * ow + x];
      out[static_cast<std::size_t>(y) * ow + x] = s;
    }
  return out;
}

}  // namespace detail

// Mean local SSIM over Gaussian-weighted windows (valid region only).
// Color inputs are averaged to gray first.
inline double ssim(const ImageBuf& a, const ImageBuf& b, const SsimParams& p = {}) {
  p.validate();
  img::require_nonempty(a, "ssim");
  img::require_nonempty(b, "ssim");
  if (a.height() != b.height() || a.width() != b.width())
    throw InvalidInput("ssim: shape mismatch " + img::shape_str(a) + " vs " + img::shape_str(b));
  const int h = a.height(), w = a.width();
  if (h < p.window || w < p.window) throw InvalidInput("ssim: image smaller than window");
  const ImageBuf ga = img::to_gray(a), gb = img::to_gray(b);
  const std::size_t n = static_cast<std::size_t>(h) * w;
  std::vector<double> x(n), y(n), xx(n), yy(n), xy(n);
  for (std::size_t i = 0; i < n; ++i) {
    x[i] = ga.data()[i];
    y[i] = gb.data()[i];
    xx[i] = x[i] * x[i];
    yy[i] = y[i] * y[i];
    xy[i] = x[i] * y[i];
  }
  const auto k = detail::gaussian_kernel(p.window, p.sigma);
  const auto mx = detail::filter_valid(x, h, w, k), my = detail::filter_valid(y, h, w, k);
  const auto sxx = detail::filter_valid(xx, h, w, k), syy = detail::filter_valid(yy, h, w, k),
             sxy = detail::filter_valid(xy, h, w, k);
  const double c1 = (p.k1 * p.dynamic_range) * (p.k1 * p.dynamic_range);
  const double c2 = (p.k2 * p.dynamic_range) * (p.k2 * p.dynamic_range);
  double total = 0;
  for (std::size_t i = 0; i < mx.size(); ++i) {
    const double mu_x = mx[i], mu_y = my[i];
    const double var_x = sxx[i] - mu_x * mu_x, var_y = syy[i] - mu_y * mu_y;
    const double cov = sxy[i] - mu_x * mu_y;
    total += ((2 * mu_x * mu_y + c1) * (2 * cov + c2)) /
             ((mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2));
  }
  return std::clamp(total / static_cast<double>(mx.size()), -1.0, 1.0);
}

inline double mse(const ImageBuf& a, const ImageBuf& b) {
  if (!a.same_shape(b)) throw InvalidInput("mse: shape mismatch " + img::shape_str(a) + " vs " + img::shape_str(b));
  img::require_nonempty(a, "mse");
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a.data()[i]) - b.data()[i];
    s += d * d;
  }
  return s / static_cast<double>(a.size());
}

// Returns kPsnrInfinity for identical inputs.
inline double psnr(const ImageBuf& a, const ImageBuf& b, double range = 1.0) {
  const double e = mse(a, b);
  if (e == 0.0) return kPsnrInfinity;
  return 10.0 * std::log10(range * range / e);
}

inline bool is_binary_mask(const ImageBuf& mask) {
  if (mask.channels() != 1) return false;
  for (float v : mask.data())
    if (v != 0.0f && v != 1.0f) return false;
  return true;
}

struct BoundingBox {
  int top, left, height, width;
};

inline BoundingBox mask_bbox(const ImageBuf& mask) {
  int y0 = mask.height(), y1 = -1, x0 = mask.width(), x1 = -1;
  for (int y = 0; y < mask.height(); ++y)
    for (int x = 0; x < mask.width(); ++x)
      if (mask.at(y, x) > 0.5f) {
        y0 = std::min(y0, y);
        y1 = std::max(y1, y);
        x0 = std::min(x0, x);
        x1 = std::max(x1, x);
      }
  if (y1 < 0) throw InvalidInput("mask_bbox: mask has no positive pixel");
  return {y0, x0, y1 - y0 + 1, x1 - x0 + 1};
}

// Tight bounding box of the mask, cropped from img; out-of-mask pixels zeroed.
inline ImageBuf masked_crop(const ImageBuf& img, const ImageBuf& mask) {
  img::require_nonempty(img, "masked_crop");
  if (!is_binary_mask(mask)) throw InvalidInput("masked_crop: mask must be single-channel binary");
  if (mask.height() != img.height() || mask.width() != img.width())
    throw InvalidInput("masked_crop: mask/image size mismatch");
  const auto bb = mask_bbox(mask);
  ImageBuf out = img::crop(img, bb.top, bb.left, bb.height, bb.width);
  for (int y = 0; y < bb.height; ++y)
    for (int x = 0; x < bb.width; ++x)
      if (mask.at(y + bb.top, x + bb.left) == 0.0f)
        for (int c = 0; c < out.channels(); ++c) out.at(y, x, c) = 0.0f;
  return out;
}

inline double cosine_similarity(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size() || u.empty()) throw InvalidInput("cosine_similarity: lengths must match and be nonzero");
  double dot = 0, nu = 0, nv = 0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    dot += u[i] * v[i];
    nu += u[i] * u[i];
    nv += v[i] * v[i];
  }
  if (nu == 0 || nv == 0) throw InvalidInput("cosine_similarity: zero-norm vector");
  return std::clamp(dot / (std::sqrt(nu) * std::sqrt(nv)), -1.0, 1.0);
}

// Fixed downsample used for frame-pair selection: 64x64 gray.
inline double selection_ssim(const ImageBuf& a, const ImageBuf& b, int side = 64) {
  return ssim(img::resize_bilinear(img::to_gray(a), side, side), img::resize_bilinear(img::to_gray(b), side, side));
}

}  // namespace mimicforge::metrics
