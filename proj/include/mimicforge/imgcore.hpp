#pragma once

// Raster primitives shared by every other module. Pixel centers sit at
// half-integer coordinates: pixel (row y, col x) covers [x, x+1) x [y, y+1)
// and its center is (x + 0.5, y + 0.5).

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "mimicforge/error.hpp"

namespace mimicforge::img {

class ImageBuf {
 public:
  ImageBuf() = default;
  ImageBuf(int height, int width, int channels, float fill = 0.0f)
      : height_(height), width_(width), channels_(channels) {
    if (height <= 0 || width <= 0) throw InvalidInput("ImageBuf: zero-dimension image");
    if (channels != 1 && channels != 3 && channels != 4)
      throw InvalidInput("ImageBuf: channels must be 1, 3 or 4");
    data_.assign(static_cast<std::size_t>(height) * width * channels, fill);
  }
  ImageBuf(int height, int width, int channels, std::vector<float> data)
      : height_(height), width_(width), channels_(channels), data_(std::move(data)) {
    if (height <= 0 || width <= 0) throw InvalidInput("ImageBuf: zero-dimension image");
    if (channels != 1 && channels != 3 && channels != 4)
      throw InvalidInput("ImageBuf: channels must be 1, 3 or 4");
    if (data_.size() != static_cast<std::size_t>(height) * width * channels)
      throw InvalidInput("ImageBuf: data length != h*w*c");
  }

  int height() const { return height_; }
  int width() const { return width_; }
  int channels() const { return channels_; }
  bool empty() const { return data_.empty(); }
  std::size_t size() const { return data_.size(); }

  float& at(int y, int x, int c = 0) {
    return data_[(static_cast<std::size_t>(y) * width_ + x) * channels_ + c];
  }
  float at(int y, int x, int c = 0) const {
    return data_[(static_cast<std::size_t>(y) * width_ + x) * channels_ + c];
  }

  std::span<float> data() { return data_; }
  std::span<const float> data() const { return data_; }
  std::vector<float>& storage() { return data_; }

  bool same_shape(const ImageBuf& o) const {
    return height_ == o.height_ && width_ == o.width_ && channels_ == o.channels_;
  }
  bool operator==(const ImageBuf& o) const = default;

 private:
  int height_ = 0;
  int width_ = 0;
  int channels_ = 0;
  std::vector<float> data_;
};

inline std::string shape_str(const ImageBuf& im) {
  return std::to_string(im.height()) + "x" + std::to_string(im.width()) + "x" +
         std::to_string(im.channels());
}

inline void require_nonempty(const ImageBuf& im, const char* who) {
  if (im.empty()) throw InvalidInput(std::string(who) + ": empty image");
}

inline void clamp01(ImageBuf& im) {
  for (auto& v : im.data()) v = std::isfinite(v) ? std::clamp(v, 0.0f, 1.0f) : 0.0f;
}

// Channel mean; 1-channel images are returned as-is.
inline ImageBuf to_gray(const ImageBuf& im) {
  require_nonempty(im, "to_gray");
  if (im.channels() == 1) return im;
  ImageBuf out(im.height(), im.width(), 1);
  const int cc = std::min(im.channels(), 3);
  for (int y = 0; y < im.height(); ++y)
    for (int x = 0; x < im.width(); ++x) {
      float s = 0.0f;
      for (int c = 0; c < cc; ++c) s += im.at(y, x, c);
      out.at(y, x) = s / static_cast<float>(cc);
    }
  return out;
}

// 1-channel image replicated to 3 channels; 3-channel passes through.
inline ImageBuf to_rgb(const ImageBuf& im) {
  require_nonempty(im, "to_rgb");
  if (im.channels() == 3) return im;
  ImageBuf out(im.height(), im.width(), 3);
  for (int y = 0; y < im.height(); ++y)
    for (int x = 0; x < im.width(); ++x)
      for (int c = 0; c < 3; ++c) out.at(y, x, c) = im.at(y, x, im.channels() == 1 ? 0 : c);
  return out;
}

// ---------------------------------------------------------------------------
// Padding

struct PaddingRecord {
  int top = 0;
  int left = 0;
  int orig_height = 0;
  int orig_width = 0;
  bool operator==(const PaddingRecord&) const = default;
};

struct PaddedImage {
  ImageBuf image;
  PaddingRecord padding;
};

// Centers the content in a max(h,w) square. Odd leftovers go to the
// bottom/right side.
inline PaddedImage pad_to_square(const ImageBuf& img, float fill = 0.0f) {
  require_nonempty(img, "pad_to_square");
  const int side = std::max(img.height(), img.width());
  PaddingRecord rec{(side - img.height()) / 2, (side - img.width()) / 2, img.height(), img.width()};
  if (side == img.height() && side == img.width()) return {img, rec};
  ImageBuf out(side, side, img.channels(), fill);
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x)
      for (int c = 0; c < img.channels(); ++c) out.at(y + rec.top, x + rec.left, c) = img.at(y, x, c);
  return {std::move(out), rec};
}

inline ImageBuf crop(const ImageBuf& img, int top, int left, int height, int width) {
  require_nonempty(img, "crop");
  if (height <= 0 || width <= 0 || top < 0 || left < 0 || top + height > img.height() ||
      left + width > img.width())
    throw InvalidInput("crop: window outside image");
  ImageBuf out(height, width, img.channels());
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x)
      for (int c = 0; c < img.channels(); ++c) out.at(y, x, c) = img.at(y + top, x + left, c);
  return out;
}

inline ImageBuf unpad(const ImageBuf& padded, const PaddingRecord& rec) {
  return crop(padded, rec.top, rec.left, rec.orig_height, rec.orig_width);
}

// ---------------------------------------------------------------------------
// Resampling

inline ImageBuf resize_bilinear(const ImageBuf& img, int new_h, int new_w) {
  require_nonempty(img, "resize_bilinear");
  if (new_h < 1 || new_w < 1) throw InvalidInput("resize_bilinear: target dims must be >= 1");
  if (new_h == img.height() && new_w == img.width()) return img;
  ImageBuf out(new_h, new_w, img.channels());
  const double sy = static_cast<double>(img.height()) / new_h;
  const double sx = static_cast<double>(img.width()) / new_w;
  for (int y = 0; y < new_h; ++y) {
    double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(img.height() - 1));
    int y0 = static_cast<int>(std::floor(fy));
    int y1 = std::min(y0 + 1, img.height() - 1);
    double wy = fy - y0;
    for (int x = 0; x < new_w; ++x) {
      double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(img.width() - 1));
      int x0 = static_cast<int>(std::floor(fx));
      int x1 = std::min(x0 + 1, img.width() - 1);
      double wx = fx - x0;
      for (int c = 0; c < img.channels(); ++c) {
        double top = img.at(y0, x0, c) * (1 - wx) + img.at(y0, x1, c) * wx;
        double bot = img.at(y1, x0, c) * (1 - wx) + img.at(y1, x1, c) * wx;
        out.at(y, x, c) = static_cast<float>(top * (1 - wy) + bot * wy);
      }
    }
  }
  return out;
}

// Nearest-neighbor under the same half-pixel convention; keeps masks binary.
inline ImageBuf resize_nearest(const ImageBuf& img, int new_h, int new_w) {
  require_nonempty(img, "resize_nearest");
  if (new_h < 1 || new_w < 1) throw InvalidInput("resize_nearest: target dims must be >= 1");
  ImageBuf out(new_h, new_w, img.channels());
  for (int y = 0; y < new_h; ++y) {
    int sy = std::min(img.height() - 1,
                      static_cast<int>(std::floor((y + 0.5) * img.height() / new_h)));
    for (int x = 0; x < new_w; ++x) {
      int sx = std::min(img.width() - 1, static_cast<int>(std::floor((x + 0.5) * img.width() / new_w)));
      for (int c = 0; c < img.channels(); ++c) out.at(y, x, c) = img.at(sy, sx, c);
    }
  }
  return out;
}

// Bilinear sample at continuous index coordinates (fx, fy); neighbors outside
// the raster contribute `fill`.
inline float sample_bilinear(const ImageBuf& img, double fx, double fy, int c, float fill) {
  const int x0 = static_cast<int>(std::floor(fx));
  const int y0 = static_cast<int>(std::floor(fy));
  const double wx = fx - x0;
  const double wy = fy - y0;
  auto px = [&](int y, int x) -> double {
    if (x < 0 || y < 0 || x >= img.width() || y >= img.height()) return fill;
    return img.at(y, x, c);
  };
  double v = 0.0;
  if (wx == 0.0 && wy == 0.0) return static_cast<float>(px(y0, x0));
  v += px(y0, x0) * (1 - wx) * (1 - wy);
  v += px(y0, x0 + 1) * wx * (1 - wy);
  v += px(y0 + 1, x0) * (1 - wx) * wy;
  v += px(y0 + 1, x0 + 1) * wx * wy;
  return static_cast<float>(v);
}

// ---------------------------------------------------------------------------
// Homographies act on continuous (x, y) pixel coordinates.

struct Homography {
  std::array<double, 9> m{1, 0, 0, 0, 1, 0, 0, 0, 1};

  static Homography identity() { return {}; }
  static Homography translation(double tx, double ty) { return {{1, 0, tx, 0, 1, ty, 0, 0, 1}}; }
  static Homography scaling(double sx, double sy) { return {{sx, 0, 0, 0, sy, 0, 0, 0, 1}}; }
  static Homography rotation(double radians) {
    const double c = std::cos(radians), s = std::sin(radians);
    return {{c, -s, 0, s, c, 0, 0, 0, 1}};
  }

  double operator()(int r, int c) const { return m[r * 3 + c]; }

  double det() const {
    return m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) +
           m[2] * (m[3] * m[7] - m[4] * m[6]);
  }

  bool invertible() const { return std::abs(det()) > 1e-9; }

  void normalize() {
    if (std::abs(m[8]) < 1e-15) throw InvalidInput("Homography: m[2][2] is zero, cannot normalize");
    const double s = m[8];
    for (auto& v : m) v /= s;
  }

  std::array<double, 2> apply(double x, double y) const {
    const double w = m[6] * x + m[7] * y + m[8];
    return {(m[0] * x + m[1] * y + m[2]) / w, (m[3] * x + m[4] * y + m[5]) / w};
  }
};

// a after b: compose(a, b)(p) = a(b(p)).
inline Homography compose(const Homography& a, const Homography& b) {
  Homography r;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      double s = 0;
      for (int k = 0; k < 3; ++k) s += a(i, k) * b(k, j);
      r.m[i * 3 + j] = s;
    }
  r.normalize();
  return r;
}

inline Homography invert(const Homography& h) {
  if (!h.invertible()) throw InvalidInput("invert: singular homography");
  const auto& m = h.m;
  const double d = h.det();
  Homography r;
  r.m = {(m[4] * m[8] - m[5] * m[7]) / d, (m[2] * m[7] - m[1] * m[8]) / d, (m[1] * m[5] - m[2] * m[4]) / d,
         (m[5] * m[6] - m[3] * m[8]) / d, (m[0] * m[8] - m[2] * m[6]) / d, (m[2] * m[3] - m[0] * m[5]) / d,
         (m[3] * m[7] - m[4] * m[6]) / d, (m[1] * m[6] - m[0] * m[7]) / d, (m[0] * m[4] - m[1] * m[3]) / d};
  r.normalize();
  return r;
}

// Homography about the image center: T(c) * h * T(-c).
inline Homography about_center(const Homography& h, int height, int width) {
  const double cx = width / 2.0, cy = height / 2.0;
  return compose(Homography::translation(cx, cy), compose(h, Homography::translation(-cx, -cy)));
}

enum class BorderMode { constant };

// Output pixel p samples the input at invert(h)(p). Out-of-range neighbors
// read the constant fill.
inline ImageBuf warp_perspective(const ImageBuf& img, const Homography& h, int out_h, int out_w,
                                 BorderMode = BorderMode::constant, float fill = 0.0f) {
  require_nonempty(img, "warp_perspective");
  if (!h.invertible()) throw InvalidInput("warp_perspective: singular homography");
  if (out_h < 1 || out_w < 1) throw InvalidInput("warp_perspective: output dims must be >= 1");
  const Homography inv = invert(h);
  ImageBuf out(out_h, out_w, img.channels(), fill);
  for (int y = 0; y < out_h; ++y)
    for (int x = 0; x < out_w; ++x) {
      auto [sx, sy] = inv.apply(x + 0.5, y + 0.5);
      if (!std::isfinite(sx) || !std::isfinite(sy)) continue;
      const double fx = sx - 0.5, fy = sy - 0.5;
      if (fx <= -1.0 || fy <= -1.0 || fx >= img.width() || fy >= img.height()) continue;
      for (int c = 0; c < img.channels(); ++c) out.at(y, x, c) = sample_bilinear(img, fx, fy, c, fill);
    }
  clamp01(out);
  return out;
}

// ---------------------------------------------------------------------------
// Exact index permutations

inline ImageBuf flip_horizontal(const ImageBuf& img) {
  ImageBuf out(img.height(), img.width(), img.channels());
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x)
      for (int c = 0; c < img.channels(); ++c) out.at(y, img.width() - 1 - x, c) = img.at(y, x, c);
  return out;
}

inline ImageBuf flip_vertical(const ImageBuf& img) {
  ImageBuf out(img.height(), img.width(), img.channels());
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x)
      for (int c = 0; c < img.channels(); ++c) out.at(img.height() - 1 - y, x, c) = img.at(y, x, c);
  return out;
}

// 90 degrees counter-clockwise.
inline ImageBuf rotate90(const ImageBuf& img) {
  ImageBuf out(img.width(), img.height(), img.channels());
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x)
      for (int c = 0; c < img.channels(); ++c) out.at(img.width() - 1 - x, y, c) = img.at(y, x, c);
  return out;
}

inline double mean_abs_diff(const ImageBuf& a, const ImageBuf& b) {
  if (!a.same_shape(b)) throw InvalidInput("mean_abs_diff: shape mismatch");
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a.data()[i] - b.data()[i]);
  return s / static_cast<double>(a.size());
}

}  // namespace mimicforge::img
