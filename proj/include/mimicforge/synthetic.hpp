#pragma once

// Procedural data: moving-shape "videos" on striped backgrounds, segmented
// stills, and a cluttered natural-looking test image for feature matching.

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

#include "mimicforge/error.hpp"
#include "mimicforge/imgcore.hpp"
#include "mimicforge/rng.hpp"
#include "mimicforge/sampler.hpp"

namespace mimicforge::synth {

using img::ImageBuf;
using Color = std::array<float, 3>;

enum class ShapeKind { disk, square, triangle };

struct Shape {
  ShapeKind kind = ShapeKind::disk;
  double cx = 0, cy = 0, radius = 4, angle = 0;
  double vx = 0, vy = 0, spin = 0;  // per frame
  double depth = 0.8;
  Color color{1, 0, 0};
};

struct Scene {
  int size = 32;
  Color bg_a{0, 0, 0}, bg_b{1, 1, 1};
  double stripe_freq = 0.3, stripe_angle = 0, stripe_phase = 0;
  std::vector<Shape> shapes;
};

inline Color random_color(Rng& rng, double min_spread = 0.35) {
  for (;;) {
    Color c{static_cast<float>(uniform01(rng)), static_cast<float>(uniform01(rng)), static_cast<float>(uniform01(rng))};
    const float hi = std::max({c[0], c[1], c[2]}), lo = std::min({c[0], c[1], c[2]});
    if (hi - lo >= min_spread) return c;
  }
}

inline Scene random_scene(std::uint64_t seed, int size = 32, int min_shapes = 1, int max_shapes = 2) {
  if (size < 8) throw InvalidInput("random_scene: size must be >= 8");
  Rng rng(seed);
  Scene s;
  s.size = size;
  s.bg_a = random_color(rng, 0.1);
  s.bg_b = random_color(rng, 0.1);
  s.stripe_freq = uniform(rng, 2.0, 5.0) * 2 * std::numbers::pi / size;
  s.stripe_angle = uniform(rng, 0, std::numbers::pi);
  s.stripe_phase = uniform(rng, 0, 2 * std::numbers::pi);
  const int n = uniform_int(rng, min_shapes, max_shapes);
  for (int i = 0; i < n; ++i) {
    Shape sh;
    sh.kind = static_cast<ShapeKind>(uniform_int(rng, 0, 2));
    sh.radius = uniform(rng, 0.16, 0.3) * size;
    sh.cx = uniform(rng, 0.25, 0.75) * size;
    sh.cy = uniform(rng, 0.25, 0.75) * size;
    sh.angle = uniform(rng, 0, 2 * std::numbers::pi);
    const double speed = uniform(rng, 0.03, 0.08) * size, dir = uniform(rng, 0, 2 * std::numbers::pi);
    sh.vx = speed * std::cos(dir);
    sh.vy = speed * std::sin(dir);
    sh.spin = uniform(rng, -0.25, 0.25);
    sh.depth = uniform(rng, 0.6, 1.0);
    sh.color = random_color(rng);
    s.shapes.push_back(sh);
  }
  return s;
}

namespace detail {
inline bool inside(const Shape& s, double x, double y, int frame, int size) {
  // Shapes bounce off the borders by reflecting their centre path.
  auto reflect = [size](double p) {
    const double period = 2.0 * size;
    double m = std::fmod(p, period);
    if (m < 0) m += period;
    return m <= size ? m : period - m;
  };
  const double cx = reflect(s.cx + s.vx * frame), cy = reflect(s.cy + s.vy * frame);
  const double a = s.angle + s.spin * frame;
  const double dx = x - cx, dy = y - cy;
  const double u = std::cos(a) * dx + std::sin(a) * dy, v = -std::sin(a) * dx + std::cos(a) * dy;
  switch (s.kind) {
    case ShapeKind::disk:
      return u * u + v * v <= s.radius * s.radius;
    case ShapeKind::square:
      return std::abs(u) <= s.radius * 0.8 && std::abs(v) <= s.radius * 0.8;
    case ShapeKind::triangle: {
      // Equilateral triangle with circumradius `radius`.
      for (int k = 0; k < 3; ++k) {
        const double th = 2 * std::numbers::pi * k / 3;
        if (std::cos(th) * u + std::sin(th) * v > s.radius * 0.5) return false;
      }
      return true;
    }
  }
  return false;
}
}  // namespace detail

struct RenderedFrame {
  ImageBuf image;
  ImageBuf depth;                     // 1 channel
  std::vector<ImageBuf> object_masks; // one per shape, binary
};

// 2x2 supersampled rendering; later shapes occlude earlier ones.
inline RenderedFrame render(const Scene& s, int frame) {
  const int n = s.size;
  RenderedFrame out{ImageBuf(n, n, 3), ImageBuf(n, n, 1), {}};
  for (std::size_t k = 0; k < s.shapes.size(); ++k) out.object_masks.emplace_back(n, n, 1);
  const double ca = std::cos(s.stripe_angle), sa = std::sin(s.stripe_angle);
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      double acc[3] = {0, 0, 0}, dep = 0;
      std::vector<int> hits(s.shapes.size(), 0);
      for (int sy = 0; sy < 2; ++sy)
        for (int sx = 0; sx < 2; ++sx) {
          const double px = x + 0.25 + 0.5 * sx, py = y + 0.25 + 0.5 * sy;
          const double t = 0.5 + 0.5 * std::sin(s.stripe_freq * (ca * px + sa * py) + s.stripe_phase);
          Color c;
          for (int ch = 0; ch < 3; ++ch) c[ch] = static_cast<float>(s.bg_a[ch] * (1 - t) + s.bg_b[ch] * t);
          double d = 0.1 + 0.3 * py / n;
          int top = -1;
          for (std::size_t k = 0; k < s.shapes.size(); ++k)
            if (detail::inside(s.shapes[k], px, py, frame, n)) top = static_cast<int>(k);
          if (top >= 0) {
            c = s.shapes[top].color;
            d = s.shapes[top].depth;
            ++hits[top];
          }
          for (int ch = 0; ch < 3; ++ch) acc[ch] += c[ch];
          dep += d;
        }
      for (int ch = 0; ch < 3; ++ch) out.image.at(y, x, ch) = static_cast<float>(acc[ch] / 4);
      out.depth.at(y, x, 0) = static_cast<float>(dep / 4);
      for (std::size_t k = 0; k < hits.size(); ++k)
        if (hits[k] >= 2) out.object_masks[k].at(y, x, 0) = 1.0f;
    }
  return out;
}

inline std::vector<RenderedFrame> moving_shapes_video(std::uint64_t seed, int size = 32, int frames = 8) {
  const Scene s = random_scene(seed, size);
  std::vector<RenderedFrame> out;
  out.reserve(frames);
  for (int f = 0; f < frames; ++f) out.push_back(render(s, f));
  return out;
}

// Still with every non-empty shape mask attached.
inline sampler::SegmentedStill shapes_still(std::uint64_t seed, int size = 32, const std::string& id = "") {
  const Scene s = random_scene(seed, size, 1, 3);
  RenderedFrame f = render(s, 0);
  sampler::SegmentedStill st;
  st.id = id;
  st.image = std::move(f.image);
  for (auto& m : f.object_masks) {
    bool any = false;
    for (float v : m.data()) any = any || v > 0;
    if (any) st.object_masks.push_back(std::move(m));
  }
  if (st.object_masks.empty()) {
    ImageBuf m(size, size, 1);
    for (int y = size / 4; y < 3 * size / 4; ++y)
      for (int x = size / 4; x < 3 * size / 4; ++x) m.at(y, x, 0) = 1;
    st.object_masks.push_back(std::move(m));
  }
  return st;
}

// Cluttered RGB image: smooth multi-scale value noise plus random blobs,
// rectangles and line segments. Rich in corners and blobs at several scales.
inline ImageBuf natural_image(int h, int w, std::uint64_t seed) {
  if (h < 1 || w < 1) throw InvalidInput("natural_image: empty size");
  Rng rng(seed);
  ImageBuf out(h, w, 3);
  // Value noise on coarse lattices, bilinearly upsampled.
  for (int cell : {32, 16, 8}) {
    const int gh = h / cell + 2, gw = w / cell + 2;
    std::vector<Color> grid(static_cast<std::size_t>(gh) * gw);
    for (auto& g : grid) g = random_color(rng, 0.0);
    const float amp = cell == 32 ? 0.5f : cell == 16 ? 0.3f : 0.2f;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const double fy = static_cast<double>(y) / cell, fx = static_cast<double>(x) / cell;
        const int y0 = static_cast<int>(fy), x0 = static_cast<int>(fx);
        const double ty = fy - y0, tx = fx - x0;
        for (int c = 0; c < 3; ++c) {
          auto g = [&](int yy, int xx) { return grid[static_cast<std::size_t>(yy) * gw + xx][c]; };
          const double v = (1 - ty) * ((1 - tx) * g(y0, x0) + tx * g(y0, x0 + 1)) +
                           ty * ((1 - tx) * g(y0 + 1, x0) + tx * g(y0 + 1, x0 + 1));
          out.at(y, x, c) += static_cast<float>(amp * v);
        }
      }
  }
  const int n_objects = std::max(12, h * w / 1200);
  for (int k = 0; k < n_objects; ++k) {
    const Color col = random_color(rng, 0.2);
    const int kind = uniform_int(rng, 0, 2);
    const double cx = uniform(rng, 0, w), cy = uniform(rng, 0, h);
    const double r = uniform(rng, 2.0, std::max(3.0, std::min(h, w) / 10.0));
    const double a = uniform(rng, 0, std::numbers::pi);
    const double alpha = uniform(rng, 0.6, 1.0);
    for (int y = std::max(0, static_cast<int>(cy - 2 * r)); y < std::min(h, static_cast<int>(cy + 2 * r) + 1); ++y)
      for (int x = std::max(0, static_cast<int>(cx - 2 * r)); x < std::min(w, static_cast<int>(cx + 2 * r) + 1); ++x) {
        const double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
        const double u = std::cos(a) * dx + std::sin(a) * dy, v = -std::sin(a) * dx + std::cos(a) * dy;
        double wgt = 0;
        if (kind == 0) wgt = std::exp(-(dx * dx + dy * dy) / (0.5 * r * r));
        else if (kind == 1) wgt = (std::abs(u) <= r && std::abs(v) <= 0.6 * r) ? 1.0 : 0.0;
        else wgt = (std::abs(v) <= 0.6 && std::abs(u) <= 1.8 * r) ? 1.0 : 0.0;
        wgt *= alpha;
        for (int c = 0; c < 3; ++c) out.at(y, x, c) = static_cast<float>((1 - wgt) * out.at(y, x, c) + wgt * col[c]);
      }
  }
  img::clamp01(out);
  return out;
}

}  // namespace mimicforge::synth
