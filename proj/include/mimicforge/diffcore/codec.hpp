#pragma once

// Fixed latent codec standing in for a learned autoencoder. Each 8x8 RGB
// patch (mapped to [-1, 1]) is projected onto four mutually orthogonal
// patterns with unit RMS:
//   0: luminance DC              (+1 everywhere)
//   1: red-green opponent DC     sqrt(3/2) * (R - G)
//   2: yellow-blue opponent DC   (R + G - 2B) / sqrt(2)
//   3: horizontal luminance step (-1 left half, +1 right half)
// Coefficients are <x, u_k> / 192, so decode(encode(.)) is the orthogonal
// projection onto the span and encode(decode(z)) == z.

#include <array>
#include <cmath>

#include "mimicforge/diffcore/tensor.hpp"
#include "mimicforge/error.hpp"
#include "mimicforge/imgcore.hpp"

namespace mimicforge::diff {

using Latent = Tensor<float>;  // [4, H/8, W/8]

inline constexpr int kLatentChannels = 4;
inline constexpr int kPatch = 8;

namespace codec_detail {
inline double basis(int k, int x, int c) {
  switch (k) {
    case 0:
      return 1.0;
    case 1:
      return std::sqrt(1.5) * (c == 0 ? 1.0 : c == 1 ? -1.0 : 0.0);
    case 2:
      return (c == 2 ? -2.0 : 1.0) / std::sqrt(2.0);
    default:
      return x < kPatch / 2 ? -1.0 : 1.0;
  }
}
inline constexpr double kPatchSize = kPatch * kPatch * 3;
}  // namespace codec_detail

inline Latent toy_encode(const img::ImageBuf& image) {
  img::require_nonempty(image, "toy_encode");
  if (image.height() % kPatch || image.width() % kPatch)
    throw InvalidInput("toy_encode: image dims must be divisible by 8, got " + img::shape_str(image));
  const img::ImageBuf rgb = img::to_rgb(image);
  const int lh = image.height() / kPatch, lw = image.width() / kPatch;
  Latent z({kLatentChannels, lh, lw});
  for (int py = 0; py < lh; ++py)
    for (int px = 0; px < lw; ++px) {
      std::array<double, kLatentChannels> acc{};
      for (int y = 0; y < kPatch; ++y)
        for (int x = 0; x < kPatch; ++x)
          for (int c = 0; c < 3; ++c) {
            const double v = 2.0 * rgb.at(py * kPatch + y, px * kPatch + x, c) - 1.0;
            for (int k = 0; k < kLatentChannels; ++k) acc[k] += v * codec_detail::basis(k, x, c);
          }
      for (int k = 0; k < kLatentChannels; ++k)
        z.data[(static_cast<std::size_t>(k) * lh + py) * lw + px] = static_cast<float>(acc[k] / codec_detail::kPatchSize);
    }
  return z;
}

// Decoded pixels are clamped to [0,1].
inline img::ImageBuf toy_decode(const Latent& z) {
  if (z.rank() != 3 || z.shape[0] != kLatentChannels) throw InvalidInput("toy_decode: latent must be [4,h,w]");
  const int lh = z.shape[1], lw = z.shape[2];
  img::ImageBuf out(lh * kPatch, lw * kPatch, 3);
  for (int py = 0; py < lh; ++py)
    for (int px = 0; px < lw; ++px)
      for (int y = 0; y < kPatch; ++y)
        for (int x = 0; x < kPatch; ++x)
          for (int c = 0; c < 3; ++c) {
            double v = 0;
            for (int k = 0; k < kLatentChannels; ++k)
              v += z.data[(static_cast<std::size_t>(k) * lh + py) * lw + px] * codec_detail::basis(k, x, c);
            out.at(py * kPatch + y, px * kPatch + x, c) = static_cast<float>((v + 1.0) * 0.5);
          }
  img::clamp01(out);
  return out;
}

}  // namespace mimicforge::diff
