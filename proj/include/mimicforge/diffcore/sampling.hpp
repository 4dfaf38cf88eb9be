#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "mimicforge/diffcore/codec.hpp"
#include "mimicforge/diffcore/model.hpp"
#include "mimicforge/diffcore/schedule.hpp"
#include "mimicforge/diffcore/training.hpp"
#include "mimicforge/error.hpp"
#include "mimicforge/imgcore.hpp"
#include "mimicforge/masker.hpp"
#include "mimicforge/metrics.hpp"
#include "mimicforge/rng.hpp"

namespace mimicforge::diff {

// (1 - s) * eps_drop + s * eps_ref. Algebraically eps_drop + s * (eps_ref - eps_drop),
// but this form is exact at s = 0 and s = 1.
inline Latent guidance_combine(const Latent& eps_drop, const Latent& eps_ref, double scale) {
  if (eps_drop.shape != eps_ref.shape) throw InvalidInput("guidance_combine: shape mismatch");
  if (scale == 0.0) return eps_drop;
  if (scale == 1.0) return eps_ref;
  Latent out(eps_drop.shape);
  const float a = static_cast<float>(1.0 - scale), b = static_cast<float>(scale);
  for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] = a * eps_drop.data[i] + b * eps_ref.data[i];
  return out;
}

struct SampleOptions {
  double scale = 5.0;
  int steps = 50;
  std::uint64_t seed = 0;
};

inline Latent predict_noise(DualUNet<float>& model, const ConditionStack& stack, const Latent* ref, int t) {
  Tape<float> tape;
  Var out = model.forward(tape, stack, ref, t);
  return tape.value(out);
}

// Deterministic DDIM (eta = 0) with reference guidance. Pixels outside the
// mask are copied from `source` after decoding.
inline img::ImageBuf cfg_sample(const img::ImageBuf& source, const img::ImageBuf& mask, const img::ImageBuf& reference,
                                const img::ImageBuf* depth, const SampleOptions& opt, DualUNet<float>& model,
                                const NoiseSchedule& sched) {
  if (!model.initialized() || model.trained_steps() == 0)
    throw InvalidState("cfg_sample: model has no trained parameters");
  if (!(opt.scale >= 0)) throw InvalidInput("cfg_sample: scale must be >= 0");
  if (!metrics::is_binary_mask(mask)) throw InvalidInput("cfg_sample: mask must be single-channel binary");
  if (source.height() != reference.height() || source.width() != reference.width())
    throw InvalidInput("cfg_sample: source " + img::shape_str(source) + " and reference " + img::shape_str(reference) +
                       " differ");
  if (mask.height() != source.height() || mask.width() != source.width())
    throw InvalidInput("cfg_sample: mask size differs from source");
  if (source.height() != model.config().image_size || source.width() != model.config().image_size)
    throw InvalidInput("cfg_sample: image must be " + std::to_string(model.config().image_size) + " square, got " +
                       img::shape_str(source));

  const TrainingSample s = prepare_sample(source, mask, depth, reference);
  ConditionStack stack;
  stack.mask_ch = s.mask_ch;
  stack.background_latent = s.background;
  stack.depth_dropped = s.depth_pooled.data.empty();
  if (!stack.depth_dropped) {
    stack.depth_pooled = s.depth_pooled;
    stack.depth_latent = depth_latent_from_pooled(model.params(), s.depth_pooled);
  } else {
    stack.depth_latent = Latent(s.target.shape);
  }

  Rng rng(derive_seed(opt.seed, {0x5a3d1e}));
  Latent x = standard_normal(s.target.shape, rng);
  Latent x0(x.shape);
  const std::vector<int> ts = sched.sampling_timesteps(opt.steps);
  for (std::size_t k = 0; k < ts.size(); ++k) {
    const int t = ts[k];
    const int t_prev = k + 1 < ts.size() ? ts[k + 1] : -1;
    stack.noisy_latent = x;
    Latent eps_drop, eps_ref;
    if (opt.scale != 1.0) {
      stack.reference_dropped = true;
      eps_drop = predict_noise(model, stack, nullptr, t);
    }
    if (opt.scale != 0.0) {
      stack.reference_dropped = false;
      eps_ref = predict_noise(model, stack, &s.reference, t);
    }
    const Latent eps = opt.scale == 1.0 ? eps_ref : opt.scale == 0.0 ? eps_drop : guidance_combine(eps_drop, eps_ref, opt.scale);
    const double ab = sched.alpha_bar(t), ab_prev = sched.alpha_bar(t_prev);
    const double sa = std::sqrt(ab), sb = std::sqrt(1.0 - ab);
    for (std::size_t i = 0; i < x.numel(); ++i) {
      const double p0 = std::clamp((x.data[i] - sb * eps.data[i]) / sa, -1.0, 1.0);
      const double e = (x.data[i] - sa * p0) / sb;
      x0.data[i] = static_cast<float>(p0);
      x.data[i] = static_cast<float>(std::sqrt(ab_prev) * p0 + std::sqrt(1.0 - ab_prev) * e);
    }
  }

  img::ImageBuf out = toy_decode(x0);
  const img::ImageBuf src = img::to_rgb(source);
  for (int y = 0; y < out.height(); ++y)
    for (int xx = 0; xx < out.width(); ++xx)
      if (mask.at(y, xx, 0) < 0.5f)
        for (int c = 0; c < 3; ++c) out.at(y, xx, c) = src.at(y, xx, c);
  return out;
}

}  // namespace mimicforge::diff
