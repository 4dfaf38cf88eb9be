#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <sstream>
#include <vector>

#include "mimicforge/diffcore/codec.hpp"
#include "mimicforge/diffcore/model.hpp"
#include "mimicforge/diffcore/schedule.hpp"
#include "mimicforge/diffcore/tensor.hpp"
#include "mimicforge/error.hpp"
#include "mimicforge/imgcore.hpp"
#include "mimicforge/masker.hpp"
#include "mimicforge/rng.hpp"

namespace mimicforge::diff {

struct TrainConfig {
  double lr = 1e-5;
  int batch = 1;
  double ref_dropout_prob = 0.1;
  double depth_dropout_prob = 0.5;
  double guidance_scale = 5.0;
  int steps = 1000;
  std::uint64_t seed = 0;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  int log_interval = 10;

  void validate() const {
    if (!(lr > 0)) throw InvalidInput("TrainConfig: lr must be > 0");
    if (batch < 1 || steps < 0 || log_interval < 1) throw InvalidInput("TrainConfig: batch/log_interval must be >= 1");
    auto prob = [](double p) { return p >= 0 && p <= 1; };
    if (!prob(ref_dropout_prob) || !prob(depth_dropout_prob)) throw InvalidInput("TrainConfig: probabilities must be in [0,1]");
    if (guidance_scale < 0) throw InvalidInput("TrainConfig: guidance_scale must be >= 0");
  }
};

// Encoded pieces of one example. Timestep, noise and dropout flags are
// drawn when the sample is used.
struct TrainingSample {
  Latent target;               // encode(source)
  Tensor<float> mask_ch;       // [1,h,w]
  Latent background;           // encode(source with masked pixels zeroed)
  Tensor<float> depth_pooled;  // [3,h,w]; empty when no depth map exists
  Latent reference;            // encode(reference)
};

inline TrainingSample prepare_sample(const img::ImageBuf& source, const img::ImageBuf& mask, const img::ImageBuf* depth,
                                     const img::ImageBuf& reference) {
  if (source.height() != reference.height() || source.width() != reference.width())
    throw InvalidInput("prepare_sample: source " + img::shape_str(source) + " and reference " + img::shape_str(reference) +
                       " differ in size");
  TrainingSample s;
  s.target = toy_encode(source);
  s.background = toy_encode(masker::apply_mask(source, mask));
  s.mask_ch = mask_to_latent(mask);
  if (depth) {
    if (depth->height() != source.height() || depth->width() != source.width())
      throw InvalidInput("prepare_sample: depth size differs from source");
    s.depth_pooled = pool_depth(*depth);
  }
  s.reference = toy_encode(reference);
  return s;
}

struct StepDraw {
  int t = 0;
  bool reference_dropped = false;
  bool depth_dropped = true;
  Latent noise;
};

inline Latent standard_normal(const std::vector<int>& shape, Rng& rng) {
  Latent z(shape);
  std::normal_distribution<double> nd(0.0, 1.0);
  for (auto& v : z.data) v = static_cast<float>(nd(rng));
  return z;
}

inline StepDraw draw_step(const TrainingSample& s, const TrainConfig& cfg, const NoiseSchedule& sched, Rng& rng) {
  StepDraw d;
  d.reference_dropped = uniform01(rng) < cfg.ref_dropout_prob;
  const bool depth_drop_draw = uniform01(rng) < cfg.depth_dropout_prob;
  d.depth_dropped = s.depth_pooled.data.empty() || depth_drop_draw;
  d.t = uniform_int(rng, 0, sched.steps - 1);
  d.noise = standard_normal(s.target.shape, rng);
  return d;
}

// sqrt(abar) * x0 + sqrt(1 - abar) * eps
inline Latent forward_noise(const Latent& x0, const Latent& eps, double alpha_bar) {
  Latent out(x0.shape);
  const double a = std::sqrt(alpha_bar), b = std::sqrt(1.0 - alpha_bar);
  for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] = static_cast<float>(a * x0.data[i] + b * eps.data[i]);
  return out;
}

// Value-level depth projection with the model's current projector weights.
inline Latent depth_latent_from_pooled(const ParamStore<float>& params, const Tensor<float>& pooled) {
  const auto& w = params.get("depth.w").value;
  const auto& b = params.get("depth.b").value;
  const int h = pooled.shape[1], wd = pooled.shape[2], n = h * wd;
  Latent out({kLatentChannels, h, wd});
  for (int o = 0; o < kLatentChannels; ++o)
    for (int i = 0; i < n; ++i) {
      double s = b.data[o];
      for (int c = 0; c < 3; ++c) s += static_cast<double>(w.data[o * 3 + c]) * pooled.data[static_cast<std::size_t>(c) * n + i];
      out.data[static_cast<std::size_t>(o) * n + i] = static_cast<float>(s);
    }
  return out;
}

// Trainable 3->4 projection followed by 8x average pooling to the latent grid.
inline Latent depth_project(const ParamStore<float>& params, const img::ImageBuf& depth) {
  return depth_latent_from_pooled(params, pool_depth(depth));
}

inline ConditionStack make_stack(const TrainingSample& s, const StepDraw& d, const NoiseSchedule& sched,
                                 const ParamStore<float>* params) {
  ConditionStack st;
  st.noisy_latent = forward_noise(s.target, d.noise, sched.alpha_bar(d.t));
  st.mask_ch = s.mask_ch;
  st.background_latent = s.background;
  st.depth_dropped = d.depth_dropped || s.depth_pooled.data.empty();
  st.reference_dropped = d.reference_dropped;
  if (!st.depth_dropped) {
    st.depth_pooled = s.depth_pooled;
    st.depth_latent = params ? depth_latent_from_pooled(*params, s.depth_pooled) : Latent(s.target.shape);
  } else {
    st.depth_latent = Latent(s.target.shape);
  }
  return st;
}

// Builds the 13-channel condition stack for one (source, mask, depth) triple
// at step t. Noise and the depth-dropout draw come from `seed`.
inline ConditionStack assemble_conditions(const img::ImageBuf& source, const img::ImageBuf& mask,
                                          const img::ImageBuf* depth, int t, std::uint64_t seed, const TrainConfig& cfg,
                                          const NoiseSchedule& sched, const ParamStore<float>* params = nullptr) {
  if (!metrics::is_binary_mask(mask)) throw InvalidInput("assemble_conditions: mask must be single-channel binary");
  if (mask.height() != source.height() || mask.width() != source.width())
    throw InvalidInput("assemble_conditions: mask size differs from source");
  if (t < 0 || t >= sched.steps) throw InvalidInput("assemble_conditions: step out of range");
  const TrainingSample s = prepare_sample(source, mask, depth, source);
  Rng rng(seed);
  StepDraw d;
  d.t = t;
  d.depth_dropped = uniform01(rng) < cfg.depth_dropout_prob || !depth;
  d.noise = standard_normal(s.target.shape, rng);
  return make_stack(s, d, sched, params);
}

template <class T>
class Adam {
 public:
  void reset(const ParamStore<T>& params) {
    m_.clear();
    v_.clear();
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_.emplace_back(params[i].value.shape);
      v_.emplace_back(params[i].value.shape);
    }
    steps_ = 0;
  }

  void update(ParamStore<T>& params, double lr, double b1, double b2, double eps) {
    if (m_.size() != params.size()) reset(params);
    ++steps_;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& p = params[i];
      auto& m = m_[i].data;
      auto& v = v_[i].data;
      for (std::size_t k = 0; k < p.value.numel(); ++k) {
        const double g = p.grad.data[k];
        m[k] = static_cast<T>(b1 * m[k] + (1 - b1) * g);
        v[k] = static_cast<T>(b2 * v[k] + (1 - b2) * g * g);
        const double mh = m[k] / c1, vh = v[k] / c2;
        p.value.data[k] = static_cast<T>(p.value.data[k] - lr * mh / (std::sqrt(vh) + eps));
      }
    }
  }

  long steps() const { return steps_; }
  void set_steps(long s) { steps_ = s; }
  std::vector<Tensor<T>>& first_moments() { return m_; }
  std::vector<Tensor<T>>& second_moments() { return v_; }

 private:
  std::vector<Tensor<T>> m_, v_;
  long steps_ = 0;
};

// Noise-prediction objective for the dual U-Net: MSE(eps_hat, eps) over the
// latent grid.
template <class T>
class DiffusionObjective {
 public:
  DiffusionObjective(DualUNet<T>& model, const NoiseSchedule& sched) : model_(model), sched_(sched) {}

  ParamStore<T>& params() { return model_.params(); }

  double accumulate(const TrainingSample& s, const StepDraw& d) {
    const ConditionStack st = make_stack(s, d, sched_, nullptr);
    Tape<T> tape;
    Var eps_hat = model_.forward(tape, st, d.reference_dropped ? nullptr : &s.reference, d.t);
    Var loss = ops::mse(tape, eps_hat, d.noise.template cast<T>());
    tape.backward(loss);
    return static_cast<double>(tape.value(loss).data[0]);
  }

 private:
  DualUNet<T>& model_;
  const NoiseSchedule& sched_;
};

struct StepResult {
  double loss = 0;
  int reference_dropped = 0;
  int depth_dropped = 0;
};

// One optimizer step over a batch. `Objective` provides params() and
// accumulate(sample, draw) -> loss, adding into parameter gradients.
template <class Objective, class T = float>
StepResult train_step(std::span<const TrainingSample> batch, Objective& objective, Adam<T>& opt, const TrainConfig& cfg,
                      const NoiseSchedule& sched, Rng& rng) {
  if (batch.empty()) throw InvalidInput("train_step: empty batch");
  auto& params = objective.params();
  params.zero_grad();
  StepResult r;
  for (const auto& s : batch) {
    const StepDraw d = draw_step(s, cfg, sched, rng);
    r.reference_dropped += d.reference_dropped;
    r.depth_dropped += d.depth_dropped;
    const double l = objective.accumulate(s, d);
    if (!std::isfinite(l)) {
      std::ostringstream os;
      os << "train_step: non-finite loss (t=" << d.t << ", reference_dropped=" << d.reference_dropped
         << ", depth_dropped=" << d.depth_dropped << ", optimizer step " << opt.steps() << ")";
      throw RuntimeFailure(os.str());
    }
    r.loss += l;
  }
  const T inv = T(1) / static_cast<T>(batch.size());
  for (std::size_t i = 0; i < params.size(); ++i)
    for (auto& g : params[i].grad.data) g *= inv;
  opt.update(params, cfg.lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
  r.loss /= static_cast<double>(batch.size());
  return r;
}

}  // namespace mimicforge::diff
