#pragma once

// Miniature dual U-Net.
//
// Imitative U-Net: 13-channel condition stack -> predicted noise (4 ch).
// Three resolutions (widths w0, w1, w2); the bottleneck and both decoder
// stages carry an attention block whose keys/values are extended with the
// reference stream's hidden states at the matching stage, followed by a
// cross-attention onto a single global reference token (mean-pooled
// reference bottleneck features through a learned projection).
//
// Reference U-Net: same encoder/decoder skeleton on the clean 4-channel
// reference latent at t = 0; it only produces features, never noise.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mimicforge/diffcore/codec.hpp"
#include "mimicforge/diffcore/ops.hpp"
#include "mimicforge/diffcore/schedule.hpp"
#include "mimicforge/diffcore/tensor.hpp"
#include "mimicforge/error.hpp"
#include "mimicforge/imgcore.hpp"
#include "mimicforge/masker.hpp"
#include "mimicforge/rng.hpp"

namespace mimicforge::diff {

inline constexpr int kConditionChannels = 13;
inline constexpr int kTimeFreqDim = 32;

struct UNetConfig {
  int image_size = 64;
  std::array<int, 3> widths{32, 64, 128};
  int time_dim = 64;
  int train_timesteps = 1000;

  int latent_size() const { return image_size / kPatch; }
  void validate() const {
    if (image_size < kPatch || image_size % kPatch) throw InvalidInput("UNetConfig: image_size must be a positive multiple of 8");
    for (int w : widths)
      if (w < 1) throw InvalidInput("UNetConfig: widths must be positive");
    if (time_dim < 1 || train_timesteps < 2) throw InvalidInput("UNetConfig: bad time settings");
  }
  bool operator==(const UNetConfig&) const = default;
};

// Pooled depth (3 ch at latent resolution); a 1-channel depth map is
// replicated. Average pooling commutes with the per-pixel linear projector,
// so the projector can run after pooling.
inline Tensor<float> pool_depth(const img::ImageBuf& depth) {
  img::require_nonempty(depth, "pool_depth");
  if (depth.height() % kPatch || depth.width() % kPatch) throw InvalidInput("pool_depth: dims must be divisible by 8");
  const img::ImageBuf d3 = img::to_rgb(depth);
  const int lh = depth.height() / kPatch, lw = depth.width() / kPatch;
  Tensor<float> out({3, lh, lw});
  for (int c = 0; c < 3; ++c)
    for (int py = 0; py < lh; ++py)
      for (int px = 0; px < lw; ++px) {
        double s = 0;
        for (int y = 0; y < kPatch; ++y)
          for (int x = 0; x < kPatch; ++x) s += d3.at(py * kPatch + y, px * kPatch + x, c);
        out.data[(static_cast<std::size_t>(c) * lh + py) * lw + px] = static_cast<float>(s / (kPatch * kPatch));
      }
  return out;
}

// Nearest-neighbor downsample of a binary mask to the latent grid.
inline Tensor<float> mask_to_latent(const img::ImageBuf& mask) {
  const img::ImageBuf small = img::resize_nearest(mask, mask.height() / kPatch, mask.width() / kPatch);
  return Tensor<float>({1, small.height(), small.width()}, std::vector<float>(small.data().begin(), small.data().end()));
}

struct ConditionStack {
  Latent noisy_latent;        // [4,h,w]
  Tensor<float> mask_ch;      // [1,h,w]
  Latent background_latent;   // [4,h,w]
  Latent depth_latent;        // [4,h,w], zeros when dropped
  Tensor<float> depth_pooled; // [3,h,w] projector input; empty when dropped
  bool depth_dropped = true;
  bool reference_dropped = false;

  // [noisy(4) | mask(1) | background(4) | depth(4)]
  Tensor<float> concat() const {
    const int h = noisy_latent.shape[1], w = noisy_latent.shape[2];
    Tensor<float> out({kConditionChannels, h, w});
    auto it = out.data.begin();
    for (const auto* part : {&noisy_latent, &mask_ch, &background_latent, &depth_latent})
      it = std::copy(part->data.begin(), part->data.end(), it);
    return out;
  }
};

template <class T>
class DualUNet {
 public:
  struct RefFeatures {
    Var mid, dec1, dec0;  // token matrices [N, C] per injection stage
    Var global;           // [1, w2]
  };

  DualUNet() = default;
  DualUNet(const UNetConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(seed);
    build(rng);
    initialized_ = true;
  }

  const UNetConfig& config() const { return cfg_; }
  ParamStore<T>& params() { return params_; }
  const ParamStore<T>& params() const { return params_; }
  bool initialized() const { return initialized_; }
  // Optimizer steps applied so far; sampling refuses a model at step 0.
  std::uint64_t trained_steps() const { return trained_steps_; }
  void set_trained_steps(std::uint64_t s) { trained_steps_ = s; }

  // Copies parameter values from a model of another scalar type.
  template <class U>
  void load_from(const DualUNet<U>& other) {
    for (std::size_t i = 0; i < params_.size(); ++i) {
      const auto& src = other.params().get(params_[i].name).value;
      params_[i].value = src.template cast<T>();
    }
    trained_steps_ = other.trained_steps();
  }

  // Per-pixel 3->4 projection of pooled depth.
  Var depth_project(Tape<T>& tape, Var depth_pooled) {
    const std::vector<int> s = tape.value(depth_pooled).shape;
    auto tok = ops::to_tokens(tape, depth_pooled);
    auto y = ops::linear(tape, tok, P(tape, "depth.w"), P(tape, "depth.b"));
    return ops::from_tokens(tape, y, s[1], s[2]);
  }

  RefFeatures reference_stream(Tape<T>& tape, const Latent& ref_latent) {
    require_ready();
    Var temb = time_embedding(tape, "ref", 0);
    Var x = tape.constant(ref_latent.template cast<T>());
    Var e0 = res_block(tape, "ref.enc0", conv(tape, "ref.in", x), temb);
    Var e1 = res_block(tape, "ref.enc1", conv(tape, "ref.down0", ops::avgpool2(tape, e0)), temb);
    Var m = res_block(tape, "ref.mid", conv(tape, "ref.down1", ops::avgpool2(tape, e1)), temb);
    Var d1 = up_block(tape, "ref.up1", m, e1, temb);
    Var d0 = up_block(tape, "ref.up0", d1, e0, temb);
    RefFeatures f;
    f.mid = ops::to_tokens(tape, m);
    f.dec1 = ops::to_tokens(tape, d1);
    f.dec0 = ops::to_tokens(tape, d0);
    f.global = ops::linear(tape, ops::mean_tokens(tape, f.mid), P(tape, "ref.global.w"), P(tape, "ref.global.b"));
    return f;
  }

  // Predicted noise [4,h,w]. `ref == nullptr` drops the reference stream:
  // no extra keys/values anywhere and a zero global token.
  Var forward(Tape<T>& tape, const ConditionStack& stack, const Latent* ref, int t) {
    require_ready();
    if (t < 0 || t >= cfg_.train_timesteps) throw InvalidInput("unet_forward: timestep out of range");
    const int h = stack.noisy_latent.shape[1], wd = stack.noisy_latent.shape[2];
    std::optional<RefFeatures> rf;
    if (ref && !stack.reference_dropped) {
      if (ref->shape != stack.noisy_latent.shape) throw InvalidInput("unet_forward: reference latent shape mismatch");
      rf = reference_stream(tape, *ref);
    }
    Var depth;
    if (!stack.depth_dropped && !stack.depth_pooled.data.empty())
      depth = depth_project(tape, tape.constant(stack.depth_pooled.template cast<T>()));
    else
      depth = tape.constant(Tensor<T>({kLatentChannels, h, wd}));
    Var head = tape.constant(head_channels(stack));
    Var x = ops::concat_channels(tape, head, depth);
    return imitative(tape, x, t, rf ? &*rf : nullptr);
  }

  Var imitative(Tape<T>& tape, Var stack13, int t, const RefFeatures* rf) {
    Var temb = time_embedding(tape, "imit", t);
    Var global = rf ? rf->global : tape.constant(Tensor<T>({1, cfg_.widths[2]}));
    Var e0 = res_block(tape, "imit.enc0", conv(tape, "imit.in", stack13), temb);
    Var e1 = res_block(tape, "imit.enc1", conv(tape, "imit.down0", ops::avgpool2(tape, e0)), temb);
    Var m = res_block(tape, "imit.mid", conv(tape, "imit.down1", ops::avgpool2(tape, e1)), temb);
    m = attention_block(tape, "imit.mid.attn", m, rf ? rf->mid : Var{}, global);
    Var d1 = up_block(tape, "imit.up1", m, e1, temb);
    d1 = attention_block(tape, "imit.up1.attn", d1, rf ? rf->dec1 : Var{}, global);
    Var d0 = up_block(tape, "imit.up0", d1, e0, temb);
    d0 = attention_block(tape, "imit.up0.attn", d0, rf ? rf->dec0 : Var{}, global);
    Var o = ops::silu(tape, ops::normalize(tape, d0, tape.value(d0).numel()));
    return conv(tape, "imit.out", o);
  }

  // Projection + attention block over tokens. Public for block-level checks.
  Var attention_block(Tape<T>& tape, const std::string& name, Var x, Var ref_tokens, Var global) {
    const std::vector<int> s = tape.value(x).shape;
    const int C = s[0];
    Var hseq = ops::to_tokens(tape, x);
    Var hn = ops::normalize(tape, hseq, static_cast<std::size_t>(C));
    Var q = ops::linear(tape, hn, P(tape, name + ".q.w"), P(tape, name + ".q.b"));
    Var k = ops::linear(tape, hn, P(tape, name + ".k.w"), P(tape, name + ".k.b"));
    Var v = ops::linear(tape, hn, P(tape, name + ".v.w"), P(tape, name + ".v.b"));
    Var kr, vr;
    if (ref_tokens.valid()) {
      Var rn = ops::normalize(tape, ref_tokens, static_cast<std::size_t>(C));
      kr = ops::linear(tape, rn, P(tape, name + ".kr.w"), P(tape, name + ".kr.b"));
      vr = ops::linear(tape, rn, P(tape, name + ".vr.w"), P(tape, name + ".vr.b"));
    }
    Var a = ops::reference_attention(tape, q, k, v, kr, vr);
    hseq = ops::add(tape, hseq, ops::linear(tape, a, P(tape, name + ".o.w"), P(tape, name + ".o.b")));
    Var hn2 = ops::normalize(tape, hseq, static_cast<std::size_t>(C));
    Var qc = ops::linear(tape, hn2, P(tape, name + ".cq.w"), P(tape, name + ".cq.b"));
    Var kc = ops::linear(tape, global, P(tape, name + ".ck.w"), P(tape, name + ".ck.b"));
    Var vc = ops::linear(tape, global, P(tape, name + ".cv.w"), P(tape, name + ".cv.b"));
    Var c = ops::reference_attention(tape, qc, kc, vc, Var{}, Var{});
    hseq = ops::add(tape, hseq, ops::linear(tape, c, P(tape, name + ".co.w"), P(tape, name + ".co.b")));
    return ops::from_tokens(tape, hseq, s[1], s[2]);
  }

  Var res_block(Tape<T>& tape, const std::string& name, Var x, Var temb) {
    const std::size_t n = tape.value(x).numel();
    Var h = conv(tape, name + ".c1", ops::silu(tape, ops::normalize(tape, x, n)));
    Var tb = ops::linear(tape, ops::silu(tape, temb), P(tape, name + ".t.w"), P(tape, name + ".t.b"));
    h = ops::add_channel_bias(tape, h, tb);
    h = conv(tape, name + ".c2", ops::silu(tape, ops::normalize(tape, h, n)));
    return ops::add(tape, x, h);
  }

  Var time_embedding(Tape<T>& tape, const std::string& prefix, int t) {
    Tensor<T> f({1, kTimeFreqDim});
    const int half = kTimeFreqDim / 2;
    for (int i = 0; i < half; ++i) {
      const double freq = std::exp(-std::log(10000.0) * i / half);
      f.data[i] = static_cast<T>(std::sin(t * freq));
      f.data[half + i] = static_cast<T>(std::cos(t * freq));
    }
    Var e = ops::linear(tape, tape.constant(std::move(f)), P(tape, prefix + ".time1.w"), P(tape, prefix + ".time1.b"));
    return ops::linear(tape, ops::silu(tape, e), P(tape, prefix + ".time2.w"), P(tape, prefix + ".time2.b"));
  }

 private:
  Var P(Tape<T>& tape, const std::string& name) { return tape.param(params_.get(name)); }

  Var conv(Tape<T>& tape, const std::string& name, Var x) {
    return ops::conv2d(tape, x, P(tape, name + ".w"), P(tape, name + ".b"));
  }

  Var up_block(Tape<T>& tape, const std::string& name, Var deep, Var skip, Var temb) {
    const std::vector<int> ss = tape.value(skip).shape;
    Var u = ops::upsample_to(tape, deep, ss[1], ss[2]);
    Var c = conv(tape, name, ops::concat_channels(tape, u, skip));
    return res_block(tape, name + ".res", c, temb);
  }

  Tensor<T> head_channels(const ConditionStack& s) const {
    const int h = s.noisy_latent.shape[1], w = s.noisy_latent.shape[2];
    Tensor<T> out({kLatentChannels * 2 + 1, h, w});
    auto it = out.data.begin();
    for (const auto* part : {&s.noisy_latent, &s.mask_ch, &s.background_latent})
      it = std::copy(part->data.begin(), part->data.end(), it);
    return out;
  }

  void require_ready() const {
    if (!initialized_) throw InvalidState("DualUNet: parameters are not initialized");
  }

  void add_conv(Rng& rng, const std::string& name, int in, int out, int k) {
    add_param(rng, name + ".w", {out, in, k, k}, 1.0 / std::sqrt(static_cast<double>(in * k * k)));
    add_param(rng, name + ".b", {out}, 0.0);
  }
  void add_linear(Rng& rng, const std::string& name, int in, int out, double gain = 1.0) {
    add_param(rng, name + ".w", {out, in}, gain / std::sqrt(static_cast<double>(in)));
    add_param(rng, name + ".b", {out}, 0.0);
  }
  void add_param(Rng& rng, const std::string& name, std::vector<int> shape, double std) {
    Tensor<T> t(std::move(shape));
    std::normal_distribution<double> nd(0.0, 1.0);
    for (auto& v : t.data) v = static_cast<T>(static_cast<float>(std * nd(rng)));
    params_.add(name, std::move(t));
  }
  void add_res(Rng& rng, const std::string& name, int c) {
    add_conv(rng, name + ".c1", c, c, 3);
    add_linear(rng, name + ".t", cfg_.time_dim, c);
    add_conv(rng, name + ".c2", c, c, 3);
  }
  void add_attn(Rng& rng, const std::string& name, int c) {
    for (const char* p : {".q", ".k", ".v", ".kr", ".vr", ".o", ".cq"}) add_linear(rng, name + p, c, c);
    for (const char* p : {".ck", ".cv"}) add_linear(rng, name + p, cfg_.widths[2], c);
    add_linear(rng, name + ".co", c, c);
  }
  void add_skeleton(Rng& rng, const std::string& pre, int in_ch) {
    const auto& w = cfg_.widths;
    add_linear(rng, pre + ".time1", kTimeFreqDim, cfg_.time_dim);
    add_linear(rng, pre + ".time2", cfg_.time_dim, cfg_.time_dim);
    add_conv(rng, pre + ".in", in_ch, w[0], 3);
    add_res(rng, pre + ".enc0", w[0]);
    add_conv(rng, pre + ".down0", w[0], w[1], 3);
    add_res(rng, pre + ".enc1", w[1]);
    add_conv(rng, pre + ".down1", w[1], w[2], 3);
    add_res(rng, pre + ".mid", w[2]);
    add_conv(rng, pre + ".up1", w[2] + w[1], w[1], 3);
    add_res(rng, pre + ".up1.res", w[1]);
    add_conv(rng, pre + ".up0", w[1] + w[0], w[0], 3);
    add_res(rng, pre + ".up0.res", w[0]);
  }

  void build(Rng& rng) {
    const auto& w = cfg_.widths;
    add_skeleton(rng, "imit", kConditionChannels);
    add_attn(rng, "imit.mid.attn", w[2]);
    add_attn(rng, "imit.up1.attn", w[1]);
    add_attn(rng, "imit.up0.attn", w[0]);
    add_conv(rng, "imit.out", w[0], kLatentChannels, 3);
    add_skeleton(rng, "ref", kLatentChannels);
    add_linear(rng, "ref.global", w[2], w[2]);
    // Depth projector starts as [I3; 0] so channel k < 3 passes depth channel k.
    Tensor<T> dw({kLatentChannels, 3});
    for (int i = 0; i < 3; ++i) dw.data[i * 3 + i] = T(1);
    params_.add("depth.w", std::move(dw));
    params_.add("depth.b", Tensor<T>({kLatentChannels}));
  }

  UNetConfig cfg_;
  ParamStore<T> params_;
  bool initialized_ = false;
  std::uint64_t trained_steps_ = 0;
};

}  // namespace mimicforge::diff
