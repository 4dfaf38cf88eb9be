#pragma once

// Differentiable operations on the tape. Feature maps are [C, H, W]; token
// matrices are [N, D]. Every op computes its value eagerly and registers a
// closure that pushes the output gradient into its inputs.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "mimicforge/diffcore/attention.hpp"
#include "mimicforge/diffcore/tensor.hpp"
#include "mimicforge/error.hpp"

namespace mimicforge::diff::ops {

namespace detail {
template <class T>
void accumulate(Tape<T>& tape, Var v, const std::vector<T>& g) {
  if (!tape.requires_grad(v)) return;
  auto& dst = tape.grad(v).data;
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g[i];
}
inline std::size_t idx3(int c, int y, int x, int h, int w) {
  return (static_cast<std::size_t>(c) * h + y) * w + x;
}
}  // namespace detail

template <class T>
Var add(Tape<T>& tape, Var a, Var b) {
  const auto& va = tape.value(a);
  const auto& vb = tape.value(b);
  if (va.shape != vb.shape) throw InvalidInput("add: shape mismatch " + shape_str(va.shape) + " vs " + shape_str(vb.shape));
  Tensor<T> out(va.shape);
  for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] = va.data[i] + vb.data[i];
  return tape.record(std::move(out), [a, b](Tape<T>& t, int self) {
    const auto g = t.grad(self).data;
    detail::accumulate(t, a, g);
    detail::accumulate(t, b, g);
  }, {a, b});
}

template <class T>
Var scale(Tape<T>& tape, Var a, T s) {
  Tensor<T> out = tape.value(a);
  for (auto& v : out.data) v *= s;
  return tape.record(std::move(out), [a, s](Tape<T>& t, int self) {
    auto g = t.grad(self).data;
    for (auto& v : g) v *= s;
    detail::accumulate(t, a, g);
  }, {a});
}

template <class T>
Var silu(Tape<T>& tape, Var a) {
  const auto& va = tape.value(a);
  Tensor<T> out(va.shape);
  for (std::size_t i = 0; i < out.numel(); ++i) {
    const T x = va.data[i];
    out.data[i] = x / (T(1) + std::exp(-x));
  }
  return tape.record(std::move(out), [a](Tape<T>& t, int self) {
    const auto& x = t.value(a).data;
    auto g = t.grad(self).data;
    for (std::size_t i = 0; i < g.size(); ++i) {
      const T s = T(1) / (T(1) + std::exp(-x[i]));
      g[i] *= s * (T(1) + x[i] * (T(1) - s));
    }
    detail::accumulate(t, a, g);
  }, {a});
}

// Standardizes each contiguous block of `group` elements (zero mean, unit
// variance); no affine parameters.
template <class T>
Var normalize(Tape<T>& tape, Var a, std::size_t group, T eps = T(1e-5)) {
  const auto& va = tape.value(a);
  if (group == 0 || va.numel() % group) throw InvalidInput("normalize: group must divide tensor size");
  const std::size_t ng = va.numel() / group;
  Tensor<T> out(va.shape);
  std::vector<T> inv_std(ng);
  for (std::size_t gi = 0; gi < ng; ++gi) {
    const T* x = &va.data[gi * group];
    T mean = 0;
    for (std::size_t i = 0; i < group; ++i) mean += x[i];
    mean /= static_cast<T>(group);
    T var = 0;
    for (std::size_t i = 0; i < group; ++i) var += (x[i] - mean) * (x[i] - mean);
    var /= static_cast<T>(group);
    inv_std[gi] = T(1) / std::sqrt(var + eps);
    for (std::size_t i = 0; i < group; ++i) out.data[gi * group + i] = (x[i] - mean) * inv_std[gi];
  }
  return tape.record(std::move(out), [a, group, ng, inv_std](Tape<T>& t, int self) {
    const auto& y = t.value(Var{self}).data;
    const auto& gy = t.grad(self).data;
    std::vector<T> g(y.size());
    const T n = static_cast<T>(group);
    for (std::size_t gi = 0; gi < ng; ++gi) {
      T sg = 0, sgy = 0;
      for (std::size_t i = 0; i < group; ++i) {
        sg += gy[gi * group + i];
        sgy += gy[gi * group + i] * y[gi * group + i];
      }
      for (std::size_t i = 0; i < group; ++i) {
        const std::size_t k = gi * group + i;
        g[k] = inv_std[gi] * (gy[k] - sg / n - y[k] * sgy / n);
      }
    }
    detail::accumulate(t, a, g);
  }, {a});
}

// x: [C, H, W], w: [O, C, k, k], b: [O]; stride 1, zero padding k/2.
template <class T>
Var conv2d(Tape<T>& tape, Var x, Var w, Var b) {
  const auto& vx = tape.value(x);
  const auto& vw = tape.value(w);
  const auto& vb = tape.value(b);
  if (vx.rank() != 3 || vw.rank() != 4 || vw.shape[1] != vx.shape[0] || vw.shape[2] != vw.shape[3] ||
      vb.numel() != static_cast<std::size_t>(vw.shape[0]))
    throw InvalidInput("conv2d: incompatible shapes x" + shape_str(vx.shape) + " w" + shape_str(vw.shape));
  const int C = vx.shape[0], H = vx.shape[1], W = vx.shape[2], O = vw.shape[0], K = vw.shape[2], P = K / 2;
  Tensor<T> out({O, H, W});
  for (int o = 0; o < O; ++o) {
    T* dst = &out.data[static_cast<std::size_t>(o) * H * W];
    std::fill(dst, dst + H * W, vb.data[o]);
    for (int c = 0; c < C; ++c) {
      const T* src = &vx.data[static_cast<std::size_t>(c) * H * W];
      const T* ker = &vw.data[(static_cast<std::size_t>(o) * C + c) * K * K];
      for (int ky = 0; ky < K; ++ky) {
        const int dy = ky - P;
        const int y0 = std::max(0, -dy), y1 = std::min(H, H - dy);
        for (int kx = 0; kx < K; ++kx) {
          const int dx = kx - P;
          const int x0 = std::max(0, -dx), x1 = std::min(W, W - dx);
          const T kv = ker[ky * K + kx];
          for (int y = y0; y < y1; ++y) {
            T* drow = dst + y * W;
            const T* srow = src + (y + dy) * W + dx;
            for (int xx = x0; xx < x1; ++xx) drow[xx] += kv * srow[xx];
          }
        }
      }
    }
  }
  return tape.record(std::move(out), [x, w, b, C, H, W, O, K, P](Tape<T>& t, int self) {
    const auto& gy = t.grad(self).data;
    const auto& vx = t.value(x).data;
    const auto& vw = t.value(w).data;
    const bool gx_need = t.requires_grad(x), gw_need = t.requires_grad(w), gb_need = t.requires_grad(b);
    if (gb_need) {
      auto& gb = t.grad(b).data;
      for (int o = 0; o < O; ++o)
        for (int i = 0; i < H * W; ++i) gb[o] += gy[static_cast<std::size_t>(o) * H * W + i];
    }
    std::vector<T>* gx = gx_need ? &t.grad(x).data : nullptr;
    std::vector<T>* gw = gw_need ? &t.grad(w).data : nullptr;
    for (int o = 0; o < O; ++o) {
      const T* go = &gy[static_cast<std::size_t>(o) * H * W];
      for (int c = 0; c < C; ++c) {
        const T* src = &vx[static_cast<std::size_t>(c) * H * W];
        const std::size_t kbase = (static_cast<std::size_t>(o) * C + c) * K * K;
        for (int ky = 0; ky < K; ++ky) {
          const int dy = ky - P;
          const int y0 = std::max(0, -dy), y1 = std::min(H, H - dy);
          for (int kx = 0; kx < K; ++kx) {
            const int dx = kx - P;
            const int x0 = std::max(0, -dx), x1 = std::min(W, W - dx);
            T acc = 0;
            const T kv = vw[kbase + ky * K + kx];
            for (int y = y0; y < y1; ++y) {
              const T* grow = go + y * W;
              const T* srow = src + (y + dy) * W + dx;
              if (gx) {
                T* gxrow = gx->data() + static_cast<std::size_t>(c) * H * W + (y + dy) * W + dx;
                for (int xx = x0; xx < x1; ++xx) {
                  acc += grow[xx] * srow[xx];
                  gxrow[xx] += kv * grow[xx];
                }
              } else {
                for (int xx = x0; xx < x1; ++xx) acc += grow[xx] * srow[xx];
              }
            }
            if (gw) (*gw)[kbase + ky * K + kx] += acc;
          }
        }
      }
    }
  }, {x, w, b});
}

// 2x2 average pooling, ceil mode: partial windows average their valid pixels.
template <class T>
Var avgpool2(Tape<T>& tape, Var x) {
  const auto& vx = tape.value(x);
  const int C = vx.shape[0], H = vx.shape[1], W = vx.shape[2];
  const int OH = (H + 1) / 2, OW = (W + 1) / 2;
  Tensor<T> out({C, OH, OW});
  for (int c = 0; c < C; ++c)
    for (int y = 0; y < OH; ++y)
      for (int xx = 0; xx < OW; ++xx) {
        T s = 0;
        int n = 0;
        for (int dy = 0; dy < 2; ++dy)
          for (int dx = 0; dx < 2; ++dx) {
            const int sy = 2 * y + dy, sx = 2 * xx + dx;
            if (sy < H && sx < W) {
              s += vx.data[detail::idx3(c, sy, sx, H, W)];
              ++n;
            }
          }
        out.data[detail::idx3(c, y, xx, OH, OW)] = s / static_cast<T>(n);
      }
  return tape.record(std::move(out), [x, C, H, W, OH, OW](Tape<T>& t, int self) {
    const auto& gy = t.grad(self).data;
    std::vector<T> g(static_cast<std::size_t>(C) * H * W, T(0));
    for (int c = 0; c < C; ++c)
      for (int y = 0; y < OH; ++y)
        for (int xx = 0; xx < OW; ++xx) {
          const int ny = std::min(2, H - 2 * y), nx = std::min(2, W - 2 * xx);
          const T share = gy[detail::idx3(c, y, xx, OH, OW)] / static_cast<T>(ny * nx);
          for (int dy = 0; dy < ny; ++dy)
            for (int dx = 0; dx < nx; ++dx) g[detail::idx3(c, 2 * y + dy, 2 * xx + dx, H, W)] += share;
        }
    detail::accumulate(t, x, g);
  }, {x});
}

// Nearest-neighbor resize to an explicit size (used for decoder upsampling).
template <class T>
Var upsample_to(Tape<T>& tape, Var x, int OH, int OW) {
  const auto& vx = tape.value(x);
  const int C = vx.shape[0], H = vx.shape[1], W = vx.shape[2];
  Tensor<T> out({C, OH, OW});
  std::vector<int> ys(OH), xs(OW);
  for (int y = 0; y < OH; ++y) ys[y] = std::min(H - 1, y * H / OH);
  for (int xx = 0; xx < OW; ++xx) xs[xx] = std::min(W - 1, xx * W / OW);
  for (int c = 0; c < C; ++c)
    for (int y = 0; y < OH; ++y)
      for (int xx = 0; xx < OW; ++xx) out.data[detail::idx3(c, y, xx, OH, OW)] = vx.data[detail::idx3(c, ys[y], xs[xx], H, W)];
  return tape.record(std::move(out), [x, C, H, W, OH, OW, ys, xs](Tape<T>& t, int self) {
    const auto& gy = t.grad(self).data;
    std::vector<T> g(static_cast<std::size_t>(C) * H * W, T(0));
    for (int c = 0; c < C; ++c)
      for (int y = 0; y < OH; ++y)
        for (int xx = 0; xx < OW; ++xx) g[detail::idx3(c, ys[y], xs[xx], H, W)] += gy[detail::idx3(c, y, xx, OH, OW)];
    detail::accumulate(t, x, g);
  }, {x});
}

// Channel concatenation of [Ca,H,W] and [Cb,H,W].
template <class T>
Var concat_channels(Tape<T>& tape, Var a, Var b) {
  const auto& va = tape.value(a);
  const auto& vb = tape.value(b);
  if (va.shape[1] != vb.shape[1] || va.shape[2] != vb.shape[2]) throw InvalidInput("concat_channels: spatial mismatch");
  Tensor<T> out({va.shape[0] + vb.shape[0], va.shape[1], va.shape[2]});
  std::copy(va.data.begin(), va.data.end(), out.data.begin());
  std::copy(vb.data.begin(), vb.data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(va.numel()));
  const std::size_t na = va.numel();
  return tape.record(std::move(out), [a, b, na](Tape<T>& t, int self) {
    const auto& g = t.grad(self).data;
    detail::accumulate(t, a, std::vector<T>(g.begin(), g.begin() + static_cast<std::ptrdiff_t>(na)));
    detail::accumulate(t, b, std::vector<T>(g.begin() + static_cast<std::ptrdiff_t>(na), g.end()));
  }, {a, b});
}

// x: [C,H,W] + v: [C] broadcast over space.
template <class T>
Var add_channel_bias(Tape<T>& tape, Var x, Var v) {
  const auto& vx = tape.value(x);
  const auto& vv = tape.value(v);
  const int C = vx.shape[0];
  if (vv.numel() != static_cast<std::size_t>(C)) throw InvalidInput("add_channel_bias: channel mismatch");
  const std::size_t hw = vx.numel() / C;
  Tensor<T> out = vx;
  for (int c = 0; c < C; ++c)
    for (std::size_t i = 0; i < hw; ++i) out.data[c * hw + i] += vv.data[c];
  return tape.record(std::move(out), [x, v, C, hw](Tape<T>& t, int self) {
    const auto& g = t.grad(self).data;
    detail::accumulate(t, x, g);
    if (t.requires_grad(v)) {
      auto& gv = t.grad(v).data;
      for (int c = 0; c < C; ++c)
        for (std::size_t i = 0; i < hw; ++i) gv[c] += g[c * hw + i];
    }
  }, {x, v});
}

// x: [N, Din] (or [Din]), w: [Dout, Din], b: [Dout] -> [N, Dout].
template <class T>
Var linear(Tape<T>& tape, Var x, Var w, Var b) {
  const auto& vx = tape.value(x);
  const auto& vw = tape.value(w);
  const auto& vb = tape.value(b);
  const int Din = vw.shape[1], Dout = vw.shape[0];
  if (vx.numel() % Din) throw InvalidInput("linear: input width mismatch " + shape_str(vx.shape) + " vs " + shape_str(vw.shape));
  const int N = static_cast<int>(vx.numel() / Din);
  Tensor<T> out({N, Dout});
  for (int n = 0; n < N; ++n)
    for (int o = 0; o < Dout; ++o) {
      T s = vb.data[o];
      const T* xr = &vx.data[static_cast<std::size_t>(n) * Din];
      const T* wr = &vw.data[static_cast<std::size_t>(o) * Din];
      for (int i = 0; i < Din; ++i) s += xr[i] * wr[i];
      out.data[static_cast<std::size_t>(n) * Dout + o] = s;
    }
  return tape.record(std::move(out), [x, w, b, N, Din, Dout](Tape<T>& t, int self) {
    const auto& gy = t.grad(self).data;
    const auto& vx = t.value(x).data;
    const auto& vw = t.value(w).data;
    if (t.requires_grad(b)) {
      auto& gb = t.grad(b).data;
      for (int n = 0; n < N; ++n)
        for (int o = 0; o < Dout; ++o) gb[o] += gy[static_cast<std::size_t>(n) * Dout + o];
    }
    if (t.requires_grad(w)) {
      auto& gw = t.grad(w).data;
      for (int n = 0; n < N; ++n)
        for (int o = 0; o < Dout; ++o) {
          const T go = gy[static_cast<std::size_t>(n) * Dout + o];
          if (go == T(0)) continue;
          for (int i = 0; i < Din; ++i) gw[static_cast<std::size_t>(o) * Din + i] += go * vx[static_cast<std::size_t>(n) * Din + i];
        }
    }
    if (t.requires_grad(x)) {
      auto& gx = t.grad(x).data;
      for (int n = 0; n < N; ++n)
        for (int o = 0; o < Dout; ++o) {
          const T go = gy[static_cast<std::size_t>(n) * Dout + o];
          if (go == T(0)) continue;
          for (int i = 0; i < Din; ++i) gx[static_cast<std::size_t>(n) * Din + i] += go * vw[static_cast<std::size_t>(o) * Din + i];
        }
    }
  }, {x, w, b});
}

// [C,H,W] -> [H*W, C]
template <class T>
Var to_tokens(Tape<T>& tape, Var x) {
  const auto& vx = tape.value(x);
  const int C = vx.shape[0], N = vx.shape[1] * vx.shape[2];
  Tensor<T> out({N, C});
  for (int c = 0; c < C; ++c)
    for (int n = 0; n < N; ++n) out.data[static_cast<std::size_t>(n) * C + c] = vx.data[static_cast<std::size_t>(c) * N + n];
  return tape.record(std::move(out), [x, C, N](Tape<T>& t, int self) {
    const auto& gy = t.grad(self).data;
    std::vector<T> g(gy.size());
    for (int c = 0; c < C; ++c)
      for (int n = 0; n < N; ++n) g[static_cast<std::size_t>(c) * N + n] = gy[static_cast<std::size_t>(n) * C + c];
    detail::accumulate(t, x, g);
  }, {x});
}

// [H*W, C] -> [C,H,W]
template <class T>
Var from_tokens(Tape<T>& tape, Var x, int H, int W) {
  const auto& vx = tape.value(x);
  const int N = vx.shape[0], C = vx.shape[1];
  if (N != H * W) throw InvalidInput("from_tokens: token count != H*W");
  Tensor<T> out({C, H, W});
  for (int c = 0; c < C; ++c)
    for (int n = 0; n < N; ++n) out.data[static_cast<std::size_t>(c) * N + n] = vx.data[static_cast<std::size_t>(n) * C + c];
  return tape.record(std::move(out), [x, C, N](Tape<T>& t, int self) {
    const auto& gy = t.grad(self).data;
    std::vector<T> g(gy.size());
    for (int c = 0; c < C; ++c)
      for (int n = 0; n < N; ++n) g[static_cast<std::size_t>(n) * C + c] = gy[static_cast<std::size_t>(c) * N + n];
    detail::accumulate(t, x, g);
  }, {x});
}

// Mean over tokens: [N, D] -> [1, D].
template <class T>
Var mean_tokens(Tape<T>& tape, Var x) {
  const auto& vx = tape.value(x);
  const int N = vx.shape[0], D = vx.shape[1];
  Tensor<T> out({1, D});
  for (int n = 0; n < N; ++n)
    for (int d = 0; d < D; ++d) out.data[d] += vx.data[static_cast<std::size_t>(n) * D + d];
  for (auto& v : out.data) v /= static_cast<T>(N);
  return tape.record(std::move(out), [x, N, D](Tape<T>& t, int self) {
    const auto& gy = t.grad(self).data;
    std::vector<T> g(static_cast<std::size_t>(N) * D);
    for (int n = 0; n < N; ++n)
      for (int d = 0; d < D; ++d) g[static_cast<std::size_t>(n) * D + d] = gy[d] / static_cast<T>(N);
    detail::accumulate(t, x, g);
  }, {x});
}

// Differentiable reference attention. Passing invalid Vars for k_r/v_r
// yields plain self-attention.
template <class T>
Var reference_attention(Tape<T>& tape, Var q, Var k_i, Var v_i, Var k_r, Var v_r) {
  const bool has_ref = k_r.valid();
  const auto& vq = tape.value(q);
  const int d_k = vq.shape[1];
  const Tensor<T> empty;
  auto res = diff::reference_attention(vq, tape.value(k_i), tape.value(v_i), has_ref ? tape.value(k_r) : empty,
                                       has_ref ? tape.value(v_r) : empty, d_k);
  const int N = vq.shape[0], Mi = tape.value(k_i).shape[0], M = res.weights.shape[1], dv = res.out.shape[1];
  auto weights = std::move(res.weights);
  auto bw = [q, k_i, v_i, k_r, v_r, has_ref, d_k, N, Mi, M, dv, weights](Tape<T>& t, int self) {
    const auto& gO = t.grad(self).data;
    const auto& P = weights.data;
    const Tensor<T> empty;
    const Tensor<T> K = has_ref ? concat_rows(t.value(k_i), t.value(k_r)) : t.value(k_i);
    const Tensor<T> V = has_ref ? concat_rows(t.value(v_i), t.value(v_r)) : t.value(v_i);
    const auto& Q = t.value(q).data;
    std::vector<T> gV(static_cast<std::size_t>(M) * dv, T(0)), gK(static_cast<std::size_t>(M) * d_k, T(0)),
        gQ(static_cast<std::size_t>(N) * d_k, T(0));
    const T inv = T(1) / std::sqrt(static_cast<T>(d_k));
    std::vector<T> dP(M), dS(M);
    for (int i = 0; i < N; ++i) {
      const T* go = &gO[static_cast<std::size_t>(i) * dv];
      const T* p = &P[static_cast<std::size_t>(i) * M];
      T dot = 0;
      for (int j = 0; j < M; ++j) {
        T s = 0;
        for (int c = 0; c < dv; ++c) s += go[c] * V.data[static_cast<std::size_t>(j) * dv + c];
        dP[j] = s;
        dot += s * p[j];
        for (int c = 0; c < dv; ++c) gV[static_cast<std::size_t>(j) * dv + c] += p[j] * go[c];
      }
      for (int j = 0; j < M; ++j) dS[j] = p[j] * (dP[j] - dot) * inv;
      for (int j = 0; j < M; ++j)
        for (int c = 0; c < d_k; ++c) {
          gQ[static_cast<std::size_t>(i) * d_k + c] += dS[j] * K.data[static_cast<std::size_t>(j) * d_k + c];
          gK[static_cast<std::size_t>(j) * d_k + c] += dS[j] * Q[static_cast<std::size_t>(i) * d_k + c];
        }
    }
    detail::accumulate(t, q, gQ);
    const std::size_t ki = static_cast<std::size_t>(Mi) * d_k, vi = static_cast<std::size_t>(Mi) * dv;
    detail::accumulate(t, k_i, std::vector<T>(gK.begin(), gK.begin() + static_cast<std::ptrdiff_t>(ki)));
    detail::accumulate(t, v_i, std::vector<T>(gV.begin(), gV.begin() + static_cast<std::ptrdiff_t>(vi)));
    if (has_ref) {
      detail::accumulate(t, k_r, std::vector<T>(gK.begin() + static_cast<std::ptrdiff_t>(ki), gK.end()));
      detail::accumulate(t, v_r, std::vector<T>(gV.begin() + static_cast<std::ptrdiff_t>(vi), gV.end()));
    }
  };
  if (has_ref) return tape.record(std::move(res.out), bw, {q, k_i, v_i, k_r, v_r});
  return tape.record(std::move(res.out), bw, {q, k_i, v_i});
}

// Mean squared error against a constant target.
template <class T>
Var mse(Tape<T>& tape, Var pred, const Tensor<T>& target) {
  const auto& vp = tape.value(pred);
  if (vp.shape != target.shape) throw InvalidInput("mse: shape mismatch " + shape_str(vp.shape) + " vs " + shape_str(target.shape));
  T s = 0;
  for (std::size_t i = 0; i < vp.numel(); ++i) {
    const T d = vp.data[i] - target.data[i];
    s += d * d;
  }
  const T n = static_cast<T>(vp.numel());
  Tensor<T> out({1}, s / n);
  return tape.record(std::move(out), [pred, target, n](Tape<T>& t, int self) {
    const T go = t.grad(self).data[0];
    const auto& vp = t.value(pred).data;
    std::vector<T> g(vp.size());
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = go * T(2) * (vp[i] - target.data[i]) / n;
    detail::accumulate(t, pred, g);
  }, {pred});
}

}  // namespace mimicforge::diff::ops
