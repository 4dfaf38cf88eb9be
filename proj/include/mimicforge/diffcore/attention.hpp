#pragma once

// Reference-augmented attention: the imitative queries attend over the
// concatenation of their own keys/values and the reference stream's:
//
//   out = softmax(Q_i . cat(K_i, K_r)^T / sqrt(d_k)) . cat(V_i, V_r)
//
// With an empty reference set this is exactly self-attention.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>

#include "mimicforge/diffcore/tensor.hpp"
#include "mimicforge/error.hpp"

namespace mimicforge::diff {

template <class T>
struct AttentionResult {
  Tensor<T> out;      // [N, dv]
  Tensor<T> weights;  // [N, M_i + M_r]
};

// Rows of `a` followed by rows of `b`; either may be empty (0 rows).
template <class T>
Tensor<T> concat_rows(const Tensor<T>& a, const Tensor<T>& b) {
  if (b.data.empty() && b.shape.empty()) return a;
  if (a.shape.size() != 2 || b.shape.size() != 2 || a.shape[1] != b.shape[1])
    throw InvalidInput("concat_rows: column mismatch " + shape_str(a.shape) + " vs " + shape_str(b.shape));
  Tensor<T> out({a.shape[0] + b.shape[0], a.shape[1]});
  std::copy(a.data.begin(), a.data.end(), out.data.begin());
  std::copy(b.data.begin(), b.data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(a.data.size()));
  return out;
}

// q: [N, d_k], k: [M, d_k], v: [M, dv].
template <class T>
AttentionResult<T> attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, int d_k) {
  if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2) throw InvalidInput("attention: expects 2-D token matrices");
  if (q.shape[1] != d_k || k.shape[1] != d_k) throw InvalidInput("attention: d_k mismatch");
  if (k.shape[0] != v.shape[0]) throw InvalidInput("attention: key/value token counts differ");
  const int n = q.shape[0], m = k.shape[0], dv = v.shape[1];
  if (m == 0) throw InvalidInput("attention: no keys");
  AttentionResult<T> r{Tensor<T>({n, dv}), Tensor<T>({n, m})};
  const T inv = T(1) / std::sqrt(static_cast<T>(d_k));
  for (int i = 0; i < n; ++i) {
    T* w = &r.weights.data[static_cast<std::size_t>(i) * m];
    T mx = -std::numeric_limits<T>::infinity();
    for (int j = 0; j < m; ++j) {
      T s = 0;
      for (int c = 0; c < d_k; ++c) s += q.data[static_cast<std::size_t>(i) * d_k + c] * k.data[static_cast<std::size_t>(j) * d_k + c];
      w[j] = s * inv;
      mx = std::max(mx, w[j]);
    }
    T z = 0;
    for (int j = 0; j < m; ++j) z += (w[j] = std::exp(w[j] - mx));
    for (int j = 0; j < m; ++j) w[j] /= z;
    T* o = &r.out.data[static_cast<std::size_t>(i) * dv];
    for (int j = 0; j < m; ++j) {
      const T wj = w[j];
      const T* vr = &v.data[static_cast<std::size_t>(j) * dv];
      for (int c = 0; c < dv; ++c) o[c] += wj * vr[c];
    }
  }
  return r;
}

// Empty k_r/v_r (default-constructed tensors or 0-row matrices) reduce to
// self-attention.
template <class T>
AttentionResult<T> reference_attention(const Tensor<T>& q, const Tensor<T>& k_i, const Tensor<T>& v_i,
                                       const Tensor<T>& k_r, const Tensor<T>& v_r, int d_k) {
  const bool has_ref = !k_r.data.empty();
  if (has_ref && k_r.rank() == 2 && k_r.shape[1] != d_k) throw InvalidInput("reference_attention: d_k mismatch in K_r");
  if (has_ref != !v_r.data.empty()) throw InvalidInput("reference_attention: K_r and V_r must both be present or empty");
  if (!has_ref) return attention(q, k_i, v_i, d_k);
  return attention(q, concat_rows(k_i, k_r), concat_rows(v_i, v_r), d_k);
}

}  // namespace mimicforge::diff
