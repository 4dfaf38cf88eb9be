#pragma once

// Finite-difference verification of tape gradients (double precision).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "mimicforge/diffcore/tensor.hpp"
#include "mimicforge/rng.hpp"

namespace mimicforge::diff {

struct GradCheckResult {
  double max_rel_error = 0;
  std::size_t checked = 0;
  std::string worst;  // "param[index]" of the largest error
};

// |analytic - numeric| / max(|analytic|, |numeric|, floor). The floor keeps
// entries whose true gradient is ~0 from dominating through roundoff.
inline double grad_rel_error(double analytic, double numeric, double floor = 1e-6) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

// `build(tape)` must record a scalar loss over parameters from `stores`.
// Up to `per_param` entries of every parameter are probed with a 4-point
// central difference of step h.
template <class Build>
GradCheckResult grad_check(std::vector<ParamStore<double>*> stores, Build&& build, std::size_t per_param,
                           std::uint64_t seed, double h = 1e-4) {
  for (auto* s : stores) s->zero_grad();
  {
    Tape<double> tape;
    tape.backward(build(tape));
  }
  auto loss_at = [&]() {
    Tape<double> tape;
    return tape.value(build(tape)).data[0];
  };
  Rng rng(seed);
  GradCheckResult r;
  for (auto* s : stores)
    for (std::size_t p = 0; p < s->size(); ++p) {
      auto& prm = (*s)[p];
      const std::size_t n = prm.value.numel();
      std::vector<std::size_t> idx;
      if (n <= per_param) {
        for (std::size_t i = 0; i < n; ++i) idx.push_back(i);
      } else {
        for (std::size_t i = 0; i < per_param; ++i)
          idx.push_back(static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(n) - 1)));
      }
      for (std::size_t i : idx) {
        double& x = prm.value.data[i];
        const double x0 = x;
        double f[4];
        const double off[4] = {-2 * h, -h, h, 2 * h};
        for (int k = 0; k < 4; ++k) {
          x = x0 + off[k];
          f[k] = loss_at();
        }
        x = x0;
        const double numeric = (f[0] - 8 * f[1] + 8 * f[2] - f[3]) / (12 * h);
        const double e = grad_rel_error(prm.grad.data[i], numeric);
        ++r.checked;
        if (e > r.max_rel_error) {
          r.max_rel_error = e;
          r.worst = prm.name + "[" + std::to_string(i) + "]";
        }
      }
    }
  return r;
}

}  // namespace mimicforge::diff
