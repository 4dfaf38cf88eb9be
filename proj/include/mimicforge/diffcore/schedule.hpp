#pragma once

#include <cmath>
#include <vector>

#include "mimicforge/error.hpp"

namespace mimicforge::diff {

// Linear-beta DDPM schedule.
struct NoiseSchedule {
  int steps = 1000;
  std::vector<double> betas;
  std::vector<double> alphas;
  std::vector<double> alpha_bars;

  static NoiseSchedule linear(int steps = 1000, double beta_start = 1e-4, double beta_end = 0.02) {
    if (steps < 2) throw InvalidInput("NoiseSchedule: need at least 2 steps");
    if (!(0 < beta_start && beta_start < beta_end && beta_end < 1))
      throw InvalidInput("NoiseSchedule: betas must satisfy 0 < start < end < 1");
    NoiseSchedule s;
    s.steps = steps;
    s.betas.resize(steps);
    s.alphas.resize(steps);
    s.alpha_bars.resize(steps);
    double ab = 1.0;
    for (int t = 0; t < steps; ++t) {
      s.betas[t] = beta_start + (beta_end - beta_start) * t / (steps - 1);
      s.alphas[t] = 1.0 - s.betas[t];
      ab *= s.alphas[t];
      s.alpha_bars[t] = ab;
    }
    return s;
  }

  double alpha_bar(int t) const {
    if (t < 0) return 1.0;
    if (t >= steps) throw InvalidInput("NoiseSchedule: step out of range");
    return alpha_bars[t];
  }

  // Evenly spaced descending timesteps from steps-1 to 0.
  std::vector<int> sampling_timesteps(int count) const {
    if (count < 1 || count > steps) throw InvalidInput("sampling_timesteps: count must be in [1, steps]");
    std::vector<int> ts(count);
    if (count == 1) {
      ts[0] = steps - 1;
      return ts;
    }
    for (int i = 0; i < count; ++i)
      ts[i] = static_cast<int>(std::lround(static_cast<double>(steps - 1) * (count - 1 - i) / (count - 1)));
    return ts;
  }
};

}  // namespace mimicforge::diff
