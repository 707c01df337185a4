// Copyright 2026 The diagdistill Authors
// SPDX-License-Identifier: Apache-2.0

#include "diagdistill/schedule.hpp"

#include <cmath>

namespace diag {

void NoiseSchedule::validate() const {
  if (!(shift_k >= 1.0)) throw ConfigError("shift_k must be >= 1");
  if (horizon <= 0) throw ConfigError("horizon_T must be positive");
}

void NoiseSchedule::require_in_range(int t) const {
  if (t < 0 || t > horizon) {
    throw RangeError("timestep " + std::to_string(t) + " outside [0, " + std::to_string(horizon) +
                     "]");
  }
}

double NoiseSchedule::shift_timestep(int t) const {
  require_in_range(t);
  if (!warp_enabled) return static_cast<double>(t);
  const double T = static_cast<double>(horizon);
  const double u = static_cast<double>(t) / T;
  return (shift_k * u) / (1.0 + (shift_k - 1.0) * u) * T;
}

double NoiseSchedule::sigma(int t) const {
  if (t == horizon) {
    require_in_range(t);
    return 1.0;
  }
  return shift_timestep(t) / static_cast<double>(horizon);
}

Tensor forward_diffuse(const NoiseSchedule& s, const Tensor& x, int t, Rng& rng) {
  s.require_in_range(t);
  if (x.empty()) return x;
  const Tensor eps = gaussian_sample(rng, x.shape());
  return diffuse_with(s, x, t, eps);
}

Tensor diffuse_with(const NoiseSchedule& s, const Tensor& x, int t, const Tensor& eps) {
  require_same_shape(x, eps, "diffuse");
  const double sig = s.sigma(t);
  if (sig == 0.0) return x;
  if (sig == 1.0) return eps;
  return axpby(1.0 - sig, x, sig, eps);
}

Tensor diffuse_vp_with(const NoiseSchedule& s, const Tensor& x, int t, const Tensor& eps) {
  require_same_shape(x, eps, "diffuse_vp");
  const double a = s.alpha(t);
  if (a == 1.0) return x;
  if (a == 0.0) return eps;
  return axpby(std::sqrt(a), x, std::sqrt(1.0 - a), eps);
}

Tensor score_from_denoised(const NoiseSchedule& s, const Tensor& x_t, const Tensor& mu, int t) {
  require_same_shape(x_t, mu, "score_from_denoised");
  const double sig = s.sigma(t);
  if (sig == 0.0) throw RangeError("score undefined at zero noise");
  const double a = 1.0 - sig;
  const double inv = 1.0 / (sig * sig);
  Tensor out(x_t.shape());
  for (std::size_t i = 0; i < x_t.size(); ++i) out[i] = -(x_t[i] - a * mu[i]) * inv;
  return out;
}

}  // namespace diag
