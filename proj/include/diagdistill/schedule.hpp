// Copyright 2026 The diagdistill Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "diagdistill/tensor.hpp"

namespace diag {

/// Linear flow-matching path with a timestep shift.
///
/// Convention: t = 0 is clean data and t = horizon is pure noise. With the
/// shift enabled, sigma(t) = t'(t) / horizon where
///
///   t'(t) = (k * t / 1000) / (1 + (k - 1) * t / 1000) * 1000
///
/// and alpha(t) = 1 - sigma(t). A sample at step t is alpha*x + sigma*eps.
struct NoiseSchedule {
  double shift_k = 5.0;
  int horizon = 1000;
  bool warp_enabled = true;

  void validate() const;

  double shift_timestep(int t) const;
  double sigma(int t) const;
  double alpha(int t) const { return 1.0 - sigma(t); }

  void require_in_range(int t) const;
};

/// Fixed preconditioning of the base model: c_skip = c_in = c_out = 1 and
/// c_noise(t) = t applied to the shifted step.
struct Preconditioning {
  static constexpr double c_skip = 1.0;
  static constexpr double c_in = 1.0;
  static constexpr double c_out = 1.0;
  static double c_noise(const NoiseSchedule& s, int t) { return s.shift_timestep(t); }
};

/// alpha(t) * x + sigma(t) * eps with fresh eps. Returns x unchanged at
/// sigma = 0 and pure eps at alpha = 0.
Tensor forward_diffuse(const NoiseSchedule& s, const Tensor& x, int t, Rng& rng);

/// Same as forward_diffuse with a caller-supplied noise tensor.
Tensor diffuse_with(const NoiseSchedule& s, const Tensor& x, int t, const Tensor& eps);

/// Variance-preserving injection sqrt(a)*x + sqrt(1-a)*eps with a = alpha(t).
Tensor diffuse_vp_with(const NoiseSchedule& s, const Tensor& x, int t, const Tensor& eps);

/// Score of q_t given a denoised estimate mu: -(x_t - alpha*mu) / sigma^2.
Tensor score_from_denoised(const NoiseSchedule& s, const Tensor& x_t, const Tensor& mu, int t);

}  // namespace diag
