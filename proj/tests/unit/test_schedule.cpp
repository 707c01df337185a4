// Copyright 2026 The diagdistill Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>

#include "diagdistill/schedule.hpp"

using namespace diag;

TEST_SUITE("schedule") {

TEST_CASE("shift_timestep anchors") {
  const NoiseSchedule s;
  CHECK(s.shift_timestep(0) == 0.0);
  CHECK(std::abs(s.shift_timestep(1000) - 1000.0) < 1e-12);
  // (5 * 0.5) / (1 + 4 * 0.5) * 1000
  CHECK(std::abs(s.shift_timestep(500) - 2500.0 / 3.0) < 1e-9);
  // 0.5 / 1.4 * 1000
  CHECK(std::abs(s.shift_timestep(100) - 500.0 / 1.4) < 1e-9);
  CHECK_THROWS_AS(s.shift_timestep(-1), RangeError);
  CHECK_THROWS_AS(s.shift_timestep(1001), RangeError);
}

TEST_CASE("shift is strictly increasing and the identity at k = 1") {
  for (double k : {1.0, 2.0, 5.0, 10.0}) {
    NoiseSchedule s;
    s.shift_k = k;
    for (int t = 1; t <= 1000; ++t) CHECK(s.shift_timestep(t) > s.shift_timestep(t - 1));
  }
  NoiseSchedule id;
  id.shift_k = 1.0;
  for (int t = 0; t <= 1000; t += 37) CHECK(std::abs(id.shift_timestep(t) - t) < 1e-9);
}

TEST_CASE("sigma and alpha") {
  const NoiseSchedule s;
  CHECK(s.sigma(0) == 0.0);
  CHECK(s.alpha(0) == 1.0);
  CHECK(std::abs(s.sigma(1000) - 1.0) < 1e-12);
  CHECK(std::abs(s.alpha(1000)) < 1e-12);
  CHECK(std::abs(s.sigma(100) - 0.357142857142857) < 1e-6);
  NoiseSchedule flat;
  flat.warp_enabled = false;
  CHECK(flat.sigma(100) == doctest::Approx(0.1));
}

TEST_CASE("forward_diffuse endpoints") {
  const NoiseSchedule s;
  Rng r(1);
  const Tensor x = gaussian_sample(r, {5});
  CHECK(forward_diffuse(s, x, 0, r) == x);
  Rng r1(9), r2(9);
  const Tensor pure = forward_diffuse(s, Tensor({5}), 1000, r1);
  const Tensor eps = gaussian_sample(r2, {5});
  CHECK(max_abs(pure - eps) < 1e-12);
}

TEST_CASE("forward_diffuse moments at t = 100") {
  const NoiseSchedule s;
  Rng r(11);
  const Tensor x_t = forward_diffuse(s, Tensor({10000}, 1.0), 100, r);
  const double m = mean(x_t);
  double v = 0.0;
  for (double e : x_t.data()) v += (e - m) * (e - m);
  const double sd = std::sqrt(v / static_cast<double>(x_t.size() - 1));
  CHECK(std::abs(m - 0.642857) < 0.02);
  CHECK(std::abs(sd - 0.357143) < 0.02);
}

TEST_CASE("forward_diffuse mean and variance within 4 standard errors") {
  const NoiseSchedule s;
  const std::size_t n = 10000;
  for (int t : {50, 300, 700}) {
    Rng r(static_cast<std::uint64_t>(t));
    const Tensor x_t = forward_diffuse(s, Tensor({n}, 2.0), t, r);
    const double a = s.alpha(t), sg = s.sigma(t);
    const double m = mean(x_t);
    double v = 0.0;
    for (double e : x_t.data()) v += (e - m) * (e - m);
    v /= static_cast<double>(n - 1);
    // Six checks in total, so a 4-SE band keeps false alarms rare.
    CHECK(std::abs(m - 2.0 * a) < 4.0 * sg / std::sqrt(static_cast<double>(n)));
    // Var of the sample variance for Gaussians is 2 sigma^4 / (n - 1).
    CHECK(std::abs(v - sg * sg) < 4.0 * sg * sg * std::sqrt(2.0 / static_cast<double>(n - 1)));
  }
}

TEST_CASE("score_from_denoised") {
  const NoiseSchedule s;
  Rng r(2);
  const Tensor x_t = gaussian_sample(r, {4});
  const int t = 400;
  CHECK(max_abs(score_from_denoised(s, x_t, (1.0 / s.alpha(t)) * x_t, t)) < 1e-12);
  CHECK_THROWS_WITH_AS(score_from_denoised(s, x_t, x_t, 0), "score undefined at zero noise",
                       RangeError);
  // sigma = alpha = 0.5 at the step whose shifted value is 500.
  NoiseSchedule flat;
  flat.warp_enabled = false;
  const Tensor sc = score_from_denoised(flat, Tensor::from({1.0}), Tensor::from({0.0}), 500);
  CHECK(sc[0] == doctest::Approx(-4.0));
}

TEST_CASE("score matches the gradient of the Gaussian log density") {
  const NoiseSchedule s;
  Rng r(4);
  const Tensor mu = gaussian_sample(r, {6});
  const Tensor x_t = gaussian_sample(r, {6});
  for (int t : {100, 500, 900}) {
    const double a = s.alpha(t), sg = s.sigma(t);
    const ScalarFn logp = [&](const Tensor& x) {
      const Tensor d = axpby(1.0, x, -a, mu);
      return -0.5 * dot(d, d) / (sg * sg);
    };
    CHECK(relative_error(score_from_denoised(s, x_t, mu, t), finite_diff_grad(logp, x_t)) < 1e-6);
  }
}

TEST_CASE("variance-preserving injection weights") {
  const NoiseSchedule s;
  const Tensor x = Tensor::from({1.0}), eps = Tensor::from({1.0});
  const double a = s.alpha(100);
  CHECK(diffuse_vp_with(s, x, 100, eps)[0] == doctest::Approx(std::sqrt(a) + std::sqrt(1 - a)));
  CHECK(diffuse_with(s, x, 100, eps)[0] == doctest::Approx(1.0));
}

TEST_CASE("schedule validation") {
  NoiseSchedule s;
  s.shift_k = 0.5;
  CHECK_THROWS_AS(s.validate(), ConfigError);
  s.shift_k = 5;
  s.horizon = 0;
  CHECK_THROWS_AS(s.validate(), ConfigError);
  CHECK(Preconditioning::c_noise(NoiseSchedule{}, 500) == doctest::Approx(2500.0 / 3.0));
}

}  // TEST_SUITE
