// Copyright 2026 The diagdistill Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>

#include "diagdistill/motion_flow.hpp"

using namespace diag;

namespace {

ExtractorConfig tiny(std::uint64_t seed, Activation act = Activation::kTanh) {
  return ExtractorConfig{.channels = 2, .c_mid = 3, .c_feat = 2, .activation = act,
                         .init_range = 0.5, .seed = seed};
}

Tensor clip(Rng& r, std::size_t frames = 3) { return gaussian_sample(r, {frames, 2, 4, 4}); }

class Identity final : public FeatureMap {
 public:
  Tensor forward(const Tensor& x) const override { return x; }
  Tensor input_vjp(const Tensor&, const Tensor& g) const override { return g; }
};

class Shift final : public DifferentiableGenerator {
 public:
  explicit Shift(double b) : b_(b) {}
  Shape noise_shape() const override { return {1}; }
  Tensor forward(const Tensor& eps) const override { return Tensor::from({eps[0] + b_}); }
  Tensor param_vjp(const Tensor&, const Tensor& g) const override { return g; }

 private:
  double b_;
};

}  // namespace

TEST_SUITE("motion_flow") {

TEST_CASE("shapes and static annihilation") {
  const MotionExtractor f(ExtractorConfig{});
  Rng r(1);
  const Tensor frame = gaussian_sample(r, {1, 4, 8, 8});
  Tensor still({3, 4, 8, 8});
  for (std::size_t k = 0; k < 3; ++k) {
    std::copy(frame.data().begin(), frame.data().end(), still.data().begin() + k * frame.size());
  }
  const Tensor feat = f.forward(still);
  CHECK(feat.shape() == Shape{2, 4, 8, 8});
  CHECK(max_abs(feat) == 0.0);
  CHECK_THROWS_WITH_AS(f.forward(Tensor({1, 4, 8, 8})), "motion requires >=2 frames", ShapeError);
}

TEST_CASE("features are invariant to a constant offset") {
  const MotionExtractor f(tiny(2));
  Rng r(2);
  const Tensor x = clip(r);
  const Tensor y = x + Tensor(x.shape(), 3.7);
  CHECK(max_abs(f.forward(x) - f.forward(y)) < 1e-12);
}

TEST_CASE("flow regression: identical weights and inputs give zero loss and gradient") {
  const MotionExtractor a(tiny(3)), b(tiny(3));
  Rng r(3);
  const Tensor x = clip(r);
  const auto reg = flow_regression_loss(a, b, x, x);
  CHECK(reg.loss == 0.0);
  CHECK(max_abs(reg.grad_student_params) == 0.0);
  CHECK(max_abs(reg.grad_x_student) == 0.0);
}

TEST_CASE("flow regression on a linear extractor is quadratic in the input scale") {
  const MotionExtractor lin(tiny(4, Activation::kIdentity));
  Rng r(4);
  const Tensor x = clip(r);
  const Tensor fx = lin.forward(x);
  // Student sees 2x, teacher x; the feature gap is F(x) itself.
  const auto reg = flow_regression_loss(lin, lin, 2.0 * x, x);
  CHECK(reg.loss == doctest::Approx(dot(fx, fx) / static_cast<double>(fx.size())).epsilon(1e-12));
  const auto reg3 = flow_regression_loss(lin, lin, 3.0 * x, x);
  CHECK(reg3.loss == doctest::Approx(4.0 * reg.loss).epsilon(1e-12));
}

TEST_CASE("flow regression gradients match finite differences at tiny weights") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const MotionExtractor s(tiny(seed)), t(tiny(seed + 50));
    Rng r(seed);
    const Tensor xs = clip(r), xt = clip(r);
    const auto reg = flow_regression_loss(s, t, xs, xt);
    const ScalarFn fp = [&](const Tensor& p) {
      MotionExtractor m = s;
      m.set_params(p);
      return flow_regression_loss(m, t, xs, xt).loss;
    };
    const ScalarFn fx = [&](const Tensor& v) { return flow_regression_loss(s, t, v, xt).loss; };
    CHECK(relative_error(reg.grad_student_params, finite_diff_grad(fp, s.params())) < 1e-4);
    CHECK(relative_error(reg.grad_x_student, finite_diff_grad(fx, xs)) < 1e-4);
  }
}

TEST_CASE("EMA law") {
  const MotionExtractor student(tiny(5));
  for (double mu : {0.0, 0.9, 0.999, 1.0}) {
    MotionExtractor teacher(tiny(6));
    const double d0 = norm2(teacher.params() - student.params());
    for (int n = 1; n <= 20; ++n) {
      ema_update(EmaLink{mu}, teacher, student);
      const double ratio = norm2(teacher.params() - student.params()) / d0;
      CHECK(std::abs(ratio - std::pow(mu, n)) < 1e-10);
    }
  }
  MotionExtractor teacher(tiny(6));
  ema_update(EmaLink{0.0}, teacher, student);
  CHECK(teacher.params() == student.params());
  MotionExtractor keep(tiny(6));
  const Tensor before = keep.params();
  ema_update(EmaLink{1.0}, keep, student);
  CHECK(keep.params() == before);
  MotionExtractor other(ExtractorConfig{});
  CHECK_THROWS_AS(ema_update(EmaLink{0.5}, other, student), ConfigError);
  CHECK_THROWS_AS(ema_update(EmaLink{1.5}, keep, student), ConfigError);
}

TEST_CASE("flow score") {
  const NoiseSchedule s;
  Rng r(7);
  const Tensor f = gaussian_sample(r, {6});
  CHECK(max_abs(flow_score(s, f, (1.0 / s.alpha(300)) * f, 300)) < 1e-12);
  CHECK_THROWS_AS(flow_score(s, f, f, 0), RangeError);
  // Gaussian features: when the clean features are N(m, v), the noisy score
  // is -(f - a m) / (a^2 v + s^2); the denoised mean makes the two agree.
  const Tensor m = gaussian_sample(r, {6});
  const double v = 0.6;
  const int t = 400;
  const double a = s.alpha(t), sg = s.sigma(t);
  const double k = a * v / (a * a * v + sg * sg);
  const Tensor mu = m + k * axpby(1.0, f, -a, m);
  const Tensor want = (-1.0 / (a * a * v + sg * sg)) * axpby(1.0, f, -a, m);
  CHECK(relative_error(flow_score(s, f, mu, t), want) < 1e-6);
}

TEST_CASE("flow DMD: equal scores give zero gradient per sample") {
  const NoiseSchedule s;
  const MotionExtractor f(tiny(8));
  Rng r(8);
  const FlowScoreFn sc = [&](const Tensor& x, int t) { return flow_score(s, x, 0.5 * x, t); };
  const auto smp = flow_dmd_sample(s, f, clip(r), 500, clip(r), sc, sc);
  CHECK(max_abs(smp.grad_x) == 0.0);
}

TEST_CASE("flow DMD estimator matches the Gaussian KL gradient") {
  const NoiseSchedule s;
  const Identity id;
  const double m = 0.5, b = 1.5;
  for (int t : {200, 600}) {
    const double a = s.alpha(t), sg = s.sigma(t), v = a * a + sg * sg;
    const FlowScoreFn real = [&](const Tensor& f, int) {
      return Tensor::from({-(f[0] - a * m) / v});
    };
    const FlowScoreFn fake = [&](const Tensor& f, int) {
      return Tensor::from({-(f[0] - a * b) / v});
    };
    Rng r(9);
    const Tensor g = flow_dmd_gradient(Shift(b), id, real, fake, s, r, t, 100000);
    // d/db KL(N(a b, v) || N(a m, v)) = a^2 (b - m) / v
    const double want = a * a * (b - m) / v;
    CHECK(g[0] > 0.0);
    CHECK(std::abs(g[0] - want) < 0.1 * std::abs(want));
  }
}

TEST_CASE("frame difference and alternative representations") {
  Rng r(10);
  const Tensor x = gaussian_sample(r, {3, 2, 4, 4});
  const Tensor d = FrameDifference(2.0).forward(x);
  CHECK(d.shape() == Shape{2, 2, 4, 4});
  CHECK(d[0] == doctest::Approx(2.0 * (x[32] - x[0])));
  const FrameDifference fd(0.5);
  const Tensor g = gaussian_sample(r, d.shape());
  const ScalarFn fn = [&](const Tensor& v) { return dot(g, fd.forward(v)); };
  CHECK(relative_error(fd.input_vjp(x, g), finite_diff_grad(fn, x)) < 1e-8);
  CHECK(extract_features(FlowRepr::kCorr, x).shape() == Shape{2, 16, 4, 4});
  // Low and high DCT bands partition the orthonormal transform of the difference.
  const Tensor lo = extract_features(FlowRepr::kDctLow, x);
  const Tensor hi = extract_features(FlowRepr::kDctHigh, x);
  const Tensor diff = extract_features(FlowRepr::kDiff, x);
  CHECK(std::abs(dot(lo, lo) + dot(hi, hi) - dot(diff, diff)) < 1e-9);
  CHECK_THROWS_AS(extract_features(FlowRepr::kLearned, x), ConfigError);
  CHECK(parse_flow_repr("dct_low") == FlowRepr::kDctLow);
  CHECK(flow_repr_name(FlowRepr::kLearned) == "learned");
  CHECK_THROWS_AS(parse_flow_repr("optical"), ConfigError);
}

TEST_CASE("gaussian_kl") {
  const Tensor m = Tensor::from({0.1, 2.0}), v = Tensor::from({1.0, 0.5});
  CHECK(gaussian_kl(m, v, m, v) == 0.0);
  CHECK(gaussian_kl(Tensor::from({1.0}), Tensor::from({1.0}), Tensor::from({0.0}),
                    Tensor::from({1.0})) == doctest::Approx(0.5));
  CHECK_THROWS_AS(gaussian_kl(m, Tensor::from({0.0, 1.0}), m, v), RangeError);
}

}  // TEST_SUITE
