// Copyright 2026 The diagdistill Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <limits>
#include <vector>

#include "diagdistill/trainer.hpp"

using namespace diag;

namespace {

std::vector<Tensor> history(Rng& r, std::size_t n, double offset) {
  std::vector<Tensor> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(gaussian_sample(r, {3, 2, 2, 2}) + Tensor({3, 2, 2, 2}, offset));
  return out;
}

StepReport one_step(const LossWeights& w, std::uint64_t seed = 3) {
  TrainerConfig c;
  c.weights = w;
  c.seed = seed;
  c.batch = 16;
  GaussianTrainer t(c, GaussianWorld{}, NoiseSchedule{});
  return t.step();
}

}  // namespace

TEST_SUITE("distill_trainer") {

TEST_CASE("loss weights and their combination") {
  const LossWeights w;
  CHECK(w.lambda_spatial == 4.0);
  CHECK(w.lambda_flow == 4.0);
  CHECK(w.gamma == 1.0);
  const LossBreakdown b{1.0, 2.0, 3.0, 5.0, 0.0};
  CHECK(combine(w, b) == 4.0 * 1.0 + 2.0 + 1.0 * (4.0 * 3.0 + 5.0));
  CHECK_THROWS_AS((LossWeights{-1.0, 4.0, 1.0}.validate()), ConfigError);
  CHECK_THROWS_AS((LossWeights{4.0, std::nan(""), 1.0}.validate()), ConfigError);
}

TEST_CASE("strategy names") {
  for (const char* n : {"teacher", "diffusion", "self", "diagonal"}) {
    CHECK(strategy_name(parse_strategy(n)) == n);
  }
  CHECK_THROWS_AS(parse_strategy("mixed"), ConfigError);
}

TEST_CASE("build_conditioning: teacher returns the ground truth exactly") {
  const NoiseSchedule s;
  Rng r(1);
  const auto gt = history(r, 6, 0.0);
  const auto cond = build_conditioning(Strategy::kTeacher, gt, {}, 5, {}, s, r);
  REQUIRE(cond.size() == 4);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(cond[i].chunk_index == static_cast<int>(i + 1));
    CHECK(cond[i].latent == gt[i + 1]);
    CHECK(cond[i].noise_t == 0);
    CHECK(cond[i].source == ChunkSource::kGroundTruth);
  }
}

TEST_CASE("build_conditioning: diagonal without generated history degenerates to teacher") {
  const NoiseSchedule s;
  Rng r(2);
  const auto gt = history(r, 4, 0.0);
  ConditioningOptions opt;
  opt.forcing_t = 0;
  Rng a(5), b(5);
  const auto diag_c = build_conditioning(Strategy::kDiagonal, gt, {}, 3, opt, s, a);
  const auto teach = build_conditioning(Strategy::kTeacher, gt, {}, 3, opt, s, b);
  REQUIRE(diag_c.size() == teach.size());
  for (std::size_t i = 0; i < diag_c.size(); ++i) CHECK(diag_c[i].latent == teach[i].latent);
}

TEST_CASE("build_conditioning: diagonal pattern over a 4-chunk history") {
  const NoiseSchedule s;
  Rng r(3);
  const auto gt = history(r, 5, 0.0);
  const auto gen = history(r, 5, 100.0);
  const auto cond = build_conditioning(Strategy::kDiagonal, gt, gen, 4, {}, s, r);
  REQUIRE(cond.size() == 4);
  // Oldest two: clean ground truth.
  CHECK(cond[0].latent == gt[0]);
  CHECK(cond[1].latent == gt[1]);
  CHECK(cond[0].source == ChunkSource::kGroundTruth);
  // Newest two: generated chunks noised at forcing_t = 100.
  for (std::size_t j : {2u, 3u}) {
    CHECK(cond[j].source == ChunkSource::kGenerated);
    CHECK(cond[j].noise_t == 100);
    const Tensor resid = axpby(1.0, cond[j].latent, -s.alpha(100), gen[j]);
    CHECK(std::abs(mean(resid)) < 0.5);
    CHECK_FALSE(cond[j].latent == gen[j]);
  }
}

TEST_CASE("build_conditioning: self and diffusion") {
  const NoiseSchedule s;
  Rng r(4);
  const auto gt = history(r, 3, 0.0);
  const auto gen = history(r, 3, 1.0);
  const auto self = build_conditioning(Strategy::kSelf, gt, gen, 2, {}, s, r);
  CHECK(self[1].latent == gen[1]);
  CHECK_THROWS_AS(build_conditioning(Strategy::kSelf, gt, {}, 2, {}, s, r), RangeError);
  const auto diff = build_conditioning(Strategy::kDiffusion, gt, {}, 2, {}, s, r);
  for (const auto& c : diff) {
    CHECK((c.noise_t >= 0 && c.noise_t <= 1000));
    CHECK(c.source == ChunkSource::kGroundTruth);
  }
  CHECK(build_conditioning(Strategy::kTeacher, gt, {}, 0, {}, s, r).empty());
}

TEST_CASE("DMD: identical scores give zero gradient pointwise") {
  const NoiseSchedule s;
  const GaussianDenoiser d{Tensor::from({0.3, -0.1}), 0.8};
  const ScoreFn sc = [&](const Tensor& x, int t) { return d.score(s, x, t); };
  Rng r(1);
  const Tensor x_t = gaussian_sample(r, {2});
  CHECK(max_abs(dmd_output_grad(s, x_t, 400, sc, sc)) == 0.0);
  Rng a(2);
  CHECK(max_abs(dmd_gradient(ShiftGenerator(Tensor::from({1.0, 2.0})), sc, sc, s, a, 400, 10)) == 0.0);
}

TEST_CASE("DMD estimator matches the closed-form Gaussian KL gradient") {
  const NoiseSchedule s;
  const double m = 0.5, b = 1.25, v = 1.0;
  const GaussianDenoiser real{Tensor::from({m}), v};
  const GaussianDenoiser fake{Tensor::from({b}), v};
  const ScoreFn rs = [&](const Tensor& x, int t) { return real.score(s, x, t); };
  const ScoreFn fs = [&](const Tensor& x, int t) { return fake.score(s, x, t); };
  for (int t : {200, 500, 800}) {
    Rng r(7);
    const Tensor g = dmd_gradient(ShiftGenerator(Tensor::from({b})), rs, fs, s, r, t, 100000);
    const double a = s.alpha(t), sg = s.sigma(t);
    // d/db KL(N(a b, a^2 v + s^2) || N(a m, a^2 v + s^2))
    const double want = a * a * (b - m) / (a * a * v + sg * sg);
    CHECK(g[0] > 0.0);
    CHECK(std::abs(g[0] - want) < 0.1 * want);
  }
}

TEST_CASE("DMD estimator is deterministic under common random numbers") {
  const NoiseSchedule s;
  const GaussianDenoiser real{Tensor::from({0.0}), 1.0}, fake{Tensor::from({1.0}), 0.5};
  const ScoreFn rs = [&](const Tensor& x, int t) { return real.score(s, x, t); };
  const ScoreFn fs = [&](const Tensor& x, int t) { return fake.score(s, x, t); };
  Rng a(4), b(4);
  const ShiftGenerator g(Tensor::from({0.7}));
  CHECK(dmd_gradient(g, rs, fs, s, a, 300, 50) == dmd_gradient(g, rs, fs, s, b, 300, 50));
}

TEST_CASE("Gaussian denoiser against its closed form") {
  const NoiseSchedule s;
  const GaussianDenoiser d{Tensor::from({1.0, -2.0}), 0.5};
  const int t = 600;
  const double a = s.alpha(t), sg = s.sigma(t);
  const Tensor x_t = Tensor::from({0.4, 0.1});
  const Tensor den = d.denoise(s, x_t, t);
  for (std::size_t i = 0; i < 2; ++i) {
    const double want = d.mean[i] + a * 0.5 / (a * a * 0.5 + sg * sg) * (x_t[i] - a * d.mean[i]);
    CHECK(den[i] == doctest::Approx(want).epsilon(1e-14));
  }
  const Tensor sc = d.score(s, x_t, t);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(sc[i] == doctest::Approx(-(x_t[i] - a * d.mean[i]) / (a * a * 0.5 + sg * sg)));
  }
}

TEST_CASE("regression loss") {
  const ShiftGenerator g(Tensor::from({1.0, -1.0}));
  const std::vector<Tensor> z = {Tensor::from({0.0, 0.0}), Tensor::from({1.0, 1.0})};
  const std::vector<Tensor> exact = {g.forward(z[0]), g.forward(z[1])};
  CHECK(regression_loss(g, z, exact).loss == 0.0);
  const std::vector<Tensor> off = {exact[0] + Tensor::from({1.0, 1.0}),
                                   exact[1] + Tensor::from({1.0, 1.0})};
  const std::vector<Tensor> half = {exact[0], off[1]};
  CHECK(regression_loss(g, z, half).loss == doctest::Approx(0.5 * regression_loss(g, z, off).loss));
  CHECK_THROWS_WITH_AS(regression_loss(g, z, {exact[0]}), doctest::Contains("unpaired batch"),
                       ShapeError);
  const ScalarFn f = [&](const Tensor& b) { return regression_loss(ShiftGenerator(b), z, off).loss; };
  CHECK(relative_error(regression_loss(g, z, off).grad_params, finite_diff_grad(f, g.bias())) < 1e-6);
}

TEST_CASE("weight linearity of the spatial DMD component") {
  const StepReport u0 = one_step({0.0, 4.0, 1.0});
  const StepReport u4 = one_step({4.0, 4.0, 1.0});
  const StepReport u8 = one_step({8.0, 4.0, 1.0});
  CHECK(u0.grad_dmd == u4.grad_dmd);
  const Tensor d1 = u4.update - u0.update, d2 = u8.update - u4.update;
  CHECK(max_abs(d2 - d1) < 1e-14);
  CHECK(max_abs(d1 - (-0.05 * 4.0) * u4.grad_dmd) < 1e-14);
}

TEST_CASE("gamma = 0 removes both flow terms from the applied update") {
  const StepReport r = one_step({4.0, 4.0, 0.0});
  CHECK(max_abs(r.grad_dmd_flow) > 0.0);
  const Tensor want = (-0.05) * axpby(4.0, r.grad_dmd, 1.0, r.grad_reg);
  CHECK(max_abs(r.update - want) < 1e-15);
  CHECK(r.losses.total == doctest::Approx(4.0 * r.losses.dmd + r.losses.reg));
}

TEST_CASE("logged total echoes the (4, 4, 1) combination") {
  const StepReport r = one_step(LossWeights{});
  const auto& l = r.losses;
  CHECK(l.total == 4.0 * l.dmd + l.reg + 1.0 * (4.0 * l.dmd_flow + l.reg_flow));
}

TEST_CASE("teacher freeze and determinism") {
  TrainerConfig c;
  c.batch = 8;
  GaussianTrainer a(c, GaussianWorld{}, NoiseSchedule{}), b(c, GaussianWorld{}, NoiseSchedule{});
  const GaussianDenoiser real = a.real(), real_flow = a.real_flow();
  for (int i = 0; i < 20; ++i) {
    a.step();
    b.step();
  }
  CHECK(a.real().mean == real.mean);
  CHECK(a.real().var == real.var);
  CHECK(a.real_flow().mean == real_flow.mean);
  CHECK(a.bias() == b.bias());
  CHECK(a.steps_done() == 20);
}

TEST_CASE("non-finite loss aborts naming the term") {
  GaussianWorld w;
  w.real_mean = Tensor::from({std::numeric_limits<double>::quiet_NaN(), 0.0});
  GaussianTrainer t(TrainerConfig{}, w, NoiseSchedule{});
  CHECK_THROWS_WITH_AS(t.step(), doctest::Contains("non-finite L_DMD"), NumericError);
}

TEST_CASE("trainer config validation") {
  const NoiseSchedule s;
  TrainerConfig c;
  c.lr = 0.0;
  CHECK_THROWS_AS(c.validate(s), ConfigError);
  c = TrainerConfig{};
  c.momentum = 1.0;
  CHECK_THROWS_AS(c.validate(s), ConfigError);
  c = TrainerConfig{};
  c.t_max = 2000;
  CHECK_THROWS_AS(c.validate(s), ConfigError);
  CHECK_NOTHROW(toy_trainer_defaults().validate(s));
}

TEST_CASE("Gaussian mode converges and keeps decreasing after burn-in") {
  // Block means over 50 steps drop until they reach the noise floor.
  for (std::uint64_t seed : {1u, 2u}) {
    TrainerConfig c;
    c.seed = seed;
    GaussianTrainer t(c, GaussianWorld{}, NoiseSchedule{});
    std::vector<double> blocks;
    double acc = 0.0;
    for (int i = 1; i <= 500; ++i) {
      acc += t.step().gap;
      if (i % 50 == 0) {
        blocks.push_back(acc / 50.0);
        acc = 0.0;
      }
    }
    for (std::size_t j = 1; j < blocks.size(); ++j) {
      CHECK((blocks[j] <= blocks[j - 1] || blocks[j] < 0.05));
    }
    CHECK(t.gap() < 0.05);
  }
}

TEST_CASE("momentum SGD accumulates velocity") {
  TrainerConfig c;
  c.momentum = 0.9;
  c.batch = 8;
  GaussianTrainer t(c, GaussianWorld{}, NoiseSchedule{});
  const StepReport r1 = t.step();
  const StepReport r2 = t.step();
  const Tensor g2 = axpby(4.0, r2.grad_dmd, 1.0, r2.grad_reg) + 4.0 * r2.grad_dmd_flow +
                    r2.grad_reg_flow;
  CHECK(max_abs(r2.update - (0.9 * r1.update + (-0.05) * g2)) < 1e-14);
}

TEST_CASE("dataset denoiser") {
  const NoiseSchedule s;
  Rng r(5);
  const std::vector<std::vector<Tensor>> one = {{gaussian_sample(r, {3, 2, 2, 2}),
                                                 gaussian_sample(r, {3, 2, 2, 2})}};
  const DatasetDenoiser d1(one);
  const Tensor x_t = gaussian_sample(r, {3, 2, 2, 2});
  CHECK(d1.denoise(s, 1, x_t, 700, {}) == one[0][1]);
  CHECK(max_abs(d1.sample_ode(s, 1, x_t, {}, 4) - one[0][1]) < 1e-12);

  std::vector<std::vector<Tensor>> many;
  for (int i = 0; i < 5; ++i) many.push_back({gaussian_sample(r, {3, 2, 2, 2}), gaussian_sample(r, {3, 2, 2, 2})});
  const DatasetDenoiser d(many);
  const auto post = d.posterior(s, 1, x_t, 500, {});
  double total = 0.0;
  for (double p : post) total += p;
  CHECK(total == doctest::Approx(1.0));
  // A nearly clean observation of clip 3 picks clip 3.
  const Tensor near = diffuse_with(s, many[3][1], 20, 0.01 * x_t);
  CHECK(d.posterior(s, 1, near, 20, {})[3] > 0.999);
  // Clean context of clip 2 selects clip 2 even from pure noise.
  const std::vector<ConditioningChunk> ctx = {{0, many[2][0], 0, ChunkSource::kGroundTruth}};
  CHECK(d.posterior(s, 1, x_t, 1000, ctx)[2] > 0.999);
  CHECK_THROWS_AS(d.denoise(s, 2, x_t, 500, {}), RangeError);
  CHECK_THROWS_AS(d.denoise(s, 1, x_t, 0, {}), RangeError);
}

TEST_CASE("toy generator") {
  ToyGenerator g(3, 2, 4, 4, 1);
  CHECK(g.num_params() == 2 * 96 + 3 * 2 * 2 * 9);
  Rng r(6);
  const Tensor z = gaussian_sample(r, g.chunk_shape()), c = gaussian_sample(r, g.frame_shape());
  // Zero parameters give a zero chunk; a unit bias alone gives ones.
  CHECK(max_abs(g.forward(z, c)) == 0.0);
  Tensor p = g.params();
  for (std::size_t i = 0; i < g.chunk_numel(); ++i) p[g.bias_offset() + i] = 1.0;
  g.set_params(p);
  CHECK(g.forward(z, c) == Tensor(g.chunk_shape(), 1.0));
  CHECK_THROWS_AS(g.forward(Tensor({3, 2, 4, 5}), c), ShapeError);
  CHECK_THROWS_AS(g.set_params(Tensor({3})), ShapeError);
}

TEST_CASE("toy trainer runs deterministically") {
  ToyConfig toy;
  toy.clips = 6;
  toy.eval_samples = 2;
  TrainerConfig c = toy_trainer_defaults();
  c.batch = 2;
  c.n_inner = 1;
  const NoiseSchedule s;
  ToyTrainer a(c, toy, s), b(c, toy, s);
  const Tensor teacher_clip = a.real().chunk(0, 0);
  for (int i = 0; i < 2; ++i) {
    const StepReport ra = a.step();
    const StepReport rb = b.step();
    CHECK(ra.losses.total == rb.losses.total);
    CHECK(std::isfinite(ra.losses.total));
  }
  CHECK(a.generator().params() == b.generator().params());
  CHECK(a.real().chunk(0, 0) == teacher_clip);
  CHECK(a.teacher().params() != a.student().params());
  Rng r(1);
  const auto roll = a.rollout(0, r);
  CHECK(roll.size() == toy.chunks_per_sample - 1);
  CHECK(roll[0].shape() == a.generator().chunk_shape());
  const double amp = a.generated_motion_amplitude();
  CHECK(amp == b.generated_motion_amplitude());
  const double data_amp = a.data_motion_amplitude();
  CHECK(data_amp > 0.5);
  CHECK(data_amp <= 1.0 + 1e-9);
}

}  // TEST_SUITE
