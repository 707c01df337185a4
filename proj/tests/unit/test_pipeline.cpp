// Copyright 2026 The diagdistill Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <vector>

#include "diagdistill/pipeline.hpp"

using namespace diag;

namespace {

const std::vector<double> kCond{0.3, -0.2, 0.5, 0.1};

PipelineConfig baseline(std::uint64_t seed) {
  PipelineConfig p;
  p.schedule = parse_schedule("2222222");
  p.chunks = 7;
  p.forcing = ForcingConfig{0, false, false};
  p.window_chunks = 7;
  p.mix_outputs = false;
  p.seed = seed;
  return p;
}

}  // namespace

TEST_SUITE("pipeline") {

TEST_CASE("one chunk, one step, zero model, no mix returns the initial draw") {
  const NoiseSchedule s;
  const ToyDiTConfig cfg;
  const auto m = ToyCausalDiT::zeros(cfg, s);
  PipelineConfig p;
  p.schedule = parse_schedule("1");
  p.chunks = 1;
  p.mix_outputs = false;
  p.seed = 9;
  const auto r = generate(p, m, s, kCond);
  Rng init = Rng(9).fork(0);
  CHECK(r.chunks.at(0) == gaussian_sample(init, cfg.latent.shape()));
}

TEST_CASE("baseline configuration matches the recompute oracle bit for bit") {
  const NoiseSchedule s;
  ToyDiTConfig cfg;
  cfg.seed = 3;
  const ToyCausalDiT m(cfg, s);
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const auto p = baseline(seed);
    const auto a = generate(p, m, s, kCond);
    const auto b = reference_generate(p, m, s, kCond);
    REQUIRE(a.chunks.size() == 7);
    for (std::size_t k = 0; k < 7; ++k) CHECK(a.chunks[k] == b.chunks[k]);
  }
}

TEST_CASE("oracle equivalence also holds with forcing, mixing and a short window") {
  const NoiseSchedule s;
  const ToyCausalDiT m(ToyDiTConfig{}, s);
  PipelineConfig p;
  p.chunks = 9;
  p.schedule = StepSchedule({4, 3, 2, 2, 2, 2, 2}, true);
  const auto a = generate(p, m, s, kCond);
  const auto b = reference_generate(p, m, s, kCond);
  for (std::size_t k = 0; k < p.chunks; ++k) CHECK(a.chunks[k] == b.chunks[k]);
  for (std::size_t k = 0; k < p.chunks; ++k) {
    CHECK(a.logs[k].cache_scalars_after == b.logs[k].cache_scalars_after);
  }
}

TEST_CASE("single chunk and oversized window are trivially equal") {
  const NoiseSchedule s;
  const ToyCausalDiT m(ToyDiTConfig{}, s);
  auto p = baseline(4);
  p.chunks = 1;
  CHECK(generate(p, m, s, kCond).chunks == reference_generate(p, m, s, kCond).chunks);
  p.chunks = 3;
  p.window_chunks = 10;
  const auto r = generate(p, m, s, kCond);
  CHECK(r.logs[2].context_chunks == std::vector<int>{0, 1});
}

TEST_CASE("logs, predict ledger and phases for 4322222") {
  const NoiseSchedule s;
  const ToyCausalDiT m(ToyDiTConfig{}, s);
  PipelineConfig p;
  const auto r = generate(p, m, s, kCond);
  CHECK(r.predict_calls == 17);
  CHECK(nfe_count(p.schedule) / static_cast<int>(r.predict_calls) == 2);
  CHECK(r.logs[0].timesteps == std::vector<int>{1000, 700, 400, 100});
  CHECK(r.logs[0].cache_step == 2);
  CHECK(r.logs[2].timesteps == std::vector<int>{1000, 100});
  CHECK(r.logs[2].cache_step == 0);
  // The first 2-step chunk starts the extension phase.
  CHECK(r.logs[1].phase == Phase::kBase);
  CHECK(r.logs[2].phase == Phase::kExtension);
  p.auto_phase = false;
  CHECK(generate(p, m, s, kCond).logs[3].phase == Phase::kBase);
  for (const auto& l : r.logs) {
    CHECK(l.forcing_t == 100);
    for (int c : l.context_chunks) CHECK(c < l.chunk_index);
  }
}

TEST_CASE("bounded cache over 50 chunks") {
  const NoiseSchedule s;
  ToyDiTConfig small;
  small.latent = LatentShape{1, 2, 2, 2};
  const ToyCausalDiT m(small, s);
  PipelineConfig p;
  p.schedule = StepSchedule({2}, true);
  p.chunks = 50;
  const auto r = generate(p, m, s, kCond);
  for (std::size_t k = 0; k < 50; ++k) {
    CHECK(r.logs[k].cache_size_after <= 4);
    if (k >= 4) {
      CHECK(r.logs[k].cache_scalars_after == r.logs[4].cache_scalars_after);
      std::vector<int> want;
      for (int i = static_cast<int>(k) - 4; i < static_cast<int>(k); ++i) want.push_back(i);
      CHECK(r.logs[k].context_chunks == want);
    }
  }
}

TEST_CASE("determinism and seed sensitivity") {
  const NoiseSchedule s;
  const ToyCausalDiT m(ToyDiTConfig{}, s);
  PipelineConfig p;
  const auto a = generate(p, m, s, kCond);
  CHECK(a.chunks == generate(p, m, s, kCond).chunks);
  p.seed = 43;
  CHECK_FALSE(a.chunks == generate(p, m, s, kCond).chunks);
}

TEST_CASE("configuration errors") {
  const NoiseSchedule s;
  const ToyCausalDiT m(ToyDiTConfig{}, s);
  PipelineConfig p;
  p.chunks = 8;
  CHECK_THROWS_AS(generate(p, m, s, kCond), ConfigError);
  p.chunks = 7;
  p.forcing.forcing_t = 0;
  CHECK_THROWS_AS(generate(p, m, s, kCond), ConfigError);
}

TEST_CASE("mix weights") {
  const NoiseSchedule s;
  Rng r(1);
  const Tensor x = gaussian_sample(r, {5});
  Rng a(2);
  CHECK(mix(x, 0, s, a) == x);
  Rng b(2), c(2);
  CHECK(max_abs(mix(x, 1000, s, b) - gaussian_sample(c, {5})) < 1e-12);
  Rng d(2), e(2);
  const Tensor eps = gaussian_sample(e, {5});
  const Tensor want = axpby(0.642857142857143, x, 0.357142857142857, eps);
  CHECK(max_abs(mix(x, 100, s, d) - want) < 1e-9);
}

TEST_CASE("denoiser bank selects by step count") {
  const NoiseSchedule s;
  const ToyCausalDiT a(ToyDiTConfig{}, s);
  const auto z = ToyCausalDiT::zeros(ToyDiTConfig{}, s);
  DenoiserBank bank(a);
  bank.set(2, z);
  CHECK(&bank.for_steps(2) == &z);
  CHECK(&bank.for_steps(4) == &a);
}

}  // TEST_SUITE
