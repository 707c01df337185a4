// Copyright 2026 The diagdistill Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <vector>

#include "diagdistill/denoiser.hpp"
#include "diagdistill/kv_cache.hpp"

using namespace diag;

namespace {

std::vector<double> cond_vec() { return {0.3, -0.2, 0.5, 0.1}; }

// Predicts the true velocity eps - x for a known pair.
class OracleDenoiser final : public Denoiser {
 public:
  OracleDenoiser(const NoiseSchedule& s, Tensor x) : s_(s), x_(std::move(x)) {}
  const LatentShape& latent_shape() const override { return shape_; }
  KvLayout kv_layout() const override { return {1, 1, 1}; }
  std::size_t cond_dim() const override { return 0; }
  Tensor predict(const Tensor& x_t, int t, const KvContext&, std::span<const double>,
                 int) const override {
    // x_t = a x + s eps  =>  eps = (x_t - a x) / s
    const Tensor eps = (1.0 / s_.sigma(t)) * axpby(1.0, x_t, -s_.alpha(t), x_);
    return eps - x_;
  }
  KvBlock project_kv(const Tensor&, int, std::span<const double>) const override { return {}; }

 private:
  NoiseSchedule s_;
  Tensor x_;
  LatentShape shape_{1, 1, 2, 2};
};

}  // namespace

TEST_SUITE("denoiser") {

TEST_CASE("zero weights predict zero velocity") {
  const NoiseSchedule s;
  const ToyDiTConfig cfg;
  const auto m = ToyCausalDiT::zeros(cfg, s);
  Rng r(1);
  const Tensor x = gaussian_sample(r, cfg.latent.shape());
  const auto c = cond_vec();
  CHECK(max_abs(m.predict(x, 700, {}, c, 2)) == 0.0);
}

TEST_CASE("toy model is deterministic and shape preserving") {
  const NoiseSchedule s;
  const ToyDiTConfig cfg;
  const ToyCausalDiT a(cfg, s), b(cfg, s);
  Rng r(1);
  const Tensor x = gaussian_sample(r, cfg.latent.shape());
  const auto c = cond_vec();
  const Tensor va = a.predict(x, 700, {}, c, 2);
  CHECK(va == b.predict(x, 700, {}, c, 2));
  CHECK(va.shape() == x.shape());
  CHECK(va.all_finite());
  CHECK(a.parameter_count() > 0);
}

TEST_CASE("inputs are validated") {
  const NoiseSchedule s;
  const ToyDiTConfig cfg;
  const ToyCausalDiT m(cfg, s);
  const auto c = cond_vec();
  CHECK_THROWS_AS(m.predict(Tensor({2, 4, 8, 8}), 500, {}, c, 2), ShapeError);
  const std::vector<double> short_cond{1.0};
  CHECK_THROWS_AS(m.predict(Tensor(cfg.latent.shape()), 500, {}, short_cond, 2), ShapeError);
  KvContext bad;
  bad.kv.keys = Tensor({2, 5, 3, 3});
  bad.kv.values = Tensor({2, 5, 3, 3});
  CHECK_THROWS_AS(m.predict(Tensor(cfg.latent.shape()), 500, bad, c, 2), ShapeError);
  ToyDiTConfig odd = cfg;
  odd.heads = 3;
  CHECK_THROWS_AS(odd.validate(), ConfigError);
}

TEST_CASE("context changes the prediction and project_kv has the cache layout") {
  const NoiseSchedule s;
  const ToyDiTConfig cfg;
  const ToyCausalDiT m(cfg, s);
  Rng r(2);
  const Tensor x = gaussian_sample(r, cfg.latent.shape());
  const Tensor prev = gaussian_sample(r, cfg.latent.shape());
  const auto c = cond_vec();
  const KvBlock kv = m.project_kv(prev, 100, c);
  const KvLayout lay = m.kv_layout();
  CHECK(kv.keys.shape() == Shape{lay.layers, cfg.latent.tokens(), lay.heads, lay.head_dim});
  KvContext ctx{kv, {0}};
  CHECK_FALSE(m.predict(x, 700, ctx, c, 2) == m.predict(x, 700, {}, c, 2));
  // project_kv does not depend on any context.
  CHECK(m.project_kv(prev, 100, c).keys == kv.keys);
}

TEST_CASE("chunk causality: adding unrelated future entries is impossible by construction") {
  // Context only holds what the caller passes; a prediction with context {0}
  // is unchanged by a later chunk that was never inserted.
  const NoiseSchedule s;
  const ToyDiTConfig cfg;
  const ToyCausalDiT m(cfg, s);
  Rng r(4);
  const auto c = cond_vec();
  KvCache cache(4);
  cache_noisy_result(cache, gaussian_sample(r, cfg.latent.shape()), ForcingConfig{}, s, m, c, r);
  const Tensor x = gaussian_sample(r, cfg.latent.shape());
  const Tensor before = m.predict(x, 700, cache.gather_context(), c, 2);
  KvCache copy = cache;
  cache_noisy_result(copy, gaussian_sample(r, cfg.latent.shape()), ForcingConfig{}, s, m, c, r);
  CHECK(m.predict(x, 700, cache.gather_context(), c, 2) == before);
  for (const auto& e : cache.entries()) CHECK(e.chunk_index < 1);
}

TEST_CASE("to_data_prediction identities") {
  const NoiseSchedule s;
  Rng r(5);
  const Tensor x = gaussian_sample(r, {8}), eps = gaussian_sample(r, {8});
  const Tensor v = eps - x;
  CHECK(to_data_prediction(s, x, v, 0) == x);
  CHECK(to_data_prediction(s, x, Tensor::zeros_like(x), 500) == x);
  for (int t : {100, 500, 1000}) {
    const Tensor x_t = diffuse_with(s, x, t, eps);
    CHECK(max_abs(to_data_prediction(s, x_t, v, t) - x) < 1e-12);
  }
}

TEST_CASE("sampler step") {
  const NoiseSchedule s;
  Rng r(6);
  const Tensor x = gaussian_sample(r, {1, 1, 2, 2}), eps = gaussian_sample(r, {1, 1, 2, 2});
  const OracleDenoiser oracle(s, x);
  for (int t : {1000, 700, 100}) {
    const Tensor x_t = diffuse_with(s, x, t, eps);
    Rng a(1);
    CHECK(max_abs(step(s, oracle, x_t, t, 0, {}, {}, a) - x) < 1e-12);
    Rng b(1);
    CHECK(step(s, oracle, x_t, t, 0, {}, {}, b) ==
          to_data_prediction(s, x_t, oracle.predict(x_t, t, {}, {}, 1), t));
  }
  Rng a(3), b(3);
  const Tensor x_t = diffuse_with(s, x, 700, eps);
  CHECK(step(s, oracle, x_t, 700, 100, {}, {}, a) == step(s, oracle, x_t, 700, 100, {}, {}, b));
  CHECK_THROWS_WITH_AS(step(s, oracle, x_t, 100, 100, {}, {}, a), "timesteps must decrease",
                       RangeError);
}

TEST_CASE("deterministic re-noising reuses the implied noise") {
  const NoiseSchedule s;
  Rng r(8);
  const Tensor x = gaussian_sample(r, {6}), eps = gaussian_sample(r, {6});
  const Tensor x_t = diffuse_with(s, x, 800, eps);
  Rng unused(0);
  const Tensor next = renoise(s, x_t, x, 800, 300, unused, RenoiseMode::kDeterministic);
  CHECK(max_abs(next - diffuse_with(s, x, 300, eps)) < 1e-12);
}

}  // TEST_SUITE
