// Copyright 2026 The diagdistill Authors
// SPDX-License-Identifier: Apache-2.0

#include "diagdistill/gradcheck.hpp"

#include <algorithm>
#include <memory>

#include "diagdistill/motion_flow.hpp"
#include "diagdistill/schedule.hpp"
#include "diagdistill/trainer.hpp"

namespace diag {

namespace {

// Small enough that a full central-difference sweep stays cheap.
constexpr std::size_t kF = 3, kC = 2, kH = 4, kW = 4;

ExtractorConfig small_extractor(std::uint64_t seed) {
  return ExtractorConfig{.channels = kC, .c_mid = 3, .c_feat = 2, .init_range = 0.5, .seed = seed};
}

Tensor video(Rng& rng) { return gaussian_sample(rng, {kF, kC, kH, kW}); }

int random_t(Rng& rng) { return static_cast<int>(rng.uniform_int(50, 950)); }

ToyGenerator random_generator(Rng& rng) {
  ToyGenerator g(kF, kC, kH, kW, 1);
  g.set_params(uniform_sample(rng, {g.num_params()}, -0.5, 0.5));
  return g;
}

// Fixed-conditioning view of a toy generator with explicit parameters.
class BoundGenerator final : public DifferentiableGenerator {
 public:
  BoundGenerator(const ToyGenerator& g, Tensor params, Tensor cond)
      : g_(g), params_(std::move(params)), cond_(std::move(cond)) {}
  Shape noise_shape() const override { return g_.chunk_shape(); }
  Tensor forward(const Tensor& eps) const override { return g_.forward_with(params_, eps, cond_); }
  Tensor param_vjp(const Tensor& eps, const Tensor& grad_out) const override {
    return g_.param_vjp(eps, cond_, grad_out);
  }

 private:
  const ToyGenerator& g_;
  Tensor params_, cond_;
};

GradProbe extractor_params(std::uint64_t seed) {
  Rng rng(seed);
  auto net = std::make_shared<MotionExtractor>(small_extractor(seed));
  const Tensor x = video(rng);
  const Tensor r = gaussian_sample(rng, net->forward(x).shape());
  return {[net, x, r](const Tensor& p) { return dot(r, net->forward_with(p, x)); }, net->params(),
          net->backward(x, r).params};
}

GradProbe extractor_input(std::uint64_t seed) {
  Rng rng(seed);
  auto net = std::make_shared<MotionExtractor>(small_extractor(seed));
  const Tensor x = video(rng);
  const Tensor r = gaussian_sample(rng, net->forward(x).shape());
  return {[net, r](const Tensor& v) { return dot(r, net->forward(v)); }, x, net->input_vjp(x, r)};
}

GradProbe flow_regression_params(std::uint64_t seed) {
  Rng rng(seed);
  auto student = std::make_shared<MotionExtractor>(small_extractor(seed));
  auto teacher = std::make_shared<MotionExtractor>(small_extractor(seed + 1000));
  const Tensor xs = video(rng), xt = video(rng);
  return {[=](const Tensor& p) {
            MotionExtractor s = *student;
            s.set_params(p);
            return flow_regression_loss(s, *teacher, xs, xt).loss;
          },
          student->params(), flow_regression_loss(*student, *teacher, xs, xt).grad_student_params};
}

GradProbe flow_regression_input(std::uint64_t seed) {
  Rng rng(seed);
  auto student = std::make_shared<MotionExtractor>(small_extractor(seed));
  auto teacher = std::make_shared<MotionExtractor>(small_extractor(seed + 1000));
  const Tensor xs = video(rng), xt = video(rng);
  return {[=](const Tensor& v) { return flow_regression_loss(*student, *teacher, v, xt).loss; },
          xs, flow_regression_loss(*student, *teacher, xs, xt).grad_x_student};
}

GradProbe toy_generator(std::uint64_t seed) {
  Rng rng(seed);
  auto g = std::make_shared<ToyGenerator>(random_generator(rng));
  const Tensor z = video(rng);
  const Tensor c = gaussian_sample(rng, g->frame_shape());
  const Tensor r = gaussian_sample(rng, g->chunk_shape());
  return {[=](const Tensor& p) { return dot(r, g->forward_with(p, z, c)); }, g->params(),
          g->param_vjp(z, c, r)};
}

GradProbe regression(std::uint64_t seed) {
  Rng rng(seed);
  auto g = std::make_shared<ToyGenerator>(random_generator(rng));
  const Tensor c = gaussian_sample(rng, g->frame_shape());
  std::vector<Tensor> z, y;
  for (int i = 0; i < 3; ++i) {
    z.push_back(video(rng));
    y.push_back(video(rng));
  }
  const BoundGenerator bound(*g, g->params(), c);
  return {[=](const Tensor& p) { return regression_loss(BoundGenerator(*g, p, c), z, y).loss; },
          g->params(), regression_loss(bound, z, y).grad_params};
}

// The DMD estimator treats the score difference as a constant, so its
// parameter gradient is the gradient of <grad_x, G(z)> with grad_x frozen.
GradProbe dmd_chain(std::uint64_t seed) {
  Rng rng(seed);
  const NoiseSchedule s;
  auto g = std::make_shared<ToyGenerator>(random_generator(rng));
  const Tensor c = gaussian_sample(rng, g->frame_shape());
  const GaussianDenoiser real{gaussian_sample(rng, g->chunk_shape()), 0.7};
  const GaussianDenoiser fake{gaussian_sample(rng, g->chunk_shape()), 0.3};
  const ScoreFn rs = [&](const Tensor& x, int t) { return real.score(s, x, t); };
  const ScoreFn fs = [&](const Tensor& x, int t) { return fake.score(s, x, t); };
  std::vector<Tensor> z, gx;
  Tensor analytic = Tensor::zeros_like(g->params());
  for (int i = 0; i < 2; ++i) {
    z.push_back(video(rng));
    const int t = random_t(rng);
    const Tensor x_t = forward_diffuse(s, g->forward(z.back(), c), t, rng);
    gx.push_back(dmd_output_grad(s, x_t, t, rs, fs));
    analytic += g->param_vjp(z.back(), c, gx.back());
  }
  return {[=](const Tensor& p) {
            double v = 0.0;
            for (std::size_t i = 0; i < z.size(); ++i) v += dot(gx[i], g->forward_with(p, z[i], c));
            return v;
          },
          g->params(), analytic};
}

// Flow-DMD: grad_x = -alpha J_F(x_t)^T d with d frozen, so the parameter
// gradient is that of -<d, F(alpha G(z) + sigma eps)>.
GradProbe flow_dmd_chain(std::uint64_t seed) {
  Rng rng(seed);
  const NoiseSchedule s;
  auto g = std::make_shared<ToyGenerator>(random_generator(rng));
  auto net = std::make_shared<MotionExtractor>(small_extractor(seed));
  const Tensor c = gaussian_sample(rng, g->frame_shape());
  const Tensor z = video(rng), eps = video(rng);
  const int t = random_t(rng);
  const Shape fshape = net->forward(z).shape();
  const Tensor mr = gaussian_sample(rng, fshape), mf = gaussian_sample(rng, fshape);
  const FlowScoreFn rs = [&](const Tensor& f, int tt) { return flow_score(s, f, mr, tt); };
  const FlowScoreFn fs = [&](const Tensor& f, int tt) { return flow_score(s, f, mf, tt); };
  const FlowDmdSample smp = flow_dmd_sample(s, *net, g->forward(z, c), t, eps, rs, fs);
  const Tensor d = smp.score_diff;
  return {[=](const Tensor& p) {
            return -dot(d, net->forward(diffuse_with(s, g->forward_with(p, z, c), t, eps)));
          },
          g->params(), g->param_vjp(z, c, smp.grad_x)};
}

std::vector<DenoiserSample> denoiser_batch(Rng& rng, const NoiseSchedule& s, const Shape& shape,
                                           const Shape& cond_shape) {
  std::vector<DenoiserSample> b;
  for (int i = 0; i < 3; ++i) {
    DenoiserSample d;
    d.x = gaussian_sample(rng, shape);
    d.t = random_t(rng);
    d.x_t = forward_diffuse(s, d.x, d.t, rng);
    if (!cond_shape.empty()) d.cond_frame = gaussian_sample(rng, cond_shape);
    b.push_back(std::move(d));
  }
  return b;
}

GradProbe gaussian_fake_fit(std::uint64_t seed) {
  Rng rng(seed);
  const NoiseSchedule s;
  const Tensor mean = gaussian_sample(rng, {kF, kC});
  const double var = rng.uniform(0.2, 2.0);
  const auto batch = denoiser_batch(rng, s, mean.shape(), {});
  return {[=](const Tensor& m) {
            return gaussian_denoiser_loss(GaussianDenoiser{m, var}, s, batch).loss;
          },
          mean, gaussian_denoiser_loss(GaussianDenoiser{mean, var}, s, batch).grad};
}

GradProbe conditional_fake_fit(std::uint64_t seed) {
  Rng rng(seed);
  const NoiseSchedule s;
  auto g = std::make_shared<ToyGenerator>(random_generator(rng));
  const double var = rng.uniform(0.05, 1.0);
  const auto batch = denoiser_batch(rng, s, g->chunk_shape(), g->frame_shape());
  return {[=](const Tensor& p) { return conditional_denoiser_loss(*g, p, var, s, batch).loss; },
          g->params(), conditional_denoiser_loss(*g, g->params(), var, s, batch).grad};
}

GradProbe gaussian_score(std::uint64_t seed) {
  Rng rng(seed);
  const NoiseSchedule s;
  const GaussianDenoiser d{gaussian_sample(rng, {kF, kC}), rng.uniform(0.2, 2.0)};
  const int t = random_t(rng);
  const double a = s.alpha(t), sg = s.sigma(t);
  const double v = a * a * d.var + sg * sg;
  const Tensor x_t = gaussian_sample(rng, d.mean.shape());
  // log N(x_t; a*mean, v I) up to a constant.
  return {[=](const Tensor& x) {
            const Tensor r = axpby(1.0, x, -a, d.mean);
            return -0.5 * dot(r, r) / v;
          },
          x_t, d.score(s, x_t, t)};
}

}  // namespace

const std::vector<GradCase>& gradient_registry() {
  static const std::vector<GradCase> cases = {
      {"extractor_params", extractor_params},
      {"extractor_input", extractor_input},
      {"flow_regression_params", flow_regression_params},
      {"flow_regression_input", flow_regression_input},
      {"toy_generator_vjp", toy_generator},
      {"regression_loss", regression},
      {"dmd_chain", dmd_chain},
      {"flow_dmd_chain", flow_dmd_chain},
      {"gaussian_fake_fit", gaussian_fake_fit},
      {"conditional_fake_fit", conditional_fake_fit},
      {"gaussian_score", gaussian_score},
  };
  return cases;
}

std::vector<GradCheckResult> run_gradcheck(std::size_t seeds, double h, std::uint64_t base_seed) {
  std::vector<GradCheckResult> out;
  for (const auto& c : gradient_registry()) {
    GradCheckResult r{c.name, 0.0, seeds};
    for (std::size_t i = 0; i < seeds; ++i) {
      const GradProbe p = c.make(base_seed + i);
      const Tensor numeric = finite_diff_grad(p.f, p.at, h);
      r.max_rel_error = std::max(r.max_rel_error, relative_error(p.analytic, numeric));
    }
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace diag
