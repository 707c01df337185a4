// Copyright 2026 The diagdistill Authors
// SPDX-License-Identifier: Apache-2.0

#include "diagdistill/motion_flow.hpp"

#include <cmath>
#include <numbers>
#include <vector>

#include "conv_ops.hpp"

namespace diag {

namespace {

using detail::conv3x3;
using detail::conv3x3_backward;

// Per-pixel affine map over channels. in [ci, P] -> out [co, P].
void pixel_affine(const double* in, const double* w, const double* b, double* out, std::size_t ci,
                  std::size_t co, std::size_t P) {
  for (std::size_t o = 0; o < co; ++o) {
    for (std::size_t p = 0; p < P; ++p) {
      double acc = b[o];
      for (std::size_t i = 0; i < ci; ++i) acc += w[o * ci + i] * in[i * P + p];
      out[o * P + p] = acc;
    }
  }
}

void pixel_affine_backward(const double* in, const double* w, const double* g_out, double* g_w,
                           double* g_b, double* g_in, std::size_t ci, std::size_t co,
                           std::size_t P) {
  std::fill(g_in, g_in + ci * P, 0.0);
  for (std::size_t o = 0; o < co; ++o) {
    for (std::size_t p = 0; p < P; ++p) {
      const double g = g_out[o * P + p];
      g_b[o] += g;
      for (std::size_t i = 0; i < ci; ++i) {
        g_w[o * ci + i] += g * in[i * P + p];
        g_in[i * P + p] += g * w[o * ci + i];
      }
    }
  }
}

inline double act(Activation a, double v) { return a == Activation::kTanh ? std::tanh(v) : v; }

// Derivative expressed through the activation output.
inline double act_grad_from_out(Activation a, double y) {
  return a == Activation::kTanh ? 1.0 - y * y : 1.0;
}

void require_video(const Tensor& x, std::size_t channels, const char* what) {
  if (x.rank() != 4) throw ShapeError(std::string(what) + ": expected [F, C, H, W]");
  if (x.dim(0) < 2) throw ShapeError("motion requires >=2 frames");
  if (x.dim(1) != channels) {
    throw ShapeError(std::string(what) + ": expected " + std::to_string(channels) +
                     " channels, got " + std::to_string(x.dim(1)));
  }
}

}  // namespace

MotionExtractor::Offsets MotionExtractor::layout(const ExtractorConfig& c) {
  Offsets o{};
  std::size_t at = 0;
  o.conv1_w = at, at += c.c_mid * c.channels * 9;
  o.conv1_b = at, at += c.c_mid;
  o.conv2_w = at, at += c.c_mid * c.c_mid * 9;
  o.conv2_b = at, at += c.c_mid;
  o.mlp1_w = at, at += c.c_mid * c.c_mid;
  o.mlp1_b = at, at += c.c_mid;
  o.mlp2_w = at, at += c.c_feat * c.c_mid;
  o.mlp2_b = at, at += c.c_feat;
  o.total = at;
  return o;
}

MotionExtractor::MotionExtractor(const ExtractorConfig& cfg) : cfg_(cfg), off_(layout(cfg)) {
  if (cfg.channels == 0 || cfg.c_mid == 0 || cfg.c_feat == 0) {
    throw ConfigError("extractor channel counts must be positive");
  }
  params_ = Tensor({off_.total});
  Rng rng(cfg.seed);
  auto fill = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) params_[i] = rng.uniform(-cfg.init_range, cfg.init_range);
  };
  fill(off_.conv1_w, off_.conv1_b);
  fill(off_.conv2_w, off_.conv2_b);
  fill(off_.mlp1_w, off_.mlp1_b);
  fill(off_.mlp2_w, off_.mlp2_b);
}

void MotionExtractor::set_params(Tensor p) {
  if (p.size() != off_.total) throw ShapeError("extractor parameter count mismatch");
  params_ = p.reshaped({off_.total});
}

Tensor MotionExtractor::forward(const Tensor& x) const { return forward_with(params_, x); }

Tensor MotionExtractor::forward_with(const Tensor& params, const Tensor& x) const {
  Tensor out;
  run(params, x, nullptr, &out);
  return out;
}

Tensor MotionExtractor::input_vjp(const Tensor& x, const Tensor& grad_out) const {
  return backward(x, grad_out).input;
}

MotionExtractor::Grads MotionExtractor::backward(const Tensor& x, const Tensor& grad_out) const {
  return run(params_, x, &grad_out, nullptr);
}

MotionExtractor::Grads MotionExtractor::run(const Tensor& params, const Tensor& x,
                                            const Tensor* grad_out, Tensor* out) const {
  require_video(x, cfg_.channels, "MotionExtractor");
  if (params.size() != off_.total) throw ShapeError("extractor parameter count mismatch");
  const std::size_t F = x.dim(0), C = cfg_.channels, H = x.dim(2), W = x.dim(3), P = H * W;
  const std::size_t Cm = cfg_.c_mid, Cf = cfg_.c_feat;
  const Activation A = cfg_.activation;
  const Shape out_shape{F - 1, Cf, H, W};
  if (grad_out && grad_out->shape() != out_shape) {
    throw ShapeError("feature gradient shape " + shape_str(grad_out->shape()) + " != " +
                     shape_str(out_shape));
  }
  const double* th = params.data().data();

  Grads g;
  if (grad_out) {
    g.params = Tensor({off_.total});
    g.input = Tensor(x.shape());
  }
  if (out) *out = Tensor(out_shape);

  std::vector<double> d(C * P), a1(Cm * P), h1(Cm * P), a2(Cm * P), h2(Cm * P), y(Cf * P);
  std::vector<double> g_h2(Cm * P), g_a2(Cm * P), g_h1(Cm * P), g_d(C * P);
  for (std::size_t f = 0; f + 1 < F; ++f) {
    const double* x0 = x.data().data() + f * C * P;
    const double* x1 = x0 + C * P;
    for (std::size_t i = 0; i < C * P; ++i) d[i] = x1[i] - x0[i];
    conv3x3(d.data(), th + off_.conv1_w, th + off_.conv1_b, a1.data(), C, Cm, H, W);
    for (std::size_t i = 0; i < Cm * P; ++i) h1[i] = act(A, a1[i]);
    conv3x3(h1.data(), th + off_.conv2_w, th + off_.conv2_b, a2.data(), Cm, Cm, H, W);
    pixel_affine(a2.data(), th + off_.mlp1_w, th + off_.mlp1_b, h2.data(), Cm, Cm, P);
    for (double& v : h2) v = act(A, v);
    pixel_affine(h2.data(), th + off_.mlp2_w, th + off_.mlp2_b, y.data(), Cm, Cf, P);
    if (out) std::copy(y.begin(), y.end(), out->data().begin() + f * Cf * P);
    if (!grad_out) continue;

    double* gp = g.params.data().data();
    const double* gy = grad_out->data().data() + f * Cf * P;
    pixel_affine_backward(h2.data(), th + off_.mlp2_w, gy, gp + off_.mlp2_w, gp + off_.mlp2_b,
                          g_h2.data(), Cm, Cf, P);
    for (std::size_t i = 0; i < Cm * P; ++i) g_h2[i] *= act_grad_from_out(A, h2[i]);
    pixel_affine_backward(a2.data(), th + off_.mlp1_w, g_h2.data(), gp + off_.mlp1_w,
                          gp + off_.mlp1_b, g_a2.data(), Cm, Cm, P);
    conv3x3_backward(h1.data(), th + off_.conv2_w, g_a2.data(), gp + off_.conv2_w,
                     gp + off_.conv2_b, g_h1.data(), Cm, Cm, H, W);
    for (std::size_t i = 0; i < Cm * P; ++i) g_h1[i] *= act_grad_from_out(A, h1[i]);
    conv3x3_backward(d.data(), th + off_.conv1_w, g_h1.data(), gp + off_.conv1_w,
                     gp + off_.conv1_b, g_d.data(), C, Cm, H, W);
    double* gx0 = g.input.data().data() + f * C * P;
    double* gx1 = gx0 + C * P;
    for (std::size_t i = 0; i < C * P; ++i) {
      gx1[i] += g_d[i];
      gx0[i] -= g_d[i];
    }
  }
  return g;
}

void ema_update(const EmaLink& link, MotionExtractor& teacher, const MotionExtractor& student) {
  if (!(teacher.config().channels == student.config().channels &&
        teacher.config().c_mid == student.config().c_mid &&
        teacher.config().c_feat == student.config().c_feat &&
        teacher.config().activation == student.config().activation)) {
    throw ConfigError("EMA requires identical teacher and student architectures");
  }
  if (link.mu < 0.0 || link.mu > 1.0) throw ConfigError("EMA decay must lie in [0, 1]");
  if (link.mu == 1.0) return;
  Tensor p = teacher.params();
  const Tensor& s = student.params();
  if (link.mu == 0.0) {
    teacher.set_params(s);
    return;
  }
  for (std::size_t i = 0; i < p.size(); ++i) p[i] = link.mu * p[i] + (1.0 - link.mu) * s[i];
  teacher.set_params(std::move(p));
}

Tensor FrameDifference::forward(const Tensor& x) const {
  if (x.rank() < 1 || x.dim(0) < 2) throw ShapeError("motion requires >=2 frames");
  Shape s = x.shape();
  const std::size_t per = x.size() / s[0];
  s[0] -= 1;
  Tensor out(s);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = scale_ * (x[i + per] - x[i]);
  return out;
}

Tensor FrameDifference::input_vjp(const Tensor& x, const Tensor& grad_out) const {
  const std::size_t per = x.size() / x.dim(0);
  if (grad_out.size() != x.size() - per) throw ShapeError("frame-difference gradient size");
  Tensor g(x.shape());
  for (std::size_t i = 0; i < grad_out.size(); ++i) {
    g[i + per] += scale_ * grad_out[i];
    g[i] -= scale_ * grad_out[i];
  }
  return g;
}

FlowRepr parse_flow_repr(std::string_view name) {
  if (name == "diff") return FlowRepr::kDiff;
  if (name == "corr") return FlowRepr::kCorr;
  if (name == "dct_low") return FlowRepr::kDctLow;
  if (name == "dct_high") return FlowRepr::kDctHigh;
  if (name == "learned") return FlowRepr::kLearned;
  throw ConfigError("unknown flow_repr \"" + std::string(name) + "\"");
}

std::string flow_repr_name(FlowRepr r) {
  switch (r) {
    case FlowRepr::kDiff: return "diff";
    case FlowRepr::kCorr: return "corr";
    case FlowRepr::kDctLow: return "dct_low";
    case FlowRepr::kDctHigh: return "dct_high";
    case FlowRepr::kLearned: return "learned";
  }
  return "?";
}

namespace {

// Orthonormal DCT-II along one axis of length n.
double dct_basis(std::size_t k, std::size_t i, std::size_t n) {
  const double s = k == 0 ? std::sqrt(1.0 / n) : std::sqrt(2.0 / n);
  return s * std::cos(std::numbers::pi * (2.0 * i + 1.0) * k / (2.0 * n));
}

Tensor dct_band(const Tensor& x, bool low) {
  const Tensor d = FrameDifference().forward(x);
  const std::size_t F = d.dim(0), C = d.dim(1), H = d.dim(2), W = d.dim(3);
  Tensor out(d.shape());
  for (std::size_t f = 0; f < F; ++f) {
    for (std::size_t c = 0; c < C; ++c) {
      const double* in = d.data().data() + (f * C + c) * H * W;
      double* o = out.data().data() + (f * C + c) * H * W;
      for (std::size_t u = 0; u < H; ++u) {
        for (std::size_t v = 0; v < W; ++v) {
          const bool is_low = 2 * u < H && 2 * v < W;
          if (is_low != low) continue;
          double acc = 0.0;
          for (std::size_t y = 0; y < H; ++y)
            for (std::size_t xx = 0; xx < W; ++xx)
              acc += dct_basis(u, y, H) * dct_basis(v, xx, W) * in[y * W + xx];
          o[u * W + v] = acc;
        }
      }
    }
  }
  return out;
}

Tensor correlation_volume(const Tensor& x) {
  if (x.rank() != 4 || x.dim(0) < 2) throw ShapeError("motion requires >=2 frames");
  const std::size_t F = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3), P = H * W;
  Tensor out({F - 1, P, H, W});
  for (std::size_t f = 0; f + 1 < F; ++f) {
    const double* a = x.data().data() + f * C * P;
    const double* b = a + C * P;
    for (std::size_t p = 0; p < P; ++p) {
      for (std::size_t q = 0; q < P; ++q) {
        double acc = 0.0;
        for (std::size_t c = 0; c < C; ++c) acc += a[c * P + p] * b[c * P + q];
        out[(f * P + p) * P + q] = acc / static_cast<double>(C);
      }
    }
  }
  return out;
}

}  // namespace

Tensor extract_features(FlowRepr repr, const Tensor& x, const MotionExtractor* learned) {
  switch (repr) {
    case FlowRepr::kDiff: return FrameDifference().forward(x);
    case FlowRepr::kCorr: return correlation_volume(x);
    case FlowRepr::kDctLow: return dct_band(x, true);
    case FlowRepr::kDctHigh: return dct_band(x, false);
    case FlowRepr::kLearned:
      if (!learned) throw ConfigError("flow_repr learned needs an extractor");
      return learned->forward(x);
  }
  throw ConfigError("unknown flow representation");
}

Tensor extract_flow(const MotionExtractor& f, const Tensor& x) { return f.forward(x); }

FlowRegression flow_regression_loss(const MotionExtractor& student, const MotionExtractor& teacher,
                                    const Tensor& x_student, const Tensor& x_teacher) {
  require_same_shape(x_student, x_teacher, "flow_regression_loss");
  const Tensor target = teacher.forward(x_teacher);
  const Tensor pred = student.forward(x_student);
  require_same_shape(pred, target, "flow_regression_loss features");
  FlowRegression r;
  r.loss = mse(pred, target);
  const double k = 2.0 / static_cast<double>(pred.size());
  const Tensor g = axpby(k, pred, -k, target);
  auto grads = student.backward(x_student, g);
  r.grad_student_params = std::move(grads.params);
  r.grad_x_student = std::move(grads.input);
  return r;
}

Tensor flow_score(const NoiseSchedule& s, const Tensor& feat_t, const Tensor& mu_flow, int t) {
  return score_from_denoised(s, feat_t, mu_flow, t);
}

FlowDmdSample flow_dmd_sample(const NoiseSchedule& s, const FeatureMap& features,
                              const Tensor& x, int t, const Tensor& eps,
                              const FlowScoreFn& real_score, const FlowScoreFn& fake_score) {
  FlowDmdSample out;
  out.x_t = diffuse_with(s, x, t, eps);
  out.feat_t = features.forward(out.x_t);
  out.score_diff = real_score(out.feat_t, t) - fake_score(out.feat_t, t);
  out.grad_x = (-s.alpha(t)) * features.input_vjp(out.x_t, out.score_diff);
  return out;
}

Tensor flow_dmd_gradient(const DifferentiableGenerator& gen, const FeatureMap& features,
                         const FlowScoreFn& real_score, const FlowScoreFn& fake_score,
                         const NoiseSchedule& s, Rng& rng, int t, std::size_t n_samples) {
  if (n_samples == 0) throw ConfigError("flow_dmd_gradient needs at least one sample");
  Tensor acc;
  for (std::size_t i = 0; i < n_samples; ++i) {
    const Tensor z = gaussian_sample(rng, gen.noise_shape());
    const Tensor x = gen.forward(z);
    const Tensor eps = gaussian_sample(rng, x.shape());
    const FlowDmdSample smp = flow_dmd_sample(s, features, x, t, eps, real_score, fake_score);
    Tensor gp = gen.param_vjp(z, smp.grad_x);
    if (i == 0) {
      acc = std::move(gp);
    } else {
      acc += gp;
    }
  }
  return (1.0 / static_cast<double>(n_samples)) * acc;
}

double gaussian_kl(const Tensor& m1, const Tensor& v1, const Tensor& m2, const Tensor& v2) {
  require_same_shape(m1, v1, "gaussian_kl");
  require_same_shape(m1, m2, "gaussian_kl");
  require_same_shape(m1, v2, "gaussian_kl");
  double kl = 0.0;
  for (std::size_t i = 0; i < m1.size(); ++i) {
    if (!(v1[i] > 0.0) || !(v2[i] > 0.0)) throw RangeError("gaussian_kl: variances must be positive");
    const double dm = m1[i] - m2[i];
    kl += 0.5 * (std::log(v2[i] / v1[i]) + (v1[i] + dm * dm) / v2[i] - 1.0);
  }
  return kl;
}

}  // namespace diag
