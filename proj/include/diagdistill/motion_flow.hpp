// Copyright 2026 The diagdistill Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <string_view>

#include "diagdistill/schedule.hpp"
#include "diagdistill/tensor.hpp"

namespace diag {

/// Differentiable map from a video [F, ...] to motion features, with a
/// vector-Jacobian product with respect to its input.
class FeatureMap {
 public:
  virtual ~FeatureMap() = default;
  virtual Tensor forward(const Tensor& x) const = 0;
  virtual Tensor input_vjp(const Tensor& x, const Tensor& grad_out) const = 0;
};

enum class Activation { kTanh, kIdentity };

struct ExtractorConfig {
  std::size_t channels = 4;
  std::size_t c_mid = 8;
  std::size_t c_feat = 4;
  Activation activation = Activation::kTanh;
  double init_range = 0.1;
  std::uint64_t seed = 0;

  friend bool operator==(const ExtractorConfig&, const ExtractorConfig&) = default;
};

/// Learned motion features: consecutive latent-frame differences, two 3x3
/// same-padded convolutions, then a per-pixel two-layer MLP.
///
///   d_f   = x[f+1] - x[f]
///   out_f = mlp2(act(mlp1(conv2(act(conv1(d_f))))))
///
/// All parameters live in one flat vector (see the offsets below) so the
/// EMA link and the finite-difference oracle can treat them uniformly.
/// Biases start at zero, so a static video maps to all-zero features.
class MotionExtractor final : public FeatureMap {
 public:
  explicit MotionExtractor(const ExtractorConfig& cfg);

  const ExtractorConfig& config() const { return cfg_; }
  const Tensor& params() const { return params_; }
  void set_params(Tensor p);
  std::size_t num_params() const { return params_.size(); }

  /// [F, C, H, W] -> [F-1, c_feat, H, W]
  Tensor forward(const Tensor& x) const override;
  Tensor input_vjp(const Tensor& x, const Tensor& grad_out) const override;

  struct Grads {
    Tensor params;
    Tensor input;
  };
  Grads backward(const Tensor& x, const Tensor& grad_out) const;

  // Same network evaluated with an explicit parameter vector.
  Tensor forward_with(const Tensor& params, const Tensor& x) const;

 private:
  struct Offsets {
    std::size_t conv1_w, conv1_b, conv2_w, conv2_b, mlp1_w, mlp1_b, mlp2_w, mlp2_b, total;
  };
  static Offsets layout(const ExtractorConfig& cfg);
  Grads run(const Tensor& params, const Tensor& x, const Tensor* grad_out, Tensor* out) const;

  ExtractorConfig cfg_;
  Offsets off_;
  Tensor params_;
};

/// Exponential moving average link: teacher <- mu * teacher + (1 - mu) * student.
struct EmaLink {
  double mu = 0.999;
};

void ema_update(const EmaLink& link, MotionExtractor& teacher, const MotionExtractor& student);

/// Raw frame differences, [F, ...] -> [F-1, ...], optionally scaled.
class FrameDifference final : public FeatureMap {
 public:
  explicit FrameDifference(double scale = 1.0) : scale_(scale) {}
  Tensor forward(const Tensor& x) const override;
  Tensor input_vjp(const Tensor& x, const Tensor& grad_out) const override;

 private:
  double scale_;
};

/// Motion representations available for ablations. Only kLearned (and the
/// linear kDiff) carry gradients.
enum class FlowRepr { kDiff, kCorr, kDctLow, kDctHigh, kLearned };

FlowRepr parse_flow_repr(std::string_view name);
std::string flow_repr_name(FlowRepr r);

/// Forward-only feature extraction for any representation. `learned` is
/// required for kLearned.
Tensor extract_features(FlowRepr repr, const Tensor& x, const MotionExtractor* learned = nullptr);

Tensor extract_flow(const MotionExtractor& f, const Tensor& x);

struct FlowRegression {
  double loss = 0.0;
  Tensor grad_student_params;
  Tensor grad_x_student;
};

/// mean((F_teacher(x_teacher) - F_student(x_student))^2); the teacher path
/// is a constant.
FlowRegression flow_regression_loss(const MotionExtractor& student, const MotionExtractor& teacher,
                                    const Tensor& x_student, const Tensor& x_teacher);

/// Score in feature space: -(feat_t - alpha(t) * mu_flow) / sigma(t)^2.
Tensor flow_score(const NoiseSchedule& s, const Tensor& feat_t, const Tensor& mu_flow, int t);

using FlowScoreFn = std::function<Tensor(const Tensor& feat_t, int t)>;

/// Generator with a parameter vector-Jacobian product.
class DifferentiableGenerator {
 public:
  virtual ~DifferentiableGenerator() = default;
  virtual Shape noise_shape() const = 0;
  virtual Tensor forward(const Tensor& eps) const = 0;
  virtual Tensor param_vjp(const Tensor& eps, const Tensor& grad_out) const = 0;
};

struct FlowDmdSample {
  Tensor x_t;         // diffused generator output
  Tensor feat_t;      // features of x_t
  Tensor score_diff;  // s_real - s_fake in feature space
  Tensor grad_x;      // contribution to dL/dx of the generator output
};

/// Per-sample flow-DMD signal for a generator output x at step t, with the
/// diffusion noise supplied:
///   grad_x = -alpha(t) * J_F(x_t)^T (s_real(F(x_t)) - s_fake(F(x_t))).
FlowDmdSample flow_dmd_sample(const NoiseSchedule& s, const FeatureMap& features,
                              const Tensor& x, int t, const Tensor& eps,
                              const FlowScoreFn& real_score, const FlowScoreFn& fake_score);

/// Monte Carlo flow-DMD gradient with respect to generator parameters at a
/// fixed step t, averaged over n samples drawn from rng.
Tensor flow_dmd_gradient(const DifferentiableGenerator& gen, const FeatureMap& features,
                         const FlowScoreFn& real_score, const FlowScoreFn& fake_score,
                         const NoiseSchedule& s, Rng& rng, int t, std::size_t n_samples);

/// KL(N(m1, v1) || N(m2, v2)) summed over independent coordinates.
double gaussian_kl(const Tensor& m1, const Tensor& v1, const Tensor& m2, const Tensor& v2);

}  // namespace diag
