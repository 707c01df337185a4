// Copyright 2026 The diagdistill Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "diagdistill/kv_cache.hpp"
#include "diagdistill/motion_flow.hpp"
#include "diagdistill/schedule.hpp"
#include "diagdistill/synthetic_data.hpp"

namespace diag {

struct LossWeights {
  double lambda_spatial = 4.0;
  double lambda_flow = 4.0;
  double gamma = 1.0;

  void validate() const;
};

/// Per-step values of the four objective terms and their weighted total.
struct LossBreakdown {
  double dmd = 0.0;
  double reg = 0.0;
  double dmd_flow = 0.0;
  double reg_flow = 0.0;
  double total = 0.0;
};

double combine(const LossWeights& w, const LossBreakdown& b);

enum class Strategy { kTeacher, kDiffusion, kSelf, kDiagonal };

Strategy parse_strategy(std::string_view name);
std::string strategy_name(Strategy s);

// ---------------------------------------------------------------------------
// Score helpers

using DenoiseFn = std::function<Tensor(const Tensor& x_t, int t)>;
using ScoreFn = std::function<Tensor(const Tensor& x_t, int t)>;

/// Exact denoiser of an isotropic Gaussian prior N(mean, var * I) under the
/// linear path: E[x | x_t] = mean + a*var/(a^2*var + s^2) * (x_t - a*mean).
struct GaussianDenoiser {
  Tensor mean;
  double var = 1.0;

  Tensor denoise(const NoiseSchedule& s, const Tensor& x_t, int t) const;
  Tensor score(const NoiseSchedule& s, const Tensor& x_t, int t) const;
  // d denoise / d mean (a scalar multiple of the identity).
  double mean_sensitivity(const NoiseSchedule& s, int t) const;
};

struct DenoiserSample {
  Tensor x;           // clean sample
  Tensor x_t;         // its diffused version
  int t = 0;
  Tensor cond_frame;  // only used by conditional models
};

struct LossGrad {
  double loss = 0.0;
  Tensor grad;
};

/// Denoising loss (1/N) sum ||D(x_t) - x||^2 of a Gaussian denoiser and its
/// gradient with respect to the mean.
LossGrad gaussian_denoiser_loss(const GaussianDenoiser& d, const NoiseSchedule& s,
                                const std::vector<DenoiserSample>& batch);

/// Shift generator G(eps) = eps + b.
class ShiftGenerator final : public DifferentiableGenerator {
 public:
  explicit ShiftGenerator(Tensor bias) : bias_(std::move(bias)) {}
  const Tensor& bias() const { return bias_; }
  Shape noise_shape() const override { return bias_.shape(); }
  Tensor forward(const Tensor& eps) const override { return eps + bias_; }
  Tensor param_vjp(const Tensor&, const Tensor& grad_out) const override { return grad_out; }

 private:
  Tensor bias_;
};

/// Per-sample DMD signal: -alpha(t) * (s_real(x_t) - s_fake(x_t)), the
/// gradient of KL(p_fake,t || p_real,t) with respect to the generator output.
Tensor dmd_output_grad(const NoiseSchedule& s, const Tensor& x_t, int t, const ScoreFn& real,
                       const ScoreFn& fake);

/// Monte Carlo DMD gradient with respect to generator parameters at step t.
Tensor dmd_gradient(const DifferentiableGenerator& gen, const ScoreFn& real, const ScoreFn& fake,
                    const NoiseSchedule& s, Rng& rng, int t, std::size_t n_samples);

struct Regression {
  double loss = 0.0;
  Tensor grad_params;
};

/// Mean squared error between G(z_i) and y_i over all pairs and elements.
Regression regression_loss(const DifferentiableGenerator& gen, const std::vector<Tensor>& z,
                           const std::vector<Tensor>& y);

// ---------------------------------------------------------------------------
// Conditioning strategies

enum class ChunkSource { kGroundTruth, kGenerated };

struct ConditioningChunk {
  int chunk_index = 0;
  Tensor latent;
  int noise_t = 0;
  ChunkSource source = ChunkSource::kGroundTruth;
};

struct ConditioningOptions {
  std::size_t window = 4;
  std::size_t recency = 2;  // diagonal: how many recent chunks come from the model
  int forcing_t = 100;
};

/// Conditioning latents for chunk k from up to `window` previous chunks.
///   teacher:   clean ground truth
///   diffusion: ground truth noised at an independent random step
///   self:      the model's own outputs
///   diagonal:  the `recency` most recent chunks are model outputs noised at
///              forcing_t, older ones clean ground truth
std::vector<ConditioningChunk> build_conditioning(Strategy strategy,
                                                  const std::vector<Tensor>& ground_truth,
                                                  const std::vector<Tensor>& generated,
                                                  std::size_t k, const ConditioningOptions& opt,
                                                  const NoiseSchedule& schedule, Rng& rng);

// ---------------------------------------------------------------------------
// Trainer common

struct TrainerConfig {
  LossWeights weights;
  Strategy strategy = Strategy::kDiagonal;
  double lr = 0.05;
  double momentum = 0.0;  // plain SGD when 0
  double fake_lr = 0.1;
  int n_inner = 5;
  std::size_t batch = 64;
  int t_min = 20;
  int t_max = 980;
  std::uint64_t seed = 1;

  void validate(const NoiseSchedule& s) const;
};

/// Defaults for the neural toy mode: the conv blocks of the toy generator
/// and fake model need a smaller step than the analytic mode.
TrainerConfig toy_trainer_defaults();

struct StepReport {
  std::size_t step = 0;
  LossBreakdown losses;
  // Per-term generator gradients and the update actually applied.
  Tensor grad_dmd, grad_reg, grad_dmd_flow, grad_reg_flow;
  Tensor update;
  double gap = 0.0;  // |b - m| in Gaussian mode, 0 otherwise
};

// ---------------------------------------------------------------------------
// Analytic Gaussian mode

struct GaussianWorld {
  // Two-frame clips of one scalar per frame; real frames ~ N(real_mean, real_std^2).
  Tensor real_mean = Tensor::from({0.5, 1.5});
  double real_std = 1.0;
  Tensor init_bias = Tensor::from({0.0, 0.0});
};

/// DMD distillation of a shift generator toward an analytic Gaussian target.
/// Motion features are the scaled frame difference (x1 - x0)/sqrt(2), so
/// feature-space noise has the same variance as pixel-space noise.
class GaussianTrainer {
 public:
  GaussianTrainer(const TrainerConfig& cfg, const GaussianWorld& world,
                  const NoiseSchedule& schedule);

  StepReport step();

  const Tensor& bias() const { return bias_; }
  const Tensor& fake_mean() const { return fake_.mean; }
  const GaussianDenoiser& real() const { return real_; }
  const GaussianDenoiser& real_flow() const { return real_flow_; }
  double gap() const;
  std::size_t steps_done() const { return step_; }
  const TrainerConfig& config() const { return cfg_; }

 private:
  void fit_fake(Rng& rng);

  TrainerConfig cfg_;
  GaussianWorld world_;
  NoiseSchedule schedule_;
  FrameDifference flow_map_;
  GaussianDenoiser real_, real_flow_;
  GaussianDenoiser fake_, fake_flow_;
  Tensor bias_, velocity_;
  std::size_t step_ = 0;
};

// ---------------------------------------------------------------------------
// Neural toy mode

/// Affine chunk generator conditioned on the last frame of the previous chunk:
///   G(z | c) = b + s * z + conv_f(c)   for each output frame f.
/// conv_f is a (2r+1)x(2r+1) channel-mixing convolution, wide enough to
/// express the multi-pixel shifts between a context frame and later frames.
/// Parameters are [b | s | conv] in one flat vector.
class ToyGenerator {
 public:
  ToyGenerator(std::size_t frames, std::size_t channels, std::size_t height, std::size_t width,
               int radius = 3);

  Shape chunk_shape() const { return {frames_, channels_, height_, width_}; }
  Shape frame_shape() const { return {channels_, height_, width_}; }
  int radius() const { return radius_; }
  std::size_t num_params() const { return params_.size(); }
  const Tensor& params() const { return params_; }
  void set_params(Tensor p);

  std::size_t chunk_numel() const { return frames_ * channels_ * height_ * width_; }
  std::size_t bias_offset() const { return 0; }
  std::size_t scale_offset() const { return chunk_numel(); }
  std::size_t conv_offset() const { return 2 * chunk_numel(); }

  Tensor forward(const Tensor& z, const Tensor& cond_frame) const;
  Tensor forward_with(const Tensor& params, const Tensor& z, const Tensor& cond_frame) const;
  Tensor param_vjp(const Tensor& z, const Tensor& cond_frame, const Tensor& grad_out) const;

 private:
  void check(const Tensor& z, const Tensor& cond_frame) const;

  std::size_t frames_, channels_, height_, width_;
  int radius_;
  Tensor params_;
};

/// Denoising loss of a conditional Gaussian denoiser whose mean is the toy
/// generator's noise-free output under `params` (scale entries unused), with
/// its gradient with respect to `params`.
LossGrad conditional_denoiser_loss(const ToyGenerator& model, const Tensor& params, double var,
                                   const NoiseSchedule& s, const std::vector<DenoiserSample>& batch);

/// Exact posterior-mean denoiser of a finite dataset of multi-chunk clips,
/// conditioned on previous chunks: the clip weights combine the likelihood
/// of the noisy chunk and of each conditioning chunk at its noise level.
class DatasetDenoiser {
 public:
  // clips[i][k] is chunk k of clip i.
  DatasetDenoiser(std::vector<std::vector<Tensor>> clips, double cond_noise_floor = 0.1);

  std::size_t clips() const { return clips_.size(); }
  std::size_t chunks_per_clip() const { return clips_.empty() ? 0 : clips_[0].size(); }
  const Tensor& chunk(std::size_t i, std::size_t k) const { return clips_[i][k]; }

  std::vector<double> log_weights(const NoiseSchedule& s, std::size_t k, const Tensor& x_t,
                                  int t, const std::vector<ConditioningChunk>& cond) const;
  // Normalized posterior weights over clips.
  std::vector<double> posterior(const NoiseSchedule& s, std::size_t k, const Tensor& x_t, int t,
                                const std::vector<ConditioningChunk>& cond) const;

  Tensor denoise(const NoiseSchedule& s, std::size_t k, const Tensor& x_t, int t,
                 const std::vector<ConditioningChunk>& cond) const;

  // Posterior mean of clean-chunk features E[F(x) | x_t, context]; `features[i]`
  // holds F of chunk k of clip i.
  Tensor denoise_features(const NoiseSchedule& s, std::size_t k, const Tensor& x_t, int t,
                          const std::vector<Tensor>& features,
                          const std::vector<ConditioningChunk>& cond) const;

  // Deterministic flow-matching sampler from noise z at t=1000 down to 0.
  Tensor sample_ode(const NoiseSchedule& s, std::size_t k, const Tensor& z,
                    const std::vector<ConditioningChunk>& cond, int steps) const;

 private:
  double cond_log_lik(const NoiseSchedule& s, std::size_t i,
                      const std::vector<ConditioningChunk>& cond) const;

  std::vector<std::vector<Tensor>> clips_;
  double floor_;
};

/// Toy video continuation: every training sample and every rollout starts
/// from the ground-truth first chunk of a clip and generates the rest.
struct ToyConfig {
  MovingDotDataset data;  // frames is overridden by chunk_frames * chunks_per_sample
  std::size_t chunk_frames = 3;
  std::size_t chunks_per_sample = 4;
  std::size_t clips = 32;
  std::size_t channels = 4;
  std::uint64_t codec_seed = 7;
  // Roughly unit-gain init so motion features are neither vanishing nor saturated.
  ExtractorConfig extractor{.init_range = 0.35};
  EmaLink ema;
  ConditioningOptions conditioning;
  int generator_radius = 3;
  double init_noise_scale = 0.1;
  int ode_steps = 8;
  std::size_t eval_samples = 8;
  std::uint64_t eval_seed = 12345;
};

class ToyTrainer {
 public:
  ToyTrainer(const TrainerConfig& cfg, const ToyConfig& toy, const NoiseSchedule& schedule);

  StepReport step();

  /// Continue clip `clip` from its ground-truth first chunk, conditioning
  /// each generated chunk on the previous one noised at the forcing step.
  /// Returns the generated chunks only. With `sample` false the generator
  /// noise is zero, giving its mean prediction.
  std::vector<Tensor> rollout(std::size_t clip, Rng& rng, bool sample = true) const;

  /// Average motion amplitude of decoded mean rollouts on a fixed evaluation
  /// seed. The generator's own noise is left out because its frame-to-frame
  /// jitter would otherwise register as motion.
  double generated_motion_amplitude() const;
  /// Same measure on the ground-truth frames that rollouts replace.
  double data_motion_amplitude() const;

  const ToyGenerator& generator() const { return gen_; }
  const MotionExtractor& student() const { return student_; }
  const MotionExtractor& teacher() const { return teacher_; }
  const DatasetDenoiser& real() const { return real_; }
  const LinearCodec& codec() const { return codec_; }
  std::size_t steps_done() const { return step_; }

 private:
  struct FakeModel {
    ToyGenerator mean;  // scale entries unused
    double var = 0.01;
  };
  Tensor fake_denoise(const Tensor& x_t, int t, const Tensor& cond_frame) const;
  // Fake flow head: features of the fake denoised chunk plus a learned residual.
  Tensor fake_flow_mean(const Tensor& x_t, int t, const Tensor& cond_frame) const;
  Tensor cond_frame(const std::vector<ConditioningChunk>& cond) const;
  void refresh_feature_bank();

  TrainerConfig cfg_;
  ToyConfig toy_;
  NoiseSchedule schedule_;
  LinearCodec codec_;
  DatasetDenoiser real_;
  ToyGenerator gen_;
  FakeModel fake_;
  Tensor flow_residual_;  // learned correction of the fake flow head
  MotionExtractor student_, teacher_;
  std::vector<std::vector<Tensor>> feature_bank_;  // [chunk][clip]
  Tensor velocity_;
  std::size_t step_ = 0;
};

}  // namespace diag
