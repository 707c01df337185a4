// Copyright 2026 The diagdistill Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "diagdistill/schedule.hpp"
#include "diagdistill/tensor.hpp"

namespace diag {

/// Geometry of one latent chunk, [frames, channels, height, width].
struct LatentShape {
  std::size_t frames = 3;
  std::size_t channels = 4;
  std::size_t height = 8;
  std::size_t width = 8;

  Shape shape() const { return {frames, channels, height, width}; }
  std::size_t numel() const { return frames * channels * height * width; }
  std::size_t tokens_per_frame() const { return height * width; }
  std::size_t tokens() const { return frames * tokens_per_frame(); }

  void require(const Tensor& x, const char* what) const;
  friend bool operator==(const LatentShape&, const LatentShape&) = default;
};

struct KvLayout {
  std::size_t layers = 0;
  std::size_t heads = 0;
  std::size_t head_dim = 0;
};

/// Per-layer attention keys and values, each [layers, tokens, heads, head_dim].
struct KvBlock {
  Tensor keys;
  Tensor values;

  std::size_t tokens() const { return keys.rank() == 4 ? keys.dim(1) : 0; }
};

/// Read-only attention context gathered from earlier chunks.
struct KvContext {
  KvBlock kv;
  std::vector<int> chunk_indices;  // oldest first

  bool empty() const { return kv.tokens() == 0; }
};

/// Velocity-predicting chunk denoiser.
class Denoiser {
 public:
  virtual ~Denoiser() = default;

  virtual const LatentShape& latent_shape() const = 0;
  virtual KvLayout kv_layout() const = 0;
  virtual std::size_t cond_dim() const = 0;

  /// Velocity estimate (target eps - x) for the chunk x_t at step t.
  /// `steps` is the step count of the chunk being generated.
  virtual Tensor predict(const Tensor& x_t, int t, const KvContext& ctx,
                         std::span<const double> cond, int steps) const = 0;

  /// Keys/values of x at noise level t, computed without context.
  virtual KvBlock project_kv(const Tensor& x, int t, std::span<const double> cond) const = 0;
};

struct ToyDiTConfig {
  LatentShape latent;
  std::size_t d_model = 16;
  std::size_t layers = 2;
  std::size_t heads = 2;
  std::size_t mlp_hidden = 32;
  std::size_t cond_dim = 4;
  std::uint64_t seed = 0;
  double init_scale = 1.0;  // multiplies the default fan-in init range

  void validate() const;
};

/// Small chunk-causal transformer: one token per latent pixel, bidirectional
/// attention inside the chunk with cached context prepended, timestep
/// conditioned MLP blocks and a linear output head.
class ToyCausalDiT final : public Denoiser {
 public:
  ToyCausalDiT(const ToyDiTConfig& cfg, const NoiseSchedule& schedule);

  /// All weights and biases zero.
  static ToyCausalDiT zeros(const ToyDiTConfig& cfg, const NoiseSchedule& schedule);

  const LatentShape& latent_shape() const override { return cfg_.latent; }
  KvLayout kv_layout() const override;
  std::size_t cond_dim() const override { return cfg_.cond_dim; }
  const ToyDiTConfig& config() const { return cfg_; }

  Tensor predict(const Tensor& x_t, int t, const KvContext& ctx, std::span<const double> cond,
                 int steps) const override;
  KvBlock project_kv(const Tensor& x, int t, std::span<const double> cond) const override;

  std::size_t parameter_count() const;

 private:
  struct Layer {
    std::vector<double> wq, wk, wv, wo;  // [d, d]
    std::vector<double> wt;              // [d, d] timestep projection into the MLP
    std::vector<double> w1, b1;          // [hidden, d], [hidden]
    std::vector<double> w2, b2;          // [d, hidden], [d]
  };

  Tensor forward(const Tensor& x_t, int t, const KvContext& ctx, std::span<const double> cond,
                 int steps, KvBlock* record) const;
  std::vector<double> time_features(int t) const;

  ToyDiTConfig cfg_;
  NoiseSchedule schedule_;
  std::vector<double> w_in_, b_in_;  // [d, C], [d]
  std::vector<double> pos_;          // [tokens, d]
  std::vector<double> w_time_;       // [d, d]
  std::vector<double> w_cond_;       // [d, cond_dim]
  std::vector<double> w_steps_;      // [d]
  std::vector<Layer> layers_;
  std::vector<double> w_out_, b_out_;  // [C, d], [C]
};

/// x0 = x_t - sigma(t) * v for the velocity target eps - x.
Tensor to_data_prediction(const NoiseSchedule& s, const Tensor& x_t, const Tensor& v, int t);

enum class RenoiseMode {
  kFresh,          // new Gaussian noise at every step
  kDeterministic,  // reuse the noise implied by (x_t, x0)
};

/// One sampler step: predict x0 at t_cur, then re-noise to t_next
/// (returns x0 directly when t_next == 0).
Tensor step(const NoiseSchedule& s, const Denoiser& m, const Tensor& x_t, int t_cur, int t_next,
            const KvContext& ctx, std::span<const double> cond, Rng& rng, int steps = 1,
            RenoiseMode mode = RenoiseMode::kFresh);

/// Re-noise a data prediction to t_next.
Tensor renoise(const NoiseSchedule& s, const Tensor& x_t, const Tensor& x0, int t_cur, int t_next,
               Rng& rng, RenoiseMode mode);

}  // namespace diag
