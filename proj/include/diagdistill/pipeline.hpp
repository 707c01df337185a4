// Copyright 2026 The diagdistill Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "diagdistill/denoiser.hpp"
#include "diagdistill/kv_cache.hpp"
#include "diagdistill/step_planner.hpp"

namespace diag {

struct PipelineConfig {
  StepSchedule schedule = StepSchedule({4, 3, 2, 2, 2, 2, 2});
  std::size_t chunks = 7;
  ForcingConfig forcing;
  std::size_t window_chunks = 4;
  std::size_t base_phase_chunks = 4;
  bool auto_phase = true;  // base phase ends at the first 2-step chunk
  std::uint64_t seed = 42;
  bool mix_outputs = true;
  bool mix_last = true;
  // When the cached latent's noise level equals the next step's timestep, the
  // cached latent is also the input to that step.
  bool share_forcing_noise = true;
  RenoiseMode renoise = RenoiseMode::kFresh;

  void validate(const NoiseSchedule& s) const;
  // Number of leading chunks in the base phase.
  std::size_t base_phase_length() const;
};

enum class Phase { kBase, kExtension };

struct ChunkLog {
  int chunk_index = 0;
  Phase phase = Phase::kBase;
  int steps = 0;
  std::vector<int> timesteps;
  std::vector<int> context_chunks;  // cache entries visible while denoising
  int forcing_t = 0;
  int cache_step = 0;               // 0-based step whose prediction was cached
  std::size_t cache_size_after = 0;
  std::size_t cache_scalars_after = 0;  // K and V scalars held after this chunk
};

struct GenerationResult {
  std::vector<Tensor> chunks;
  std::vector<ChunkLog> logs;
  std::size_t predict_calls = 0;
};

/// Selects a weight set by the step count of the chunk being generated.
class DenoiserBank {
 public:
  explicit DenoiserBank(const Denoiser& fallback) : fallback_(&fallback) {}
  void set(int steps, const Denoiser& d) { by_steps_[steps] = &d; }
  const Denoiser& for_steps(int steps) const;
  const Denoiser& fallback() const { return *fallback_; }

 private:
  const Denoiser* fallback_;
  std::map<int, const Denoiser*> by_steps_;
};

/// Chunkwise diagonal denoising with a noisy rolling K/V cache.
GenerationResult generate(const PipelineConfig& cfg, const DenoiserBank& bank,
                          const NoiseSchedule& schedule, std::span<const double> cond);
GenerationResult generate(const PipelineConfig& cfg, const Denoiser& denoiser,
                          const NoiseSchedule& schedule, std::span<const double> cond);

/// Oracle for generate: keeps the retained conditioning latents and
/// recomputes every context K/V from them before each chunk.
GenerationResult reference_generate(const PipelineConfig& cfg, const DenoiserBank& bank,
                                    const NoiseSchedule& schedule, std::span<const double> cond);
GenerationResult reference_generate(const PipelineConfig& cfg, const Denoiser& denoiser,
                                    const NoiseSchedule& schedule, std::span<const double> cond);

/// alpha(t_force) * x + sigma(t_force) * eps.
Tensor mix(const Tensor& x, int t_force, const NoiseSchedule& schedule, Rng& rng);

const char* phase_name(Phase p);

}  // namespace diag
