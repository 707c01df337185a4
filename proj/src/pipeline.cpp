// Copyright 2026 The diagdistill Authors
// SPDX-License-Identifier: Apache-2.0

#include "diagdistill/pipeline.hpp"

#include <deque>

namespace diag {

namespace {

// Per-chunk RNG streams.
enum Stream : std::uint64_t { kInit = 0, kRenoise = 1, kForcing = 2, kMix = 3 };
constexpr std::uint64_t kStreamsPerChunk = 8;

Rng chunk_stream(const Rng& base, std::size_t k, Stream s) {
  return base.fork(static_cast<std::uint64_t>(k) * kStreamsPerChunk + s);
}

struct ChunkOutcome {
  Tensor output;
  Tensor cached_prediction;  // x0 at the cache step, before forcing noise
  ChunkLog log;
};

// Runs the sampler for one chunk against a fixed context. Shared by both
// pipelines so they differ only in how context is stored and rebuilt.
ChunkOutcome denoise_chunk(const PipelineConfig& cfg, const Denoiser& model,
                           const NoiseSchedule& schedule, std::span<const double> cond,
                           const KvContext& ctx, std::size_t k, std::size_t& predict_calls) {
  const Rng base(cfg.seed);
  const int s = cfg.schedule.steps_for_chunk(k);
  const std::vector<int> ts = timesteps_for(s);

  ChunkOutcome out;
  out.log.chunk_index = static_cast<int>(k);
  out.log.phase = k < cfg.base_phase_length() ? Phase::kBase : Phase::kExtension;
  out.log.steps = s;
  out.log.timesteps = ts;
  out.log.context_chunks = ctx.chunk_indices;
  out.log.forcing_t = cfg.forcing.forcing_t;
  out.log.cache_step = s >= 2 ? s - 2 : 0;

  Rng init = chunk_stream(base, k, kInit);
  Rng renoise_rng = chunk_stream(base, k, kRenoise);
  Tensor x = gaussian_sample(init, model.latent_shape().shape());

  for (int i = 0; i < s; ++i) {
    const int t_cur = ts[static_cast<std::size_t>(i)];
    const int t_next = i + 1 < s ? ts[static_cast<std::size_t>(i) + 1] : 0;
    const Tensor v = model.predict(x, t_cur, ctx, cond, s);
    ++predict_calls;
    Tensor x0 = to_data_prediction(schedule, x, v, t_cur);
    if (i == out.log.cache_step) {
      out.cached_prediction = x0;
      if (cfg.share_forcing_noise && t_next != 0 && t_next == cfg.forcing.forcing_t) {
        // Same stream as the cache injection, so this is the cached latent.
        Rng forcing = chunk_stream(base, k, kForcing);
        x = inject_forcing_noise(x0, cfg.forcing, schedule, forcing);
        continue;
      }
    }
    x = renoise(schedule, x, x0, t_cur, t_next, renoise_rng, cfg.renoise);
  }

  const bool last = k + 1 == cfg.chunks;
  if (cfg.mix_outputs && (cfg.mix_last || !last)) {
    Rng mix_rng = chunk_stream(base, k, kMix);
    out.output = mix(x, cfg.forcing.forcing_t, schedule, mix_rng);
  } else {
    out.output = std::move(x);
  }
  return out;
}

}  // namespace

void PipelineConfig::validate(const NoiseSchedule& s) const {
  s.validate();
  forcing.validate(s);
  if (chunks == 0) throw ConfigError("chunks must be >= 1");
  if (window_chunks == 0) throw ConfigError("window_chunks must be >= 1");
  if (chunks > schedule.chunks() && !schedule.cyclic_extension()) {
    throw ConfigError("schedule " + schedule.str() + " has " + std::to_string(schedule.chunks()) +
                      " chunks but " + std::to_string(chunks) +
                      " were requested without cyclic extension");
  }
}

std::size_t PipelineConfig::base_phase_length() const {
  if (auto_phase) {
    const auto& st = schedule.steps();
    for (std::size_t k = 0; k < st.size(); ++k) {
      if (st[k] == 2) return k;
    }
  }
  return base_phase_chunks;
}

const Denoiser& DenoiserBank::for_steps(int steps) const {
  const auto it = by_steps_.find(steps);
  return it == by_steps_.end() ? *fallback_ : *it->second;
}

const char* phase_name(Phase p) { return p == Phase::kBase ? "base" : "extension"; }

Tensor mix(const Tensor& x, int t_force, const NoiseSchedule& schedule, Rng& rng) {
  return forward_diffuse(schedule, x, t_force, rng);
}

GenerationResult generate(const PipelineConfig& cfg, const DenoiserBank& bank,
                          const NoiseSchedule& schedule, std::span<const double> cond) {
  cfg.validate(schedule);
  const Rng base(cfg.seed);
  GenerationResult result;
  KvCache cache(cfg.window_chunks);
  for (std::size_t k = 0; k < cfg.chunks; ++k) {
    const Denoiser& model = bank.for_steps(cfg.schedule.steps_for_chunk(k));
    const KvContext ctx = cache.gather_context();
    ChunkOutcome c = denoise_chunk(cfg, model, schedule, cond, ctx, k, result.predict_calls);
    // Committed only after the chunk finishes so a chunk never sees itself.
    Rng forcing = chunk_stream(base, k, kForcing);
    cache_noisy_result(cache, c.cached_prediction, cfg.forcing, schedule, model, cond, forcing);
    c.log.cache_size_after = cache.size();
    c.log.cache_scalars_after = cache.memory_bytes(1);
    result.chunks.push_back(std::move(c.output));
    result.logs.push_back(std::move(c.log));
  }
  return result;
}

GenerationResult generate(const PipelineConfig& cfg, const Denoiser& denoiser,
                          const NoiseSchedule& schedule, std::span<const double> cond) {
  return generate(cfg, DenoiserBank(denoiser), schedule, cond);
}

GenerationResult reference_generate(const PipelineConfig& cfg, const DenoiserBank& bank,
                                    const NoiseSchedule& schedule, std::span<const double> cond) {
  cfg.validate(schedule);
  const Rng base(cfg.seed);
  GenerationResult result;

  struct Retained {
    int chunk_index;
    int steps;
    Tensor latent;
  };
  std::deque<Retained> retained;

  for (std::size_t k = 0; k < cfg.chunks; ++k) {
    const int s = cfg.schedule.steps_for_chunk(k);
    const Denoiser& model = bank.for_steps(s);

    // Rebuild the whole context from the conditioning latents.
    std::vector<KvBlock> blocks;
    KvContext ctx;
    for (const auto& r : retained) {
      blocks.push_back(bank.for_steps(r.steps).project_kv(r.latent, cfg.forcing.forcing_t, cond));
      ctx.chunk_indices.push_back(r.chunk_index);
    }
    std::vector<const KvBlock*> ptrs;
    for (const auto& b : blocks) ptrs.push_back(&b);
    ctx.kv = concat_kv(ptrs);

    ChunkOutcome c = denoise_chunk(cfg, model, schedule, cond, ctx, k, result.predict_calls);

    Rng forcing = chunk_stream(base, k, kForcing);
    retained.push_back({static_cast<int>(k), s,
                        inject_forcing_noise(c.cached_prediction, cfg.forcing, schedule, forcing)});
    while (retained.size() > cfg.window_chunks) retained.pop_front();

    std::size_t scalars = 0;
    for (const auto& r : retained) {
      const KvLayout lay = bank.for_steps(r.steps).kv_layout();
      scalars += 2 * lay.layers * model.latent_shape().tokens() * lay.heads * lay.head_dim;
    }
    c.log.cache_size_after = retained.size();
    c.log.cache_scalars_after = scalars;
    result.chunks.push_back(std::move(c.output));
    result.logs.push_back(std::move(c.log));
  }
  return result;
}

GenerationResult reference_generate(const PipelineConfig& cfg, const Denoiser& denoiser,
                                    const NoiseSchedule& schedule, std::span<const double> cond) {
  return reference_generate(cfg, DenoiserBank(denoiser), schedule, cond);
}

}  // namespace diag
