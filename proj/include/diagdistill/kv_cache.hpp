// Copyright 2026 The diagdistill Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <deque>
#include <span>

#include "diagdistill/denoiser.hpp"

namespace diag {

/// Noise injection applied to latents before their K/V are cached.
struct ForcingConfig {
  int forcing_t = 100;
  bool vp_form = false;  // sqrt(a), sqrt(1-a) weights instead of (alpha, sigma)
  bool strict = true;    // reject forcing_t == 0

  void validate(const NoiseSchedule& s) const;
};

struct CacheEntry {
  int chunk_index = 0;
  int noise_level_t = 0;
  KvBlock kv;
  Tensor source;  // the noised latent the K/V were computed from
};

/// Rolling window of per-chunk K/V blocks, newest last.
class KvCache {
 public:
  explicit KvCache(std::size_t window_chunks = 4);

  std::size_t window_chunks() const { return window_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  const std::deque<CacheEntry>& entries() const { return entries_; }
  // Index the next appended entry receives.
  int next_chunk_index() const { return next_index_; }

  /// Appends and evicts the oldest entry past the window. Entries must carry
  /// consecutive chunk indices.
  void append(CacheEntry entry);

  /// Oldest-to-newest concatenation along the token axis. Does not mutate.
  KvContext gather_context() const;

  std::size_t memory_bytes(std::size_t bytes_per_scalar) const;

 private:
  std::size_t window_;
  int next_index_ = 0;
  std::deque<CacheEntry> entries_;
};

/// Noise x to the forcing level and compute its K/V (no cache mutation).
CacheEntry make_noisy_entry(const Tensor& x, int chunk_index, const ForcingConfig& forcing,
                            const NoiseSchedule& schedule, const Denoiser& denoiser,
                            std::span<const double> cond, Rng& rng);

/// Inject forcing noise into x, project its K/V and append to the cache.
void cache_noisy_result(KvCache& cache, const Tensor& x, const ForcingConfig& forcing,
                        const NoiseSchedule& schedule, const Denoiser& denoiser,
                        std::span<const double> cond, Rng& rng);

/// The forcing injection itself, linear or VP form.
Tensor inject_forcing_noise(const Tensor& x, const ForcingConfig& forcing,
                            const NoiseSchedule& schedule, Rng& rng);

/// Concatenate K/V blocks along tokens, in the given order.
KvBlock concat_kv(std::span<const KvBlock* const> blocks);

}  // namespace diag
