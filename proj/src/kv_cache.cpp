// Copyright 2026 The diagdistill Authors
// SPDX-License-Identifier: Apache-2.0

#include "diagdistill/kv_cache.hpp"

#include <algorithm>
#include <vector>

namespace diag {

void ForcingConfig::validate(const NoiseSchedule& s) const {
  s.require_in_range(forcing_t);
  if (strict && forcing_t == 0) throw ConfigError("diagonal forcing requires nonzero noise");
}

KvCache::KvCache(std::size_t window_chunks) : window_(window_chunks) {
  if (window_ == 0) throw ConfigError("window_chunks must be >= 1");
}

void KvCache::append(CacheEntry entry) {
  if (entry.chunk_index != next_index_) {
    throw Error("cache entries must be consecutive: expected chunk " +
                std::to_string(next_index_) + ", got " + std::to_string(entry.chunk_index));
  }
  if (!entries_.empty() && entry.kv.keys.rank() == 4 &&
      entries_.back().kv.keys.rank() == 4) {
    const auto& a = entries_.back().kv.keys.shape();
    const auto& b = entry.kv.keys.shape();
    if (a[0] != b[0] || a[2] != b[2] || a[3] != b[3]) {
      throw ShapeError("cache entry layout " + shape_str(b) + " differs from " + shape_str(a));
    }
  }
  entries_.push_back(std::move(entry));
  ++next_index_;
  while (entries_.size() > window_) entries_.pop_front();
}

KvContext KvCache::gather_context() const {
  KvContext ctx;
  std::vector<const KvBlock*> blocks;
  blocks.reserve(entries_.size());
  for (const auto& e : entries_) {
    blocks.push_back(&e.kv);
    ctx.chunk_indices.push_back(e.chunk_index);
  }
  ctx.kv = concat_kv(blocks);
  return ctx;
}

std::size_t KvCache::memory_bytes(std::size_t bytes_per_scalar) const {
  std::size_t total = 0;
  for (const auto& e : entries_) total += (e.kv.keys.size() + e.kv.values.size()) * bytes_per_scalar;
  return total;
}

KvBlock concat_kv(std::span<const KvBlock* const> blocks) {
  KvBlock out;
  if (blocks.empty()) return out;
  const Shape& first = blocks.front()->keys.shape();
  if (first.size() != 4) throw ShapeError("K/V blocks must be rank 4");
  const std::size_t layers = first[0];
  const std::size_t row = first[2] * first[3];
  std::size_t tokens = 0;
  for (const KvBlock* b : blocks) {
    const Shape& s = b->keys.shape();
    if (s.size() != 4 || s[0] != layers || s[2] * s[3] != row || b->values.shape() != s) {
      throw ShapeError("K/V block " + shape_str(s) + " incompatible with " + shape_str(first));
    }
    tokens += s[1];
  }
  out.keys = Tensor({layers, tokens, first[2], first[3]});
  out.values = Tensor({layers, tokens, first[2], first[3]});
  for (std::size_t l = 0; l < layers; ++l) {
    std::size_t offset = 0;
    for (const KvBlock* b : blocks) {
      const std::size_t n = b->keys.dim(1) * row;
      const auto src_k = b->keys.data().subspan(l * n, n);
      const auto src_v = b->values.data().subspan(l * n, n);
      std::copy(src_k.begin(), src_k.end(), out.keys.data().begin() + (l * tokens + offset) * row);
      std::copy(src_v.begin(), src_v.end(),
                out.values.data().begin() + (l * tokens + offset) * row);
      offset += b->keys.dim(1);
    }
  }
  return out;
}

Tensor inject_forcing_noise(const Tensor& x, const ForcingConfig& forcing,
                            const NoiseSchedule& schedule, Rng& rng) {
  schedule.require_in_range(forcing.forcing_t);
  const Tensor eps = gaussian_sample(rng, x.shape());
  return forcing.vp_form ? diffuse_vp_with(schedule, x, forcing.forcing_t, eps)
                         : diffuse_with(schedule, x, forcing.forcing_t, eps);
}

CacheEntry make_noisy_entry(const Tensor& x, int chunk_index, const ForcingConfig& forcing,
                            const NoiseSchedule& schedule, const Denoiser& denoiser,
                            std::span<const double> cond, Rng& rng) {
  forcing.validate(schedule);
  denoiser.latent_shape().require(x, "cache_noisy_result");
  CacheEntry e;
  e.chunk_index = chunk_index;
  e.noise_level_t = forcing.forcing_t;
  e.source = inject_forcing_noise(x, forcing, schedule, rng);
  e.kv = denoiser.project_kv(e.source, forcing.forcing_t, cond);
  return e;
}

void cache_noisy_result(KvCache& cache, const Tensor& x, const ForcingConfig& forcing,
                        const NoiseSchedule& schedule, const Denoiser& denoiser,
                        std::span<const double> cond, Rng& rng) {
  cache.append(
      make_noisy_entry(x, cache.next_chunk_index(), forcing, schedule, denoiser, cond, rng));
}

}  // namespace diag
