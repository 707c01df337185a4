// Copyright 2026 The diagdistill Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

#include "diagdistill/tensor.hpp"

namespace diag {

/// One bilinear-splatted dot moving at constant velocity with reflective
/// walls. Clips are [frames, 1, height, width].
struct MovingDotDataset {
  std::size_t height = 8;
  std::size_t width = 8;
  std::size_t frames = 3;
  double intensity = 1.0;
  double dx = 1.0;
  double dy = 0.0;
  // Start positions are drawn uniformly from [margin, size-1-margin].
  double start_margin = 0.0;
  std::optional<std::pair<double, double>> fixed_start;  // (x, y)
  std::uint64_t seed = 0;

  void validate() const;
  Shape clip_shape() const { return {frames, 1, height, width}; }

  // Dot center (x, y) in frame f of clip `index`.
  std::pair<double, double> center(std::size_t index, std::size_t f) const;
  Tensor make_clip(std::size_t index) const;
};

/// Mean over consecutive frame pairs of the centroid displacement. Each
/// frame's centroid is taken over the mass above the midpoint of its
/// intensity range, so constant backgrounds and weak noise do not bias it.
/// Works on [F, C, H, W] (channels summed).
double motion_amplitude(const Tensor& video);

/// Per-frame linear map from H*W pixels to C*H*W latents: a random
/// per-channel gain on each pixel plus weak random spatial mixing.
/// decode is the exact pseudo-inverse.
class LinearCodec {
 public:
  LinearCodec(std::size_t channels, std::size_t height, std::size_t width, std::uint64_t seed,
              double mixing = 0.1);

  std::size_t channels() const { return channels_; }
  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }

  // [F, 1, H, W] -> [F, C, H, W]
  Tensor encode(const Tensor& video) const;
  // [F, C, H, W] -> [F, 1, H, W]
  Tensor decode(const Tensor& latents) const;

 private:
  std::size_t channels_, height_, width_;
  std::vector<double> enc_;  // [C*H*W, H*W]
  std::vector<double> dec_;  // [H*W, C*H*W]
};

}  // namespace diag
