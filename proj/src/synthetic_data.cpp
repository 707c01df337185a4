// Copyright 2026 The diagdistill Authors
// SPDX-License-Identifier: Apache-2.0

#include "diagdistill/synthetic_data.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

namespace diag {

namespace {

double reflect(double p, double hi) {
  if (hi <= 0.0) return 0.0;
  const double period = 2.0 * hi;
  double m = std::fmod(p, period);
  if (m < 0.0) m += period;
  return m > hi ? period - m : m;
}

}  // namespace

void MovingDotDataset::validate() const {
  if (height < 2 || width < 2) throw ConfigError("dot grid must be at least 2x2");
  if (frames == 0) throw ConfigError("clips need at least one frame");
  if (start_margin < 0.0 || 2.0 * start_margin > static_cast<double>(std::min(height, width) - 1)) {
    throw ConfigError("start_margin leaves no room for the dot");
  }
}

std::pair<double, double> MovingDotDataset::center(std::size_t index, std::size_t f) const {
  double x0, y0;
  if (fixed_start) {
    std::tie(x0, y0) = *fixed_start;
  } else {
    Rng rng = Rng(seed).fork(index);
    x0 = rng.uniform(start_margin, static_cast<double>(width - 1) - start_margin);
    y0 = rng.uniform(start_margin, static_cast<double>(height - 1) - start_margin);
  }
  const double fd = static_cast<double>(f);
  return {reflect(x0 + fd * dx, static_cast<double>(width - 1)),
          reflect(y0 + fd * dy, static_cast<double>(height - 1))};
}

Tensor MovingDotDataset::make_clip(std::size_t index) const {
  validate();
  Tensor clip(clip_shape());
  for (std::size_t f = 0; f < frames; ++f) {
    const auto [cx, cy] = center(index, f);
    std::size_t ix = static_cast<std::size_t>(std::floor(cx));
    std::size_t iy = static_cast<std::size_t>(std::floor(cy));
    ix = std::min(ix, width - 2);
    iy = std::min(iy, height - 2);
    const double fx = cx - static_cast<double>(ix);
    const double fy = cy - static_cast<double>(iy);
    double* fr = clip.data().data() + f * height * width;
    fr[iy * width + ix] += intensity * (1 - fx) * (1 - fy);
    fr[iy * width + ix + 1] += intensity * fx * (1 - fy);
    fr[(iy + 1) * width + ix] += intensity * (1 - fx) * fy;
    fr[(iy + 1) * width + ix + 1] += intensity * fx * fy;
  }
  return clip;
}

double motion_amplitude(const Tensor& video) {
  if (video.rank() != 4) throw ShapeError("motion_amplitude expects [F, C, H, W]");
  const std::size_t F = video.dim(0), C = video.dim(1), H = video.dim(2), W = video.dim(3);
  if (F < 2) throw ShapeError("motion requires >=2 frames");
  std::vector<std::pair<double, double>> cents(F);
  std::vector<double> frame(H * W);
  for (std::size_t f = 0; f < F; ++f) {
    std::fill(frame.begin(), frame.end(), 0.0);
    for (std::size_t c = 0; c < C; ++c) {
      for (std::size_t p = 0; p < H * W; ++p) frame[p] += video[(f * C + c) * H * W + p];
    }
    // Foreground mass: intensity above the middle of the frame's range. This
    // ignores any constant background and keeps low-level noise out.
    const auto [lo_it, hi_it] = std::minmax_element(frame.begin(), frame.end());
    const double thr = 0.5 * (*lo_it + *hi_it);
    double m = 0.0, sx = 0.0, sy = 0.0;
    for (std::size_t y = 0; y < H; ++y) {
      for (std::size_t x = 0; x < W; ++x) {
        const double w = std::max(frame[y * W + x] - thr, 0.0);
        m += w;
        sx += w * static_cast<double>(x);
        sy += w * static_cast<double>(y);
      }
    }
    if (m > 0.0) {
      cents[f] = {sx / m, sy / m};
    } else {
      cents[f] = {0.5 * static_cast<double>(W - 1), 0.5 * static_cast<double>(H - 1)};
    }
  }
  double total = 0.0;
  for (std::size_t f = 0; f + 1 < F; ++f) {
    total += std::hypot(cents[f + 1].first - cents[f].first, cents[f + 1].second - cents[f].second);
  }
  return total / static_cast<double>(F - 1);
}

LinearCodec::LinearCodec(std::size_t channels, std::size_t height, std::size_t width,
                         std::uint64_t seed, double mixing)
    : channels_(channels), height_(height), width_(width) {
  if (channels == 0 || height == 0 || width == 0) throw ConfigError("codec dims must be positive");
  const std::size_t P = height * width;
  const std::size_t L = channels * P;
  Rng rng(seed);
  Eigen::MatrixXd E = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(L), static_cast<Eigen::Index>(P));
  for (std::size_t c = 0; c < channels; ++c) {
    // Gain bounded away from zero keeps every channel block invertible.
    const double gain = (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(0.5, 1.5);
    for (std::size_t p = 0; p < P; ++p) {
      const auto row = static_cast<Eigen::Index>(c * P + p);
      E(row, static_cast<Eigen::Index>(p)) += gain;
      for (std::size_t q = 0; q < P; ++q) {
        E(row, static_cast<Eigen::Index>(q)) += mixing * rng.normal() / std::sqrt(static_cast<double>(P));
      }
    }
  }
  const Eigen::MatrixXd D = (E.transpose() * E).ldlt().solve(E.transpose());
  enc_.resize(L * P);
  dec_.resize(P * L);
  for (std::size_t r = 0; r < L; ++r)
    for (std::size_t q = 0; q < P; ++q) enc_[r * P + q] = E(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(q));
  for (std::size_t r = 0; r < P; ++r)
    for (std::size_t q = 0; q < L; ++q) dec_[r * L + q] = D(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(q));
}

Tensor LinearCodec::encode(const Tensor& video) const {
  if (video.rank() != 4 || video.dim(1) != 1 || video.dim(2) != height_ || video.dim(3) != width_) {
    throw ShapeError("codec encode expects [F, 1, " + std::to_string(height_) + ", " +
                     std::to_string(width_) + "], got " + shape_str(video.shape()));
  }
  const std::size_t F = video.dim(0), P = height_ * width_, L = channels_ * P;
  Tensor out({F, channels_, height_, width_});
  for (std::size_t f = 0; f < F; ++f) {
    const double* src = video.data().data() + f * P;
    double* dst = out.data().data() + f * L;
    for (std::size_t r = 0; r < L; ++r) {
      double acc = 0.0;
      for (std::size_t q = 0; q < P; ++q) acc += enc_[r * P + q] * src[q];
      dst[r] = acc;
    }
  }
  return out;
}

Tensor LinearCodec::decode(const Tensor& latents) const {
  if (latents.rank() != 4 || latents.dim(1) != channels_ || latents.dim(2) != height_ ||
      latents.dim(3) != width_) {
    throw ShapeError("codec decode expects [F, " + std::to_string(channels_) + ", " +
                     std::to_string(height_) + ", " + std::to_string(width_) + "], got " +
                     shape_str(latents.shape()));
  }
  const std::size_t F = latents.dim(0), P = height_ * width_, L = channels_ * P;
  Tensor out({F, 1, height_, width_});
  for (std::size_t f = 0; f < F; ++f) {
    const double* src = latents.data().data() + f * L;
    double* dst = out.data().data() + f * P;
    for (std::size_t r = 0; r < P; ++r) {
      double acc = 0.0;
      for (std::size_t q = 0; q < L; ++q) acc += dec_[r * L + q] * src[q];
      dst[r] = acc;
    }
  }
  return out;
}

}  // namespace diag
