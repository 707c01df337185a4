// Copyright 2026 The diagdistill Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cstddef>

namespace diag::detail {

// 3x3, stride 1, zero padding. in [ci, H, W] -> out [co, H, W].
inline void conv3x3(const double* in, const double* w, const double* b, double* out, std::size_t ci,
             std::size_t co, std::size_t H, std::size_t W) {
  for (std::size_t o = 0; o < co; ++o) {
    for (std::size_t y = 0; y < H; ++y) {
      for (std::size_t x = 0; x < W; ++x) {
        double acc = b[o];
        for (std::size_t i = 0; i < ci; ++i) {
          const double* wk = w + (o * ci + i) * 9;
          const double* plane = in + i * H * W;
          for (int ky = 0; ky < 3; ++ky) {
            const long yy = static_cast<long>(y) + ky - 1;
            if (yy < 0 || yy >= static_cast<long>(H)) continue;
            for (int kx = 0; kx < 3; ++kx) {
              const long xx = static_cast<long>(x) + kx - 1;
              if (xx < 0 || xx >= static_cast<long>(W)) continue;
              acc += wk[ky * 3 + kx] * plane[yy * static_cast<long>(W) + xx];
            }
          }
        }
        out[(o * H + y) * W + x] = acc;
      }
    }
  }
}

// Accumulates weight/bias gradients and writes the input gradient.
inline void conv3x3_backward(const double* in, const double* w, const double* g_out, double* g_w,
                      double* g_b, double* g_in, std::size_t ci, std::size_t co, std::size_t H,
                      std::size_t W) {
  std::fill(g_in, g_in + ci * H * W, 0.0);
  for (std::size_t o = 0; o < co; ++o) {
    for (std::size_t y = 0; y < H; ++y) {
      for (std::size_t x = 0; x < W; ++x) {
        const double g = g_out[(o * H + y) * W + x];
        g_b[o] += g;
        for (std::size_t i = 0; i < ci; ++i) {
          const double* wk = w + (o * ci + i) * 9;
          double* gwk = g_w + (o * ci + i) * 9;
          const double* plane = in + i * H * W;
          double* gplane = g_in + i * H * W;
          for (int ky = 0; ky < 3; ++ky) {
            const long yy = static_cast<long>(y) + ky - 1;
            if (yy < 0 || yy >= static_cast<long>(H)) continue;
            for (int kx = 0; kx < 3; ++kx) {
              const long xx = static_cast<long>(x) + kx - 1;
              if (xx < 0 || xx >= static_cast<long>(W)) continue;
              const long q = yy * static_cast<long>(W) + xx;
              gwk[ky * 3 + kx] += g * plane[q];
              gplane[q] += g * wk[ky * 3 + kx];
            }
          }
        }
      }
    }
  }
}

}  // namespace diag::detail

namespace diag::detail {

// Square kernel of side 2r+1, stride 1, zero padding, no bias.
inline void conv_radius(const double* in, const double* w, double* out, std::size_t ci,
                        std::size_t co, std::size_t H, std::size_t W, int r) {
  const int k = 2 * r + 1;
  for (std::size_t o = 0; o < co; ++o) {
    for (std::size_t y = 0; y < H; ++y) {
      for (std::size_t x = 0; x < W; ++x) {
        double acc = 0.0;
        for (std::size_t i = 0; i < ci; ++i) {
          const double* wk = w + (o * ci + i) * k * k;
          const double* plane = in + i * H * W;
          for (int ky = 0; ky < k; ++ky) {
            const long yy = static_cast<long>(y) + ky - r;
            if (yy < 0 || yy >= static_cast<long>(H)) continue;
            for (int kx = 0; kx < k; ++kx) {
              const long xx = static_cast<long>(x) + kx - r;
              if (xx < 0 || xx >= static_cast<long>(W)) continue;
              acc += wk[ky * k + kx] * plane[yy * static_cast<long>(W) + xx];
            }
          }
        }
        out[(o * H + y) * W + x] = acc;
      }
    }
  }
}

// Accumulates the weight gradient only.
inline void conv_radius_weight_grad(const double* in, const double* g_out, double* g_w,
                                    std::size_t ci, std::size_t co, std::size_t H, std::size_t W,
                                    int r) {
  const int k = 2 * r + 1;
  for (std::size_t o = 0; o < co; ++o) {
    for (std::size_t y = 0; y < H; ++y) {
      for (std::size_t x = 0; x < W; ++x) {
        const double g = g_out[(o * H + y) * W + x];
        if (g == 0.0) continue;
        for (std::size_t i = 0; i < ci; ++i) {
          double* gwk = g_w + (o * ci + i) * k * k;
          const double* plane = in + i * H * W;
          for (int ky = 0; ky < k; ++ky) {
            const long yy = static_cast<long>(y) + ky - r;
            if (yy < 0 || yy >= static_cast<long>(H)) continue;
            for (int kx = 0; kx < k; ++kx) {
              const long xx = static_cast<long>(x) + kx - r;
              if (xx < 0 || xx >= static_cast<long>(W)) continue;
              gwk[ky * k + kx] += g * plane[yy * static_cast<long>(W) + xx];
            }
          }
        }
      }
    }
  }
}

}  // namespace diag::detail
