// Copyright 2026 The diagdistill Authors
// SPDX-License-Identifier: Apache-2.0

#include "diagdistill/denoiser.hpp"

#include <algorithm>
#include <cmath>

namespace diag {

void LatentShape::require(const Tensor& x, const char* what) const {
  if (x.shape() != shape()) {
    throw ShapeError(std::string(what) + ": expected latent " + shape_str(shape()) + ", got " +
                     shape_str(x.shape()));
  }
}

void ToyDiTConfig::validate() const {
  if (d_model == 0 || layers == 0 || heads == 0 || mlp_hidden == 0) {
    throw ConfigError("model dimensions must be positive");
  }
  if (d_model % heads != 0) throw ConfigError("d_model must be divisible by heads");
  if (d_model % 2 != 0) throw ConfigError("d_model must be even");
  if (latent.frames == 0 || latent.channels == 0 || latent.height == 0 || latent.width == 0) {
    throw ConfigError("latent dimensions must be positive");
  }
}

namespace {

void fill_uniform(std::vector<double>& w, std::size_t n, std::size_t fan_in, double scale,
                  Rng& rng) {
  const double a = scale / std::sqrt(static_cast<double>(fan_in));
  w.resize(n);
  for (double& v : w) v = rng.uniform(-a, a);
}

// y[r] += sum_c W[r, c] * x[c]
inline void matvec_acc(const double* w, const double* x, double* y, std::size_t rows,
                       std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) {
    double acc = 0.0;
    const double* wr = w + r * cols;
    for (std::size_t c = 0; c < cols; ++c) acc += wr[c] * x[c];
    y[r] += acc;
  }
}

}  // namespace

ToyCausalDiT::ToyCausalDiT(const ToyDiTConfig& cfg, const NoiseSchedule& schedule)
    : cfg_(cfg), schedule_(schedule) {
  cfg_.validate();
  schedule_.validate();
  const std::size_t d = cfg_.d_model;
  const std::size_t c = cfg_.latent.channels;
  const std::size_t hid = cfg_.mlp_hidden;
  const double sc = cfg_.init_scale;
  Rng rng(cfg_.seed);
  fill_uniform(w_in_, d * c, c, sc, rng);
  fill_uniform(b_in_, d, c, sc, rng);
  fill_uniform(pos_, cfg_.latent.tokens() * d, d, sc, rng);
  fill_uniform(w_time_, d * d, d, sc, rng);
  fill_uniform(w_cond_, d * cfg_.cond_dim, std::max<std::size_t>(cfg_.cond_dim, 1), sc, rng);
  fill_uniform(w_steps_, d, 8, sc, rng);
  layers_.resize(cfg_.layers);
  for (auto& L : layers_) {
    fill_uniform(L.wq, d * d, d, sc, rng);
    fill_uniform(L.wk, d * d, d, sc, rng);
    fill_uniform(L.wv, d * d, d, sc, rng);
    fill_uniform(L.wo, d * d, d, sc, rng);
    fill_uniform(L.wt, d * d, d, sc, rng);
    fill_uniform(L.w1, hid * d, d, sc, rng);
    fill_uniform(L.b1, hid, d, sc, rng);
    fill_uniform(L.w2, d * hid, hid, sc, rng);
    fill_uniform(L.b2, d, hid, sc, rng);
  }
  fill_uniform(w_out_, c * d, d, sc, rng);
  fill_uniform(b_out_, c, d, sc, rng);
}

ToyCausalDiT ToyCausalDiT::zeros(const ToyDiTConfig& cfg, const NoiseSchedule& schedule) {
  ToyCausalDiT m(cfg, schedule);
  auto zero = [](std::vector<double>& w) { std::fill(w.begin(), w.end(), 0.0); };
  zero(m.w_in_), zero(m.b_in_), zero(m.pos_), zero(m.w_time_), zero(m.w_cond_), zero(m.w_steps_);
  for (auto& L : m.layers_) {
    zero(L.wq), zero(L.wk), zero(L.wv), zero(L.wo), zero(L.wt);
    zero(L.w1), zero(L.b1), zero(L.w2), zero(L.b2);
  }
  zero(m.w_out_), zero(m.b_out_);
  return m;
}

KvLayout ToyCausalDiT::kv_layout() const {
  return {cfg_.layers, cfg_.heads, cfg_.d_model / cfg_.heads};
}

std::size_t ToyCausalDiT::parameter_count() const {
  std::size_t n = w_in_.size() + b_in_.size() + pos_.size() + w_time_.size() + w_cond_.size() +
                  w_steps_.size() + w_out_.size() + b_out_.size();
  for (const auto& L : layers_) {
    n += L.wq.size() + L.wk.size() + L.wv.size() + L.wo.size() + L.wt.size() + L.w1.size() +
         L.b1.size() + L.w2.size() + L.b2.size();
  }
  return n;
}

std::vector<double> ToyCausalDiT::time_features(int t) const {
  // c_noise is the shifted step; sinusoidal features of it.
  const double tp = Preconditioning::c_noise(schedule_, t);
  const std::size_t d = cfg_.d_model;
  std::vector<double> f(d);
  for (std::size_t i = 0; i < d / 2; ++i) {
    const double freq = std::pow(10000.0, -2.0 * static_cast<double>(i) / static_cast<double>(d));
    f[2 * i] = std::sin(tp * freq);
    f[2 * i + 1] = std::cos(tp * freq);
  }
  return f;
}

Tensor ToyCausalDiT::predict(const Tensor& x_t, int t, const KvContext& ctx,
                             std::span<const double> cond, int steps) const {
  return forward(x_t, t, ctx, cond, steps, nullptr);
}

KvBlock ToyCausalDiT::project_kv(const Tensor& x, int t, std::span<const double> cond) const {
  KvBlock block;
  forward(x, t, KvContext{}, cond, 0, &block);
  return block;
}

Tensor ToyCausalDiT::forward(const Tensor& x_t, int t, const KvContext& ctx,
                             std::span<const double> cond, int steps, KvBlock* record) const {
  const LatentShape& ls = cfg_.latent;
  ls.require(x_t, "ToyCausalDiT");
  schedule_.require_in_range(t);
  if (cond.size() != cfg_.cond_dim) {
    throw ShapeError("condition vector has length " + std::to_string(cond.size()) +
                     ", model expects " + std::to_string(cfg_.cond_dim));
  }
  const std::size_t d = cfg_.d_model;
  const std::size_t C = ls.channels;
  const std::size_t HW = ls.tokens_per_frame();
  const std::size_t N = ls.tokens();
  const std::size_t nh = cfg_.heads;
  const std::size_t hd = d / nh;
  const std::size_t hid = cfg_.mlp_hidden;

  std::size_t M = 0;
  if (!ctx.empty()) {
    const auto& ks = ctx.kv.keys.shape();
    const Shape expect_tail{cfg_.layers, ks.size() == 4 ? ks[1] : 0, nh, hd};
    if (ks.size() != 4 || ks != expect_tail || ctx.kv.values.shape() != ks) {
      throw ShapeError("context K/V shape " + shape_str(ks) + " incompatible with model layout [" +
                       std::to_string(cfg_.layers) + ",*," + std::to_string(nh) + "," +
                       std::to_string(hd) + "]");
    }
    M = ks[1];
  }

  // Token-independent embedding terms.
  const std::vector<double> tf = time_features(t);
  std::vector<double> temb(d, 0.0);
  matvec_acc(w_time_.data(), tf.data(), temb.data(), d, d);
  std::vector<double> shared(d, 0.0);
  for (std::size_t i = 0; i < d; ++i) shared[i] = b_in_[i] + temb[i] + steps * w_steps_[i];
  if (cfg_.cond_dim > 0) matvec_acc(w_cond_.data(), cond.data(), shared.data(), d, cfg_.cond_dim);

  // h[n, :] for token n = f*HW + p.
  std::vector<double> h(N * d);
  std::vector<double> tok(C);
  for (std::size_t f = 0; f < ls.frames; ++f) {
    for (std::size_t p = 0; p < HW; ++p) {
      const std::size_t n = f * HW + p;
      for (std::size_t c = 0; c < C; ++c) tok[c] = x_t[(f * C + c) * HW + p];
      double* hn = &h[n * d];
      for (std::size_t i = 0; i < d; ++i) hn[i] = shared[i] + pos_[n * d + i];
      matvec_acc(w_in_.data(), tok.data(), hn, d, C);
    }
  }

  if (record) {
    record->keys = Tensor({cfg_.layers, N, nh, hd});
    record->values = Tensor({cfg_.layers, N, nh, hd});
  }

  std::vector<double> q(N * d), k(N * d), v(N * d), attn(N * d);
  std::vector<double> scores(M + N);
  std::vector<double> u(d), a(hid);
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));

  for (std::size_t l = 0; l < cfg_.layers; ++l) {
    const Layer& L = layers_[l];
    std::fill(q.begin(), q.end(), 0.0);
    std::fill(k.begin(), k.end(), 0.0);
    std::fill(v.begin(), v.end(), 0.0);
    for (std::size_t n = 0; n < N; ++n) {
      matvec_acc(L.wq.data(), &h[n * d], &q[n * d], d, d);
      matvec_acc(L.wk.data(), &h[n * d], &k[n * d], d, d);
      matvec_acc(L.wv.data(), &h[n * d], &v[n * d], d, d);
    }
    if (record) {
      // [n, head, j] is the same flat layout as k[n*d + head*hd + j].
      std::copy(k.begin(), k.end(), record->keys.data().begin() + l * N * d);
      std::copy(v.begin(), v.end(), record->values.data().begin() + l * N * d);
    }
    const double* ck = M ? ctx.kv.keys.data().data() + l * M * d : nullptr;
    const double* cv = M ? ctx.kv.values.data().data() + l * M * d : nullptr;

    std::fill(attn.begin(), attn.end(), 0.0);
    for (std::size_t n = 0; n < N; ++n) {
      for (std::size_t hh = 0; hh < nh; ++hh) {
        const double* qn = &q[n * d + hh * hd];
        double mx = -INFINITY;
        for (std::size_t m = 0; m < M; ++m) {
          const double* km = ck + m * d + hh * hd;
          double s = 0.0;
          for (std::size_t j = 0; j < hd; ++j) s += qn[j] * km[j];
          scores[m] = s * scale;
          mx = std::max(mx, scores[m]);
        }
        for (std::size_t m = 0; m < N; ++m) {
          const double* km = &k[m * d + hh * hd];
          double s = 0.0;
          for (std::size_t j = 0; j < hd; ++j) s += qn[j] * km[j];
          scores[M + m] = s * scale;
          mx = std::max(mx, scores[M + m]);
        }
        double z = 0.0;
        for (std::size_t m = 0; m < M + N; ++m) {
          scores[m] = std::exp(scores[m] - mx);
          z += scores[m];
        }
        double* out = &attn[n * d + hh * hd];
        for (std::size_t m = 0; m < M; ++m) {
          const double p = scores[m] / z;
          const double* vm = cv + m * d + hh * hd;
          for (std::size_t j = 0; j < hd; ++j) out[j] += p * vm[j];
        }
        for (std::size_t m = 0; m < N; ++m) {
          const double p = scores[M + m] / z;
          const double* vm = &v[m * d + hh * hd];
          for (std::size_t j = 0; j < hd; ++j) out[j] += p * vm[j];
        }
      }
    }
    std::vector<double> tl(d, 0.0);
    matvec_acc(L.wt.data(), temb.data(), tl.data(), d, d);
    for (std::size_t n = 0; n < N; ++n) {
      double* hn = &h[n * d];
      matvec_acc(L.wo.data(), &attn[n * d], hn, d, d);
      for (std::size_t i = 0; i < d; ++i) u[i] = hn[i] + tl[i];
      std::copy(L.b1.begin(), L.b1.end(), a.begin());
      matvec_acc(L.w1.data(), u.data(), a.data(), hid, d);
      for (double& ai : a) ai = std::tanh(ai);
      for (std::size_t i = 0; i < d; ++i) hn[i] += L.b2[i];
      matvec_acc(L.w2.data(), a.data(), hn, d, hid);
    }
  }

  Tensor vel(ls.shape());
  std::vector<double> o(C);
  for (std::size_t f = 0; f < ls.frames; ++f) {
    for (std::size_t p = 0; p < HW; ++p) {
      const std::size_t n = f * HW + p;
      std::copy(b_out_.begin(), b_out_.end(), o.begin());
      matvec_acc(w_out_.data(), &h[n * d], o.data(), C, d);
      for (std::size_t c = 0; c < C; ++c) vel[(f * C + c) * HW + p] = o[c];
    }
  }
  vel.require_finite("ToyCausalDiT output");
  return vel;
}

Tensor to_data_prediction(const NoiseSchedule& s, const Tensor& x_t, const Tensor& v, int t) {
  require_same_shape(x_t, v, "to_data_prediction");
  const double sig = s.sigma(t);
  if (sig == 0.0) return x_t;
  return axpby(1.0, x_t, -sig, v);
}

Tensor renoise(const NoiseSchedule& s, const Tensor& x_t, const Tensor& x0, int t_cur, int t_next,
               Rng& rng, RenoiseMode mode) {
  if (t_next == 0) return x0;
  if (mode == RenoiseMode::kDeterministic) {
    const double sc = s.sigma(t_cur);
    if (sc == 0.0) return x0;
    // eps implied by x_t = alpha*x0 + sigma*eps
    const Tensor eps = (1.0 / sc) * axpby(1.0, x_t, -(1.0 - sc), x0);
    return diffuse_with(s, x0, t_next, eps);
  }
  return forward_diffuse(s, x0, t_next, rng);
}

Tensor step(const NoiseSchedule& s, const Denoiser& m, const Tensor& x_t, int t_cur, int t_next,
            const KvContext& ctx, std::span<const double> cond, Rng& rng, int steps,
            RenoiseMode mode) {
  if (t_next >= t_cur) throw RangeError("timesteps must decrease");
  s.require_in_range(t_next);
  const Tensor v = m.predict(x_t, t_cur, ctx, cond, steps);
  const Tensor x0 = to_data_prediction(s, x_t, v, t_cur);
  return renoise(s, x_t, x0, t_cur, t_next, rng, mode);
}

}  // namespace diag
