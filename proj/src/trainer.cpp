// Copyright 2026 The diagdistill Authors
// SPDX-License-Identifier: Apache-2.0

#include "diagdistill/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "conv_ops.hpp"

namespace diag {

void LossWeights::validate() const {
  auto ok = [](double v) { return std::isfinite(v) && v >= 0.0; };
  if (!ok(lambda_spatial) || !ok(lambda_flow) || !ok(gamma)) {
    throw ConfigError("loss weights must be finite and non-negative");
  }
}

double combine(const LossWeights& w, const LossBreakdown& b) {
  return w.lambda_spatial * b.dmd + b.reg + w.gamma * (w.lambda_flow * b.dmd_flow + b.reg_flow);
}

Strategy parse_strategy(std::string_view name) {
  if (name == "teacher") return Strategy::kTeacher;
  if (name == "diffusion") return Strategy::kDiffusion;
  if (name == "self") return Strategy::kSelf;
  if (name == "diagonal") return Strategy::kDiagonal;
  throw ConfigError("unknown strategy '" + std::string(name) + "'");
}

std::string strategy_name(Strategy s) {
  switch (s) {
    case Strategy::kTeacher: return "teacher";
    case Strategy::kDiffusion: return "diffusion";
    case Strategy::kSelf: return "self";
    case Strategy::kDiagonal: return "diagonal";
  }
  return "?";
}

// ---------------------------------------------------------------------------

double GaussianDenoiser::mean_sensitivity(const NoiseSchedule& s, int t) const {
  const double a = s.alpha(t), sg = s.sigma(t);
  return sg * sg / (a * a * var + sg * sg);
}

Tensor GaussianDenoiser::denoise(const NoiseSchedule& s, const Tensor& x_t, int t) const {
  require_same_shape(x_t, mean, "GaussianDenoiser");
  const double a = s.alpha(t), sg = s.sigma(t);
  const double denom = a * a * var + sg * sg;
  if (!(denom > 0.0)) throw NumericError("GaussianDenoiser: degenerate variance");
  const double gain = a * var / denom;
  Tensor out(mean.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = mean[i] + gain * (x_t[i] - a * mean[i]);
  return out;
}

Tensor GaussianDenoiser::score(const NoiseSchedule& s, const Tensor& x_t, int t) const {
  return score_from_denoised(s, x_t, denoise(s, x_t, t), t);
}

LossGrad gaussian_denoiser_loss(const GaussianDenoiser& d, const NoiseSchedule& s,
                                const std::vector<DenoiserSample>& batch) {
  if (batch.empty()) throw ConfigError("denoiser loss needs a non-empty batch");
  LossGrad out;
  out.grad = Tensor::zeros_like(d.mean);
  const double inv = 1.0 / static_cast<double>(batch.size());
  for (const auto& b : batch) {
    const Tensor r = d.denoise(s, b.x_t, b.t) - b.x;
    out.loss += inv * dot(r, r);
    out.grad += (2.0 * inv * d.mean_sensitivity(s, b.t)) * r;
  }
  return out;
}

Tensor dmd_output_grad(const NoiseSchedule& s, const Tensor& x_t, int t, const ScoreFn& real,
                       const ScoreFn& fake) {
  return (-s.alpha(t)) * (real(x_t, t) - fake(x_t, t));
}

Tensor dmd_gradient(const DifferentiableGenerator& gen, const ScoreFn& real, const ScoreFn& fake,
                    const NoiseSchedule& s, Rng& rng, int t, std::size_t n_samples) {
  if (n_samples == 0) throw ConfigError("dmd_gradient needs at least one sample");
  Tensor acc;
  for (std::size_t i = 0; i < n_samples; ++i) {
    const Tensor z = gaussian_sample(rng, gen.noise_shape());
    const Tensor x = gen.forward(z);
    const Tensor x_t = diffuse_with(s, x, t, gaussian_sample(rng, x.shape()));
    Tensor gp = gen.param_vjp(z, dmd_output_grad(s, x_t, t, real, fake));
    if (i == 0) {
      acc = std::move(gp);
    } else {
      acc += gp;
    }
  }
  return (1.0 / static_cast<double>(n_samples)) * acc;
}

Regression regression_loss(const DifferentiableGenerator& gen, const std::vector<Tensor>& z,
                           const std::vector<Tensor>& y) {
  if (z.size() != y.size()) throw ShapeError("regression_loss: unpaired batch");
  if (z.empty()) throw ConfigError("regression_loss: empty batch");
  Regression r;
  for (std::size_t i = 0; i < z.size(); ++i) {
    const Tensor diff = gen.forward(z[i]) - y[i];
    const double inv = 1.0 / static_cast<double>(z.size() * diff.size());
    r.loss += inv * dot(diff, diff);
    Tensor gp = gen.param_vjp(z[i], (2.0 * inv) * diff);
    if (i == 0) {
      r.grad_params = std::move(gp);
    } else {
      r.grad_params += gp;
    }
  }
  return r;
}

// ---------------------------------------------------------------------------

std::vector<ConditioningChunk> build_conditioning(Strategy strategy,
                                                  const std::vector<Tensor>& ground_truth,
                                                  const std::vector<Tensor>& generated,
                                                  std::size_t k, const ConditioningOptions& opt,
                                                  const NoiseSchedule& schedule, Rng& rng) {
  if (opt.forcing_t < 0 || opt.forcing_t > schedule.horizon) {
    throw RangeError("forcing step outside [0, horizon]");
  }
  std::vector<ConditioningChunk> out;
  const std::size_t lo = k > opt.window ? k - opt.window : 0;
  auto gt = [&](std::size_t j) -> const Tensor& {
    if (j >= ground_truth.size()) throw RangeError("conditioning needs ground-truth chunk " + std::to_string(j));
    return ground_truth[j];
  };
  for (std::size_t j = lo; j < k; ++j) {
    ConditioningChunk c;
    c.chunk_index = static_cast<int>(j);
    switch (strategy) {
      case Strategy::kTeacher:
        c.latent = gt(j);
        break;
      case Strategy::kDiffusion:
        c.noise_t = static_cast<int>(rng.uniform_int(0, schedule.horizon));
        c.latent = forward_diffuse(schedule, gt(j), c.noise_t, rng);
        break;
      case Strategy::kSelf:
        if (j >= generated.size()) throw RangeError("self forcing needs generated chunk " + std::to_string(j));
        c.latent = generated[j];
        c.source = ChunkSource::kGenerated;
        break;
      case Strategy::kDiagonal:
        if (k - j <= opt.recency && j < generated.size()) {
          c.noise_t = opt.forcing_t;
          c.latent = forward_diffuse(schedule, generated[j], opt.forcing_t, rng);
          c.source = ChunkSource::kGenerated;
        } else {
          c.latent = gt(j);
        }
        break;
    }
    out.push_back(std::move(c));
  }
  return out;
}

// ---------------------------------------------------------------------------

TrainerConfig toy_trainer_defaults() {
  TrainerConfig c;
  c.lr = 0.01;
  c.fake_lr = 0.01;
  c.batch = 4;
  c.t_min = 100;
  return c;
}

void TrainerConfig::validate(const NoiseSchedule& s) const {
  weights.validate();
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("lr must be positive");
  if (!(fake_lr > 0.0) || !std::isfinite(fake_lr)) throw ConfigError("fake_lr must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
  if (n_inner < 0) throw ConfigError("n_inner must be non-negative");
  if (batch == 0) throw ConfigError("batch must be positive");
  if (t_min < 1 || t_max > s.horizon || t_min > t_max) {
    throw ConfigError("DMD step range must satisfy 1 <= t_min <= t_max <= horizon");
  }
}

namespace {

void accumulate(Tensor& acc, const Tensor& v) {
  if (acc.empty()) {
    acc = v;
  } else {
    acc += v;
  }
}

void require_finite_losses(const LossBreakdown& b) {
  const std::pair<const char*, double> terms[] = {{"L_DMD", b.dmd},
                                                  {"L_reg", b.reg},
                                                  {"L_DMD_flow", b.dmd_flow},
                                                  {"L_reg_flow", b.reg_flow}};
  for (const auto& [name, v] : terms) {
    if (!std::isfinite(v)) throw NumericError(std::string("non-finite ") + name);
  }
}

// Combined update direction from the four per-term gradients.
Tensor combine_grads(const LossWeights& w, const StepReport& r) {
  Tensor g = axpby(w.lambda_spatial, r.grad_dmd, 1.0, r.grad_reg);
  g += (w.gamma * w.lambda_flow) * r.grad_dmd_flow;
  g += w.gamma * r.grad_reg_flow;
  return g;
}

}  // namespace

// ---------------------------------------------------------------------------

GaussianTrainer::GaussianTrainer(const TrainerConfig& cfg, const GaussianWorld& world,
                                 const NoiseSchedule& schedule)
    : cfg_(cfg), world_(world), schedule_(schedule), flow_map_(1.0 / std::sqrt(2.0)) {
  schedule_.validate();
  cfg_.validate(schedule_);
  if (world_.real_mean.shape() != Shape{2} || world_.init_bias.shape() != Shape{2}) {
    throw ShapeError("Gaussian world uses two-frame clips of one scalar");
  }
  if (!(world_.real_std > 0.0)) throw ConfigError("real_std must be positive");
  const double v = world_.real_std * world_.real_std;
  real_ = GaussianDenoiser{world_.real_mean, v};
  real_flow_ = GaussianDenoiser{flow_map_.forward(world_.real_mean), v};
  bias_ = world_.init_bias;
  fake_ = GaussianDenoiser{bias_, 1.0};
  fake_flow_ = GaussianDenoiser{flow_map_.forward(bias_), 1.0};
  velocity_ = Tensor::zeros_like(bias_);
}

double GaussianTrainer::gap() const { return norm2(bias_ - world_.real_mean); }

void GaussianTrainer::fit_fake(Rng& rng) {
  for (int it = 0; it < cfg_.n_inner; ++it) {
    std::vector<DenoiserSample> pix, feat;
    for (std::size_t b = 0; b < cfg_.batch; ++b) {
      DenoiserSample p;
      p.x = gaussian_sample(rng, bias_.shape()) + bias_;
      p.t = static_cast<int>(rng.uniform_int(cfg_.t_min, cfg_.t_max));
      p.x_t = diffuse_with(schedule_, p.x, p.t, gaussian_sample(rng, p.x.shape()));
      feat.push_back({flow_map_.forward(p.x), flow_map_.forward(p.x_t), p.t, Tensor()});
      pix.push_back(std::move(p));
    }
    const LossGrad g = gaussian_denoiser_loss(fake_, schedule_, pix);
    const LossGrad gf = gaussian_denoiser_loss(fake_flow_, schedule_, feat);
    fake_.mean = axpby(1.0, fake_.mean, -cfg_.fake_lr, g.grad);
    fake_flow_.mean = axpby(1.0, fake_flow_.mean, -cfg_.fake_lr, gf.grad);
  }
}

StepReport GaussianTrainer::step() {
  const Rng base = Rng(cfg_.seed).fork(step_);
  Rng fit_rng = base.fork(0), rng = base.fork(1);
  fit_fake(fit_rng);

  StepReport r;
  r.step = step_;
  const double inv = 1.0 / static_cast<double>(cfg_.batch);
  auto real_score = [&](const Tensor& x, int t) { return real_.score(schedule_, x, t); };
  auto fake_score = [&](const Tensor& x, int t) { return fake_.score(schedule_, x, t); };
  auto real_fscore = [&](const Tensor& f, int t) { return real_flow_.score(schedule_, f, t); };
  auto fake_fscore = [&](const Tensor& f, int t) { return fake_flow_.score(schedule_, f, t); };

  r.grad_dmd = r.grad_reg = r.grad_dmd_flow = r.grad_reg_flow = Tensor::zeros_like(bias_);
  for (std::size_t b = 0; b < cfg_.batch; ++b) {
    const Tensor z = gaussian_sample(rng, bias_.shape());
    const Tensor x = z + bias_;
    const int t = static_cast<int>(rng.uniform_int(cfg_.t_min, cfg_.t_max));
    const Tensor eps = gaussian_sample(rng, x.shape());
    const Tensor x_t = diffuse_with(schedule_, x, t, eps);

    // G is a shift, so every output gradient is also the parameter gradient.
    const Tensor gd = dmd_output_grad(schedule_, x_t, t, real_score, fake_score);
    r.losses.dmd += inv * 0.5 * dot(gd, gd);
    r.grad_dmd += inv * gd;

    Tensor y = world_.real_std * z;
    y += world_.real_mean;
    const Tensor res = x - y;
    const double per = inv / static_cast<double>(res.size());
    r.losses.reg += per * dot(res, res);
    r.grad_reg += (2.0 * per) * res;

    const FlowDmdSample fs = flow_dmd_sample(schedule_, flow_map_, x, t, eps, real_fscore, fake_fscore);
    r.losses.dmd_flow += inv * 0.5 * dot(fs.grad_x, fs.grad_x);
    r.grad_dmd_flow += inv * fs.grad_x;

    const Tensor fx = flow_map_.forward(x), fy = flow_map_.forward(y);
    const double n = static_cast<double>(fx.size());
    r.losses.reg_flow += inv * mse(fx, fy);
    r.grad_reg_flow += inv * flow_map_.input_vjp(x, (2.0 / n) * (fx - fy));
  }
  r.losses.total = combine(cfg_.weights, r.losses);
  require_finite_losses(r.losses);

  const Tensor g = combine_grads(cfg_.weights, r);
  g.require_finite("generator gradient");
  velocity_ = axpby(cfg_.momentum, velocity_, 1.0, g);
  r.update = (-cfg_.lr) * velocity_;
  bias_ += r.update;
  ++step_;
  r.gap = gap();
  return r;
}

// ---------------------------------------------------------------------------

ToyGenerator::ToyGenerator(std::size_t frames, std::size_t channels, std::size_t height,
                           std::size_t width, int radius)
    : frames_(frames), channels_(channels), height_(height), width_(width), radius_(radius) {
  if (frames == 0 || channels == 0 || height == 0 || width == 0) {
    throw ShapeError("ToyGenerator: empty chunk shape");
  }
  if (radius < 0) throw ConfigError("ToyGenerator: negative kernel radius");
  const std::size_t k = 2 * static_cast<std::size_t>(radius) + 1;
  params_ = Tensor({2 * chunk_numel() + frames * channels * channels * k * k});
}

void ToyGenerator::set_params(Tensor p) {
  if (p.shape() != params_.shape()) throw ShapeError("ToyGenerator: parameter shape mismatch");
  params_ = std::move(p);
}

void ToyGenerator::check(const Tensor& z, const Tensor& cond_frame) const {
  if (z.shape() != chunk_shape()) throw ShapeError("ToyGenerator: noise must be " + shape_str(chunk_shape()));
  if (cond_frame.shape() != frame_shape()) {
    throw ShapeError("ToyGenerator: conditioning frame must be " + shape_str(frame_shape()));
  }
}

Tensor ToyGenerator::forward(const Tensor& z, const Tensor& cond_frame) const {
  return forward_with(params_, z, cond_frame);
}

Tensor ToyGenerator::forward_with(const Tensor& params, const Tensor& z,
                                  const Tensor& cond_frame) const {
  if (params.shape() != params_.shape()) throw ShapeError("ToyGenerator: parameter shape mismatch");
  check(z, cond_frame);
  const std::size_t n = chunk_numel(), fr = channels_ * height_ * width_;
  const std::size_t kk = (2 * radius_ + 1) * (2 * radius_ + 1);
  const double* p = params.data().data();
  Tensor out(chunk_shape());
  for (std::size_t f = 0; f < frames_; ++f) {
    detail::conv_radius(cond_frame.data().data(), p + conv_offset() + f * channels_ * channels_ * kk,
                        out.data().data() + f * fr, channels_, channels_, height_, width_, radius_);
  }
  for (std::size_t i = 0; i < n; ++i) out[i] += p[bias_offset() + i] + p[scale_offset() + i] * z[i];
  return out;
}

Tensor ToyGenerator::param_vjp(const Tensor& z, const Tensor& cond_frame, const Tensor& grad_out) const {
  check(z, cond_frame);
  if (grad_out.shape() != chunk_shape()) throw ShapeError("ToyGenerator::param_vjp: shape mismatch");
  const std::size_t n = chunk_numel(), fr = channels_ * height_ * width_;
  const std::size_t kk = (2 * radius_ + 1) * (2 * radius_ + 1);
  Tensor g(params_.shape());
  for (std::size_t i = 0; i < n; ++i) {
    g[bias_offset() + i] = grad_out[i];
    g[scale_offset() + i] = grad_out[i] * z[i];
  }
  for (std::size_t f = 0; f < frames_; ++f) {
    detail::conv_radius_weight_grad(cond_frame.data().data(), grad_out.data().data() + f * fr,
                                    g.data().data() + conv_offset() + f * channels_ * channels_ * kk,
                                    channels_, channels_, height_, width_, radius_);
  }
  return g;
}

LossGrad conditional_denoiser_loss(const ToyGenerator& model, const Tensor& params, double var,
                                   const NoiseSchedule& s, const std::vector<DenoiserSample>& batch) {
  if (batch.empty()) throw ConfigError("denoiser loss needs a non-empty batch");
  LossGrad out;
  out.grad = Tensor::zeros_like(params);
  const double inv = 1.0 / static_cast<double>(batch.size());
  const Tensor zero(model.chunk_shape());
  for (const auto& b : batch) {
    const GaussianDenoiser d{model.forward_with(params, zero, b.cond_frame), var};
    const Tensor r = d.denoise(s, b.x_t, b.t) - b.x;
    out.loss += inv * dot(r, r);
    out.grad += model.param_vjp(zero, b.cond_frame, (2.0 * inv * d.mean_sensitivity(s, b.t)) * r);
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {

std::vector<double> normalize_log_weights(std::vector<double> logw) {
  const double mx = *std::max_element(logw.begin(), logw.end());
  if (!std::isfinite(mx)) throw NumericError("dataset posterior has no finite weight");
  double z = 0.0;
  for (double& l : logw) {
    l = std::exp(l - mx);
    z += l;
  }
  for (double& l : logw) l /= z;
  return logw;
}

Tensor weighted_sum(const std::vector<double>& w, const std::vector<const Tensor*>& items) {
  Tensor out(items.front()->shape());
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (w[i] < 1e-300) continue;
    const Tensor& v = *items[i];
    for (std::size_t j = 0; j < out.size(); ++j) out[j] += w[i] * v[j];
  }
  return out;
}

double gauss_log_lik(const Tensor& obs, const Tensor& clean, double a, double sg) {
  double acc = 0.0;
  for (std::size_t j = 0; j < obs.size(); ++j) {
    const double d = obs[j] - a * clean[j];
    acc += d * d;
  }
  return -acc / (2.0 * sg * sg);
}

}  // namespace

DatasetDenoiser::DatasetDenoiser(std::vector<std::vector<Tensor>> clips, double cond_noise_floor)
    : clips_(std::move(clips)), floor_(cond_noise_floor) {
  if (clips_.empty() || clips_[0].empty()) throw ConfigError("DatasetDenoiser needs clips");
  if (!(floor_ > 0.0)) throw ConfigError("conditioning noise floor must be positive");
  for (const auto& c : clips_) {
    if (c.size() != clips_[0].size()) throw ShapeError("clips must have equal chunk counts");
    for (const auto& ch : c) {
      if (ch.shape() != clips_[0][0].shape()) throw ShapeError("clip chunks must share a shape");
    }
  }
}

double DatasetDenoiser::cond_log_lik(const NoiseSchedule& s, std::size_t i,
                                     const std::vector<ConditioningChunk>& cond) const {
  double acc = 0.0;
  for (const auto& c : cond) {
    const auto j = static_cast<std::size_t>(c.chunk_index);
    if (j >= clips_[i].size()) throw RangeError("conditioning chunk index beyond clip length");
    const double sg = std::max(s.sigma(c.noise_t), floor_);
    acc += gauss_log_lik(c.latent, clips_[i][j], s.alpha(c.noise_t), sg);
  }
  return acc;
}

std::vector<double> DatasetDenoiser::log_weights(const NoiseSchedule& s, std::size_t k,
                                                 const Tensor& x_t, int t,
                                                 const std::vector<ConditioningChunk>& cond) const {
  if (k >= chunks_per_clip()) throw RangeError("chunk index beyond clip length");
  require_same_shape(x_t, clips_[0][k], "DatasetDenoiser");
  const double sg = s.sigma(t);
  if (!(sg > 0.0)) throw RangeError("dataset denoiser undefined at zero noise");
  std::vector<double> lw(clips_.size());
  for (std::size_t i = 0; i < clips_.size(); ++i) {
    lw[i] = gauss_log_lik(x_t, clips_[i][k], s.alpha(t), sg) + cond_log_lik(s, i, cond);
  }
  return lw;
}

std::vector<double> DatasetDenoiser::posterior(const NoiseSchedule& s, std::size_t k,
                                               const Tensor& x_t, int t,
                                               const std::vector<ConditioningChunk>& cond) const {
  return normalize_log_weights(log_weights(s, k, x_t, t, cond));
}

Tensor DatasetDenoiser::denoise(const NoiseSchedule& s, std::size_t k, const Tensor& x_t, int t,
                                const std::vector<ConditioningChunk>& cond) const {
  std::vector<const Tensor*> items;
  for (const auto& c : clips_) items.push_back(&c[k]);
  return weighted_sum(posterior(s, k, x_t, t, cond), items);
}

Tensor DatasetDenoiser::denoise_features(const NoiseSchedule& s, std::size_t k, const Tensor& x_t,
                                         int t, const std::vector<Tensor>& features,
                                         const std::vector<ConditioningChunk>& cond) const {
  if (features.size() != clips_.size()) throw ShapeError("one feature tensor per clip required");
  std::vector<const Tensor*> items;
  for (const auto& f : features) {
    require_same_shape(f, features.front(), "DatasetDenoiser features");
    items.push_back(&f);
  }
  return weighted_sum(posterior(s, k, x_t, t, cond), items);
}

Tensor DatasetDenoiser::sample_ode(const NoiseSchedule& s, std::size_t k, const Tensor& z,
                                   const std::vector<ConditioningChunk>& cond, int steps) const {
  if (steps < 1) throw ConfigError("ODE needs at least one step");
  Tensor x = z;
  for (int i = 0; i < steps; ++i) {
    const int t = static_cast<int>(std::lround(s.horizon * (1.0 - static_cast<double>(i) / steps)));
    const int tn = static_cast<int>(std::lround(s.horizon * (1.0 - static_cast<double>(i + 1) / steps)));
    const Tensor x0 = denoise(s, k, x, t, cond);
    if (tn == 0) {
      x = x0;
      break;
    }
    const double a = s.alpha(t), sg = s.sigma(t);
    const Tensor eps = (1.0 / sg) * axpby(1.0, x, -a, x0);
    x = axpby(s.alpha(tn), x0, s.sigma(tn), eps);
  }
  return x;
}

// ---------------------------------------------------------------------------

namespace {

std::vector<Tensor> split_chunks(const Tensor& clip, std::size_t chunk_frames) {
  const std::size_t per = clip.size() / clip.dim(0) * chunk_frames;
  Shape sh = clip.shape();
  sh[0] = chunk_frames;
  std::vector<Tensor> out;
  for (std::size_t k = 0; k * chunk_frames < clip.dim(0); ++k) {
    const auto b = clip.vec().begin() + static_cast<std::ptrdiff_t>(k * per);
    out.emplace_back(sh, std::vector<double>(b, b + static_cast<std::ptrdiff_t>(per)));
  }
  return out;
}

Tensor concat_frames(const std::vector<Tensor>& chunks) {
  Shape sh = chunks.front().shape();
  std::vector<double> data;
  sh[0] = 0;
  for (const auto& c : chunks) {
    sh[0] += c.dim(0);
    data.insert(data.end(), c.vec().begin(), c.vec().end());
  }
  return Tensor(sh, std::move(data));
}

}  // namespace

ToyTrainer::ToyTrainer(const TrainerConfig& cfg, const ToyConfig& toy, const NoiseSchedule& schedule)
    : cfg_(cfg),
      toy_(toy),
      schedule_(schedule),
      codec_(toy.channels, toy.data.height, toy.data.width, toy.codec_seed),
      real_([&] {
        MovingDotDataset d = toy.data;
        d.frames = toy.chunk_frames * toy.chunks_per_sample;
        d.validate();
        if (toy.clips == 0) throw ConfigError("toy mode needs at least one clip");
        std::vector<std::vector<Tensor>> clips;
        for (std::size_t i = 0; i < toy.clips; ++i) {
          clips.push_back(split_chunks(codec_.encode(d.make_clip(i)), toy.chunk_frames));
        }
        return DatasetDenoiser(std::move(clips));
      }()),
      gen_(toy.chunk_frames, toy.channels, toy.data.height, toy.data.width, toy.generator_radius),
      fake_{gen_, 0.0},
      student_([&] {
        ExtractorConfig e = toy.extractor;
        e.channels = toy.channels;
        return e;
      }()),
      teacher_(student_) {
  schedule_.validate();
  cfg_.validate(schedule_);
  toy_.data.frames = toy_.chunk_frames * toy_.chunks_per_sample;
  if (toy_.chunk_frames < 2) throw ConfigError("toy chunks need at least two frames");
  if (!(toy_.init_noise_scale >= 0.0)) throw ConfigError("init_noise_scale must be non-negative");
  if (toy_.conditioning.recency > toy_.conditioning.window) {
    throw ConfigError("recency split cannot exceed the conditioning window");
  }

  if (toy_.chunks_per_sample < 2) throw ConfigError("toy clips need a context chunk and at least one generated chunk");

  // Static start: the bias holds the average first data frame, repeated.
  const std::size_t n = gen_.chunk_numel(), fr = n / toy_.chunk_frames;
  Tensor p = gen_.params();
  for (std::size_t i = 0; i < real_.clips(); ++i) {
    const Tensor& c = real_.chunk(i, 0);
    for (std::size_t f = 0; f < toy_.chunk_frames; ++f) {
      for (std::size_t j = 0; j < fr; ++j) {
        p[gen_.bias_offset() + f * fr + j] += c[j] / static_cast<double>(real_.clips());
      }
    }
  }
  for (std::size_t j = 0; j < n; ++j) p[gen_.scale_offset() + j] = toy_.init_noise_scale;
  gen_.set_params(p);
  fake_.mean.set_params(p);
  fake_.var = std::max(toy_.init_noise_scale * toy_.init_noise_scale, 1e-4);
  velocity_ = Tensor::zeros_like(p);

  flow_residual_ = Tensor(teacher_.forward(real_.chunk(0, 0)).shape());
  refresh_feature_bank();
}

void ToyTrainer::refresh_feature_bank() {
  feature_bank_.assign(real_.chunks_per_clip(), {});
  for (std::size_t k = 0; k < real_.chunks_per_clip(); ++k) {
    for (std::size_t i = 0; i < real_.clips(); ++i) {
      feature_bank_[k].push_back(teacher_.forward(real_.chunk(i, k)));
    }
  }
}

Tensor ToyTrainer::cond_frame(const std::vector<ConditioningChunk>& cond) const {
  if (cond.empty()) throw RangeError("generated chunks always have context");
  const Tensor& last = cond.back().latent;
  const std::size_t fr = shape_numel(gen_.frame_shape());
  const auto b = last.vec().end() - static_cast<std::ptrdiff_t>(fr);
  return Tensor(gen_.frame_shape(), std::vector<double>(b, last.vec().end()));
}

Tensor ToyTrainer::fake_denoise(const Tensor& x_t, int t, const Tensor& cond_frame) const {
  const GaussianDenoiser d{fake_.mean.forward(Tensor(gen_.chunk_shape()), cond_frame), fake_.var};
  return d.denoise(schedule_, x_t, t);
}

Tensor ToyTrainer::fake_flow_mean(const Tensor& x_t, int t, const Tensor& cond_frame) const {
  return teacher_.forward(fake_denoise(x_t, t, cond_frame)) + flow_residual_;
}

StepReport ToyTrainer::step() {
  const Rng base = Rng(cfg_.seed).fork(step_);
  Rng roll_rng = base.fork(0), fit_rng = base.fork(1), rng = base.fork(2);

  struct Sample {
    std::size_t k;
    std::vector<ConditioningChunk> cond;
    Tensor c, z, x;
  };
  std::vector<Sample> samples;
  for (std::size_t b = 0; b < cfg_.batch; ++b) {
    const auto j = static_cast<std::size_t>(roll_rng.uniform_int(0, static_cast<std::int64_t>(real_.clips()) - 1));
    std::vector<Tensor> gt;
    for (std::size_t k = 0; k < real_.chunks_per_clip(); ++k) gt.push_back(real_.chunk(j, k));
    // The context chunk stands in for a model output, so every strategy that
    // consumes generated history sees it like any other.
    std::vector<Tensor> generated{gt[0]};
    for (std::size_t k = 1; k < real_.chunks_per_clip(); ++k) {
      Sample s;
      s.k = k;
      s.cond = build_conditioning(cfg_.strategy, gt, generated, k, toy_.conditioning, schedule_, roll_rng);
      s.c = cond_frame(s.cond);
      s.z = gaussian_sample(roll_rng, gen_.chunk_shape());
      s.x = gen_.forward(s.z, s.c);
      generated.push_back(s.x);
      samples.push_back(std::move(s));
    }
  }
  const double inv = 1.0 / static_cast<double>(samples.size());

  // Fake score heads track the current generator.
  {
    const std::size_t n = gen_.chunk_numel();
    double v = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double sc = gen_.params()[gen_.scale_offset() + i];
      v += sc * sc;
    }
    fake_.var = std::max(v / static_cast<double>(n), 1e-4);
    std::vector<Tensor> feats;
    for (const auto& s : samples) feats.push_back(teacher_.forward(s.x));
    for (int it = 0; it < cfg_.n_inner; ++it) {
      std::vector<DenoiserSample> batch;
      for (const auto& s : samples) {
        const int t = static_cast<int>(fit_rng.uniform_int(cfg_.t_min, cfg_.t_max));
        batch.push_back({s.x, diffuse_with(schedule_, s.x, t, gaussian_sample(fit_rng, s.x.shape())), t, s.c});
      }
      const LossGrad g = conditional_denoiser_loss(fake_.mean, fake_.mean.params(), fake_.var, schedule_, batch);
      fake_.mean.set_params(axpby(1.0, fake_.mean.params(), -cfg_.fake_lr, g.grad));
      // The residual head sees the refreshed fake model.
      Tensor gf = Tensor::zeros_like(flow_residual_);
      for (std::size_t i = 0; i < batch.size(); ++i) {
        gf += (2.0 * inv) * (fake_flow_mean(batch[i].x_t, batch[i].t, batch[i].cond_frame) - feats[i]);
      }
      flow_residual_ = axpby(1.0, flow_residual_, -cfg_.fake_lr, gf);
    }
  }

  StepReport r;
  r.step = step_;
  Tensor g_student;
  for (const auto& s : samples) {
    const int t = static_cast<int>(rng.uniform_int(cfg_.t_min, cfg_.t_max));
    const Tensor eps = gaussian_sample(rng, s.x.shape());
    const Tensor x_t = diffuse_with(schedule_, s.x, t, eps);

    auto real_score = [&](const Tensor& x, int tt) {
      return score_from_denoised(schedule_, x, real_.denoise(schedule_, s.k, x, tt, s.cond), tt);
    };
    auto fake_score = [&](const Tensor& x, int tt) {
      return score_from_denoised(schedule_, x, fake_denoise(x, tt, s.c), tt);
    };
    const Tensor gd = dmd_output_grad(schedule_, x_t, t, real_score, fake_score);
    r.losses.dmd += inv * 0.5 * dot(gd, gd);
    accumulate(r.grad_dmd, gen_.param_vjp(s.z, s.c, inv * gd));

    const Tensor y = real_.sample_ode(schedule_, s.k, s.z, s.cond, toy_.ode_steps);
    const Tensor res = s.x - y;
    const double per = inv / static_cast<double>(res.size());
    r.losses.reg += per * dot(res, res);
    accumulate(r.grad_reg, gen_.param_vjp(s.z, s.c, (2.0 * per) * res));

    // Both flow heads read the spatial noisy chunk x_t behind the features.
    auto real_fscore = [&](const Tensor& f, int tt) {
      return flow_score(schedule_, f,
                        real_.denoise_features(schedule_, s.k, x_t, tt, feature_bank_[s.k], s.cond), tt);
    };
    auto fake_fscore = [&](const Tensor& f, int tt) {
      return flow_score(schedule_, f, fake_flow_mean(x_t, tt, s.c), tt);
    };
    const FlowDmdSample fs = flow_dmd_sample(schedule_, teacher_, s.x, t, eps, real_fscore, fake_fscore);
    r.losses.dmd_flow += inv * 0.5 * dot(fs.grad_x, fs.grad_x);
    accumulate(r.grad_dmd_flow, gen_.param_vjp(s.z, s.c, inv * fs.grad_x));

    const FlowRegression fr = flow_regression_loss(student_, teacher_, s.x, y);
    r.losses.reg_flow += inv * fr.loss;
    accumulate(r.grad_reg_flow, gen_.param_vjp(s.z, s.c, inv * fr.grad_x_student));
    accumulate(g_student, inv * fr.grad_student_params);
  }
  r.losses.total = combine(cfg_.weights, r.losses);
  require_finite_losses(r.losses);

  const Tensor g = combine_grads(cfg_.weights, r);
  g.require_finite("generator gradient");
  velocity_ = axpby(cfg_.momentum, velocity_, 1.0, g);
  r.update = (-cfg_.lr) * velocity_;
  Tensor p = gen_.params();
  p += r.update;
  gen_.set_params(std::move(p));

  // Student extractor follows the flow regression; the teacher tracks it by EMA.
  g_student.require_finite("extractor gradient");
  student_.set_params(axpby(1.0, student_.params(), -cfg_.lr * cfg_.weights.gamma, g_student));
  ema_update(toy_.ema, teacher_, student_);
  refresh_feature_bank();
  ++step_;
  return r;
}

std::vector<Tensor> ToyTrainer::rollout(std::size_t clip, Rng& rng, bool sample) const {
  if (clip >= real_.clips()) throw RangeError("rollout clip index out of range");
  Tensor prev = real_.chunk(clip, 0);
  std::vector<Tensor> out;
  for (std::size_t k = 1; k < real_.chunks_per_clip(); ++k) {
    ConditioningChunk c;
    c.chunk_index = static_cast<int>(k - 1);
    c.noise_t = toy_.conditioning.forcing_t;
    c.latent = forward_diffuse(schedule_, prev, c.noise_t, rng);
    c.source = ChunkSource::kGenerated;
    const Tensor z = sample ? gaussian_sample(rng, gen_.chunk_shape()) : Tensor(gen_.chunk_shape());
    prev = gen_.forward(z, cond_frame({c}));
    out.push_back(prev);
  }
  return out;
}

double ToyTrainer::generated_motion_amplitude() const {
  Rng rng(toy_.eval_seed);
  double acc = 0.0;
  const std::size_t n = std::max<std::size_t>(toy_.eval_samples, 1);
  for (std::size_t i = 0; i < n; ++i) {
    acc += motion_amplitude(codec_.decode(concat_frames(rollout(i % real_.clips(), rng, false))));
  }
  return acc / static_cast<double>(n);
}

double ToyTrainer::data_motion_amplitude() const {
  double acc = 0.0;
  const std::size_t n = std::max<std::size_t>(toy_.eval_samples, 1);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<Tensor> rest;
    for (std::size_t k = 1; k < real_.chunks_per_clip(); ++k) rest.push_back(real_.chunk(i % real_.clips(), k));
    acc += motion_amplitude(codec_.decode(concat_frames(rest)));
  }
  return acc / static_cast<double>(n);
}

}  // namespace diag
