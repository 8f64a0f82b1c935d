#include "videostudio/sampler.hpp"

#include <cmath>
#include <string>

namespace vs {

double NoiseSchedule::abar(int t) const {
  if (t == kCleanStep) return 1.0;
  if (t < 0 || t >= T) throw BadTimestepOrder("timestep " + std::to_string(t) + " outside [0, " + std::to_string(T) + ")");
  return alpha_bar[static_cast<std::size_t>(t)];
}

NoiseSchedule make_schedule(int T, double beta_1, double beta_T) {
  if (T < 1) throw BadRange("schedule needs T >= 1");
  if (!(beta_1 > 0.0 && beta_1 < 1.0 && beta_T > 0.0 && beta_T < 1.0) || (T > 1 && !(beta_1 < beta_T))) {
    throw BadRange("schedule needs 0 < beta_1 < beta_T < 1");
  }
  NoiseSchedule s;
  s.T = T;
  s.betas.resize(static_cast<std::size_t>(T));
  s.alpha_bar.resize(static_cast<std::size_t>(T));
  const double r1 = std::sqrt(beta_1), rT = std::sqrt(beta_T);
  double prod = 1.0;
  for (int t = 0; t < T; ++t) {
    double beta;
    if (t == 0) {
      beta = beta_1;
    } else if (t == T - 1) {
      beta = beta_T;
    } else {
      const double r = r1 + static_cast<double>(t) / static_cast<double>(T - 1) * (rT - r1);
      beta = r * r;
    }
    s.betas[static_cast<std::size_t>(t)] = beta;
    prod *= 1.0 - beta;
    s.alpha_bar[static_cast<std::size_t>(t)] = prod;
  }
  return s;
}

SamplerConfig SamplerConfig::image_defaults() { return SamplerConfig{50, 0.0, 7.5, 5, 0}; }

SamplerConfig SamplerConfig::video_defaults() { return SamplerConfig{70, 1.0, 12.0, 5, 0}; }

void SamplerConfig::validate(const NoiseSchedule& schedule, bool camera) const {
  if (inference_steps < 1 || inference_steps > schedule.T)
    throw InvalidSamplerConfig("inference_steps must lie in [1, " + std::to_string(schedule.T) + "]");
  if (!(eta >= 0.0 && eta <= 1.0)) throw InvalidSamplerConfig("eta must lie in [0, 1]");
  if (!std::isfinite(guidance_scale)) throw InvalidSamplerConfig("guidance_scale must be finite");
  if (camera && (t_m < 1 || t_m >= inference_steps))
    throw InvalidSamplerConfig("t_m must satisfy 1 <= t_m < inference_steps");
}

std::vector<int> inference_timesteps(int T, int n) {
  if (n < 1 || n > T) throw InvalidSamplerConfig("inference steps " + std::to_string(n) + " outside [1, T]");
  std::vector<int> ts(static_cast<std::size_t>(n));
  if (n == 1) {
    ts[0] = T - 1;
    return ts;
  }
  const double step = static_cast<double>(T - 1) / static_cast<double>(n - 1);
  for (int i = 0; i < n; ++i) ts[static_cast<std::size_t>(i)] = static_cast<int>(std::lround(static_cast<double>(T - 1) - step * i));
  return ts;
}

Tensor cfg_epsilon(const Tensor& eps_cond, const Tensor& eps_uncond, double scale) {
  require_same_shape(eps_cond, eps_uncond, "cfg_epsilon");
  if (scale == 1.0) return eps_cond;
  if (scale == 0.0) return eps_uncond;
  Tensor out(eps_cond.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = eps_uncond[i] + scale * (eps_cond[i] - eps_uncond[i]);
  return out;
}

Tensor predict_x0(const Tensor& x_t, const Tensor& eps, int t, const NoiseSchedule& schedule) {
  require_same_shape(x_t, eps, "predict_x0");
  const double a = schedule.alpha(t), s = schedule.sigma(t);
  Tensor out(x_t.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = (x_t[i] - s * eps[i]) / a;
  return out;
}

Tensor ddim_step(const Tensor& x_t, const Tensor& eps, int t, int t_prev, const NoiseSchedule& schedule, double eta,
                 Rng& rng) {
  if (!(t > t_prev && t_prev >= kCleanStep && t < schedule.T)) {
    throw BadTimestepOrder("ddim_step needs T > t > t_prev >= 0, got t=" + std::to_string(t) +
                           " t_prev=" + std::to_string(t_prev));
  }
  const Tensor x0 = predict_x0(x_t, eps, t, schedule);
  const double ab = schedule.abar(t), ab_prev = schedule.abar(t_prev);
  const double s = eta * std::sqrt((1.0 - ab_prev) / (1.0 - ab)) * std::sqrt(1.0 - ab / ab_prev);
  const double a_prev = std::sqrt(ab_prev);
  const double dir = std::sqrt(std::max(0.0, 1.0 - ab_prev - s * s));
  Tensor out(x_t.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a_prev * x0[i] + dir * eps[i];
  if (s > 0.0) {
    for (auto& v : out.values()) v += s * rng.normal();
  }
  return out;
}

Tensor apply_camera_intervention(const Tensor& x, const Tensor& eps, int t, const NoiseSchedule& schedule,
                                 const FlowField& field) {
  require_same_shape(x, eps, "apply_camera_intervention");
  require_rank(x, 4, "apply_camera_intervention");
  const double a = schedule.alpha(t), s = schedule.sigma(t);
  const Tensor x0 = predict_x0(x, eps, t, schedule);
  const Tensor warped = warp_clip(x0, field);
  Tensor out(x.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a * (0.5 * x0[i] + 0.5 * warped[i]) + s * eps[i];
  return out;
}

namespace {

Tensor run_ddim(const GuidedEps& model, const Shape& latent_shape, const NoiseSchedule& schedule,
                const SamplerConfig& config, const FlowField* field, SampleTrace* trace) {
  config.validate(schedule, field != nullptr);
  if (!model.cond) throw InvalidSamplerConfig("sampler needs a conditional model");
  const bool guided = config.guidance_scale != 1.0;
  if (guided && !model.uncond) throw InvalidSamplerConfig("guidance scale != 1 needs an unconditional model");

  Rng rng(config.seed);
  Tensor x(latent_shape);
  for (auto& v : x.values()) v = rng.normal();

  const auto ts = inference_timesteps(schedule.T, config.inference_steps);
  if (trace) {
    *trace = SampleTrace{};
    trace->timesteps = ts;
  }
  Tensor eps;
  for (std::size_t i = 0; i < ts.size(); ++i) {
    const int t = ts[i];
    if (field && static_cast<int>(i) == config.t_m) {
      if (trace) trace->x_before_intervention = x;
      x = apply_camera_intervention(x, eps, t, schedule, *field);
      if (trace) {
        trace->intervention_index = static_cast<int>(i);
        trace->x_after_intervention = x;
      }
    }
    const Tensor ec = model.cond(x, t);
    eps = guided ? cfg_epsilon(ec, model.uncond(x, t), config.guidance_scale) : ec;
    const int t_prev = i + 1 < ts.size() ? ts[i + 1] : kCleanStep;
    x = ddim_step(x, eps, t, t_prev, schedule, config.eta, rng);
  }
  return x;
}

}  // namespace

Tensor sample_image(const GuidedEps& model, const Shape& latent_shape, const NoiseSchedule& schedule,
                    const SamplerConfig& config, SampleTrace* trace) {
  return run_ddim(model, latent_shape, schedule, config, nullptr, trace);
}

Tensor sample_video(const GuidedEps& model, const Shape& latent_shape, const std::optional<FlowField>& field,
                    const NoiseSchedule& schedule, const SamplerConfig& config, SampleTrace* trace) {
  if (latent_shape.size() != 4) throw ShapeMismatch("sample_video latent must be [C,F,H,W], got " + shape_str(latent_shape));
  if (field && (field->frames() != latent_shape[1] || field->height() != latent_shape[2] ||
                field->width() != latent_shape[3])) {
    throw DimensionMismatch("sample_video: field " + shape_str(field->disp.shape()) + " vs latent " +
                            shape_str(latent_shape));
  }
  return run_ddim(model, latent_shape, schedule, config, field ? &*field : nullptr, trace);
}

}  // namespace vs
