#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <vector>

#include "videostudio/camera.hpp"
#include "videostudio/rng.hpp"
#include "videostudio/tensor.hpp"

namespace vs {

struct BadRange : public std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct BadTimestepOrder : public std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct InvalidSamplerConfig : public std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Timestep index for the fully denoised end of the chain (alpha_bar = 1).
inline constexpr int kCleanStep = -1;

struct NoiseSchedule {
  int T = 0;
  std::vector<double> betas;
  std::vector<double> alpha_bar;

  double abar(int t) const;  // t == kCleanStep gives 1
  double alpha(int t) const { return std::sqrt(abar(t)); }
  double sigma(int t) const { return std::sqrt(1.0 - abar(t)); }
};

// beta_t = (sqrt(b1) + (t-1)/(T-1) * (sqrt(bT) - sqrt(b1)))^2, t = 1..T
NoiseSchedule make_schedule(int T = 1000, double beta_1 = 0.00085, double beta_T = 0.0120);

struct SamplerConfig {
  int inference_steps = 50;
  double eta = 0.0;
  double guidance_scale = 7.5;
  int t_m = 5;
  std::uint64_t seed = 0;

  static SamplerConfig image_defaults();
  static SamplerConfig video_defaults();
  // t_m is checked only when a camera intervention will run.
  void validate(const NoiseSchedule& schedule, bool camera = false) const;
};

// round(linspace(T-1, 0, n)), strictly decreasing
std::vector<int> inference_timesteps(int T, int n);

Tensor cfg_epsilon(const Tensor& eps_cond, const Tensor& eps_uncond, double scale);

// Requires t > t_prev >= kCleanStep. Draws noise from `rng` only when the
// stochastic scale is nonzero.
Tensor ddim_step(const Tensor& x_t, const Tensor& eps, int t, int t_prev, const NoiseSchedule& schedule, double eta,
                 Rng& rng);

Tensor predict_x0(const Tensor& x_t, const Tensor& eps, int t, const NoiseSchedule& schedule);

// x0 = (x - sigma eps)/alpha; x0' = 0.5 x0 + 0.5 warp_clip(x0); return alpha x0' + sigma eps.
Tensor apply_camera_intervention(const Tensor& x, const Tensor& eps, int t, const NoiseSchedule& schedule,
                                 const FlowField& field);

// Conditional and unconditional noise predictions at (x, t).
struct GuidedEps {
  std::function<Tensor(const Tensor&, int)> cond;
  std::function<Tensor(const Tensor&, int)> uncond;
};

struct SampleTrace {
  std::vector<int> timesteps;
  int intervention_index = -1;  // position in `timesteps` where the intervention ran
  Tensor x_before_intervention;
  Tensor x_after_intervention;
};

// Pure noise from config.seed, then config.inference_steps DDIM updates with CFG.
Tensor sample_image(const GuidedEps& model, const Shape& latent_shape, const NoiseSchedule& schedule,
                    const SamplerConfig& config, SampleTrace* trace = nullptr);

// As sample_image on a [C,F,H,W] latent; when `field` is given the camera
// intervention runs once, after config.t_m updates.
Tensor sample_video(const GuidedEps& model, const Shape& latent_shape, const std::optional<FlowField>& field,
                    const NoiseSchedule& schedule, const SamplerConfig& config, SampleTrace* trace = nullptr);

}  // namespace vs
