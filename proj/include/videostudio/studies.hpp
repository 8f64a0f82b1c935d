#pragma once

#include <cstdint>
#include <vector>

#include "videostudio/camera.hpp"
#include "videostudio/denoiser.hpp"
#include "videostudio/sampler.hpp"

namespace vs {

// Gaussian field smoothed by two wrapping 5-point passes, zero mean, rescaled to `std`.
Tensor smooth_anchor(const Shape& chw, std::uint64_t seed, double std);

struct MomentReport {
  double mean = 0.0;
  double variance = 0.0;
  std::size_t samples = 0;
};

// Samples scalars from N(prior_mean, prior_var) through the analytic Gaussian
// denoiser and DDIM; one sample per seed.
MomentReport sampler_moments(double prior_mean, double prior_var, std::size_t samples, double eta,
                             int inference_steps = 50, std::uint64_t seed = 0);

struct DisplacementOptions {
  CameraMove move{CameraDirection::Right, CameraSpeed::Medium};
  int t_m = 5;
  std::size_t channels = 4, frames = 8, height = 16, width = 16;
  std::size_t checked_frames = 6;  // frames 1..checked_frames are measured
  std::size_t trials = 5;
  double prior_var = 1e-3;
  std::uint64_t seed = 0;
  SamplerConfig sampler = SamplerConfig::video_defaults();
  SpeedTable table;
};

struct DisplacementReport {
  int t_m = 0;
  double max_error = 0.0;   // px, worst |estimate - f v| over frames and trials
  double mean_error = 0.0;  // px
  double residual = 0.0;    // RMS distance of the clip to its nearest camera path, worst trial
};

// Anchored camera-path oracle (guidance 1) with the intervention at t_m;
// translation of latent frame f against frame 0 compared with f times the
// table speed.
DisplacementReport displacement_study(const DisplacementOptions& options);

}  // namespace vs

namespace vs {

struct TrainingOptions {
  std::size_t steps = 200;
  std::size_t window = 20;  // smoothing window of the loss curve
  double lr = 3e-3;
  std::size_t batch = 4;
  std::size_t latent_size = 8;
  std::uint64_t seed = 0;
};

struct TrainingReport {
  std::vector<double> losses;
  double initial = 0.0;    // mean loss over the first window
  double final = 0.0;      // mean loss over the last window
  double reduction = 0.0;  // 1 - final / initial
};

// Epsilon-prediction training of a small image denoiser, every parameter
// trainable, on copies of one fixed latent with one fixed context.
TrainingReport toy_training_run(const TrainingOptions& options);

}  // namespace vs
