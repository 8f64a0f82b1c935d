#pragma once

#include <stdexcept>
#include <vector>

#include "videostudio/camera.hpp"
#include "videostudio/sampler.hpp"
#include "videostudio/tensor.hpp"

namespace vs {

struct DivisionAtTZero : public std::domain_error {
  using std::domain_error::domain_error;
};

// Diagonal Gaussian prior over x0; `var` may be zero (point mass).
struct GaussianPrior {
  Tensor mean;
  Tensor var;
};

GaussianPrior isotropic_prior(Tensor mean, double var);

// Exact posterior-mean denoiser: E[x0|x_t] = mu + a var/(a^2 var + s^2) (x_t - a mu),
// eps = (x_t - a E[x0|x_t]) / s.
Tensor analytic_gaussian_epsilon(const Tensor& x_t, int t, const GaussianPrior& prior, const NoiseSchedule& schedule);
Tensor analytic_gaussian_x0(const Tensor& x_t, int t, const GaussianPrior& prior, const NoiseSchedule& schedule);

// Equal-weight mixture of isotropic Gaussians sharing one variance.
struct MixturePrior {
  std::vector<Tensor> means;
  double var = 1e-3;
};

Tensor mixture_epsilon(const Tensor& x_t, int t, const MixturePrior& prior, const NoiseSchedule& schedule);
std::vector<double> mixture_responsibilities(const Tensor& x_t, int t, const MixturePrior& prior,
                                             const NoiseSchedule& schedule);

// Components are constant-velocity camera paths of `anchor` [C,H,W] over F
// frames: static, then left/right/up/down at each table speed, in that order.
struct CameraPathPrior {
  MixturePrior mixture;
  std::vector<CameraMove> moves;  // one per component
};

CameraPathPrior camera_path_prior(const Tensor& anchor, std::size_t frames, double var, const SpeedTable& table = {});

}  // namespace vs
