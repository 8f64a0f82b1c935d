#include "videostudio/oracle.hpp"

#include <algorithm>
#include <cmath>

namespace vs {

namespace {

double checked_sigma(int t, const NoiseSchedule& schedule) {
  const double s = schedule.sigma(t);
  if (s == 0.0) throw DivisionAtTZero("analytic epsilon is undefined where sigma_t = 0");
  return s;
}

}  // namespace

GaussianPrior isotropic_prior(Tensor mean, double var) {
  Tensor v(mean.shape(), var);
  return {std::move(mean), std::move(v)};
}

Tensor analytic_gaussian_x0(const Tensor& x_t, int t, const GaussianPrior& prior, const NoiseSchedule& schedule) {
  require_same_shape(x_t, prior.mean, "analytic_gaussian_x0");
  require_same_shape(x_t, prior.var, "analytic_gaussian_x0");
  const double a = schedule.alpha(t), s = checked_sigma(t, schedule);
  Tensor out(x_t.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) {
    const double v = prior.var[i];
    const double mu = prior.mean[i];
    out[i] = mu + a * v / (a * a * v + s * s) * (x_t[i] - a * mu);
  }
  return out;
}

Tensor analytic_gaussian_epsilon(const Tensor& x_t, int t, const GaussianPrior& prior, const NoiseSchedule& schedule) {
  const Tensor x0 = analytic_gaussian_x0(x_t, t, prior, schedule);
  const double a = schedule.alpha(t), s = checked_sigma(t, schedule);
  Tensor out(x_t.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = (x_t[i] - a * x0[i]) / s;
  return out;
}

std::vector<double> mixture_responsibilities(const Tensor& x_t, int t, const MixturePrior& prior,
                                             const NoiseSchedule& schedule) {
  if (prior.means.empty()) throw ShapeMismatch("mixture prior has no components");
  const double a = schedule.alpha(t), s = checked_sigma(t, schedule);
  const double var = a * a * prior.var + s * s;
  std::vector<double> logp(prior.means.size());
  for (std::size_t k = 0; k < prior.means.size(); ++k) {
    require_same_shape(x_t, prior.means[k], "mixture_responsibilities");
    double d = 0.0;
    for (std::size_t i = 0; i < x_t.numel(); ++i) {
      const double r = x_t[i] - a * prior.means[k][i];
      d += r * r;
    }
    logp[k] = -d / (2.0 * var);
  }
  const double top = *std::max_element(logp.begin(), logp.end());
  double z = 0.0;
  for (auto& l : logp) z += (l = std::exp(l - top));
  for (auto& l : logp) l /= z;
  return logp;
}

Tensor mixture_epsilon(const Tensor& x_t, int t, const MixturePrior& prior, const NoiseSchedule& schedule) {
  const auto r = mixture_responsibilities(x_t, t, prior, schedule);
  const double a = schedule.alpha(t), s = schedule.sigma(t);
  const double gain = a * prior.var / (a * a * prior.var + s * s);
  Tensor m(x_t.shape());
  for (std::size_t k = 0; k < r.size(); ++k)
    for (std::size_t i = 0; i < m.numel(); ++i) m[i] += r[k] * prior.means[k][i];
  Tensor out(x_t.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) {
    const double x0 = m[i] + gain * (x_t[i] - a * m[i]);
    out[i] = (x_t[i] - a * x0) / s;
  }
  return out;
}

CameraPathPrior camera_path_prior(const Tensor& anchor, std::size_t frames, double var, const SpeedTable& table) {
  require_rank(anchor, 3, "camera_path_prior");
  const std::size_t c = anchor.dim(0), h = anchor.dim(1), w = anchor.dim(2);
  Tensor still({c, frames, h, w});
  for (std::size_t f = 0; f < frames; ++f) set_clip_frame(still, f, anchor);

  CameraPathPrior out;
  out.mixture.var = var;
  out.moves.push_back({CameraDirection::Static, CameraSpeed::Slow});
  for (auto d : {CameraDirection::Left, CameraDirection::Right, CameraDirection::Up, CameraDirection::Down})
    for (auto s : {CameraSpeed::Slow, CameraSpeed::Medium, CameraSpeed::Fast}) out.moves.push_back({d, s});
  for (const auto& m : out.moves) out.mixture.means.push_back(warp_clip(still, synthesize_flow(m, frames, h, w, table)));
  return out;
}

}  // namespace vs
