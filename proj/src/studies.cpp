#include "videostudio/studies.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "videostudio/oracle.hpp"
#include "videostudio/rng.hpp"

namespace vs {

Tensor smooth_anchor(const Shape& chw, std::uint64_t seed, double std) {
  if (chw.size() != 3) throw ShapeMismatch("smooth_anchor needs [C,H,W]");
  Rng rng(seed);
  Tensor t(chw);
  for (auto& v : t.values()) v = rng.normal();
  const std::size_t c = chw[0], h = chw[1], w = chw[2];
  for (int pass = 0; pass < 2; ++pass) {
    Tensor next(chw);
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
          auto at = [&](std::size_t yy, std::size_t xx) { return t[(ch * h + yy % h) * w + xx % w]; };
          next[(ch * h + y) * w + x] =
              (at(y, x) + at(y + 1, x) + at(y + h - 1, x) + at(y, x + 1) + at(y, x + w - 1)) / 5.0;
        }
    t = next;
  }
  const double n = static_cast<double>(t.numel());
  const double mean = sum(t) / n;
  double var = 0.0;
  for (double v : t.values()) var += (v - mean) * (v - mean);
  const double scale = var > 0.0 ? std / std::sqrt(var / n) : 0.0;
  for (auto& v : t.values()) v = (v - mean) * scale;
  return t;
}

MomentReport sampler_moments(double prior_mean, double prior_var, std::size_t samples, double eta,
                             int inference_steps, std::uint64_t seed) {
  const NoiseSchedule schedule = make_schedule();
  const GaussianPrior prior = isotropic_prior(Tensor({1}, prior_mean), prior_var);
  auto fn = [&](const Tensor& x, int t) { return analytic_gaussian_epsilon(x, t, prior, schedule); };
  const GuidedEps model{fn, fn};
  std::vector<double> xs(samples);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(samples); ++i) {
    SamplerConfig cfg = SamplerConfig::image_defaults();
    cfg.inference_steps = inference_steps;
    cfg.eta = eta;
    cfg.guidance_scale = 1.0;
    cfg.seed = derive_seed(seed, static_cast<std::uint64_t>(i));
    xs[static_cast<std::size_t>(i)] = sample_image(model, {1}, schedule, cfg)[0];
  }
  MomentReport r;
  r.samples = samples;
  for (double x : xs) r.mean += x;
  r.mean /= static_cast<double>(samples);
  for (double x : xs) r.variance += (x - r.mean) * (x - r.mean);
  r.variance /= static_cast<double>(samples);
  return r;
}

DisplacementReport displacement_study(const DisplacementOptions& o) {
  const NoiseSchedule schedule = make_schedule();
  const auto [ux, uy] = translation_unit(o.move.direction);
  const double v = o.table.translation[static_cast<int>(o.move.speed)];
  const FlowField field = synthesize_flow(o.move, o.frames, o.height, o.width, o.table);
  DisplacementReport r;
  r.t_m = o.t_m;
  std::vector<double> worst(o.trials), total(o.trials), residual(o.trials);
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(o.trials); ++i) {
    const auto k = static_cast<std::size_t>(i);
    const Tensor anchor = smooth_anchor({o.channels, o.height, o.width}, derive_seed(o.seed, k), 2.0);
    const CameraPathPrior prior = camera_path_prior(anchor, o.frames, o.prior_var, o.table);
    auto fn = [&](const Tensor& x, int t) { return mixture_epsilon(x, t, prior.mixture, schedule); };
    SamplerConfig cfg = o.sampler;
    cfg.guidance_scale = 1.0;
    cfg.t_m = o.t_m;
    cfg.seed = derive_seed(derive_seed(o.seed, "sample"), k);
    const Tensor out = sample_video({fn, fn}, {o.channels, o.frames, o.height, o.width}, field, schedule, cfg);
    const Tensor first = clip_frame(out, 0);
    const int lag = static_cast<int>(std::min(o.height, o.width) / 2);
    for (std::size_t f = 1; f <= o.checked_frames; ++f) {
      const auto est = estimate_translation(first, clip_frame(out, f), lag);
      const double fd = static_cast<double>(f);
      const double err = std::hypot(est.dx - ux * v * fd, est.dy - uy * v * fd);
      worst[k] = std::max(worst[k], err);
      total[k] += err;
    }
    double best = std::numeric_limits<double>::infinity();
    for (const auto& m : prior.mixture.means) {
      double s = 0.0;
      for (std::size_t j = 0; j < out.numel(); ++j) s += (out[j] - m[j]) * (out[j] - m[j]);
      best = std::min(best, std::sqrt(s / static_cast<double>(out.numel())));
    }
    residual[k] = best;
  }
  double sum_err = 0.0;
  for (std::size_t k = 0; k < o.trials; ++k) {
    r.max_error = std::max(r.max_error, worst[k]);
    r.residual = std::max(r.residual, residual[k]);
    sum_err += total[k];
  }
  r.mean_error = sum_err / static_cast<double>(o.trials * o.checked_frames);
  return r;
}

}  // namespace vs

namespace vs {

TrainingReport toy_training_run(const TrainingOptions& o) {
  if (o.window == 0 || o.steps < 2 * o.window) throw std::invalid_argument("training run needs steps >= 2 windows");
  ImgDenoiserConfig cfg;
  cfg.dims = {16, 8, 8, 8, 16, 2};
  cfg.seed = derive_seed(o.seed, "model");
  ImgDenoiser model(cfg);
  for (auto* p : model.parameters()) p->trainable = true;
  const NoiseSchedule schedule = make_schedule();
  Rng rng(derive_seed(o.seed, "data"));
  const Tensor mode = smooth_anchor({cfg.latent_channels, o.latent_size, o.latent_size}, derive_seed(o.seed, "mode"), 0.5);
  ContextBundle ctx{Tensor({4, 8}), Tensor({3, 8}), Tensor({5, 8})};
  for (Tensor* t : {&ctx.y_t, &ctx.y_f, &ctx.y_b})
    for (auto& v : t->values()) v = rng.normal();
  const std::vector<ImageExample> batch(o.batch, ImageExample{mode, ctx});
  TrainState state;
  state.config.hyper.lr = o.lr;
  TrainingReport r;
  for (std::size_t step = 0; step < o.steps; ++step) r.losses.push_back(train_step(model, batch, schedule, rng, state));
  const auto avg = [&](std::size_t a) {
    double s = 0.0;
    for (std::size_t i = a; i < a + o.window; ++i) s += r.losses[i];
    return s / static_cast<double>(o.window);
  };
  r.initial = avg(0);
  r.final = avg(o.steps - o.window);
  r.reduction = 1.0 - r.final / r.initial;
  return r;
}

}  // namespace vs
