#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "test_support.hpp"
#include "videostudio/oracle.hpp"
#include "videostudio/sampler.hpp"

using namespace vs;

namespace {

const NoiseSchedule& schedule() {
  static const NoiseSchedule s = make_schedule();
  return s;
}

GuidedEps gaussian_model(const GaussianPrior& prior) {
  auto fn = [prior](const Tensor& x, int t) { return analytic_gaussian_epsilon(x, t, prior, schedule()); };
  return {fn, fn};
}

}  // namespace

TEST_CASE("schedule endpoints and cumulative products") {
  const auto& s = schedule();
  REQUIRE(s.T == 1000);
  CHECK(s.betas.front() == 0.00085);
  CHECK(s.betas.back() == 0.0120);
  long double prod = 1.0L;
  for (int t = 0; t < 1000; ++t) {
    const long double r = std::sqrt(0.00085L) + static_cast<long double>(t) / 999.0L * (std::sqrt(0.0120L) - std::sqrt(0.00085L));
    prod *= 1.0L - r * r;
    CHECK(std::abs(static_cast<double>(prod) - s.alpha_bar[static_cast<std::size_t>(t)]) < 1e-12);
  }
  // 40-digit reference values
  CHECK(std::abs(s.abar(999) - 0.0046600985130772404) < 1e-15);
  CHECK(std::abs(s.abar(500) - 0.27633268382297475) < 1e-14);
  CHECK(s.abar(0) == 1.0 - 0.00085);
  CHECK(s.abar(kCleanStep) == 1.0);
}

TEST_CASE("schedule is monotone and alpha^2 + sigma^2 = 1") {
  const auto& s = schedule();
  for (int t = 1; t < s.T; ++t) {
    CHECK(s.betas[t] > s.betas[t - 1]);
    CHECK(s.alpha_bar[t] < s.alpha_bar[t - 1]);
  }
  for (int t = 0; t < s.T; ++t) CHECK(std::abs(s.alpha(t) * s.alpha(t) + s.sigma(t) * s.sigma(t) - 1.0) < 1e-15);
}

TEST_CASE("degenerate and invalid schedules") {
  const auto one = make_schedule(1, 0.00085, 0.0120);
  REQUIRE(one.betas.size() == 1);
  CHECK(one.betas[0] == 0.00085);
  CHECK_THROWS_AS(make_schedule(0), BadRange);
  CHECK_THROWS_AS(make_schedule(1000, 0.02, 0.01), BadRange);
  CHECK_THROWS_AS(make_schedule(1000, 0.0, 0.01), BadRange);
  CHECK_THROWS_AS(make_schedule(1000, 0.001, 1.0), BadRange);
}

TEST_CASE("uniform respacing") {
  const auto ts = inference_timesteps(1000, 50);
  REQUIRE(ts.size() == 50);
  CHECK(ts.front() == 999);
  CHECK(ts.back() == 0);
  for (std::size_t i = 1; i < ts.size(); ++i) CHECK(ts[i] < ts[i - 1]);
  CHECK(inference_timesteps(1000, 1000).back() == 0);
  CHECK(inference_timesteps(1000, 1) == std::vector<int>{999});
  CHECK_THROWS_AS(inference_timesteps(1000, 1001), InvalidSamplerConfig);
}

TEST_CASE("classifier-free guidance arithmetic") {
  const Tensor c({3}, {1.5, 2.0, 0.0});
  const Tensor u({3}, {0.5, -1.0, 0.25});
  CHECK(cfg_epsilon(c, u, 1.0) == c);
  CHECK(cfg_epsilon(c, u, 0.0) == u);
  const Tensor g = cfg_epsilon(c, u, 12.0);
  CHECK(g[0] == doctest::Approx(12.5).epsilon(1e-15));
  CHECK(g[1] == doctest::Approx(35.0).epsilon(1e-15));
  CHECK(g[2] == doctest::Approx(-2.75).epsilon(1e-15));
  CHECK_THROWS_AS(cfg_epsilon(c, Tensor({2}), 2.0), ShapeMismatch);
}

TEST_CASE("ddim step with zero epsilon rescales") {
  Rng rng(0);
  Rng rng2(0);
  const Tensor x({4}, {1.0, -2.0, 0.5, 3.0});
  const Tensor out = ddim_step(x, Tensor({4}), 700, 650, schedule(), 0.0, rng);
  const double k = schedule().alpha(650) / schedule().alpha(700);
  for (std::size_t i = 0; i < 4; ++i) CHECK(std::abs(out[i] - k * x[i]) < 1e-14);
  CHECK(ddim_step(x, Tensor({4}), 700, 650, schedule(), 0.0, rng) == out);
  CHECK(rng.next_u64() == rng2.next_u64());
}

TEST_CASE("ddim scalar update matches closed-form evaluation") {
  Rng rng(3);
  const Tensor x({1}, {0.7}), e({1}, {-0.3});
  CHECK(std::abs(ddim_step(x, e, 500, 480, schedule(), 0.0, rng)[0] - 0.75104567558481236) < 1e-14);

  Rng draw(11), again(11);
  const double z = again.normal();
  const double got = ddim_step(x, e, 500, 480, schedule(), 0.5, draw)[0];
  CHECK(std::abs(got - (0.75497226514561165 + 0.14721511347813368 * z)) < 1e-14);
}

TEST_CASE("ddim final step returns the x0 estimate") {
  Rng rng(1);
  const Tensor x({2}, {0.3, -0.8}), e({2}, {0.1, 0.2});
  const Tensor out = ddim_step(x, e, 10, kCleanStep, schedule(), 1.0, rng);
  const Tensor x0 = predict_x0(x, e, 10, schedule());
  CHECK(max_abs_diff(out, x0) < 1e-15);
}

TEST_CASE("ddim rejects bad timestep order") {
  Rng rng(0);
  const Tensor x({1});
  CHECK_THROWS_AS(ddim_step(x, x, 10, 10, schedule(), 0.0, rng), BadTimestepOrder);
  CHECK_THROWS_AS(ddim_step(x, x, 10, 20, schedule(), 0.0, rng), BadTimestepOrder);
  CHECK_THROWS_AS(ddim_step(x, x, 1000, 5, schedule(), 0.0, rng), BadTimestepOrder);
  CHECK_THROWS_AS(ddim_step(x, x, 5, -2, schedule(), 0.0, rng), BadTimestepOrder);
}

TEST_CASE("analytic gaussian oracle") {
  const int t = 300;
  const Tensor mu({3}, {1.0, 0.0, -0.5});
  GaussianPrior point = isotropic_prior(mu, 0.0);
  Rng rng(8);
  const Tensor xt = test::randn({3}, rng);
  CHECK(analytic_gaussian_x0(xt, t, point, schedule()) == mu);

  GaussianPrior prior{mu, Tensor({3}, {0.25, 1.0, 4.0})};
  Tensor at_mean = mu;
  at_mean *= schedule().alpha(t);
  CHECK(max_abs(analytic_gaussian_epsilon(at_mean, t, prior, schedule())) < 1e-15);

  // 40-digit reference values
  const Tensor eps = analytic_gaussian_epsilon(Tensor({3}, {0.5, -1.25, 2.0}), t, prior, schedule());
  CHECK(std::abs(eps[0] - (-0.30833489160447623)) < 1e-14);
  CHECK(std::abs(eps[1] - (-0.79990130367790158)) < 1e-14);
  CHECK(std::abs(eps[2] - 0.55050009519415826) < 1e-14);

  CHECK_THROWS_AS(analytic_gaussian_epsilon(xt, kCleanStep, prior, schedule()), DivisionAtTZero);
}

TEST_CASE("decomposition identity holds everywhere") {
  Rng rng(12);
  for (int t : {0, 1, 250, 500, 999}) {
    const Tensor x = test::randn({50}, rng), e = test::randn({50}, rng);
    Tensor back = predict_x0(x, e, t, schedule());
    back *= schedule().alpha(t);
    Tensor se = e;
    se *= schedule().sigma(t);
    back += se;
    CHECK(max_abs_diff(back, x) < 1e-12);
  }
}

TEST_CASE("static intervention returns its input") {
  Rng rng(2);
  const Tensor x = test::randn({4, 6, 8, 8}, rng), e = test::randn({4, 6, 8, 8}, rng);
  const auto field = synthesize_flow({CameraDirection::Static, CameraSpeed::Medium}, 6, 8, 8);
  for (int t : {999, 928, 500, 20}) CHECK(max_abs_diff(apply_camera_intervention(x, e, t, schedule(), field), x) < 1e-12);
}

TEST_CASE("intervention on a delta x0 leaves half-mass peaks") {
  const int t = 928;
  const std::size_t frames = 5, h = 6, w = 12, col = 8;
  Tensor x0({1, frames, h, w});
  for (std::size_t f = 0; f < frames; ++f) x0[(f * h + 3) * w + col] = 1.0;
  Rng rng(6);
  const Tensor e = test::randn(x0.shape(), rng);
  // build x from the decomposition, then recover x0' from the result
  Tensor x = x0;
  x *= schedule().alpha(t);
  Tensor se = e;
  se *= schedule().sigma(t);
  x += se;
  const auto field = synthesize_flow({CameraDirection::Right, CameraSpeed::Medium}, frames, h, w);
  const Tensor bar = predict_x0(apply_camera_intervention(x, e, t, schedule(), field), e, t, schedule());
  for (std::size_t f = 0; f < frames; ++f) {
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t xx = 0; xx < w; ++xx) {
        double want = 0.0;
        if (y == 3 && xx == col) want += 0.5;
        if (y == 3 && xx == col - f) want += 0.5;
        CHECK(std::abs(bar[(f * h + y) * w + xx] - want) < 1e-12);
      }
    }
  }
}

TEST_CASE("intervention rejects NaN fields and shape mismatch") {
  const Tensor x({1, 3, 4, 4});
  auto field = synthesize_flow({CameraDirection::Left, CameraSpeed::Slow}, 3, 4, 4);
  field.disp[10] = std::nan("");
  CHECK_THROWS(apply_camera_intervention(x, x, 500, schedule(), field));
  CHECK_THROWS_AS(apply_camera_intervention(x, Tensor({1, 3, 4, 5}), 500, schedule(), field), ShapeMismatch);
}

TEST_CASE("sampler config validation") {
  auto img = SamplerConfig::image_defaults();
  CHECK(img.inference_steps == 50);
  CHECK(img.eta == 0.0);
  auto vid = SamplerConfig::video_defaults();
  CHECK(vid.inference_steps == 70);
  CHECK(vid.eta == 1.0);
  CHECK(vid.guidance_scale == 12.0);
  CHECK(vid.t_m == 5);
  vid.t_m = 70;
  CHECK_THROWS_AS(vid.validate(schedule(), true), InvalidSamplerConfig);
  CHECK_NOTHROW(vid.validate(schedule(), false));
  img.eta = 1.5;
  CHECK_THROWS_AS(img.validate(schedule()), InvalidSamplerConfig);
  img.eta = 0.0;
  img.inference_steps = 0;
  CHECK_THROWS_AS(img.validate(schedule()), InvalidSamplerConfig);
}

TEST_CASE("point-mass prior is recovered by deterministic DDIM") {
  Rng rng(30);
  const Tensor mu = test::randn({16}, rng, 2.0);
  const auto model = gaussian_model(isotropic_prior(mu, 0.0));
  auto cfg = SamplerConfig::image_defaults();
  cfg.guidance_scale = 1.0;
  for (std::uint64_t seed : {0, 1, 2}) {
    cfg.seed = seed;
    CHECK(max_abs_diff(sample_image(model, {16}, schedule(), cfg), mu) < 1e-6);
  }
  // near-point mass
  const auto narrow = gaussian_model(isotropic_prior(mu, 1e-12));
  CHECK(max_abs_diff(sample_image(narrow, {16}, schedule(), cfg), mu) < 1e-6);
}

TEST_CASE("deterministic sampling is reproducible") {
  const auto model = gaussian_model(isotropic_prior(Tensor({4, 4, 4}, 0.5), 1.0));
  auto cfg = SamplerConfig::image_defaults();
  cfg.seed = 42;
  const Tensor a = sample_image(model, {4, 4, 4}, schedule(), cfg);
  CHECK(sample_image(model, {4, 4, 4}, schedule(), cfg) == a);
  cfg.seed = 43;
  CHECK_FALSE(sample_image(model, {4, 4, 4}, schedule(), cfg) == a);
  auto vcfg = SamplerConfig::video_defaults();
  vcfg.seed = 5;
  const auto vmodel = gaussian_model(isotropic_prior(Tensor({2, 3, 4, 4}), 1.0));
  CHECK(sample_video(vmodel, {2, 3, 4, 4}, std::nullopt, schedule(), vcfg) ==
        sample_video(vmodel, {2, 3, 4, 4}, std::nullopt, schedule(), vcfg));
}

TEST_CASE("guidance is applied before the model sees the next step") {
  // cond and uncond differ only by a constant; guided eps is uncond + s*(cond-uncond)
  int cond_calls = 0, uncond_calls = 0;
  GuidedEps m{[&](const Tensor& x, int) {
                ++cond_calls;
                return Tensor(x.shape(), 0.1);
              },
              [&](const Tensor& x, int) {
                ++uncond_calls;
                return Tensor(x.shape());
              }};
  auto cfg = SamplerConfig::image_defaults();
  cfg.inference_steps = 10;
  cfg.guidance_scale = 3.0;
  sample_image(m, {2}, schedule(), cfg);
  CHECK(cond_calls == 10);
  CHECK(uncond_calls == 10);
  cfg.guidance_scale = 1.0;
  sample_image(m, {2}, schedule(), cfg);
  CHECK(uncond_calls == 10);
}

TEST_CASE("static camera matches no intervention") {
  Rng rng(14);
  const Tensor anchor = test::smooth_field({2, 8, 8}, rng, 2.0);
  const auto prior = camera_path_prior(anchor, 4, 1e-3);
  auto fn = [&](const Tensor& x, int t) { return mixture_epsilon(x, t, prior.mixture, schedule()); };
  GuidedEps model{fn, fn};
  auto cfg = SamplerConfig::video_defaults();
  cfg.guidance_scale = 1.0;
  cfg.seed = 77;
  SampleTrace trace;
  const Tensor plain = sample_video(model, {2, 4, 8, 8}, std::nullopt, schedule(), cfg);
  const Tensor still = sample_video(model, {2, 4, 8, 8},
                                    synthesize_flow({CameraDirection::Static, CameraSpeed::Fast}, 4, 8, 8), schedule(),
                                    cfg, &trace);
  CHECK(trace.intervention_index == 5);
  CHECK(max_abs_diff(trace.x_before_intervention, trace.x_after_intervention) < 1e-12);
  CHECK(max_abs_diff(plain, still) < 1e-9);
}

TEST_CASE("right/medium camera produces an f px path under the anchored oracle") {
  Rng rng(0);
  const std::size_t frames = 8;
  const Tensor anchor = test::smooth_field({4, 16, 16}, rng, 2.0);
  const auto prior = camera_path_prior(anchor, frames, 1e-3);
  auto fn = [&](const Tensor& x, int t) { return mixture_epsilon(x, t, prior.mixture, schedule()); };
  GuidedEps model{fn, fn};
  auto cfg = SamplerConfig::video_defaults();
  cfg.guidance_scale = 1.0;
  cfg.seed = 3;
  const auto field = synthesize_flow({CameraDirection::Right, CameraSpeed::Medium}, frames, 16, 16);
  const Tensor out = sample_video(model, {4, frames, 16, 16}, field, schedule(), cfg);
  const Tensor first = clip_frame(out, 0);
  for (std::size_t f = 1; f <= 6; ++f) {
    const auto est = estimate_translation(first, clip_frame(out, f), 8);
    CHECK(est.dx == static_cast<int>(f));
    CHECK(est.dy == 0);
  }
}
