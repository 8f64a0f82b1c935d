#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <fstream>

#include "test_support.hpp"
#include "videostudio/kernels.hpp"
#include "videostudio/oracle.hpp"
#include "videostudio/pipeline.hpp"
#include "videostudio/studies.hpp"
#include "videostudio/tensor_io.hpp"

using namespace vs;

namespace {

const std::string kPrompt = "a young man bakes bread and rides his bicycle";

PipelineConfig small_config(std::uint64_t seed = 7) {
  PipelineConfig c;
  c.seed = seed;
  c.mock_llm = default_mock_llm();
  c.latent_height = 8;
  c.latent_width = 8;
  c.reference_height = 32;
  c.reference_width = 32;
  c.frames = 6;
  c.image_sampler.inference_steps = 20;
  c.video_sampler.inference_steps = 20;
  return c;
}

PipelineResult run(const PipelineConfig& c) {
  auto backends = make_backends(c);
  return run_pipeline(kPrompt, c, backends);
}

std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("vs_pipeline_" + name);
  std::filesystem::remove_all(p);
  return p;
}

RgbImage flat(std::size_t n, double r, double g, double b) {
  RgbImage img(n, n);
  for (std::size_t i = 0; i < n * n; ++i) {
    img.data[i * 3] = r;
    img.data[i * 3 + 1] = g;
    img.data[i * 3 + 2] = b;
  }
  return img;
}

}  // namespace

TEST_CASE("pipeline output structure") {
  const auto c = small_config();
  const auto r = run(c);
  const auto& v = r.video;
  REQUIRE(v.script.scenes.size() == 3);
  REQUIRE(v.clips.size() == 3);
  CHECK(v.references.size() == 4);
  CHECK(v.descriptions.at("red bicycle").find("red") != std::string::npos);
  for (const auto& clip : v.clips) {
    CHECK(clip.latent.shape() == Shape{4, c.frames, c.latent_height, c.latent_width});
    CHECK(clip.frames.size() == c.frames);
    CHECK(clip.frames[0].height == 32);
    CHECK(clip.image_latent.shape() == Shape{4, 8, 8});
    CHECK(clip.action_indicator.numel() > 0);
  }
  CHECK(r.metrics.frame_consistency.size() == 3);
  REQUIRE(r.metrics.scene_consistency.has_value());
  CHECK(r.metrics.scene_consistency->per_entity.count("young man") == 1);
  CHECK(r.metrics.scene_consistency->per_entity.count("bakery kitchen") == 1);
  for (const auto& s : r.metrics.fg_sim) CHECK(s.has_value());
}

TEST_CASE("static scene stays fixed and frame 0 follows the scene image") {
  const auto r = run(small_config());
  const auto& clip = r.video.clips[0];
  REQUIRE(clip.spec.camera.direction == CameraDirection::Static);
  // anchored oracle: every camera path starts at the scene image latent
  const Tensor f0 = clip_frame(clip.latent, 0);
  CHECK(max_abs_diff(f0, clip.image_latent) < 0.5);
}

TEST_CASE("pipeline is deterministic and scenes render independently") {
  const auto c = small_config(11);
  const auto a = run(c);
  const auto b = run(c);
  for (std::size_t i = 0; i < a.video.clips.size(); ++i)
    CHECK(max_abs_diff(a.video.clips[i].latent, b.video.clips[i].latent) == 0.0);

  // rendering one scene alone reproduces the batch result
  const NoiseSchedule schedule = make_schedule(c.schedule_steps, c.beta_1, c.beta_T);
  const ActionVocabulary vocab = synthetic_vocabulary(default_action_names(), c.feature_channels, c.vocabulary_seed);
  const SceneContext ctx{c, schedule, vocab, a.video.references, nullptr, nullptr};
  for (int i = 2; i >= 0; --i) {
    const SceneClip alone = render_scene(a.video.script.scenes[static_cast<std::size_t>(i)], ctx);
    CHECK(max_abs_diff(alone.latent, a.video.clips[static_cast<std::size_t>(i)].latent) == 0.0);
  }

  auto other = c;
  other.seed = 12;
  const auto d = run(other);
  CHECK(max_abs_diff(a.video.clips[0].latent, d.video.clips[0].latent) > 0.0);
}

TEST_CASE("frame consistency metric examples") {
  const auto embed = toy_embedder();
  const RgbImage a = flat(16, 0.9, 0.1, 0.1);
  CHECK(frame_consistency({a, a, a}, embed) == doctest::Approx(100.0).epsilon(1e-12));
  CHECK_THROWS_AS(frame_consistency({a}, embed), TooFewFrames);

  // embeddings chosen orthogonal by construction
  ImageEmbedder axis = [](const RgbImage& img) {
    Tensor t({2});
    t[img.at(0, 0, 0) > 0.5 ? 0 : 1] = 1.0;
    return t;
  };
  CHECK(frame_consistency({a, flat(16, 0.1, 0.1, 0.1)}, axis) == doctest::Approx(0.0));

  // direct oracle: 100 x mean consecutive cosine
  const RgbImage b = flat(16, 0.2, 0.8, 0.3), c = flat(16, 0.4, 0.4, 0.9);
  const Tensor ea = embed(a), eb = embed(b), ec = embed(c);
  auto cos = [](const Tensor& x, const Tensor& y) { return dot(x, y) / std::sqrt(dot(x, x) * dot(y, y)); };
  CHECK(frame_consistency({a, b, c}, embed) == doctest::Approx(50.0 * (cos(ea, eb) + cos(eb, ec))).epsilon(1e-12));
}

TEST_CASE("scene consistency scoring and errors") {
  const auto embed = toy_embedder();
  const RgbImage a = flat(16, 0.9, 0.2, 0.2);
  EntityDetector same = [&](const std::string&, int) -> std::optional<RgbImage> { return a; };
  const auto sc = scene_consistency({{"x", {1, 2, 3}}, {"y", {2}}}, same, embed);
  CHECK(sc.per_entity.size() == 1);
  CHECK(sc.mean == doctest::Approx(100.0));
  CHECK_THROWS_AS(scene_consistency({{"x", {1}}}, same, embed), NoCommonEntities);

  EntityDetector partial = [&](const std::string& e, int) -> std::optional<RgbImage> {
    if (e == "lost") return std::nullopt;
    return a;
  };
  const auto sp = scene_consistency({{"x", {1, 2}}, {"lost", {1, 2}}}, partial, embed);
  CHECK(sp.missed == std::vector<std::string>{"lost"});
  CHECK(sp.per_entity.size() == 1);
  CHECK_THROWS_AS(scene_consistency({{"lost", {1, 2}}}, partial, embed), NoCommonEntities);
}

TEST_CASE("latent codec round-trips on the decoder range") {
  Rng rng(5);
  const Tensor z = test::randn({4, 6, 5}, rng, 0.3);
  const RgbImage img = LatentCodec::decode(z);
  CHECK(img.height == 24);
  CHECK(img.width == 20);
  // the decoder has a 1-d null space; encode(decode(z)) is its projection
  const Tensor back = LatentCodec::encode(img, 6, 5);
  CHECK(max_abs_diff(LatentCodec::decode(back).to_tensor(), img.to_tensor()) < 1e-12);
  CHECK_THROWS_AS(LatentCodec::decode(Tensor({3, 4, 4})), ShapeMismatch);
}

TEST_CASE("export round-trip and checksum verification") {
  const auto c = small_config(3);
  const auto r = run(c);
  const auto dir = temp_dir("export");
  const auto manifest = export_video(r.video, dir, &r.metrics);
  CHECK(std::filesystem::exists(manifest));
  const auto loaded = load_export(dir);
  REQUIRE(loaded.latents.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) CHECK(max_abs_diff(loaded.latents[i], r.video.clips[i].latent) < 1e-6);
  CHECK(loaded.manifest.at("scenes").size() == 3);

  const std::string sum = tree_checksum(dir);
  const auto dir2 = temp_dir("export2");
  export_video(run(c).video, dir2, &r.metrics);
  CHECK(tree_checksum(dir2) == sum);

  {
    std::ofstream out(dir / "scene_1" / "frame_0.ppm", std::ios::binary | std::ios::app);
    out << 'x';
  }
  CHECK_THROWS_AS(load_export(dir), ChecksumMismatch);
  CHECK(tree_checksum(dir) != sum);
  std::filesystem::remove_all(dir);
  std::filesystem::remove_all(dir2);
}

TEST_CASE("config parsing rejects unknown keys and bad values") {
  using nlohmann::json;
  const auto c = parse_pipeline_config(json{{"seed", 9}, {"latent", {{"frames", 4}}}, {"denoiser", {{"kind", "network"}}}});
  CHECK(c.seed == 9);
  CHECK(c.frames == 4);
  CHECK(c.denoiser == DenoiserKind::Network);
  CHECK_THROWS_AS(parse_pipeline_config(json{{"sede", 9}}), ConfigError);
  CHECK_THROWS_AS(parse_pipeline_config(json{{"latent", {{"frame", 4}}}}), ConfigError);
  CHECK_THROWS_AS(parse_pipeline_config(json{{"seed", "nine"}}), ConfigError);
  CHECK_THROWS_AS(parse_pipeline_config(json{{"denoiser", {{"kind", "magic"}}}}), ConfigError);

  // to_json round-trips
  auto d = small_config();
  d.video_sampler.t_m = 3;
  const auto e = parse_pipeline_config(to_json(d));
  CHECK(e.video_sampler.t_m == 3);
  CHECK(e.latent_height == 8);
  CHECK(*e.mock_llm == *d.mock_llm);

  auto bad = small_config();
  bad.video_sampler.t_m = 50;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = small_config();
  bad.feature_channels = 8;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = small_config();
  bad.mock_llm.reset();
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("stage failures carry stage and kind") {
  auto c = small_config();
  nlohmann::json fixture{{"model", "mock"}, {"default", "no script here"}};
  PipelineBackends b = make_backends(c);
  b.chat = std::make_unique<MockChatBackend>(fixture);
  try {
    run_pipeline(kPrompt, c, b);
    FAIL("expected failure");
  } catch (const PipelineError& e) {
    CHECK(e.stage == Stage::Script);
    CHECK(e.kind == FailureKind::Validation);
    CHECK(!e.script.has_value());
  }

  // stage 2 failure keeps the script
  auto fx = MockChatBackend::load_fixture(default_mock_llm());
  fx["rules"].insert(fx["rules"].begin(), nlohmann::json{{"contains", "describe \"green park\""}, {"responses", "  "}});
  b.chat = std::make_unique<MockChatBackend>(fx);
  try {
    run_pipeline(kPrompt, c, b);
    FAIL("expected failure");
  } catch (const PipelineError& e) {
    CHECK(e.stage == Stage::Descriptions);
    CHECK(e.kind == FailureKind::Backend);
    REQUIRE(e.script.has_value());
    CHECK(e.script->scenes.size() == 3);
  }
}

TEST_CASE("references raise fg similarity and scene consistency") {
  auto with = small_config(21);
  auto without = with;
  without.use_references = false;
  const auto a = run(with);
  const auto b = run(without);
  double fa = 0.0, fb = 0.0;
  for (std::size_t i = 0; i < 3; ++i) {
    fa += *a.metrics.fg_sim[i];
    fb += *b.metrics.fg_sim[i];
  }
  CHECK(fa > fb);
  REQUIRE(a.metrics.scene_consistency.has_value());
  REQUIRE(b.metrics.scene_consistency.has_value());
  CHECK(a.metrics.scene_consistency->mean > b.metrics.scene_consistency->mean);
}

TEST_CASE("network denoiser mode runs end to end") {
  auto c = small_config(4);
  c.denoiser = DenoiserKind::Network;
  c.frames = 3;
  c.latent_height = 4;
  c.latent_width = 4;
  c.feature_channels = 16;
  c.model_blocks = 1;
  c.image_sampler.inference_steps = 3;
  c.video_sampler.inference_steps = 3;
  c.video_sampler.t_m = 1;
  const auto r = run(c);
  REQUIRE(r.video.clips.size() == 3);
  for (const auto& clip : r.video.clips) {
    CHECK(clip.latent.shape() == Shape{4, 3, 4, 4});
    for (double v : clip.latent.values()) CHECK(std::isfinite(v));
  }
}

TEST_CASE("studies: smooth anchor, displacement and training guards") {
  const Tensor a = smooth_anchor({2, 8, 8}, 3, 2.0);
  double mean = 0.0, var = 0.0;
  for (double v : a.values()) mean += v;
  mean /= static_cast<double>(a.numel());
  for (double v : a.values()) var += (v - mean) * (v - mean);
  CHECK(std::abs(mean) < 1e-12);
  CHECK(std::sqrt(var / static_cast<double>(a.numel())) == doctest::Approx(2.0));
  CHECK(smooth_anchor({2, 8, 8}, 3, 2.0) == a);

  DisplacementOptions o;
  o.trials = 1;
  o.sampler.inference_steps = 30;
  const auto r = displacement_study(o);
  CHECK(r.max_error <= 0.5);
  CHECK(r.residual < 3.0 * std::sqrt(o.prior_var));

  TrainingOptions t;
  t.steps = 10;
  CHECK_THROWS_AS(toy_training_run(t), std::invalid_argument);
}
