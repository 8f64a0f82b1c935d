#include "videostudio/pipeline.hpp"

#include <algorithm>
#include <cstdlib>
#include <exception>
#include <set>

#include "videostudio/features.hpp"
#include "videostudio/oracle.hpp"
#include "videostudio/rng.hpp"
#include "videostudio/tensor_io.hpp"

namespace vs {

namespace {

using nlohmann::json;

// Object reader that rejects keys it was not asked about.
class Section {
 public:
  Section(const json& obj, std::string path) : obj_(obj), path_(std::move(path)) {
    if (!obj_.is_object()) throw ConfigError(path_ + " must be an object");
  }

  template <typename T>
  void read(const char* key, T& out) {
    seen_.insert(key);
    if (!obj_.contains(key)) return;
    try {
      out = obj_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError(path_ + "." + key + " has the wrong type");
    }
  }

  void read_path(const char* key, std::filesystem::path& out) {
    std::string s = out.string();
    read(key, s);
    out = s;
  }

  void read_optional_path(const char* key, std::optional<std::filesystem::path>& out) {
    seen_.insert(key);
    if (!obj_.contains(key) || obj_.at(key).is_null()) return;
    if (!obj_.at(key).is_string()) throw ConfigError(path_ + "." + key + " must be a path string or null");
    out = obj_.at(key).get<std::string>();
  }

  std::optional<Section> child(const char* key) {
    seen_.insert(key);
    if (!obj_.contains(key)) return std::nullopt;
    return Section(obj_.at(key), path_ + "." + key);
  }

  void finish() const {
    for (const auto& [k, _] : obj_.items())
      if (!seen_.count(k)) throw ConfigError("unknown config key " + path_ + "." + k);
  }

 private:
  const json& obj_;
  std::string path_;
  std::set<std::string> seen_;
};

void read_sampler(Section s, SamplerConfig& cfg, bool camera) {
  s.read("inference_steps", cfg.inference_steps);
  s.read("eta", cfg.eta);
  s.read("guidance_scale", cfg.guidance_scale);
  if (camera) s.read("t_m", cfg.t_m);
  s.finish();
}

json sampler_json(const SamplerConfig& cfg, bool camera) {
  json j{{"inference_steps", cfg.inference_steps}, {"eta", cfg.eta}, {"guidance_scale", cfg.guidance_scale}};
  if (camera) j["t_m"] = cfg.t_m;
  return j;
}

json optional_path_json(const std::optional<std::filesystem::path>& p) {
  return p ? json(p->string()) : json(nullptr);
}

void resolve(std::filesystem::path& p, const std::filesystem::path& base) {
  if (!p.empty() && p.is_relative()) p = base / p;
}

void resolve(std::optional<std::filesystem::path>& p, const std::filesystem::path& base) {
  if (p) resolve(*p, base);
}

// rgb = 0.5 + kDecode z
constexpr double kDecode[3][4] = {{0.25, 0.25, 0.25, 0.25}, {0.25, -0.25, 0.25, -0.25}, {0.25, 0.25, -0.25, -0.25}};

std::string slug(const std::string& name) {
  std::string out;
  for (char c : name) out.push_back(std::isalnum(static_cast<unsigned char>(c)) ? c : '_');
  return out;
}

FailureKind classify(const std::exception_ptr& e) {
  try {
    std::rethrow_exception(e);
  } catch (const BackendError&) {
    return FailureKind::Backend;
  } catch (const EmptyDescription&) {
    return FailureKind::Backend;
  } catch (const ScriptGenerationExhausted&) {
    return FailureKind::Validation;
  } catch (const ScriptError&) {
    return FailureKind::Validation;
  } catch (const std::invalid_argument&) {
    return FailureKind::Validation;
  } catch (...) {
    return FailureKind::Internal;
  }
}

template <typename F>
auto staged(Stage stage, const std::optional<VideoScript>& script, F&& body) -> decltype(body()) {
  try {
    return body();
  } catch (const PipelineError&) {
    throw;
  } catch (const std::exception& e) {
    throw PipelineError(stage, classify(std::current_exception()), e.what(), script);
  }
}

ActionVocabulary pipeline_vocabulary(const PipelineConfig& config) {
  if (config.vocabulary) return load_vocabulary(*config.vocabulary);
  return synthetic_vocabulary(default_action_names(), config.feature_channels, config.vocabulary_seed);
}

ImgDenoiserConfig image_model_config(const PipelineConfig& c) {
  ImgDenoiserConfig m;
  m.latent_channels = c.latent_channels;
  m.dims = {c.feature_channels, c.feature_channels, c.feature_channels, c.feature_channels, c.feature_channels,
            c.model_heads};
  m.blocks = c.model_blocks;
  m.seed = c.model_seed;
  return m;
}

VidDenoiserConfig video_model_config(const PipelineConfig& c, std::size_t vocab) {
  VidDenoiserConfig m;
  m.latent_channels = c.latent_channels;
  m.dims = {c.feature_channels, c.feature_channels, vocab, c.feature_channels, c.model_heads};
  m.blocks = c.model_blocks;
  m.seed = c.model_seed;
  return m;
}

const EntityReference* find_ref(const SceneContext& ctx, const std::string& raw_name) {
  const auto it = ctx.references.find(normalize_entity_name(raw_name));
  return it == ctx.references.end() ? nullptr : &it->second;
}

}  // namespace

void PipelineConfig::validate() const {
  if (latent_channels != 4) throw ConfigError("latent.channels must be 4 (fixed latent codec)");
  if (frames < 2) throw ConfigError("latent.frames must be at least 2");
  if (latent_height < 2 || latent_width < 2) throw ConfigError("latent height and width must be at least 2");
  if (reference_width < 8 || reference_height < 8) throw ConfigError("reference images must be at least 8x8");
  NoiseSchedule schedule;
  try {
    schedule = make_schedule(schedule_steps, beta_1, beta_T);
    image_sampler.validate(schedule, false);
    video_sampler.validate(schedule, true);
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
  if (retry.max_attempts < 1) throw ConfigError("retry.max_attempts must be >= 1");
  if (t2i_backend != "toy" && t2i_backend != "http") throw ConfigError("t2i.backend must be toy or http");
  if (t2i_backend == "http" && t2i_url.empty()) throw ConfigError("t2i.url is required for the http backend");
  if (!mock_llm && llm_url.empty()) throw ConfigError("configure llm.mock_fixture or llm.url");
  for (int i = 0; i < 3; ++i)
    if (!(speed_table.translation[i] > 0.0 && speed_table.zoom[i] > 0.0))
      throw ConfigError("speed_table entries must be positive");
  if (!(image_prior_var >= 0.0 && video_prior_var > 0.0)) throw ConfigError("prior variances must be positive");
  if (!vocabulary && default_action_names().size() > feature_channels)
    throw ConfigError("features.channels must hold the default action vocabulary (" +
                      std::to_string(default_action_names().size()) + ")");
  if (feature_channels < 2 || model_heads < 1 || feature_channels % model_heads != 0)
    throw ConfigError("features.channels must be divisible by denoiser.heads");
  auto must_exist = [](const std::optional<std::filesystem::path>& p, const char* what) {
    if (p && !std::filesystem::exists(*p)) throw ConfigError(std::string(what) + " not found: " + p->string());
  };
  must_exist(mock_llm, "llm.mock_fixture");
  must_exist(vocabulary, "action.vocabulary");
  must_exist(image_weights, "denoiser.image_weights");
  must_exist(video_weights, "denoiser.video_weights");
  if (!script_examples.empty() && !std::filesystem::exists(script_examples))
    throw ConfigError("llm.script_examples not found: " + script_examples.string());
}

PipelineConfig parse_pipeline_config(const json& doc) {
  PipelineConfig c;
  Section root(doc, "config");
  root.read("seed", c.seed);
  root.read_path("output_dir", c.output_dir);
  if (auto s = root.child("latent")) {
    s->read("channels", c.latent_channels);
    s->read("frames", c.frames);
    s->read("height", c.latent_height);
    s->read("width", c.latent_width);
    s->finish();
  }
  if (auto s = root.child("references")) {
    s->read("enabled", c.use_references);
    s->read("width", c.reference_width);
    s->read("height", c.reference_height);
    s->read("smooth_masks", c.smooth_masks);
    s->finish();
  }
  if (auto s = root.child("schedule")) {
    s->read("steps", c.schedule_steps);
    s->read("beta_1", c.beta_1);
    s->read("beta_T", c.beta_T);
    s->finish();
  }
  if (auto s = root.child("image_sampler")) read_sampler(*s, c.image_sampler, false);
  if (auto s = root.child("video_sampler")) read_sampler(*s, c.video_sampler, true);
  if (auto s = root.child("retry")) {
    s->read("max_attempts", c.retry.max_attempts);
    std::string mode = c.retry.on_exhaustion == RetryPolicy::OnExhaustion::Error ? "error" : "best_effort";
    s->read("on_exhaustion", mode);
    if (mode == "error")
      c.retry.on_exhaustion = RetryPolicy::OnExhaustion::Error;
    else if (mode == "best_effort")
      c.retry.on_exhaustion = RetryPolicy::OnExhaustion::BestEffortLast;
    else
      throw ConfigError("retry.on_exhaustion must be error or best_effort");
    s->finish();
  }
  if (auto s = root.child("limits")) {
    s->read("max_scenes", c.limits.max_scenes);
    s->read("max_foreground", c.limits.max_foreground);
    s->finish();
  }
  if (auto s = root.child("llm")) {
    s->read_path("script_examples", c.script_examples);
    s->read_optional_path("mock_fixture", c.mock_llm);
    s->read("url", c.llm_url);
    s->read("model", c.llm_model);
    s->read("api_key_env", c.llm_api_key_env);
    s->finish();
  }
  if (auto s = root.child("t2i")) {
    s->read("backend", c.t2i_backend);
    s->read("url", c.t2i_url);
    s->finish();
  }
  if (auto s = root.child("speed_table")) {
    std::vector<double> tr(c.speed_table.translation, c.speed_table.translation + 3);
    std::vector<double> zo(c.speed_table.zoom, c.speed_table.zoom + 3);
    s->read("translation", tr);
    s->read("zoom", zo);
    if (tr.size() != 3 || zo.size() != 3) throw ConfigError("speed_table lists need 3 entries (slow, medium, fast)");
    std::copy(tr.begin(), tr.end(), c.speed_table.translation);
    std::copy(zo.begin(), zo.end(), c.speed_table.zoom);
    s->finish();
  }
  if (auto s = root.child("action")) {
    s->read_optional_path("vocabulary", c.vocabulary);
    s->read("vocabulary_seed", c.vocabulary_seed);
    s->finish();
  }
  if (auto s = root.child("features")) {
    s->read("channels", c.feature_channels);
    s->finish();
  }
  if (auto s = root.child("denoiser")) {
    std::string kind = c.denoiser == DenoiserKind::Oracle ? "oracle" : "network";
    s->read("kind", kind);
    if (kind == "oracle")
      c.denoiser = DenoiserKind::Oracle;
    else if (kind == "network")
      c.denoiser = DenoiserKind::Network;
    else
      throw ConfigError("denoiser.kind must be oracle or network");
    s->read("image_prior_var", c.image_prior_var);
    s->read("video_prior_var", c.video_prior_var);
    s->read_optional_path("image_weights", c.image_weights);
    s->read_optional_path("video_weights", c.video_weights);
    s->read("blocks", c.model_blocks);
    s->read("heads", c.model_heads);
    s->read("seed", c.model_seed);
    s->finish();
  }
  if (auto s = root.child("metrics")) {
    s->read("embedder_seed", c.embedder_seed);
    s->finish();
  }
  root.finish();
  return c;
}

PipelineConfig load_pipeline_config(const std::filesystem::path& path) {
  json doc;
  try {
    doc = json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  } catch (const IoError& e) {
    throw ConfigError(e.what());
  }
  PipelineConfig c = parse_pipeline_config(doc);
  const auto base = path.parent_path();
  resolve(c.output_dir, base);
  resolve(c.script_examples, base);
  resolve(c.mock_llm, base);
  resolve(c.vocabulary, base);
  resolve(c.image_weights, base);
  resolve(c.video_weights, base);
  return c;
}

json to_json(const PipelineConfig& c) {
  return json{
      {"seed", c.seed},
      {"output_dir", c.output_dir.string()},
      {"latent", {{"channels", c.latent_channels}, {"frames", c.frames}, {"height", c.latent_height},
                  {"width", c.latent_width}}},
      {"references", {{"enabled", c.use_references}, {"width", c.reference_width}, {"height", c.reference_height},
                      {"smooth_masks", c.smooth_masks}}},
      {"schedule", {{"steps", c.schedule_steps}, {"beta_1", c.beta_1}, {"beta_T", c.beta_T}}},
      {"image_sampler", sampler_json(c.image_sampler, false)},
      {"video_sampler", sampler_json(c.video_sampler, true)},
      {"retry", {{"max_attempts", c.retry.max_attempts},
                 {"on_exhaustion", c.retry.on_exhaustion == RetryPolicy::OnExhaustion::Error ? "error" : "best_effort"}}},
      {"limits", {{"max_scenes", c.limits.max_scenes}, {"max_foreground", c.limits.max_foreground}}},
      {"llm", {{"script_examples", c.script_examples.string()}, {"mock_fixture", optional_path_json(c.mock_llm)},
               {"url", c.llm_url}, {"model", c.llm_model}, {"api_key_env", c.llm_api_key_env}}},
      {"t2i", {{"backend", c.t2i_backend}, {"url", c.t2i_url}}},
      {"speed_table", {{"translation", std::vector<double>(c.speed_table.translation, c.speed_table.translation + 3)},
                       {"zoom", std::vector<double>(c.speed_table.zoom, c.speed_table.zoom + 3)}}},
      {"action", {{"vocabulary", optional_path_json(c.vocabulary)}, {"vocabulary_seed", c.vocabulary_seed}}},
      {"features", {{"channels", c.feature_channels}}},
      {"denoiser", {{"kind", c.denoiser == DenoiserKind::Oracle ? "oracle" : "network"},
                    {"image_prior_var", c.image_prior_var},
                    {"video_prior_var", c.video_prior_var},
                    {"image_weights", optional_path_json(c.image_weights)},
                    {"video_weights", optional_path_json(c.video_weights)},
                    {"blocks", c.model_blocks},
                    {"heads", c.model_heads},
                    {"seed", c.model_seed}}},
      {"metrics", {{"embedder_seed", c.embedder_seed}}},
  };
}

std::filesystem::path default_script_examples() { return std::filesystem::path(VS_ASSET_DIR) / "script_examples_v1.json"; }
std::filesystem::path default_mock_llm() { return std::filesystem::path(VS_ASSET_DIR) / "mock_llm.json"; }

RgbImage LatentCodec::decode(const Tensor& latent) {
  if (latent.rank() != 3 || latent.dim(0) != 4) throw ShapeMismatch("decode needs [4,h,w], got " + shape_str(latent.shape()));
  const std::size_t h = latent.dim(1), w = latent.dim(2);
  RgbImage img(h * kFactor, w * kFactor);
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x) {
      const std::size_t p = (y / kFactor) * w + x / kFactor;
      for (std::size_t c = 0; c < 3; ++c) {
        double v = 0.5;
        for (std::size_t k = 0; k < 4; ++k) v += kDecode[c][k] * latent[k * h * w + p];
        img.at(y, x, c) = std::clamp(v, 0.0, 1.0);
      }
    }
  return img;
}

Tensor LatentCodec::encode(const RgbImage& img, std::size_t h, std::size_t w) {
  if (img.height < h || img.width < w) throw ShapeMismatch("encode: image smaller than the latent grid");
  std::vector<double> rgb(h * w * 3, 0.0), counts(h * w, 0.0);
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x) {
      const std::size_t p = (y * h / img.height) * w + x * w / img.width;
      for (std::size_t c = 0; c < 3; ++c) rgb[p * 3 + c] += img.at(y, x, c);
      counts[p] += 1.0;
    }
  // pseudo-inverse of kDecode is 4 * kDecode^T
  Tensor z({4, h, w});
  for (std::size_t p = 0; p < h * w; ++p)
    for (std::size_t k = 0; k < 4; ++k) {
      double v = 0.0;
      for (std::size_t c = 0; c < 3; ++c) v += 4.0 * kDecode[c][k] * (rgb[p * 3 + c] / counts[p] - 0.5);
      z[k * h * w + p] = v;
    }
  return z;
}

std::vector<RgbImage> LatentCodec::decode_clip(const Tensor& clip) {
  if (clip.rank() != 4) throw ShapeMismatch("decode_clip needs [4,F,h,w], got " + shape_str(clip.shape()));
  std::vector<RgbImage> out;
  for (std::size_t f = 0; f < clip.dim(1); ++f) out.push_back(decode(clip_frame(clip, f)));
  return out;
}

PipelineBackends make_backends(const PipelineConfig& config) {
  PipelineBackends b;
  if (config.mock_llm) {
    b.chat = std::make_unique<MockChatBackend>(MockChatBackend::load_fixture(*config.mock_llm));
  } else {
    const char* key = std::getenv(config.llm_api_key_env.c_str());
    b.chat = std::make_unique<HttpChatBackend>(config.llm_url, config.llm_model, key ? key : "");
  }
  if (config.t2i_backend == "http")
    b.t2i = std::make_unique<HttpTextToImage>(config.t2i_url);
  else
    b.t2i = std::make_unique<ToyTextToImage>();
  b.segmenter = std::make_unique<ThresholdSegmenter>(0.5, config.smooth_masks);
  return b;
}

std::string to_string(Stage stage) {
  switch (stage) {
    case Stage::Script: return "script";
    case Stage::Descriptions: return "descriptions";
    case Stage::References: return "references";
    case Stage::Scenes: return "scenes";
    case Stage::Metrics: return "metrics";
  }
  return "unknown";
}

std::uint64_t scene_seed(std::uint64_t global_seed, int scene_index) {
  return derive_seed(derive_seed(global_seed, "scene"), static_cast<std::uint64_t>(scene_index));
}

RgbImage scene_anchor_image(const SceneSpec& scene, const SceneContext& ctx) {
  const auto& cfg = ctx.config;
  const std::size_t H = cfg.latent_height * LatentCodec::kFactor, W = cfg.latent_width * LatentCodec::kFactor;
  if (!cfg.use_references) {
    ToyTextToImage t2i;
    return t2i.generate(scene.prompt, scene_seed(cfg.seed, scene.index), W, H).image;
  }
  const EntityReference* bg = find_ref(ctx, scene.background);
  RgbImage canvas = bg ? bg->image : RgbImage(cfg.reference_height, cfg.reference_width);
  for (const auto& name : scene.foreground) {
    const EntityReference* fg = find_ref(ctx, name);
    if (!fg) continue;
    for (std::size_t i = 0; i < fg->mask.data.size(); ++i) {
      const double m = fg->mask.data[i];
      for (std::size_t c = 0; c < 3; ++c)
        canvas.data[i * 3 + c] = canvas.data[i * 3 + c] * (1.0 - m) + fg->generated.data[i * 3 + c] * m;
    }
  }
  return canvas;
}

SceneClip render_scene(const SceneSpec& scene, const SceneContext& ctx) {
  const auto& cfg = ctx.config;
  const std::size_t h = cfg.latent_height, w = cfg.latent_width, C = cfg.latent_channels;
  SceneClip clip;
  clip.spec = scene;
  clip.seed = scene_seed(cfg.seed, scene.index);

  SamplerConfig image_cfg = cfg.image_sampler, video_cfg = cfg.video_sampler;
  image_cfg.seed = derive_seed(clip.seed, "image");
  video_cfg.seed = derive_seed(clip.seed, "video");

  clip.action_phrases = extract_action_phrases(scene.prompt, ngram_extractor(ctx.vocabulary));
  clip.action_indicator = build_indicator(clip.action_phrases, ctx.vocabulary, vocabulary_embedder(ctx.vocabulary));

  std::optional<FlowField> field;
  if (scene.camera.direction != CameraDirection::Static)
    field = synthesize_flow(scene.camera, cfg.frames, h, w, cfg.speed_table);

  if (cfg.denoiser == DenoiserKind::Oracle) {
    // exact posterior denoisers need no guidance
    image_cfg.guidance_scale = 1.0;
    video_cfg.guidance_scale = 1.0;
    const GaussianPrior prior = isotropic_prior(LatentCodec::encode(scene_anchor_image(scene, ctx), h, w),
                                                cfg.image_prior_var);
    GuidedEps img_model{[&](const Tensor& x, int t) { return analytic_gaussian_epsilon(x, t, prior, ctx.schedule); },
                        {}};
    clip.image_latent = sample_image(img_model, {C, h, w}, ctx.schedule, image_cfg);
    const CameraPathPrior paths = camera_path_prior(clip.image_latent, cfg.frames, cfg.video_prior_var, cfg.speed_table);
    GuidedEps vid_model{[&](const Tensor& x, int t) { return mixture_epsilon(x, t, paths.mixture, ctx.schedule); }, {}};
    clip.latent = sample_video(vid_model, {C, cfg.frames, h, w}, field, ctx.schedule, video_cfg);
  } else {
    if (!ctx.image_model || !ctx.video_model) throw std::logic_error("network denoiser requested without models");
    const std::size_t fc = cfg.feature_channels;
    ContextBundle bundle{text_features(scene.prompt, fc), Tensor({0, fc}), Tensor({0, fc})};
    if (cfg.use_references) {
      std::vector<Tensor> fg;
      for (const auto& name : scene.foreground)
        if (const auto* r = find_ref(ctx, name)) fg.push_back(image_features(r->image, fc));
      bundle.y_f = concat_foreground_features(fg, fc);
      if (const auto* r = find_ref(ctx, scene.background)) bundle.y_b = image_features(r->image, fc);
    }
    const ContextBundle null_ctx = ctx.image_model->null_context();
    const ImgDenoiser& im = *ctx.image_model;
    GuidedEps img_model{[&](const Tensor& x, int t) { return im.predict(x, t, bundle); },
                        [&](const Tensor& x, int t) { return im.predict(x, t, null_ctx); }};
    clip.image_latent = sample_image(img_model, {C, h, w}, ctx.schedule, image_cfg);

    const Tensor ref = clip.image_latent.reshaped({C, 1, h, w});
    const VidContext vctx{image_features(LatentCodec::decode(clip.image_latent), fc), clip.action_indicator};
    const VidContext vnull = ctx.video_model->null_context(vctx.y_s.dim(0));
    const VidDenoiser& vm = *ctx.video_model;
    GuidedEps vid_model{[&](const Tensor& x, int t) { return vm.predict(x, t, vctx, ref); },
                        [&](const Tensor& x, int t) { return vm.predict(x, t, vnull, ref); }};
    clip.latent = sample_video(vid_model, {C, cfg.frames, h, w}, field, ctx.schedule, video_cfg);
  }
  clip.scene_image = LatentCodec::decode(clip.image_latent);
  clip.frames = LatentCodec::decode_clip(clip.latent);
  return clip;
}

EntityDetector toy_detector(const MultiSceneVideo& video) {
  return [&video](const std::string& entity, int scene) -> std::optional<RgbImage> {
    const auto ref = video.references.find(entity);
    const auto clip = std::find_if(video.clips.begin(), video.clips.end(),
                                   [&](const SceneClip& c) { return c.spec.index == scene; });
    if (ref == video.references.end() || clip == video.clips.end() || clip->frames.empty()) return std::nullopt;
    const RgbImage& frame = clip->frames.front();
    if (ref->second.kind == EntityKind::Background) return frame;
    const Mask& mask = ref->second.truth ? *ref->second.truth : ref->second.mask;
    const auto box = mask_bbox(mask, 2);
    if (!box) return std::nullopt;
    // the reference grid may differ from the decoded frame size
    const auto sy = [&](std::size_t v) { return v * frame.height / mask.height; };
    const auto sx = [&](std::size_t v) { return v * frame.width / mask.width; };
    const BoundingBox scaled{sy(box->y0), sx(box->x0), std::max(sy(box->y1), sy(box->y0) + 1),
                             std::max(sx(box->x1), sx(box->x0) + 1)};
    return crop(frame, scaled);
  };
}

MetricsReport compute_metrics(const MultiSceneVideo& video, const ImageEmbedder& embed) {
  MetricsReport r;
  for (const auto& clip : video.clips) {
    r.frame_consistency.push_back(frame_consistency(clip.frames, embed));
    const EntityReference* fg = nullptr;
    const EntityReference* bg = nullptr;
    if (!clip.spec.foreground.empty()) {
      const auto it = video.references.find(normalize_entity_name(clip.spec.foreground.front()));
      if (it != video.references.end()) fg = &it->second;
    }
    if (const auto it = video.references.find(normalize_entity_name(clip.spec.background)); it != video.references.end())
      bg = &it->second;
    const auto sim = fg_bg_similarity(clip.scene_image, fg ? &fg->image : nullptr, bg ? &bg->image : nullptr, embed);
    r.fg_sim.push_back(sim.fg_sim);
    r.bg_sim.push_back(sim.bg_sim);
  }
  double total = 0.0;
  for (double v : r.frame_consistency) total += v;
  r.frame_consistency_mean = r.frame_consistency.empty() ? 0.0 : total / static_cast<double>(r.frame_consistency.size());

  std::map<std::string, std::vector<int>> occurrences;
  for (const auto& e : find_common_entities(video.script))
    occurrences[e.name] = std::vector<int>(e.occurrences.begin(), e.occurrences.end());
  try {
    r.scene_consistency = scene_consistency(occurrences, toy_detector(video), embed);
  } catch (const NoCommonEntities&) {
    r.scene_consistency.reset();
  }
  return r;
}

json to_json(const MetricsReport& r) {
  auto opt = [](const std::vector<std::optional<double>>& v) {
    json a = json::array();
    for (const auto& x : v) a.push_back(x ? json(*x) : json(nullptr));
    return a;
  };
  json j{{"frame_consistency", r.frame_consistency},
         {"frame_consistency_mean", r.frame_consistency_mean},
         {"fg_sim", opt(r.fg_sim)},
         {"bg_sim", opt(r.bg_sim)}};
  if (r.scene_consistency) {
    j["scene_consistency"] = {{"per_entity", r.scene_consistency->per_entity},
                              {"missed", r.scene_consistency->missed},
                              {"mean", r.scene_consistency->mean}};
  } else {
    j["scene_consistency"] = nullptr;
  }
  return j;
}

PipelineResult run_pipeline(const std::string& prompt, const PipelineConfig& config, PipelineBackends& backends) {
  staged(Stage::Script, std::nullopt, [&] { config.validate(); });
  PipelineResult result;
  MultiSceneVideo& video = result.video;
  video.prompt = prompt;
  video.seed = config.seed;
  video.used_references = config.use_references;

  const ScriptGeneration gen = staged(Stage::Script, std::nullopt, [&] {
    const auto examples =
        load_script_examples(config.script_examples.empty() ? default_script_examples() : config.script_examples);
    return generate_script(prompt, *backends.chat, config.retry, examples, config.limits);
  });
  video.script = gen.script;
  video.script_attempts = gen.attempts;
  const std::optional<VideoScript> script = video.script;

  staged(Stage::Descriptions, script, [&] {
    for (const auto& entity : find_common_entities(video.script))
      video.descriptions[entity.name] = generate_entity_description(entity, prompt, *backends.chat);
  });

  staged(Stage::References, script, [&] {
    video.references = build_entity_references(video.script, video.descriptions, *backends.t2i, *backends.segmenter,
                                               config.seed, {config.reference_width, config.reference_height});
  });

  staged(Stage::Scenes, script, [&] {
    const NoiseSchedule schedule = make_schedule(config.schedule_steps, config.beta_1, config.beta_T);
    const ActionVocabulary vocab = pipeline_vocabulary(config);
    std::optional<ImgDenoiser> image_model;
    std::optional<VidDenoiser> video_model;
    if (config.denoiser == DenoiserKind::Network) {
      image_model.emplace(image_model_config(config));
      video_model.emplace(video_model_config(config, vocab.size()));
      if (config.image_weights) load_weights(image_model->parameters(), *config.image_weights);
      if (config.video_weights) load_weights(video_model->parameters(), *config.video_weights);
    }
    const SceneContext ctx{config, schedule, vocab, video.references, image_model ? &*image_model : nullptr,
                           video_model ? &*video_model : nullptr};
    const auto& scenes = video.script.scenes;
    video.clips.resize(scenes.size());
    std::vector<std::exception_ptr> errors(scenes.size());
#pragma omp parallel for schedule(dynamic)
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(scenes.size()); ++i) {
      try {
        video.clips[static_cast<std::size_t>(i)] = render_scene(scenes[static_cast<std::size_t>(i)], ctx);
      } catch (...) {
        errors[static_cast<std::size_t>(i)] = std::current_exception();
      }
    }
    for (const auto& e : errors)
      if (e) std::rethrow_exception(e);
  });

  result.metrics = staged(Stage::Metrics, script, [&] { return compute_metrics(video, toy_embedder(config.embedder_seed)); });
  return result;
}

std::string file_checksum(const std::string& bytes) {
  static const char* hex = "0123456789abcdef";
  std::uint64_t h = fnv1a64(bytes);
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i, h >>= 4) out[static_cast<std::size_t>(i)] = hex[h & 0xf];
  return out;
}

std::filesystem::path export_video(const MultiSceneVideo& video, const std::filesystem::path& out_dir,
                                   const MetricsReport* metrics) {
  std::filesystem::create_directories(out_dir);
  std::map<std::string, std::string> files;
  auto put = [&](const std::string& rel, const std::string& bytes, std::map<std::string, std::string>& into) {
    std::filesystem::create_directories((out_dir / rel).parent_path());
    write_file(out_dir / rel, bytes);
    into[rel] = file_checksum(bytes);
  };

  put("script.txt", serialize_script(video.script), files);
  json refs = json::array();
  for (const auto& [name, ref] : video.references) {
    const std::string base = "references/" + slug(name);
    put(base + ".ppm", encode_ppm(ref.image), files);
    put(base + "_mask.pgm", encode_pgm(ref.mask), files);
    refs.push_back({{"name", name},
                    {"kind", ref.kind == EntityKind::Foreground ? "foreground" : "background"},
                    {"seed", ref.seed},
                    {"description", ref.entity.description.value_or("")},
                    {"image", base + ".ppm"},
                    {"mask", base + "_mask.pgm"}});
  }

  std::vector<std::map<std::string, std::string>> scene_files(video.clips.size());
  std::vector<json> scene_entries(video.clips.size());
  std::vector<std::exception_ptr> errors(video.clips.size());
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(video.clips.size()); ++i) {
    const auto k = static_cast<std::size_t>(i);
    try {
      const SceneClip& clip = video.clips[k];
      const std::string dir = "scene_" + std::to_string(clip.spec.index);
      json frames = json::array();
      for (std::size_t f = 0; f < clip.frames.size(); ++f) {
        const std::string rel = dir + "/frame_" + std::to_string(f) + ".ppm";
        put(rel, encode_ppm(clip.frames[f]), scene_files[k]);
        frames.push_back(rel);
      }
      put(dir + "/scene_image.ppm", encode_ppm(clip.scene_image), scene_files[k]);
      put(dir + "/latent.vstn", encode_tensor(clip.latent), scene_files[k]);
      put(dir + "/image_latent.vstn", encode_tensor(clip.image_latent), scene_files[k]);
      scene_entries[k] = {{"index", clip.spec.index},
                          {"prompt", clip.spec.prompt},
                          {"foreground", clip.spec.foreground},
                          {"background", clip.spec.background},
                          {"camera", std::string(to_string(clip.spec.camera.direction)) + ", " +
                                         std::string(to_string(clip.spec.camera.speed))},
                          {"seed", clip.seed},
                          {"frames", frames},
                          {"scene_image", dir + "/scene_image.ppm"},
                          {"latent", dir + "/latent.vstn"},
                          {"image_latent", dir + "/image_latent.vstn"},
                          {"action_phrases", clip.action_phrases},
                          {"action_indicator", clip.action_indicator.values()}};
    } catch (...) {
      errors[k] = std::current_exception();
    }
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
  for (const auto& m : scene_files) files.insert(m.begin(), m.end());
  if (metrics) put("metrics.json", to_json(*metrics).dump(2) + "\n", files);

  const json manifest{{"version", 1},
                      {"prompt", video.prompt},
                      {"seed", video.seed},
                      {"used_references", video.used_references},
                      {"script_attempts", video.script_attempts},
                      {"script", serialize_script(video.script)},
                      {"references", refs},
                      {"scenes", scene_entries},
                      {"files", files}};
  write_file(out_dir / "manifest.json", manifest.dump(2) + "\n");
  return out_dir / "manifest.json";
}

LoadedExport load_export(const std::filesystem::path& out_dir) {
  LoadedExport out;
  try {
    out.manifest = json::parse(read_file(out_dir / "manifest.json"));
  } catch (const json::exception& e) {
    throw IoError("bad manifest in " + out_dir.string() + ": " + e.what());
  }
  for (const auto& [rel, sum] : out.manifest.at("files").items()) {
    const std::string bytes = read_file(out_dir / rel);
    if (file_checksum(bytes) != sum.get<std::string>())
      throw ChecksumMismatch("checksum mismatch for " + rel + ": manifest " + sum.get<std::string>() + ", file " +
                             file_checksum(bytes));
  }
  for (const auto& scene : out.manifest.at("scenes"))
    out.latents.push_back(decode_tensor(read_file(out_dir / scene.at("latent").get<std::string>())));
  return out;
}

std::string tree_checksum(const std::filesystem::path& out_dir) {
  const std::string manifest = read_file(out_dir / "manifest.json");
  std::string acc = "manifest.json\t" + file_checksum(manifest) + "\n";
  const json doc = json::parse(manifest);
  for (const auto& [rel, sum] : doc.at("files").items()) {
    const std::string bytes = read_file(out_dir / rel);
    acc += rel + "\t" + file_checksum(bytes) + "\n";
  }
  return file_checksum(acc);
}

}  // namespace vs
