#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "videostudio/action.hpp"
#include "videostudio/camera.hpp"
#include "videostudio/chat.hpp"
#include "videostudio/denoiser.hpp"
#include "videostudio/image.hpp"
#include "videostudio/metrics.hpp"
#include "videostudio/sampler.hpp"

namespace vs {

struct ConfigError : public std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct ChecksumMismatch : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class DenoiserKind : std::uint8_t { Oracle, Network };

struct PipelineConfig {
  std::uint64_t seed = 0;
  std::filesystem::path output_dir = "videostudio_out";

  // latent clip [channels, frames, height, width]; decoded frames are 4x larger
  std::size_t latent_channels = 4;
  std::size_t frames = 8;
  std::size_t latent_height = 16;
  std::size_t latent_width = 16;

  std::size_t reference_width = 64;
  std::size_t reference_height = 64;
  bool use_references = true;

  int schedule_steps = 1000;
  double beta_1 = 0.00085;
  double beta_T = 0.012;
  SamplerConfig image_sampler = SamplerConfig::image_defaults();
  SamplerConfig video_sampler = SamplerConfig::video_defaults();

  RetryPolicy retry;
  ScriptLimits limits;
  std::filesystem::path script_examples;  // empty: bundled examples
  std::optional<std::filesystem::path> mock_llm;
  std::string llm_url;
  std::string llm_model = "gpt-4";
  std::string llm_api_key_env = "OPENAI_API_KEY";
  std::string t2i_backend = "toy";  // toy | http
  std::string t2i_url;
  bool smooth_masks = false;

  SpeedTable speed_table;
  std::optional<std::filesystem::path> vocabulary;  // empty: synthetic default vocabulary
  std::uint64_t vocabulary_seed = 0;
  std::size_t feature_channels = 32;

  DenoiserKind denoiser = DenoiserKind::Oracle;
  double image_prior_var = 1e-2;
  double video_prior_var = 1e-3;
  std::optional<std::filesystem::path> image_weights;
  std::optional<std::filesystem::path> video_weights;
  std::size_t model_blocks = 2;
  std::size_t model_heads = 2;
  std::uint64_t model_seed = 0;

  std::uint64_t embedder_seed = 0;

  // Checks ranges and that referenced paths exist; throws ConfigError.
  void validate() const;
};

// Unknown keys anywhere in the document are rejected.
PipelineConfig parse_pipeline_config(const nlohmann::json& doc);
PipelineConfig load_pipeline_config(const std::filesystem::path& path);
nlohmann::json to_json(const PipelineConfig& config);

std::filesystem::path default_script_examples();
std::filesystem::path default_mock_llm();

// Fixed linear latent <-> RGB map. Decoding upsamples each latent pixel to a
// 4x4 block and maps its channels to rgb = 0.5 + M z, with orthogonal rows of
// M; encoding box-averages to the latent grid and applies the pseudo-inverse.
struct LatentCodec {
  static constexpr std::size_t kFactor = 4;
  static RgbImage decode(const Tensor& latent);  // [4,h,w] -> 4h x 4w, clamped
  static Tensor encode(const RgbImage& img, std::size_t h, std::size_t w);
  static std::vector<RgbImage> decode_clip(const Tensor& clip);  // [4,F,h,w]
};

struct PipelineBackends {
  std::unique_ptr<ChatBackend> chat;
  std::unique_ptr<TextToImageBackend> t2i;
  std::unique_ptr<Segmenter> segmenter;
};

PipelineBackends make_backends(const PipelineConfig& config);

struct SceneClip {
  SceneSpec spec;
  std::uint64_t seed = 0;
  Tensor image_latent;  // [C, h, w]
  RgbImage scene_image;
  Tensor latent;        // [C, F, h, w]
  std::vector<RgbImage> frames;
  std::vector<std::string> action_phrases;
  Tensor action_indicator;
};

struct MultiSceneVideo {
  std::string prompt;
  std::uint64_t seed = 0;
  VideoScript script;
  int script_attempts = 0;
  std::map<std::string, std::string> descriptions;
  std::map<std::string, EntityReference> references;
  std::vector<SceneClip> clips;
  bool used_references = true;
};

struct MetricsReport {
  std::vector<double> frame_consistency;  // per scene
  double frame_consistency_mean = 0.0;
  std::optional<SceneConsistency> scene_consistency;  // absent with no shared entity
  std::vector<std::optional<double>> fg_sim, bg_sim;  // per scene
};

nlohmann::json to_json(const MetricsReport& report);

struct PipelineResult {
  MultiSceneVideo video;
  MetricsReport metrics;
};

enum class Stage : std::uint8_t { Script, Descriptions, References, Scenes, Metrics };
std::string to_string(Stage stage);

enum class FailureKind : std::uint8_t { Validation, Backend, Internal };

struct PipelineError : public std::runtime_error {
  Stage stage;
  FailureKind kind;
  std::optional<VideoScript> script;  // set once stage 1 has succeeded
  PipelineError(Stage s, FailureKind k, const std::string& what, std::optional<VideoScript> sc = std::nullopt)
      : std::runtime_error("[" + to_string(s) + "] " + what), stage(s), kind(k), script(std::move(sc)) {}
};

// Shared per-run state for rendering scenes.
struct SceneContext {
  const PipelineConfig& config;
  const NoiseSchedule& schedule;
  const ActionVocabulary& vocabulary;
  const std::map<std::string, EntityReference>& references;
  const ImgDenoiser* image_model = nullptr;
  const VidDenoiser* video_model = nullptr;
};

std::uint64_t scene_seed(std::uint64_t global_seed, int scene_index);

// Stage 3 for one scene: scene-reference image, then the clip.
SceneClip render_scene(const SceneSpec& scene, const SceneContext& ctx);

// Anchor image of the oracle denoiser: the background reference with each
// foreground reference pasted through its mask; without references, the
// toy text-to-image rendering of the scene prompt.
RgbImage scene_anchor_image(const SceneSpec& scene, const SceneContext& ctx);

PipelineResult run_pipeline(const std::string& prompt, const PipelineConfig& config, PipelineBackends& backends);

MetricsReport compute_metrics(const MultiSceneVideo& video, const ImageEmbedder& embed);

// Ground-truth detector: the generator's salient mask of the entity (padded
// bounding box) cropped from frame 0; background entities crop the whole frame.
EntityDetector toy_detector(const MultiSceneVideo& video);

// Writes script, references, per-scene frames/latents and manifest.json with
// FNV-1a checksums of every file. Returns the manifest path.
std::filesystem::path export_video(const MultiSceneVideo& video, const std::filesystem::path& out_dir,
                                   const MetricsReport* metrics = nullptr);

struct LoadedExport {
  nlohmann::json manifest;
  std::vector<Tensor> latents;  // per scene, manifest order
};

// Verifies every checksum (ChecksumMismatch) and loads the scene latents.
LoadedExport load_export(const std::filesystem::path& out_dir);

// FNV-1a 64 over the sorted (path, checksum) list of the manifest.
std::string tree_checksum(const std::filesystem::path& out_dir);

std::string file_checksum(const std::string& bytes);

}  // namespace vs
