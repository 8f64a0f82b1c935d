#include <chrono>
#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "videostudio/grad_suite.hpp"
#include "videostudio/oracle.hpp"
#include "videostudio/pipeline.hpp"
#include "videostudio/studies.hpp"
#include "videostudio/tensor_io.hpp"

using namespace vs;

namespace {

enum Exit { kOk = 0, kValidation = 2, kBackend = 3, kInternal = 4 };

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  std::string mock_llm;
  bool mock_llm_given = false;
  bool no_refs = false;
  std::string prompt;
};

void add_pipeline_options(CLI::App* cmd, Common& c, bool needs_prompt) {
  auto* p = cmd->add_option("--prompt", c.prompt, "Input prompt");
  if (needs_prompt) p->required();
  cmd->add_option("--config", c.config_path, "Pipeline config JSON")->check(CLI::ExistingFile);
  cmd->add_option("--seed", c.seed, "Global seed (overrides the config)");
  cmd->add_option("--out-dir", c.out_dir, "Output directory (overrides the config)");
  cmd->add_option("--mock-llm", c.mock_llm, "Mock LLM fixture; bare flag uses the bundled one")
      ->expected(0, 1)
      ->each([&c](const std::string&) { c.mock_llm_given = true; });
  cmd->add_flag("--no-refs", c.no_refs, "Generate scenes without entity references");
}

PipelineConfig resolve_config(const Common& c, CLI::App* cmd) {
  PipelineConfig config = c.config_path.empty() ? PipelineConfig{} : load_pipeline_config(c.config_path);
  if (c.seed) config.seed = *c.seed;
  if (!c.out_dir.empty()) config.output_dir = c.out_dir;
  if (cmd->count("--mock-llm") > 0 || c.mock_llm_given)
    config.mock_llm = c.mock_llm.empty() ? default_mock_llm() : std::filesystem::path(c.mock_llm);
  if (c.no_refs) config.use_references = false;
  config.validate();
  return config;
}

void print_metrics(const MetricsReport& m) {
  std::cout << "frame_consistency_mean " << m.frame_consistency_mean << "\n";
  if (m.scene_consistency)
    std::cout << "scene_consistency " << m.scene_consistency->mean << "\n";
  else
    std::cout << "scene_consistency n/a (no shared entity)\n";
  for (std::size_t i = 0; i < m.fg_sim.size(); ++i) {
    std::cout << "scene " << i + 1 << " fg_sim ";
    if (m.fg_sim[i]) std::cout << *m.fg_sim[i]; else std::cout << "n/a";
    std::cout << " bg_sim ";
    if (m.bg_sim[i]) std::cout << *m.bg_sim[i]; else std::cout << "n/a";
    std::cout << "\n";
  }
}

int cmd_script(const Common& c, CLI::App* cmd) {
  const PipelineConfig config = resolve_config(c, cmd);
  auto backends = make_backends(config);
  const auto examples =
      load_script_examples(config.script_examples.empty() ? default_script_examples() : config.script_examples);
  const auto gen = generate_script(c.prompt, *backends.chat, config.retry, examples, config.limits);
  std::cout << serialize_script(gen.script);
  std::cerr << "attempts: " << gen.attempts << (gen.clean ? "" : " (best effort, violations remain)") << "\n";
  return kOk;
}

int cmd_refs(const Common& c, CLI::App* cmd) {
  const PipelineConfig config = resolve_config(c, cmd);
  auto backends = make_backends(config);
  const auto examples =
      load_script_examples(config.script_examples.empty() ? default_script_examples() : config.script_examples);
  const auto script = generate_script(c.prompt, *backends.chat, config.retry, examples, config.limits).script;
  std::map<std::string, std::string> descriptions;
  for (const auto& e : find_common_entities(script))
    descriptions[e.name] = generate_entity_description(e, c.prompt, *backends.chat);
  const auto refs = build_entity_references(script, descriptions, *backends.t2i, *backends.segmenter, config.seed,
                                            {config.reference_width, config.reference_height});
  const auto dir = config.output_dir / "references";
  std::filesystem::create_directories(dir);
  for (const auto& [name, ref] : refs) {
    std::string file = name;
    for (char& ch : file)
      if (!std::isalnum(static_cast<unsigned char>(ch))) ch = '_';
    save_ppm(ref.image, dir / (file + ".ppm"));
    save_pgm(ref.mask, dir / (file + "_mask.pgm"));
    std::cout << name << ": " << descriptions.at(name) << "\n";
  }
  std::cout << "wrote " << refs.size() << " references to " << dir.string() << "\n";
  return kOk;
}

int cmd_generate(const Common& c, CLI::App* cmd) {
  const PipelineConfig config = resolve_config(c, cmd);
  auto backends = make_backends(config);
  const auto start = std::chrono::steady_clock::now();
  const PipelineResult result = run_pipeline(c.prompt, config, backends);
  const auto manifest = export_video(result.video, config.output_dir, &result.metrics);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  std::cout << serialize_script(result.video.script);
  print_metrics(result.metrics);
  std::cout << "manifest " << manifest.string() << "\n";
  std::cout << "tree_checksum " << tree_checksum(config.output_dir) << "\n";
  std::cerr << "generated " << result.video.clips.size() << " scenes in " << secs << " s\n";
  return kOk;
}

int cmd_metrics(const std::string& dir) {
  const LoadedExport loaded = load_export(dir);
  std::cout << "checksums ok (" << loaded.manifest.at("files").size() << " files)\n";
  if (std::filesystem::exists(std::filesystem::path(dir) / "metrics.json"))
    std::cout << read_file(std::filesystem::path(dir) / "metrics.json");
  std::cout << "tree_checksum " << tree_checksum(dir) << "\n";
  return kOk;
}

int cmd_gradcheck(std::uint64_t seed, std::size_t trials) {
  const auto entries = run_gradient_suite(seed, trials);
  bool ok = true;
  std::printf("%-18s %7s %12s %14s\n", "block", "trials", "coordinates", "max_rel_error");
  for (const auto& e : entries) {
    std::printf("%-18s %7zu %12zu %14.3e\n", e.block.c_str(), e.trials, e.coordinates, e.max_rel_error);
    ok = ok && e.max_rel_error < 1e-4;
  }
  std::printf("%s\n", ok ? "all blocks below 1e-4" : "gradient check FAILED");
  return ok ? kOk : kInternal;
}

int cmd_tm_sweep(const std::vector<int>& tms, std::size_t trials, std::uint64_t seed, const std::string& camera) {
  DisplacementOptions o;
  o.trials = trials;
  o.seed = seed;
  o.move = parse_camera_move(camera);
  std::printf("%5s %12s %12s %10s\n", "t_m", "max_err_px", "mean_err_px", "residual");
  for (int tm : tms) {
    o.t_m = tm;
    const auto r = displacement_study(o);
    std::printf("%5d %12.3f %12.3f %10.4f\n", tm, r.max_error, r.mean_error, r.residual);
  }
  return kOk;
}

struct SampleOptions {
  std::uint64_t seed = 0;
  int steps = 0;
  double eta = -1.0;
  std::size_t size = 16, frames = 8;
  std::string camera = "right, medium";
  int tm = 5;
  std::string out_dir = "videostudio_sample";
};

int cmd_sample_image(const SampleOptions& s) {
  const NoiseSchedule schedule = make_schedule();
  const Tensor anchor = smooth_anchor({4, s.size, s.size}, derive_seed(s.seed, "anchor"), 1.0);
  const GaussianPrior prior = isotropic_prior(anchor, 1e-2);
  auto fn = [&](const Tensor& x, int t) { return analytic_gaussian_epsilon(x, t, prior, schedule); };
  SamplerConfig cfg = SamplerConfig::image_defaults();
  cfg.guidance_scale = 1.0;
  cfg.seed = s.seed;
  if (s.steps > 0) cfg.inference_steps = s.steps;
  if (s.eta >= 0.0) cfg.eta = s.eta;
  const Tensor out = sample_image({fn, fn}, {4, s.size, s.size}, schedule, cfg);
  std::filesystem::create_directories(s.out_dir);
  save_tensor(out, std::filesystem::path(s.out_dir) / "image_latent.vstn");
  save_ppm(LatentCodec::decode(out), std::filesystem::path(s.out_dir) / "image.ppm");
  std::printf("max |sample - anchor| %.4f, wrote %s\n", max_abs_diff(out, anchor), s.out_dir.c_str());
  return kOk;
}

int cmd_sample_video(const SampleOptions& s) {
  const NoiseSchedule schedule = make_schedule();
  const Tensor anchor = smooth_anchor({4, s.size, s.size}, derive_seed(s.seed, "anchor"), 2.0);
  const CameraPathPrior prior = camera_path_prior(anchor, s.frames, 1e-3);
  auto fn = [&](const Tensor& x, int t) { return mixture_epsilon(x, t, prior.mixture, schedule); };
  SamplerConfig cfg = SamplerConfig::video_defaults();
  cfg.guidance_scale = 1.0;
  cfg.seed = s.seed;
  cfg.t_m = s.tm;
  if (s.steps > 0) cfg.inference_steps = s.steps;
  if (s.eta >= 0.0) cfg.eta = s.eta;
  cfg.validate(schedule, true);
  const CameraMove move = parse_camera_move(s.camera);
  std::optional<FlowField> field;
  if (move.direction != CameraDirection::Static) field = synthesize_flow(move, s.frames, s.size, s.size);
  const Tensor out = sample_video({fn, fn}, {4, s.frames, s.size, s.size}, field, schedule, cfg);
  const std::filesystem::path dir(s.out_dir);
  std::filesystem::create_directories(dir);
  save_tensor(out, dir / "clip_latent.vstn");
  const auto frames = LatentCodec::decode_clip(out);
  for (std::size_t f = 0; f < frames.size(); ++f) save_ppm(frames[f], dir / ("frame_" + std::to_string(f) + ".ppm"));
  const Tensor first = clip_frame(out, 0);
  std::printf("%5s %4s %4s\n", "frame", "dx", "dy");
  for (std::size_t f = 1; f < s.frames; ++f) {
    const auto est = estimate_translation(first, clip_frame(out, f), static_cast<int>(s.size / 2));
    std::printf("%5zu %4d %4d\n", f, est.dx, est.dy);
  }
  std::printf("wrote %s\n", dir.string().c_str());
  return kOk;
}

void add_sample_options(CLI::App* cmd, SampleOptions& s, bool video) {
  cmd->add_option("--seed", s.seed, "Sampler seed");
  cmd->add_option("--steps", s.steps, "Inference steps (default from the sampler table)");
  cmd->add_option("--eta", s.eta, "DDIM eta");
  cmd->add_option("--size", s.size, "Latent height and width")->check(CLI::Range(2, 256));
  cmd->add_option("--out-dir", s.out_dir, "Output directory");
  if (video) {
    cmd->add_option("--frames", s.frames, "Frames")->check(CLI::Range(2, 64));
    cmd->add_option("--camera", s.camera, "Camera move, e.g. \"right, medium\"");
    cmd->add_option("--tm", s.tm, "Intervention step T_m");
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-scene video generation with consistent entities and camera control"};
  app.require_subcommand(1);
  Common common;
  SampleOptions sample;
  std::string metrics_dir;
  std::uint64_t grad_seed = 0;
  std::size_t grad_trials = 20;
  std::vector<int> sweep_tms{1, 5, 20};
  std::size_t sweep_trials = 5;
  std::uint64_t sweep_seed = 0;
  std::string sweep_camera = "right, medium";

  auto* script = app.add_subcommand("script", "Generate and print the multi-scene script");
  add_pipeline_options(script, common, true);
  auto* refs = app.add_subcommand("refs", "Generate entity descriptions and reference images");
  add_pipeline_options(refs, common, true);
  auto* generate = app.add_subcommand("generate", "Run the full pipeline and export the video tree");
  add_pipeline_options(generate, common, true);
  auto* metrics = app.add_subcommand("metrics", "Verify an exported tree and print its metrics");
  metrics->add_option("--out-dir", metrics_dir, "Exported tree")->required();
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of every block");
  gradcheck->add_option("--seed", grad_seed);
  gradcheck->add_option("--trials", grad_trials, "Randomized shapes per block");
  auto* sweep = app.add_subcommand("tm-sweep", "Camera displacement error against the intervention step");
  sweep->add_option("--tm", sweep_tms, "Intervention steps")->delimiter(',');
  sweep->add_option("--trials", sweep_trials);
  sweep->add_option("--seed", sweep_seed);
  sweep->add_option("--camera", sweep_camera);
  auto* sample_img = app.add_subcommand("sample-image", "DDIM sample from the analytic image oracle");
  add_sample_options(sample_img, sample, false);
  auto* sample_vid = app.add_subcommand("sample-video", "Camera-controlled sample from the anchored video oracle");
  add_sample_options(sample_vid, sample, true);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kValidation;
  }

  try {
    if (*script) return cmd_script(common, script);
    if (*refs) return cmd_refs(common, refs);
    if (*generate) return cmd_generate(common, generate);
    if (*metrics) return cmd_metrics(metrics_dir);
    if (*gradcheck) return cmd_gradcheck(grad_seed, grad_trials);
    if (*sweep) return cmd_tm_sweep(sweep_tms, sweep_trials, sweep_seed, sweep_camera);
    if (*sample_img) return cmd_sample_image(sample);
    if (*sample_vid) return cmd_sample_video(sample);
  } catch (const PipelineError& e) {
    std::cerr << "error: " << e.what() << "\n";
    if (e.script) std::cerr << "script so far:\n" << serialize_script(*e.script);
    return e.kind == FailureKind::Validation ? kValidation : e.kind == FailureKind::Backend ? kBackend : kInternal;
  } catch (const BackendError& e) {
    std::cerr << "backend error: " << e.what() << "\n";
    return kBackend;
  } catch (const ScriptError& e) {
    std::cerr << "script error: " << e.what() << "\n";
    return kValidation;
  } catch (const ScriptGenerationExhausted& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kValidation;
  } catch (const std::invalid_argument& e) {
    std::cerr << "invalid input: " << e.what() << "\n";
    return kValidation;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return kInternal;
  }
  return kInternal;
}
