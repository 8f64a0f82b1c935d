#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include "videostudio/blocks.hpp"
#include "videostudio/sampler.hpp"

namespace vs {

// Sinusoidal embedding of a timestep, [channels].
Tensor timestep_embedding(int t, std::size_t channels);
// Fixed 2-d sinusoidal position code, [h * w, channels]; the first half of the
// channels encode the row, the second half the column.
Tensor position_embedding(std::size_t h, std::size_t w, std::size_t channels);

struct ImgDenoiserConfig {
  std::size_t latent_channels = 4;
  TriContextDims dims;
  std::size_t blocks = 2;
  double init_std = 0.05;
  std::uint64_t seed = 0;
};

struct ImgDenoiserCache {
  Tensor temb_in;                  // sinusoid before projection
  std::vector<Tensor> inputs;      // token input of each block, then the final tokens
  std::vector<TriContextCache> blocks;
};

// 1x1 embed + time/position codes -> K tri-context blocks -> 1x1 unembed.
class ImgDenoiser {
 public:
  ImgDenoiserConfig config;
  Parameter embed_w;    // [C_l, C]
  Parameter embed_b;    // [C]
  Parameter time_w;     // [C, C]
  Parameter unembed_w;  // [C, C_l]
  Parameter unembed_b;  // [C_l]
  std::vector<TriContextBlock> blocks;

  explicit ImgDenoiser(const ImgDenoiserConfig& config = {});

  // latent [C_l, H, W] -> eps [C_l, H, W]
  Tensor predict(const Tensor& latent, int t, const ContextBundle& ctx, ImgDenoiserCache* cache = nullptr) const;
  // Accumulates parameter grads for dL/d(eps).
  void backward(const Tensor& latent, int t, const ContextBundle& ctx, const ImgDenoiserCache& cache,
                const Tensor& deps);

  ContextBundle null_context() const;
  void apply_default_freeze();
  std::vector<Parameter*> parameters();
};

struct VidDenoiserConfig {
  std::size_t latent_channels = 4;
  SpatioTemporalDims dims;
  std::size_t blocks = 2;
  double init_std = 0.05;
  std::uint64_t seed = 0;
};

struct VidDenoiserCache {
  Tensor x;         // [C_l, F+1, H, W] with the reference as frame 0
  Tensor e;         // embedded map [C, F+1, H, W]
  Tensor h1;        // after the spatial conv residual
  Tensor temb_in;
  std::vector<Tensor> inputs;
  std::vector<SpatioTemporalCache> blocks;
};

// The reference latent is prepended as frame 0, then
// 1x1 embed -> 3x3 conv residual -> temporal conv residual -> time/position
// codes -> K spatio-temporal blocks -> 1x1 unembed; frame 0 is dropped.
class VidDenoiser {
 public:
  VidDenoiserConfig config;
  Parameter embed_w, embed_b;  // [C_l, C], [C]
  Parameter conv_k, conv_b;    // [C, C, 3, 3], [C]
  Parameter tconv_k, tconv_b;  // [C, C, 3], [C]
  Parameter time_w;            // [C, C]
  Parameter unembed_w, unembed_b;
  std::vector<SpatioTemporalBlock> blocks;

  explicit VidDenoiser(const VidDenoiserConfig& config = {});

  // video [C_l, F, H, W], reference [C_l, 1, H, W] -> eps [C_l, F, H, W]
  Tensor predict(const Tensor& video, int t, const VidContext& ctx, const Tensor& ref_latent,
                 VidDenoiserCache* cache = nullptr) const;
  void backward(const Tensor& video, int t, const VidContext& ctx, const Tensor& ref_latent,
                const VidDenoiserCache& cache, const Tensor& deps);

  VidContext null_context(std::size_t scene_tokens) const;
  std::vector<Parameter*> parameters();
};

struct TrainConfig {
  AdamWHyper hyper;
  double p_drop = 0.1;
};

struct TrainState {
  TrainConfig config;
  AdamWState adam;
};

struct ImageExample {
  Tensor latent;
  ContextBundle context;
};

struct VideoExample {
  Tensor latent;
  Tensor ref_latent;
  VidContext context;
};

// One AdamW step on the mean over the batch of mean((eps_hat - eps)^2).
// Contexts are replaced by null contexts with probability p_drop.
double train_step(ImgDenoiser& model, std::span<const ImageExample> batch, const NoiseSchedule& schedule, Rng& rng,
                  TrainState& state);
double train_step(VidDenoiser& model, std::span<const VideoExample> batch, const NoiseSchedule& schedule, Rng& rng,
                  TrainState& state);

// Directory of VSTN tensors plus manifest.json listing name, shape, trainable.
void save_weights(const std::vector<Parameter*>& params, const std::filesystem::path& dir);
// Names and shapes must match exactly; trainable flags are taken from the manifest.
void load_weights(const std::vector<Parameter*>& params, const std::filesystem::path& dir);

}  // namespace vs
