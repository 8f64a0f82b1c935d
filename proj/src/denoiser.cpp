#include "videostudio/denoiser.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <string>

#include "json.hpp"
#include "videostudio/camera.hpp"
#include "videostudio/kernels.hpp"
#include "videostudio/tensor_io.hpp"

namespace vs {

namespace {

Tensor column_sums(const Tensor& t) {
  const std::size_t rows = t.dim(0), cols = t.dim(1);
  Tensor out({cols});
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[c] += t[r * cols + c];
  return out;
}

void add_row(Tensor& t, const Tensor& row) {
  const std::size_t cols = t.dim(1);
  for (std::size_t r = 0; r < t.dim(0); ++r)
    for (std::size_t c = 0; c < cols; ++c) t[r * cols + c] += row[c];
}

// Projected timestep code: sinusoid [1, C] times time_w.
Tensor project_time(const Tensor& sinusoid, const Tensor& time_w) {
  return matmul(sinusoid.reshaped({1, sinusoid.numel()}), time_w).reshaped({time_w.dim(1)});
}

void accumulate_time_grad(Parameter& time_w, const Tensor& sinusoid, const Tensor& dtok) {
  const Tensor ds = column_sums(dtok);
  const std::size_t c = time_w.value.dim(1);
  for (std::size_t i = 0; i < sinusoid.numel(); ++i)
    for (std::size_t j = 0; j < c; ++j) time_w.grad[i * c + j] += sinusoid[i] * ds[j];
}

}  // namespace

Tensor timestep_embedding(int t, std::size_t channels) {
  Tensor out({channels});
  const std::size_t half = channels / 2;
  for (std::size_t i = 0; i < half; ++i) {
    const double freq = std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(std::max<std::size_t>(half, 1)));
    out[i] = std::sin(t * freq);
    out[half + i] = std::cos(t * freq);
  }
  return out;
}

Tensor position_embedding(std::size_t h, std::size_t w, std::size_t channels) {
  Tensor out({h * w, channels});
  const std::size_t half = channels / 2, quarter = half / 2;
  auto code = [&](double pos, std::size_t base, std::size_t row) {
    for (std::size_t i = 0; i < quarter; ++i) {
      const double freq = std::pow(100.0, -static_cast<double>(i) / static_cast<double>(std::max<std::size_t>(quarter, 1)));
      out[row * channels + base + i] = std::sin(pos * freq);
      out[row * channels + base + quarter + i] = std::cos(pos * freq);
    }
  };
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      code(static_cast<double>(y), 0, y * w + x);
      code(static_cast<double>(x), half, y * w + x);
    }
  }
  return out;
}

ImgDenoiser::ImgDenoiser(const ImgDenoiserConfig& cfg) : config(cfg) {
  Rng rng(derive_seed(cfg.seed, "img-denoiser"));
  const std::size_t c = cfg.dims.channels, cl = cfg.latent_channels;
  embed_w = Parameter("embed.w", random_normal({cl, c}, rng, cfg.init_std * 4.0));
  embed_b = Parameter("embed.b", Tensor({c}));
  time_w = Parameter("time.w", random_normal({c, c}, rng, cfg.init_std));
  for (std::size_t k = 0; k < cfg.blocks; ++k)
    blocks.emplace_back("block" + std::to_string(k), cfg.dims, rng, cfg.init_std);
  unembed_w = Parameter("unembed.w", random_normal({c, cl}, rng, cfg.init_std));
  unembed_b = Parameter("unembed.b", Tensor({cl}));
}

Tensor ImgDenoiser::predict(const Tensor& latent, int t, const ContextBundle& ctx, ImgDenoiserCache* cache) const {
  const std::size_t cl = config.latent_channels, c = config.dims.channels;
  if (latent.rank() != 3 || latent.dim(0) != cl)
    throw ShapeMismatch("ImgDenoiser latent must be [" + std::to_string(cl) + ",H,W], got " + shape_str(latent.shape()));
  const std::size_t h = latent.dim(1), w = latent.dim(2), s = h * w;
  ImgDenoiserCache local;
  ImgDenoiserCache& k = cache ? *cache : local;
  k.temb_in = timestep_embedding(t, c);
  Tensor tok = matmul_tn(latent.reshaped({cl, s}), embed_w.value);
  add_row(tok, embed_b.value + project_time(k.temb_in, time_w.value));
  tok += position_embedding(h, w, c);
  k.inputs.assign(1, tok);
  k.blocks.assign(blocks.size(), {});
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    tok = blocks[b].forward(tok, ctx, &k.blocks[b]);
    k.inputs.push_back(tok);
  }
  Tensor out = matmul(tok, unembed_w.value);
  add_row(out, unembed_b.value);
  return transpose2d(out).reshaped({cl, h, w});
}

void ImgDenoiser::backward(const Tensor& latent, int, const ContextBundle& ctx, const ImgDenoiserCache& cache,
                           const Tensor& deps) {
  require_same_shape(latent, deps, "ImgDenoiser::backward");
  const std::size_t cl = config.latent_channels, s = latent.dim(1) * latent.dim(2);
  const Tensor dout = transpose2d(deps.reshaped({cl, s}));
  unembed_w.grad += matmul_tn(cache.inputs.back(), dout);
  unembed_b.grad += column_sums(dout);
  Tensor dtok = matmul_nt(dout, unembed_w.value);
  for (std::size_t b = blocks.size(); b-- > 0;)
    dtok = blocks[b].backward(cache.inputs[b], ctx, cache.blocks[b], dtok).dx;
  embed_w.grad += matmul(latent.reshaped({cl, s}), dtok);
  embed_b.grad += column_sums(dtok);
  accumulate_time_grad(time_w, cache.temb_in, dtok);
}

ContextBundle ImgDenoiser::null_context() const {
  return null_bundle(config.dims.text, config.dims.fg, config.dims.bg);
}

void ImgDenoiser::apply_default_freeze() {
  for (auto& b : blocks) b.apply_default_freeze();
}

std::vector<Parameter*> ImgDenoiser::parameters() {
  std::vector<Parameter*> out{&embed_w, &embed_b, &time_w};
  for (auto& b : blocks) b.collect(out);
  out.insert(out.end(), {&unembed_w, &unembed_b});
  return out;
}

VidDenoiser::VidDenoiser(const VidDenoiserConfig& cfg) : config(cfg) {
  Rng rng(derive_seed(cfg.seed, "vid-denoiser"));
  const std::size_t c = cfg.dims.channels, cl = cfg.latent_channels;
  embed_w = Parameter("embed.w", random_normal({cl, c}, rng, cfg.init_std * 4.0));
  embed_b = Parameter("embed.b", Tensor({c}));
  conv_k = Parameter("conv.k", random_normal({c, c, 3, 3}, rng, cfg.init_std));
  conv_b = Parameter("conv.b", Tensor({c}));
  tconv_k = Parameter("tconv.k", random_normal({c, c, 3}, rng, cfg.init_std));
  tconv_b = Parameter("tconv.b", Tensor({c}));
  time_w = Parameter("time.w", random_normal({c, c}, rng, cfg.init_std));
  for (std::size_t k = 0; k < cfg.blocks; ++k)
    blocks.emplace_back("block" + std::to_string(k), cfg.dims, rng, cfg.init_std);
  unembed_w = Parameter("unembed.w", random_normal({c, cl}, rng, cfg.init_std));
  unembed_b = Parameter("unembed.b", Tensor({cl}));
}

Tensor VidDenoiser::predict(const Tensor& video, int t, const VidContext& ctx, const Tensor& ref_latent,
                            VidDenoiserCache* cache) const {
  const std::size_t cl = config.latent_channels, c = config.dims.channels;
  if (video.rank() != 4 || video.dim(0) != cl)
    throw ShapeMismatch("VidDenoiser video must be [" + std::to_string(cl) + ",F,H,W], got " + shape_str(video.shape()));
  const std::size_t frames = video.dim(1), h = video.dim(2), w = video.dim(3), s = h * w;
  if (ref_latent.shape() != Shape{cl, 1, h, w})
    throw ShapeMismatch("VidDenoiser reference must be " + shape_str({cl, 1, h, w}) + ", got " +
                        shape_str(ref_latent.shape()));
  const std::size_t f1 = frames + 1, n = f1 * s;
  VidDenoiserCache local;
  VidDenoiserCache& k = cache ? *cache : local;

  k.x = Tensor({cl, f1, h, w});
  for (std::size_t ch = 0; ch < cl; ++ch) {
    std::copy_n(ref_latent.data() + ch * s, s, k.x.data() + ch * n);
    std::copy_n(video.data() + ch * frames * s, frames * s, k.x.data() + ch * n + s);
  }
  Tensor etok = matmul_tn(k.x.reshaped({cl, n}), embed_w.value);
  add_row(etok, embed_b.value);
  k.e = transpose2d(etok).reshaped({c, f1, h, w});
  k.h1 = k.e;
  for (std::size_t f = 0; f < f1; ++f)
    set_clip_frame(k.h1, f, clip_frame(k.e, f) + conv2d_3x3(clip_frame(k.e, f), conv_k.value, conv_b.value));
  const Tensor h2 = k.h1 + temporal_conv1d(k.h1, tconv_k.value, tconv_b.value);

  k.temb_in = timestep_embedding(t, c);
  Tensor tok = transpose2d(h2.reshaped({c, n}));
  add_row(tok, project_time(k.temb_in, time_w.value));
  const Tensor pos = position_embedding(h, w, c);
  for (std::size_t f = 0; f < f1; ++f)
    for (std::size_t i = 0; i < s * c; ++i) tok[f * s * c + i] += pos[i];

  k.inputs.assign(1, tok);
  k.blocks.assign(blocks.size(), {});
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    tok = blocks[b].forward(tok, ctx, f1, &k.blocks[b]);
    k.inputs.push_back(tok);
  }
  Tensor out = matmul(tok, unembed_w.value);
  add_row(out, unembed_b.value);
  const Tensor full = transpose2d(out);
  Tensor eps({cl, frames, h, w});
  for (std::size_t ch = 0; ch < cl; ++ch) std::copy_n(full.data() + ch * n + s, frames * s, eps.data() + ch * frames * s);
  return eps;
}

void VidDenoiser::backward(const Tensor& video, int, const VidContext& ctx, const Tensor&,
                           const VidDenoiserCache& cache, const Tensor& deps) {
  require_same_shape(video, deps, "VidDenoiser::backward");
  const std::size_t cl = config.latent_channels, c = config.dims.channels;
  const std::size_t frames = video.dim(1), s = video.dim(2) * video.dim(3), f1 = frames + 1, n = f1 * s;

  Tensor dfull({cl, n});
  for (std::size_t ch = 0; ch < cl; ++ch)
    std::copy_n(deps.data() + ch * frames * s, frames * s, dfull.data() + ch * n + s);
  const Tensor dout = transpose2d(dfull);
  unembed_w.grad += matmul_tn(cache.inputs.back(), dout);
  unembed_b.grad += column_sums(dout);
  Tensor dtok = matmul_nt(dout, unembed_w.value);
  for (std::size_t b = blocks.size(); b-- > 0;)
    dtok = blocks[b].backward(cache.inputs[b], ctx, f1, cache.blocks[b], dtok).dx;
  accumulate_time_grad(time_w, cache.temb_in, dtok);

  const Shape map_shape = cache.e.shape();
  const Tensor dh2 = transpose2d(dtok).reshaped(map_shape);
  ConvGrads tg = temporal_conv1d_backward(cache.h1, tconv_k.value, dh2);
  tconv_k.grad += tg.dkernel;
  tconv_b.grad += tg.dbias;
  const Tensor dh1 = dh2 + tg.dx;
  Tensor de = dh1;
  for (std::size_t f = 0; f < f1; ++f) {
    ConvGrads g = conv2d_3x3_backward(clip_frame(cache.e, f), conv_k.value, clip_frame(dh1, f));
    conv_k.grad += g.dkernel;
    conv_b.grad += g.dbias;
    set_clip_frame(de, f, clip_frame(de, f) + g.dx);
  }
  const Tensor detok = transpose2d(de.reshaped({c, n}));
  embed_w.grad += matmul(cache.x.reshaped({cl, n}), detok);
  embed_b.grad += column_sums(detok);
}

VidContext VidDenoiser::null_context(std::size_t scene_tokens) const {
  return {Tensor({scene_tokens, config.dims.scene}), Tensor({config.dims.vocab})};
}

std::vector<Parameter*> VidDenoiser::parameters() {
  std::vector<Parameter*> out{&embed_w, &embed_b, &conv_k, &conv_b, &tconv_k, &tconv_b, &time_w};
  for (auto& b : blocks) b.collect(out);
  out.insert(out.end(), {&unembed_w, &unembed_b});
  return out;
}

namespace {

struct NoisyDraw {
  int t;
  Tensor x_t, eps;
};

NoisyDraw draw_noisy(const Tensor& x0, const NoiseSchedule& schedule, Rng& rng) {
  NoisyDraw d{static_cast<int>(rng.next_u64() % static_cast<std::uint64_t>(schedule.T)), Tensor(x0.shape()),
              Tensor(x0.shape())};
  const double a = schedule.alpha(d.t), s = schedule.sigma(d.t);
  for (std::size_t i = 0; i < x0.numel(); ++i) {
    d.eps[i] = rng.normal();
    d.x_t[i] = a * x0[i] + s * d.eps[i];
  }
  return d;
}

// Returns the example loss and writes dL/d(eps_hat) scaled by 1/batch.
double mse_grad(const Tensor& pred, const Tensor& eps, std::size_t batch, Tensor& grad) {
  grad = Tensor(pred.shape());
  double loss = 0.0;
  const double n = static_cast<double>(pred.numel());
  for (std::size_t i = 0; i < pred.numel(); ++i) {
    const double diff = pred[i] - eps[i];
    loss += diff * diff;
    grad[i] = 2.0 * diff / (n * static_cast<double>(batch));
  }
  return loss / n;
}

}  // namespace

double train_step(ImgDenoiser& model, std::span<const ImageExample> batch, const NoiseSchedule& schedule, Rng& rng,
                  TrainState& state) {
  const auto params = model.parameters();
  zero_grads(params);
  double total = 0.0;
  for (const auto& ex : batch) {
    const bool drop = rng.uniform() < state.config.p_drop;
    const ContextBundle ctx = drop ? model.null_context() : ex.context;
    const NoisyDraw d = draw_noisy(ex.latent, schedule, rng);
    ImgDenoiserCache cache;
    const Tensor pred = model.predict(d.x_t, d.t, ctx, &cache);
    Tensor grad;
    total += mse_grad(pred, d.eps, batch.size(), grad);
    model.backward(d.x_t, d.t, ctx, cache, grad);
  }
  adamw_step(params, state.config.hyper, state.adam);
  return batch.empty() ? 0.0 : total / static_cast<double>(batch.size());
}

double train_step(VidDenoiser& model, std::span<const VideoExample> batch, const NoiseSchedule& schedule, Rng& rng,
                  TrainState& state) {
  const auto params = model.parameters();
  zero_grads(params);
  double total = 0.0;
  for (const auto& ex : batch) {
    const bool drop = rng.uniform() < state.config.p_drop;
    const VidContext ctx = drop ? model.null_context(ex.context.y_s.dim(0)) : ex.context;
    const NoisyDraw d = draw_noisy(ex.latent, schedule, rng);
    VidDenoiserCache cache;
    const Tensor pred = model.predict(d.x_t, d.t, ctx, ex.ref_latent, &cache);
    Tensor grad;
    total += mse_grad(pred, d.eps, batch.size(), grad);
    model.backward(d.x_t, d.t, ctx, ex.ref_latent, cache, grad);
  }
  adamw_step(params, state.config.hyper, state.adam);
  return batch.empty() ? 0.0 : total / static_cast<double>(batch.size());
}

void save_weights(const std::vector<Parameter*>& params, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::json list = nlohmann::json::array();
  std::set<std::string> seen;
  for (const Parameter* p : params) {
    if (!seen.insert(p->name).second) throw IoError("duplicate parameter name " + p->name);
    const std::string file = p->name + ".vstn";
    save_tensor(p->value, dir / file);
    list.push_back({{"name", p->name}, {"shape", p->value.shape()}, {"trainable", p->trainable}, {"file", file}});
  }
  write_file(dir / "manifest.json", nlohmann::json{{"version", 1}, {"parameters", list}}.dump(2) + "\n");
}

void load_weights(const std::vector<Parameter*>& params, const std::filesystem::path& dir) {
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(read_file(dir / "manifest.json"));
  } catch (const nlohmann::json::exception& e) {
    throw IoError("bad weights manifest: " + std::string(e.what()));
  }
  const auto& list = manifest.at("parameters");
  if (list.size() != params.size())
    throw IoError("weights manifest has " + std::to_string(list.size()) + " parameters, model has " +
                  std::to_string(params.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter& p = *params[i];
    const auto& entry = list[i];
    if (entry.at("name").get<std::string>() != p.name)
      throw IoError("weights manifest entry " + std::to_string(i) + " is " + entry.at("name").get<std::string>() +
                    ", expected " + p.name);
    Tensor value = load_tensor(dir / entry.at("file").get<std::string>());
    if (value.shape() != p.value.shape() || entry.at("shape").get<Shape>() != p.value.shape())
      throw ShapeMismatch("weights for " + p.name + ": " + shape_str(value.shape()) + " vs " + shape_str(p.value.shape()));
    p.value = std::move(value);
    p.grad = Tensor::zeros_like(p.value);
    p.trainable = entry.at("trainable").get<bool>();
  }
}

}  // namespace vs
