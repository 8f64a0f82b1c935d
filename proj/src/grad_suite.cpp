#include "videostudio/grad_suite.hpp"

#include <algorithm>
#include <functional>

#include "videostudio/blocks.hpp"
#include "videostudio/denoiser.hpp"
#include "videostudio/gradcheck.hpp"
#include "videostudio/kernels.hpp"

namespace vs {

namespace {

std::size_t between(Rng& rng, std::size_t lo, std::size_t hi) {
  return lo + static_cast<std::size_t>(rng.next_u64() % (hi - lo + 1));
}

struct Check {
  std::vector<Tensor*> inputs;
  std::vector<Tensor> analytic;

  void add(Tensor& x, const Tensor& g) {
    inputs.push_back(&x);
    analytic.push_back(g);
  }
  void add(std::vector<Parameter*> params) {
    for (auto* p : params) add(p->value, p->grad);
  }
};

void record(GradSuiteEntry& e, const GradCheckResult& r) {
  ++e.trials;
  e.coordinates += r.coordinates;
  e.max_rel_error = std::max(e.max_rel_error, r.max_rel_error);
}

GradSuiteEntry cross_attention_suite(Rng& rng, std::size_t trials) {
  GradSuiteEntry e{"cross_attention"};
  for (std::size_t i = 0; i < trials; ++i) {
    const std::size_t heads = between(rng, 1, 2), d = heads * between(rng, 1, 3);
    const std::size_t lq = between(rng, 1, 5), lk = between(rng, 1, 5), c = between(rng, 1, 4), ck = between(rng, 1, 4);
    AttentionLayer layer("a", c, ck, d, heads, rng, 0.6);
    Tensor x = random_normal({lq, c}, rng, 1.0), ctx = random_normal({lk, ck}, rng, 1.0);
    const Tensor w = random_normal({lq, c}, rng, 1.0);
    auto loss = [&] { return dot(layer.forward(x, ctx, nullptr), w); };
    std::vector<Parameter*> params;
    layer.collect(params);
    zero_grads(params);
    AttentionCache cache;
    layer.forward(x, ctx, &cache);
    auto [dx, dctx] = layer.backward(x, ctx, cache, w);
    Check chk;
    chk.add(x, dx);
    chk.add(ctx, dctx);
    chk.add(params);
    record(e, finite_diff_check(loss, chk.inputs, chk.analytic));
  }
  return e;
}

GradSuiteEntry tri_context_suite(Rng& rng, std::size_t trials) {
  GradSuiteEntry e{"tri_context"};
  for (std::size_t i = 0; i < trials; ++i) {
    TriContextDims dims;
    dims.heads = between(rng, 1, 2);
    dims.inner = dims.heads * between(rng, 1, 2);
    dims.channels = between(rng, 1, 4);
    dims.text = between(rng, 1, 3);
    dims.fg = between(rng, 1, 3);
    dims.bg = between(rng, 1, 3);
    TriContextBlock block("b", dims, rng, 0.6);
    const std::size_t l = between(rng, 1, 4);
    Tensor x = random_normal({l, dims.channels}, rng, 1.0);
    // every third trial drops the foreground context entirely
    ContextBundle ctx{random_normal({between(rng, 1, 3), dims.text}, rng, 1.0),
                      random_normal({i % 3 == 2 ? 0 : between(rng, 1, 4), dims.fg}, rng, 1.0),
                      random_normal({between(rng, 1, 3), dims.bg}, rng, 1.0)};
    const Tensor w = random_normal({l, dims.channels}, rng, 1.0);
    auto loss = [&] { return dot(block.forward(x, ctx), w); };
    std::vector<Parameter*> params;
    block.collect(params);
    zero_grads(params);
    TriContextCache cache;
    block.forward(x, ctx, &cache);
    const TriContextGrads g = block.backward(x, ctx, cache, w);
    Check chk;
    chk.add(x, g.dx);
    chk.add(ctx.y_t, g.dy_t);
    chk.add(ctx.y_f, g.dy_f);
    chk.add(ctx.y_b, g.dy_b);
    chk.add(params);
    record(e, finite_diff_check(loss, chk.inputs, chk.analytic));
  }
  return e;
}

GradSuiteEntry spatio_temporal_suite(Rng& rng, std::size_t trials) {
  GradSuiteEntry e{"spatio_temporal"};
  for (std::size_t i = 0; i < trials; ++i) {
    SpatioTemporalDims dims;
    dims.heads = between(rng, 1, 2);
    dims.inner = dims.heads * between(rng, 1, 2);
    dims.channels = between(rng, 1, 3);
    dims.scene = between(rng, 1, 3);
    dims.vocab = between(rng, 1, 4);
    SpatioTemporalBlock block("b", dims, rng, 0.6);
    block.action.bias.value = random_normal({dims.channels}, rng, 0.5);
    const std::size_t frames = between(rng, 1, 3), sites = between(rng, 1, 4);
    Tensor x = random_normal({frames * sites, dims.channels}, rng, 1.0);
    VidContext ctx{random_normal({between(rng, 1, 3), dims.scene}, rng, 1.0), random_normal({dims.vocab}, rng, 1.0)};
    const Tensor w = random_normal(x.shape(), rng, 1.0);
    auto loss = [&] { return dot(block.forward(x, ctx, frames), w); };
    std::vector<Parameter*> params;
    block.collect(params);
    zero_grads(params);
    SpatioTemporalCache cache;
    block.forward(x, ctx, frames, &cache);
    const SpatioTemporalGrads g = block.backward(x, ctx, frames, cache, w);
    Check chk;
    chk.add(x, g.dx);
    chk.add(ctx.y_s, g.dy_s);
    chk.add(ctx.y_a, g.dy_a);
    chk.add(params);
    record(e, finite_diff_check(loss, chk.inputs, chk.analytic));
  }
  return e;
}

GradSuiteEntry conv2d_suite(Rng& rng, std::size_t trials) {
  GradSuiteEntry e{"conv2d_3x3"};
  for (std::size_t i = 0; i < trials; ++i) {
    const std::size_t c = between(rng, 1, 3), co = between(rng, 1, 3), h = between(rng, 1, 5), w = between(rng, 1, 5);
    Tensor x = random_normal({c, h, w}, rng, 1.0), k = random_normal({co, c, 3, 3}, rng, 0.5),
           b = random_normal({co}, rng, 0.5);
    const Tensor wt = random_normal({co, h, w}, rng, 1.0);
    auto loss = [&] { return dot(conv2d_3x3(x, k, b), wt); };
    const ConvGrads g = conv2d_3x3_backward(x, k, wt);
    record(e, finite_diff_check(loss, {&x, &k, &b}, {g.dx, g.dkernel, g.dbias}));
  }
  return e;
}

GradSuiteEntry temporal_conv_suite(Rng& rng, std::size_t trials) {
  GradSuiteEntry e{"temporal_conv1d"};
  for (std::size_t i = 0; i < trials; ++i) {
    const std::size_t c = between(rng, 1, 3), co = between(rng, 1, 3), f = between(rng, 1, 5), h = between(rng, 1, 3),
                      w = between(rng, 1, 3);
    Tensor x = random_normal({c, f, h, w}, rng, 1.0), k = random_normal({co, c, 3}, rng, 0.5),
           b = random_normal({co}, rng, 0.5);
    const Tensor wt = random_normal({co, f, h, w}, rng, 1.0);
    auto loss = [&] { return dot(temporal_conv1d(x, k, b), wt); };
    const ConvGrads g = temporal_conv1d_backward(x, k, wt);
    record(e, finite_diff_check(loss, {&x, &k, &b}, {g.dx, g.dkernel, g.dbias}));
  }
  return e;
}

GradSuiteEntry action_suite(Rng& rng, std::size_t trials) {
  GradSuiteEntry e{"action_embedding"};
  for (std::size_t i = 0; i < trials; ++i) {
    const std::size_t v = between(rng, 1, 8), c = between(rng, 1, 8);
    ActionEmbedding f("f", v, c, rng, 0.7);
    f.bias.value = random_normal({c}, rng, 1.0);
    Tensor y = random_normal({v}, rng, 1.0);
    const Tensor wt = random_normal({c}, rng, 1.0);
    auto loss = [&] { return dot(f.forward(y), wt); };
    f.weight.zero_grad();
    f.bias.zero_grad();
    const Tensor dy = f.backward(y, wt);
    record(e, finite_diff_check(loss, {&y, &f.weight.value, &f.bias.value}, {dy, f.weight.grad, f.bias.grad}));
  }
  return e;
}

GradSuiteEntry img_denoiser_suite(Rng& rng, std::size_t trials) {
  GradSuiteEntry e{"img_denoiser"};
  for (std::size_t i = 0; i < trials; ++i) {
    ImgDenoiserConfig cfg;
    cfg.latent_channels = between(rng, 1, 3);
    cfg.dims = {4, 2, 2, 2, 2, between(rng, 1, 2)};
    cfg.blocks = between(rng, 1, 2);
    cfg.init_std = 0.4;
    cfg.seed = rng.next_u64();
    ImgDenoiser model(cfg);
    const std::size_t h = between(rng, 1, 3), w = between(rng, 1, 3);
    const Tensor latent = random_normal({cfg.latent_channels, h, w}, rng, 1.0);
    const ContextBundle ctx{random_normal({2, 2}, rng, 1.0), random_normal({between(rng, 0, 2), 2}, rng, 1.0),
                            random_normal({2, 2}, rng, 1.0)};
    const int t = static_cast<int>(rng.next_u64() % 1000);
    const Tensor wt = random_normal(latent.shape(), rng, 1.0);
    const auto params = model.parameters();
    auto loss = [&] { return dot(model.predict(latent, t, ctx), wt); };
    auto fb = [&] {
      ImgDenoiserCache cache;
      model.predict(latent, t, ctx, &cache);
      model.backward(latent, t, ctx, cache, wt);
    };
    record(e, finite_diff_check(loss, fb, params));
  }
  return e;
}

GradSuiteEntry vid_denoiser_suite(Rng& rng, std::size_t trials) {
  GradSuiteEntry e{"vid_denoiser"};
  for (std::size_t i = 0; i < trials; ++i) {
    VidDenoiserConfig cfg;
    cfg.latent_channels = between(rng, 1, 2);
    cfg.dims = {2, 2, 3, 2, 1};
    cfg.blocks = 1;
    cfg.init_std = 0.4;
    cfg.seed = rng.next_u64();
    VidDenoiser model(cfg);
    model.blocks[0].action.bias.value = random_normal({2}, rng, 0.5);
    const std::size_t f = between(rng, 1, 3), h = between(rng, 1, 3), w = between(rng, 1, 2);
    const Tensor video = random_normal({cfg.latent_channels, f, h, w}, rng, 1.0);
    const Tensor ref = random_normal({cfg.latent_channels, 1, h, w}, rng, 1.0);
    const VidContext ctx{random_normal({2, 2}, rng, 1.0), random_normal({3}, rng, 1.0)};
    const int t = static_cast<int>(rng.next_u64() % 1000);
    const Tensor wt = random_normal(video.shape(), rng, 1.0);
    const auto params = model.parameters();
    auto loss = [&] { return dot(model.predict(video, t, ctx, ref), wt); };
    auto fb = [&] {
      VidDenoiserCache cache;
      model.predict(video, t, ctx, ref, &cache);
      model.backward(video, t, ctx, ref, cache, wt);
    };
    record(e, finite_diff_check(loss, fb, params));
  }
  return e;
}

}  // namespace

std::vector<GradSuiteEntry> run_gradient_suite(std::uint64_t seed, std::size_t trials) {
  using Suite = GradSuiteEntry (*)(Rng&, std::size_t);
  const Suite suites[] = {cross_attention_suite, tri_context_suite, spatio_temporal_suite, conv2d_suite,
                          temporal_conv_suite,   action_suite,      img_denoiser_suite,    vid_denoiser_suite};
  std::vector<GradSuiteEntry> out;
  std::size_t index = 0;
  for (Suite s : suites) {
    Rng rng(derive_seed(seed, index++));
    out.push_back(s(rng, trials));
  }
  return out;
}

}  // namespace vs
