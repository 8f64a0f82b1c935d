#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <vector>

#include "test_support.hpp"
#include "videostudio/blocks.hpp"
#include "videostudio/denoiser.hpp"
#include "videostudio/grad_suite.hpp"
#include "videostudio/kernels.hpp"
#include "videostudio/tensor_io.hpp"

using namespace vs;
using vs::test::randn;

namespace {

std::vector<Tensor> snapshot(const std::vector<Parameter*>& params) {
  std::vector<Tensor> out;
  for (auto* p : params) out.push_back(p->value);
  return out;
}

void zero_all(const std::vector<Parameter*>& params) {
  for (auto* p : params) p->value.fill(0.0);
}

ImgDenoiserConfig small_img(std::uint64_t seed) {
  ImgDenoiserConfig cfg;
  cfg.dims = {8, 6, 6, 6, 8, 2};
  cfg.seed = seed;
  return cfg;
}

ContextBundle random_bundle(Rng& rng, std::size_t width, std::size_t lf = 5) {
  return {randn({4, width}, rng), randn({lf, width}, rng), randn({5, width}, rng)};
}

}  // namespace

TEST_CASE("foreground features concatenate along length") {
  Rng rng(1);
  const Tensor a = randn({256, 8}, rng), b = randn({256, 8}, rng);
  const Tensor both = concat_foreground_features({a, b}, 8);
  CHECK(both.shape() == Shape{512, 8});
  CHECK(slice_rows(both, 0, 256) == a);
  CHECK(slice_rows(both, 256, 512) == b);
  CHECK(concat_foreground_features({a}, 8) == a);
  CHECK(concat_foreground_features({}, 8).shape() == Shape{0, 8});
  CHECK_THROWS_AS(concat_foreground_features({a, randn({256, 7}, rng)}, 8), ShapeMismatch);
}

TEST_CASE("gradient suite passes finite differences on every block") {
  for (const auto& e : run_gradient_suite(11, 20)) {
    INFO(e.block);
    CHECK(e.trials == 20);
    CHECK(e.coordinates > 0);
    CHECK(e.max_rel_error < 1e-4);
  }
}

TEST_CASE("tri-context block matches a hand-evaluated single-token fixture") {
  Rng rng(2);
  TriContextBlock block("b", {2, 2, 2, 2, 2, 1}, rng, 1.0);
  // one key per attention, so each output is ctx * wv * wo whatever wq and wk are
  block.ca1.wv.value = Tensor({2, 2}, {1, 0, 0, 1});
  block.ca1.wo.value = Tensor({2, 2}, {2, 0, 0, 1});
  block.ca2.wv.value = Tensor({2, 2}, {0, 1, 1, 0});
  block.ca2.wo.value = Tensor({2, 2}, {1, 1, 0, 1});
  block.ca3.wv.value = Tensor({2, 2}, {1, -1, 0, 2});
  block.ca3.wo.value = Tensor({2, 2}, {1, 0, 1, 1});
  block.sa.wv.value = Tensor({2, 2}, {1, 0, 1, 1});
  block.sa.wo.value = Tensor({2, 2}, {0, 1, 1, 0});
  const ContextBundle ctx{Tensor({1, 2}, {1, 0}), Tensor({1, 2}, {0, 1}), Tensor({1, 2}, {1, 1})};
  TriContextCache cache;
  const Tensor z = block.forward(Tensor({1, 2}, {1, 2}), ctx, &cache);
  CHECK(cache.y == Tensor({1, 2}, {5, 2}));
  CHECK(z == Tensor({1, 2}, {3, 9}));
}

TEST_CASE("zeroed CA2 and CA3 outputs reduce to the text-only block") {
  Rng rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    TriContextBlock block("b", {6, 5, 4, 3, 8, 2}, rng, 0.5);
    block.ca2.wo.value.fill(0.0);
    block.ca3.wo.value.fill(0.0);
    const Tensor x = randn({7, 6}, rng);
    const ContextBundle ctx{randn({4, 5}, rng), randn({9, 4}, rng), randn({3, 3}, rng)};
    const Tensor base = single_context_forward(x, ctx.y_t, block.ca1.view(), block.sa.view());
    CHECK(max_abs_diff(block.forward(x, ctx), base) <= 1e-12);
  }
}

TEST_CASE("empty foreground context contributes nothing") {
  Rng rng(4);
  TriContextBlock block("b", {6, 5, 4, 3, 8, 2}, rng, 0.5);
  const Tensor x = randn({5, 6}, rng);
  ContextBundle ctx{randn({4, 5}, rng), concat_foreground_features({}, 4), randn({3, 3}, rng)};
  TriContextBlock reference = block;
  reference.ca2.wo.value = randn(reference.ca2.wo.value.shape(), rng);
  CHECK(block.forward(x, ctx) == reference.forward(x, ctx));
}

TEST_CASE("default freeze flags") {
  Rng rng(5);
  TriContextBlock block("b", {}, rng, 0.1);
  for (auto* p : {&block.ca1.wq, &block.ca1.wk, &block.ca1.wv, &block.ca1.wo, &block.sa.wq, &block.sa.wo})
    CHECK_FALSE(p->trainable);
  for (auto* p : {&block.ca2.wq, &block.ca2.wk, &block.ca3.wv, &block.ca3.wo}) CHECK(p->trainable);
}

TEST_CASE("spatio-temporal block: single frame and zero indicator") {
  Rng rng(6);
  SpatioTemporalBlock block("b", {4, 3, 5, 4, 2}, rng, 0.5);
  const std::size_t sites = 6;
  const Tensor x = randn({sites, 4}, rng);
  const VidContext ctx{randn({3, 3}, rng), Tensor({5})};
  SpatioTemporalCache cache;
  const Tensor z = block.forward(x, ctx, 1, &cache);
  // one frame: temporal attention sees a single token per site
  const Tensor proj = matmul(matmul(cache.y1, block.temporal.wv.value), block.temporal.wo.value);
  CHECK(max_abs_diff(z, x + proj) < 1e-13);
  // bias is zero by default, so a zero indicator adds nothing
  CHECK(cache.y == block.ca.forward(x, ctx.y_s, nullptr));
}

TEST_CASE("spatial and temporal attention order matters") {
  Rng rng(7);
  SpatioTemporalBlock block("b", {4, 3, 5, 4, 2}, rng, 0.8);
  const std::size_t frames = 3, sites = 4;
  const Tensor y = randn({frames * sites, 4}, rng);
  const Tensor st = temporal_self_attention(spatial_self_attention(y, frames, block.spatial.view()), frames,
                                            block.temporal.view());
  const Tensor ts = spatial_self_attention(temporal_self_attention(y, frames, block.temporal.view()), frames,
                                           block.spatial.view());
  CHECK(max_abs_diff(st, ts) > 1e-3);
  CHECK_THROWS_AS(spatial_self_attention(randn({7, 4}, rng), 3, block.spatial.view()), ShapeMismatch);
}

TEST_CASE("spatial attention only mixes within a frame") {
  Rng rng(8);
  AttentionLayer layer("s", 3, 3, 4, 2, rng, 0.7);
  const std::size_t frames = 3, sites = 5;
  const Tensor y = randn({frames * sites, 3}, rng);
  Tensor y2 = y;
  for (std::size_t k = 0; k < sites * 3; ++k) y2[2 * sites * 3 + k] += 1.0;  // change frame 2 only
  const Tensor a = spatial_self_attention(y, frames, layer.view()), b = spatial_self_attention(y2, frames, layer.view());
  CHECK(slice_rows(a, 0, 2 * sites) == slice_rows(b, 0, 2 * sites));
  // temporal attention couples the frames at each site
  const Tensor c = temporal_self_attention(y, frames, layer.view()), d = temporal_self_attention(y2, frames, layer.view());
  CHECK(max_abs_diff(slice_rows(c, 0, sites), slice_rows(d, 0, sites)) > 1e-6);
}

TEST_CASE("image denoiser shape contract and determinism") {
  Rng rng(9);
  ImgDenoiser model(ImgDenoiserConfig{});
  const Tensor latent = randn({4, 16, 16}, rng);
  const ContextBundle ctx = random_bundle(rng, 32);
  const Tensor a = model.predict(latent, 500, ctx);
  CHECK(a.shape() == latent.shape());
  CHECK(model.predict(latent, 500, ctx) == a);
  CHECK(model.predict(latent, 499, ctx) != a);
  CHECK_THROWS_AS(model.predict(randn({3, 16, 16}, rng), 1, ctx), ShapeMismatch);
}

TEST_CASE("CA2 receives gradient when foreground features are present") {
  Rng rng(10);
  ImgDenoiser model(small_img(1));
  const Tensor latent = randn({4, 6, 6}, rng), target = randn({4, 6, 6}, rng);
  const ContextBundle ctx = random_bundle(rng, 6);
  const auto params = model.parameters();
  zero_grads(params);
  ImgDenoiserCache cache;
  const Tensor pred = model.predict(latent, 300, ctx, &cache);
  model.backward(latent, 300, ctx, cache, 2.0 * (pred - target));
  CHECK(max_abs(model.blocks[0].ca2.wk.grad) > 0.0);
  CHECK(max_abs(model.blocks[1].ca2.wv.grad) > 0.0);
  // and none at all when the foreground context is empty
  zero_grads(params);
  ContextBundle no_fg = ctx;
  no_fg.y_f = Tensor({0, 6});
  model.predict(latent, 300, no_fg, &cache);
  model.backward(latent, 300, no_fg, cache, 2.0 * (pred - target));
  CHECK(max_abs(model.blocks[0].ca2.wk.grad) == 0.0);
}

TEST_CASE("video denoiser shape contracts") {
  Rng rng(11);
  VidDenoiser model(VidDenoiserConfig{});
  const Tensor video = randn({4, 8, 16, 16}, rng), ref = randn({4, 1, 16, 16}, rng);
  const VidContext ctx{randn({16, 32}, rng), Tensor({16})};
  const Tensor eps = model.predict(video, 700, ctx, ref);
  CHECK(eps.shape() == Shape{4, 8, 16, 16});
  CHECK(model.predict(video, 700, ctx, ref) == eps);
  CHECK_THROWS_AS(model.predict(video, 700, ctx, randn({4, 1, 16, 15}, rng)), ShapeMismatch);
  CHECK_THROWS_AS(model.predict(randn({4, 16, 16}, rng), 700, ctx, ref), ShapeMismatch);

  VidDenoiserConfig wide;
  wide.dims = {4, 4, 16, 4, 1};
  VidDenoiser big(wide);
  const VidContext big_ctx{randn({8, 4}, rng), Tensor({16})};
  CHECK(big.predict(randn({4, 16, 40, 64}, rng), 900, big_ctx, randn({4, 1, 40, 64}, rng)).shape() ==
        Shape{4, 16, 40, 64});
}

TEST_CASE("zero weights and zero inputs predict zero noise") {
  VidDenoiser model(VidDenoiserConfig{});
  zero_all(model.parameters());
  const Tensor eps = model.predict(Tensor({4, 8, 16, 16}), 400, model.null_context(16), Tensor({4, 1, 16, 16}));
  CHECK(max_abs(eps) == 0.0);
  ImgDenoiser img(ImgDenoiserConfig{});
  zero_all(img.parameters());
  CHECK(max_abs(img.predict(Tensor({4, 16, 16}), 400, img.null_context())) == 0.0);
}

TEST_CASE("reference latent changes the video prediction") {
  Rng rng(12);
  VidDenoiserConfig cfg;
  cfg.dims = {8, 8, 4, 8, 2};
  VidDenoiser model(cfg);
  const Tensor video = randn({4, 3, 5, 5}, rng);
  const VidContext ctx{randn({4, 8}, rng), Tensor({4})};
  CHECK(max_abs_diff(model.predict(video, 100, ctx, randn({4, 1, 5, 5}, rng)),
                     model.predict(video, 100, ctx, randn({4, 1, 5, 5}, rng))) > 1e-6);
}

TEST_CASE("training respects freeze flags") {
  Rng rng(13);
  ImgDenoiser model(small_img(2));
  const auto sched = make_schedule(1000, 0.00085, 0.012);
  std::vector<ImageExample> batch;
  for (int i = 0; i < 2; ++i) batch.push_back({randn({4, 6, 6}, rng, 0.5), random_bundle(rng, 6)});
  const auto params = model.parameters();
  const auto before = snapshot(params);
  TrainState state;
  state.config.hyper.lr = 1e-2;
  for (int step = 0; step < 20; ++step) train_step(model, batch, sched, rng, state);
  for (std::size_t i = 0; i < params.size(); ++i) {
    INFO(params[i]->name);
    if (params[i]->trainable)
      CHECK(params[i]->value != before[i]);
    else
      CHECK(params[i]->value == before[i]);
  }
  CHECK(model.blocks[0].ca1.wq.value == before[3]);
}

TEST_CASE("full context dropout zeroes context projection gradients") {
  Rng rng(14);
  ImgDenoiser model(small_img(3));
  const auto sched = make_schedule(1000, 0.00085, 0.012);
  std::vector<ImageExample> batch{{randn({4, 6, 6}, rng, 0.5), random_bundle(rng, 6)}};
  TrainState state;
  state.config.p_drop = 1.0;
  train_step(model, batch, sched, rng, state);
  for (auto& b : model.blocks)
    for (auto* layer : {&b.ca1, &b.ca2, &b.ca3}) {
      CHECK(max_abs(layer->wk.grad) == 0.0);
      CHECK(max_abs(layer->wv.grad) == 0.0);
    }

  VidDenoiserConfig cfg;
  cfg.dims = {8, 8, 4, 8, 2};
  VidDenoiser vid(cfg);
  std::vector<VideoExample> vbatch{
      {randn({4, 3, 4, 4}, rng, 0.5), randn({4, 1, 4, 4}, rng), {randn({4, 8}, rng), Tensor({4}, {1, 0, 0.5, 0})}}};
  TrainState vstate;
  vstate.config.p_drop = 1.0;
  train_step(vid, vbatch, sched, rng, vstate);
  for (auto& b : vid.blocks) {
    CHECK(max_abs(b.ca.wk.grad) == 0.0);
    CHECK(max_abs(b.ca.wv.grad) == 0.0);
    CHECK(max_abs(b.action.weight.grad) == 0.0);
  }
}

TEST_CASE("training on a single mode lowers the loss") {
  Rng rng(15);
  ImgDenoiserConfig cfg = small_img(4);
  ImgDenoiser model(cfg);
  for (auto* p : model.parameters()) p->trainable = true;
  const auto sched = make_schedule(1000, 0.00085, 0.012);
  const Tensor mode = test::smooth_field({4, 6, 6}, rng, 0.5);
  std::vector<ImageExample> batch(4, ImageExample{mode, random_bundle(rng, 6)});
  TrainState state;
  state.config.hyper.lr = 5e-3;
  std::vector<double> losses;
  for (int step = 0; step < 120; ++step) losses.push_back(train_step(model, batch, sched, rng, state));
  const auto avg = [&](std::size_t a, std::size_t b) {
    double s = 0.0;
    for (std::size_t i = a; i < b; ++i) s += losses[i];
    return s / static_cast<double>(b - a);
  };
  CHECK(avg(100, 120) < avg(0, 20));
}

TEST_CASE("weights round-trip through a manifest directory") {
  const auto dir = test::scratch_dir("weights");
  ImgDenoiser a(small_img(5));
  save_weights(a.parameters(), dir);
  ImgDenoiser b(small_img(6));
  b.blocks[0].ca1.set_trainable(true);
  load_weights(b.parameters(), dir);
  const auto pa = a.parameters(), pb = b.parameters();
  for (std::size_t i = 0; i < pa.size(); ++i) {
    CHECK(pb[i]->trainable == pa[i]->trainable);
    for (std::size_t k = 0; k < pa[i]->value.numel(); ++k)
      CHECK(pb[i]->value[k] == static_cast<double>(static_cast<float>(pa[i]->value[k])));
  }
  ImgDenoiserConfig other = small_img(5);
  other.dims.channels = 4;
  other.dims.inner = 4;
  ImgDenoiser c(other);
  CHECK_THROWS_AS(load_weights(c.parameters(), dir), ShapeMismatch);
  ImgDenoiserConfig fewer = small_img(5);
  fewer.blocks = 1;
  ImgDenoiser d(fewer);
  CHECK_THROWS_AS(load_weights(d.parameters(), dir), IoError);
}
