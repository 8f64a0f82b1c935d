#include "videostudio/blocks.hpp"

#include <string>

namespace vs {

namespace {

void require_rows(const Tensor& x, std::size_t cols, const char* what) {
  if (x.rank() != 2 || x.dim(1) != cols)
    throw ShapeMismatch(std::string(what) + ": expected [L, " + std::to_string(cols) + "], got " + shape_str(x.shape()));
}

std::size_t sites_of(const Tensor& y, std::size_t frames, const char* what) {
  if (y.rank() != 2 || frames == 0 || y.dim(0) % frames != 0)
    throw ShapeMismatch(std::string(what) + ": " + shape_str(y.shape()) + " is not " + std::to_string(frames) +
                        " frames of tokens");
  return y.dim(0) / frames;
}

// Rows f * sites + p for f in [0, frames).
Tensor gather_site(const Tensor& y, std::size_t frames, std::size_t sites, std::size_t p) {
  const std::size_t c = y.dim(1);
  Tensor out({frames, c});
  for (std::size_t f = 0; f < frames; ++f)
    for (std::size_t k = 0; k < c; ++k) out[f * c + k] = y[(f * sites + p) * c + k];
  return out;
}

void scatter_site(Tensor& y, const Tensor& rows, std::size_t frames, std::size_t sites, std::size_t p) {
  const std::size_t c = y.dim(1);
  for (std::size_t f = 0; f < frames; ++f)
    for (std::size_t k = 0; k < c; ++k) y[(f * sites + p) * c + k] = rows[f * c + k];
}

void place_rows(Tensor& y, const Tensor& rows, std::size_t begin) {
  std::copy(rows.values().begin(), rows.values().end(), y.values().begin() + static_cast<std::ptrdiff_t>(begin * y.dim(1)));
}

}  // namespace

ContextBundle null_bundle(std::size_t text, std::size_t fg, std::size_t bg) {
  return {Tensor({0, text}), Tensor({0, fg}), Tensor({0, bg})};
}

Tensor concat_foreground_features(const std::vector<Tensor>& features, std::size_t channels) {
  for (const auto& f : features) require_rows(f, channels, "concat_foreground_features");
  if (features.empty()) return Tensor({0, channels});
  return concat_rows(features);
}

TriContextBlock::TriContextBlock(const std::string& name, const TriContextDims& d, Rng& rng, double init_std)
    : ca1(name + ".ca1", d.channels, d.text, d.inner, d.heads, rng, init_std),
      ca2(name + ".ca2", d.channels, d.fg, d.inner, d.heads, rng, init_std),
      ca3(name + ".ca3", d.channels, d.bg, d.inner, d.heads, rng, init_std),
      sa(name + ".sa", d.channels, d.channels, d.inner, d.heads, rng, init_std) {
  apply_default_freeze();
}

Tensor TriContextBlock::forward(const Tensor& x, const ContextBundle& ctx, TriContextCache* cache) const {
  require_rows(x, channels(), "TriContextBlock x");
  TriContextCache local;
  TriContextCache& c = cache ? *cache : local;
  c.y = ca1.forward(x, ctx.y_t, &c.ca1);
  c.y += ca2.forward(x, ctx.y_f, &c.ca2);
  c.y += ca3.forward(x, ctx.y_b, &c.ca3);
  return x + sa.forward(c.y, c.y, &c.sa);
}

TriContextGrads TriContextBlock::backward(const Tensor& x, const ContextBundle& ctx, const TriContextCache& cache,
                                          const Tensor& dz) {
  require_same_shape(x, dz, "TriContextBlock::backward");
  auto [dq, dkv] = sa.backward(cache.y, cache.y, cache.sa, dz);
  const Tensor dy = dq + dkv;
  TriContextGrads g;
  g.dx = dz;
  auto [dx1, dyt] = ca1.backward(x, ctx.y_t, cache.ca1, dy);
  auto [dx2, dyf] = ca2.backward(x, ctx.y_f, cache.ca2, dy);
  auto [dx3, dyb] = ca3.backward(x, ctx.y_b, cache.ca3, dy);
  g.dx += dx1;
  g.dx += dx2;
  g.dx += dx3;
  g.dy_t = std::move(dyt);
  g.dy_f = std::move(dyf);
  g.dy_b = std::move(dyb);
  return g;
}

void TriContextBlock::apply_default_freeze() {
  ca1.set_trainable(false);
  sa.set_trainable(false);
  ca2.set_trainable(true);
  ca3.set_trainable(true);
}

void TriContextBlock::collect(std::vector<Parameter*>& out) {
  ca1.collect(out);
  ca2.collect(out);
  ca3.collect(out);
  sa.collect(out);
}

Tensor single_context_forward(const Tensor& x, const Tensor& y_t, const AttentionView& ca, const AttentionView& sa) {
  const Tensor y = cross_attention(x, y_t, ca);
  return x + cross_attention(y, y, sa);
}

Tensor spatial_self_attention(const Tensor& y, std::size_t frames, const AttentionView& w,
                              std::vector<AttentionCache>* caches) {
  const std::size_t sites = sites_of(y, frames, "spatial_self_attention");
  Tensor out(y.shape());
  if (caches) caches->assign(frames, {});
  for (std::size_t f = 0; f < frames; ++f) {
    const Tensor rows = slice_rows(y, f * sites, (f + 1) * sites);
    place_rows(out, cross_attention(rows, rows, w, caches ? &(*caches)[f] : nullptr), f * sites);
  }
  return out;
}

Tensor temporal_self_attention(const Tensor& y, std::size_t frames, const AttentionView& w,
                               std::vector<AttentionCache>* caches) {
  const std::size_t sites = sites_of(y, frames, "temporal_self_attention");
  Tensor out(y.shape());
  if (caches) caches->assign(sites, {});
  for (std::size_t p = 0; p < sites; ++p) {
    const Tensor rows = gather_site(y, frames, sites, p);
    scatter_site(out, cross_attention(rows, rows, w, caches ? &(*caches)[p] : nullptr), frames, sites, p);
  }
  return out;
}

Tensor spatial_self_attention_backward(const Tensor& y, std::size_t frames, AttentionLayer& layer,
                                       const std::vector<AttentionCache>& caches, const Tensor& dout) {
  const std::size_t sites = sites_of(y, frames, "spatial_self_attention_backward");
  require_same_shape(y, dout, "spatial_self_attention_backward");
  Tensor dy(y.shape());
  for (std::size_t f = 0; f < frames; ++f) {
    const Tensor rows = slice_rows(y, f * sites, (f + 1) * sites);
    auto [dq, dkv] = layer.backward(rows, rows, caches.at(f), slice_rows(dout, f * sites, (f + 1) * sites));
    place_rows(dy, dq + dkv, f * sites);
  }
  return dy;
}

Tensor temporal_self_attention_backward(const Tensor& y, std::size_t frames, AttentionLayer& layer,
                                        const std::vector<AttentionCache>& caches, const Tensor& dout) {
  const std::size_t sites = sites_of(y, frames, "temporal_self_attention_backward");
  require_same_shape(y, dout, "temporal_self_attention_backward");
  Tensor dy(y.shape());
  for (std::size_t p = 0; p < sites; ++p) {
    const Tensor rows = gather_site(y, frames, sites, p);
    auto [dq, dkv] = layer.backward(rows, rows, caches.at(p), gather_site(dout, frames, sites, p));
    scatter_site(dy, dq + dkv, frames, sites, p);
  }
  return dy;
}

SpatioTemporalBlock::SpatioTemporalBlock(const std::string& name, const SpatioTemporalDims& d, Rng& rng,
                                         double init_std)
    : ca(name + ".ca", d.channels, d.scene, d.inner, d.heads, rng, init_std),
      spatial(name + ".spatial", d.channels, d.channels, d.inner, d.heads, rng, init_std),
      temporal(name + ".temporal", d.channels, d.channels, d.inner, d.heads, rng, init_std),
      action(name + ".action", d.vocab, d.channels, rng, init_std) {}

Tensor SpatioTemporalBlock::forward(const Tensor& x, const VidContext& ctx, std::size_t frames,
                                    SpatioTemporalCache* cache) const {
  const std::size_t c = ca.wq.value.dim(0);
  require_rows(x, c, "SpatioTemporalBlock x");
  sites_of(x, frames, "SpatioTemporalBlock x");
  SpatioTemporalCache local;
  SpatioTemporalCache& k = cache ? *cache : local;
  k.y = ca.forward(x, ctx.y_s, &k.ca);
  const Tensor a = action.forward(ctx.y_a);
  for (std::size_t r = 0; r < x.dim(0); ++r)
    for (std::size_t j = 0; j < c; ++j) k.y[r * c + j] += a[j];
  k.y1 = spatial_self_attention(k.y, frames, spatial.view(), &k.spatial);
  return x + temporal_self_attention(k.y1, frames, temporal.view(), &k.temporal);
}

SpatioTemporalGrads SpatioTemporalBlock::backward(const Tensor& x, const VidContext& ctx, std::size_t frames,
                                                  const SpatioTemporalCache& cache, const Tensor& dz) {
  require_same_shape(x, dz, "SpatioTemporalBlock::backward");
  const Tensor dy1 = temporal_self_attention_backward(cache.y1, frames, temporal, cache.temporal, dz);
  const Tensor dy = spatial_self_attention_backward(cache.y, frames, spatial, cache.spatial, dy1);
  const std::size_t c = x.dim(1);
  Tensor da({c});
  for (std::size_t r = 0; r < x.dim(0); ++r)
    for (std::size_t j = 0; j < c; ++j) da[j] += dy[r * c + j];
  SpatioTemporalGrads g;
  g.dy_a = action.backward(ctx.y_a, da);
  auto [dx, dys] = ca.backward(x, ctx.y_s, cache.ca, dy);
  g.dx = dz + dx;
  g.dy_s = std::move(dys);
  return g;
}

void SpatioTemporalBlock::collect(std::vector<Parameter*>& out) {
  ca.collect(out);
  spatial.collect(out);
  temporal.collect(out);
  action.collect(out);
}

}  // namespace vs
