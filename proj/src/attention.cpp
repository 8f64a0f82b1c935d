#include "videostudio/attention.hpp"

#include <algorithm>
#include <cmath>

#include "videostudio/kernels.hpp"

namespace vs {

namespace {

void check_attention(const Tensor& x, const Tensor& ctx, const AttentionView& w) {
  require_rank(x, 2, "cross_attention");
  require_rank(ctx, 2, "cross_attention");
  const std::size_t c = x.dim(1), ck = ctx.dim(1);
  require_rank(w.wq, 2, "cross_attention wq");
  const std::size_t d = w.wq.dim(1);
  if (w.wq.dim(0) != c || w.wk.shape() != Shape{ck, d} || w.wv.shape() != Shape{ck, d} ||
      w.wo.shape() != Shape{d, c}) {
    throw ShapeMismatch("cross_attention: x " + shape_str(x.shape()) + " ctx " + shape_str(ctx.shape()) + " wq " +
                        shape_str(w.wq.shape()) + " wk " + shape_str(w.wk.shape()) + " wv " +
                        shape_str(w.wv.shape()) + " wo " + shape_str(w.wo.shape()));
  }
  if (w.heads == 0 || d % w.heads != 0) {
    throw ShapeMismatch("cross_attention: heads " + std::to_string(w.heads) + " do not divide " + std::to_string(d));
  }
}

Tensor head_cols(const Tensor& t, std::size_t head, std::size_t dh) {
  const std::size_t rows = t.dim(0), d = t.dim(1);
  Tensor out({rows, dh});
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < dh; ++j) out[r * dh + j] = t[r * d + head * dh + j];
  return out;
}

void put_head_cols(Tensor& t, const Tensor& part, std::size_t head, std::size_t dh) {
  const std::size_t rows = t.dim(0), d = t.dim(1);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < dh; ++j) t[r * d + head * dh + j] = part[r * dh + j];
}

}  // namespace

Tensor cross_attention(const Tensor& x, const Tensor& ctx, const AttentionView& w, AttentionCache* cache) {
  check_attention(x, ctx, w);
  const std::size_t lq = x.dim(0), lk = ctx.dim(0), d = w.wq.dim(1);
  const std::size_t dh = d / w.heads;
  if (lk == 0) {
    if (cache) *cache = AttentionCache{};
    return Tensor({lq, x.dim(1)});
  }
  Tensor q = matmul(x, w.wq);
  Tensor k = matmul(ctx, w.wk);
  Tensor v = matmul(ctx, w.wv);
  Tensor probs({w.heads, lq, lk});
  Tensor mixed({lq, d});
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  for (std::size_t h = 0; h < w.heads; ++h) {
    Tensor scores = matmul_nt(head_cols(q, h, dh), head_cols(k, h, dh));
    scores *= scale;
    Tensor p = softmax_lastdim(scores);
    put_head_cols(mixed, matmul(p, head_cols(v, h, dh)), h, dh);
    std::copy(p.values().begin(), p.values().end(), probs.values().begin() + static_cast<std::ptrdiff_t>(h * lq * lk));
  }
  Tensor out = matmul(mixed, w.wo);
  if (cache) *cache = AttentionCache{std::move(q), std::move(k), std::move(v), std::move(probs), std::move(mixed)};
  return out;
}

AttentionGrads cross_attention_backward(const Tensor& x, const Tensor& ctx, const AttentionView& w,
                                        const AttentionCache& cache, const Tensor& dout) {
  check_attention(x, ctx, w);
  const std::size_t lq = x.dim(0), lk = ctx.dim(0), d = w.wq.dim(1);
  if (dout.shape() != Shape{lq, x.dim(1)}) throw ShapeMismatch("cross_attention_backward: dout");
  AttentionGrads g{Tensor(x.shape()), Tensor(ctx.shape()), Tensor(w.wq.shape()),
                   Tensor(w.wk.shape()), Tensor(w.wv.shape()), Tensor(w.wo.shape())};
  if (lk == 0) return g;

  const std::size_t dh = d / w.heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  g.dwo = matmul_tn(cache.mixed, dout);
  const Tensor dmixed = matmul_nt(dout, w.wo);
  Tensor dq({lq, d}), dk({lk, d}), dv({lk, d});
  for (std::size_t h = 0; h < w.heads; ++h) {
    std::vector<double> pdata(cache.probs.values().begin() + static_cast<std::ptrdiff_t>(h * lq * lk),
                              cache.probs.values().begin() + static_cast<std::ptrdiff_t>((h + 1) * lq * lk));
    const Tensor p({lq, lk}, std::move(pdata));
    const Tensor dout_h = head_cols(dmixed, h, dh);
    const Tensor qh = head_cols(cache.q, h, dh);
    const Tensor kh = head_cols(cache.k, h, dh);
    const Tensor vh = head_cols(cache.v, h, dh);
    const Tensor dp = matmul_nt(dout_h, vh);
    put_head_cols(dv, matmul_tn(p, dout_h), h, dh);
    Tensor ds = softmax_lastdim_backward(p, dp);
    ds *= scale;
    put_head_cols(dq, matmul(ds, kh), h, dh);
    put_head_cols(dk, matmul_tn(ds, qh), h, dh);
  }
  g.dwq = matmul_tn(x, dq);
  g.dwk = matmul_tn(ctx, dk);
  g.dwv = matmul_tn(ctx, dv);
  g.dx = matmul_nt(dq, w.wq);
  g.dctx = matmul_nt(dk, w.wk);
  g.dctx += matmul_nt(dv, w.wv);
  return g;
}

AttentionLayer::AttentionLayer(const std::string& name, std::size_t channels, std::size_t ctx_channels,
                               std::size_t inner, std::size_t heads_, Rng& rng, double init_std)
    : wq(name + ".wq", random_normal({channels, inner}, rng, init_std)),
      wk(name + ".wk", random_normal({ctx_channels, inner}, rng, init_std)),
      wv(name + ".wv", random_normal({ctx_channels, inner}, rng, init_std)),
      wo(name + ".wo", random_normal({inner, channels}, rng, init_std)),
      heads(heads_) {}

std::pair<Tensor, Tensor> AttentionLayer::backward(const Tensor& x, const Tensor& ctx, const AttentionCache& cache,
                                                   const Tensor& dout) {
  AttentionGrads g = cross_attention_backward(x, ctx, view(), cache, dout);
  wq.grad += g.dwq;
  wk.grad += g.dwk;
  wv.grad += g.dwv;
  wo.grad += g.dwo;
  return {std::move(g.dx), std::move(g.dctx)};
}

void AttentionLayer::set_trainable(bool on) {
  wq.trainable = wk.trainable = wv.trainable = wo.trainable = on;
}

void AttentionLayer::collect(std::vector<Parameter*>& out) {
  out.insert(out.end(), {&wq, &wk, &wv, &wo});
}

}  // namespace vs
