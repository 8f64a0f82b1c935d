#pragma once

#include <cstddef>

#include "videostudio/optim.hpp"
#include "videostudio/tensor.hpp"

namespace vs {

// Non-owning view of the four projections of one attention module.
//   wq [C, d], wk [C_k, d], wv [C_k, d], wo [d, C]; heads must divide d.
struct AttentionView {
  const Tensor& wq;
  const Tensor& wk;
  const Tensor& wv;
  const Tensor& wo;
  std::size_t heads = 1;
};

struct AttentionCache {
  Tensor q, k, v;
  Tensor probs;  // [heads, L_q, L_k]
  Tensor mixed;  // [L_q, d], per-head outputs before wo
};

struct AttentionGrads {
  Tensor dx, dctx, dwq, dwk, dwv, dwo;
};

// Multi-head scaled dot-product attention of queries x [L_q, C] over
// ctx [L_k, C_k]. A zero-length context yields an all-zero output.
Tensor cross_attention(const Tensor& x, const Tensor& ctx, const AttentionView& w, AttentionCache* cache = nullptr);

AttentionGrads cross_attention_backward(const Tensor& x, const Tensor& ctx, const AttentionView& w,
                                        const AttentionCache& cache, const Tensor& dout);

// Parameter-owning wrapper used by the denoiser blocks.
struct AttentionLayer {
  Parameter wq, wk, wv, wo;
  std::size_t heads = 1;

  AttentionLayer() = default;
  AttentionLayer(const std::string& name, std::size_t channels, std::size_t ctx_channels, std::size_t inner,
                 std::size_t heads, Rng& rng, double init_std);

  AttentionView view() const { return {wq.value, wk.value, wv.value, wo.value, heads}; }

  Tensor forward(const Tensor& x, const Tensor& ctx, AttentionCache* cache) const {
    return cross_attention(x, ctx, view(), cache);
  }
  // Accumulates parameter grads; returns {dx, dctx}.
  std::pair<Tensor, Tensor> backward(const Tensor& x, const Tensor& ctx, const AttentionCache& cache,
                                     const Tensor& dout);

  void set_trainable(bool on);
  void collect(std::vector<Parameter*>& out);
};

}  // namespace vs
