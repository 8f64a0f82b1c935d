#pragma once

#include <string>
#include <vector>

#include "videostudio/action.hpp"
#include "videostudio/attention.hpp"

namespace vs {

// Token layout everywhere: [L, C] rows. Video tokens are frame-major, token
// f * sites + p holds spatial site p of frame f.

struct ContextBundle {
  Tensor y_t;  // [L_t, C_t] text
  Tensor y_f;  // [L_f, C_f] foreground references, concatenated
  Tensor y_b;  // [L_b, C_b] background reference
};

// Zero-length contexts of the given widths; each cross-attention then adds 0.
ContextBundle null_bundle(std::size_t text, std::size_t fg, std::size_t bg);

// Row-wise concatenation of per-entity [L_i, channels] features. An empty
// list gives a [0, channels] context.
Tensor concat_foreground_features(const std::vector<Tensor>& features, std::size_t channels);

struct TriContextDims {
  std::size_t channels = 32;
  std::size_t text = 32;
  std::size_t fg = 32;
  std::size_t bg = 32;
  std::size_t inner = 32;
  std::size_t heads = 2;
};

struct TriContextCache {
  AttentionCache ca1, ca2, ca3, sa;
  Tensor y;
};

struct TriContextGrads {
  Tensor dx, dy_t, dy_f, dy_b;
};

// y = CA1(x, y_t) + CA2(x, y_f) + CA3(x, y_b); z = x + SA(y).
class TriContextBlock {
 public:
  AttentionLayer ca1, ca2, ca3, sa;

  TriContextBlock(const std::string& name, const TriContextDims& dims, Rng& rng, double init_std);

  std::size_t channels() const { return ca1.wq.value.dim(0); }
  Tensor forward(const Tensor& x, const ContextBundle& ctx, TriContextCache* cache = nullptr) const;
  // Accumulates parameter grads.
  TriContextGrads backward(const Tensor& x, const ContextBundle& ctx, const TriContextCache& cache, const Tensor& dz);

  // CA2 and CA3 trainable, CA1 and SA frozen.
  void apply_default_freeze();
  void collect(std::vector<Parameter*>& out);
};

// Text-only block: z = x + SA(CA(x, y_t)).
Tensor single_context_forward(const Tensor& x, const Tensor& y_t, const AttentionView& ca, const AttentionView& sa);

struct VidContext {
  Tensor y_s;  // [L_s, C_s] scene-reference features
  Tensor y_a;  // [V] action indicator
};

// Self-attention inside each frame over its sites.
Tensor spatial_self_attention(const Tensor& y, std::size_t frames, const AttentionView& w,
                              std::vector<AttentionCache>* caches = nullptr);
// Self-attention across frames at each site.
Tensor temporal_self_attention(const Tensor& y, std::size_t frames, const AttentionView& w,
                               std::vector<AttentionCache>* caches = nullptr);
// Accumulate layer grads and return dL/dy.
Tensor spatial_self_attention_backward(const Tensor& y, std::size_t frames, AttentionLayer& layer,
                                       const std::vector<AttentionCache>& caches, const Tensor& dout);
Tensor temporal_self_attention_backward(const Tensor& y, std::size_t frames, AttentionLayer& layer,
                                        const std::vector<AttentionCache>& caches, const Tensor& dout);

struct SpatioTemporalDims {
  std::size_t channels = 32;
  std::size_t scene = 32;
  std::size_t vocab = 16;
  std::size_t inner = 32;
  std::size_t heads = 2;
};

struct SpatioTemporalCache {
  AttentionCache ca;
  std::vector<AttentionCache> spatial, temporal;
  Tensor y, y1;
};

struct SpatioTemporalGrads {
  Tensor dx, dy_s, dy_a;
};

// y = CA(x, y_s) + f(y_a) on every token; z = x + TemporalSA(SpatialSA(y)).
class SpatioTemporalBlock {
 public:
  AttentionLayer ca, spatial, temporal;
  ActionEmbedding action;

  SpatioTemporalBlock(const std::string& name, const SpatioTemporalDims& dims, Rng& rng, double init_std);

  Tensor forward(const Tensor& x, const VidContext& ctx, std::size_t frames,
                 SpatioTemporalCache* cache = nullptr) const;
  SpatioTemporalGrads backward(const Tensor& x, const VidContext& ctx, std::size_t frames,
                               const SpatioTemporalCache& cache, const Tensor& dz);

  void collect(std::vector<Parameter*>& out);
};

}  // namespace vs
