#pragma once

#include <filesystem>

#include "videostudio/script.hpp"
#include "videostudio/tensor.hpp"

namespace vs {

struct DimensionMismatch : public ShapeMismatch {
  using ShapeMismatch::ShapeMismatch;
};

struct SpeedTable {
  // indexed by CameraSpeed
  double translation[3] = {0.5, 1.0, 2.0};  // latent px per frame
  double zoom[3] = {0.01, 0.02, 0.04};      // scale rate per frame

  double translation_px(CameraSpeed s) const;
  double zoom_rate(CameraSpeed s) const;
};

// Displacements [F,H,W,2] as (dx, dy); source = destination + displacement.
struct FlowField {
  Tensor disp;

  std::size_t frames() const { return disp.dim(0); }
  std::size_t height() const { return disp.dim(1); }
  std::size_t width() const { return disp.dim(2); }
  Tensor frame(std::size_t f) const;  // [H,W,2]
};

// Unit sampling direction per translation: left (-1,0), right (1,0), up (0,-1), down (0,1).
std::pair<double, double> translation_unit(CameraDirection d);

// Frame f: translations move by f*v*u; forward samples (p - c)/(1 + f*rho) about
// the centre c (zoom in), backward samples (p - c)*(1 + f*rho) (zoom out).
FlowField synthesize_flow(const CameraMove& move, std::size_t frames, std::size_t height, std::size_t width,
                          const SpeedTable& table = {});

Tensor warp_frame(const Tensor& frame, const Tensor& flow);

// Frame f of the output is frame 0 of `clip` warped by field frame f, so the
// result follows one constant-velocity camera path anchored at the first frame.
// An all-zero field (static camera) returns the clip unchanged.
Tensor warp_clip(const Tensor& clip, const FlowField& field);

Tensor clip_frame(const Tensor& clip, std::size_t f);          // [C,F,H,W] -> [C,H,W]
void set_clip_frame(Tensor& clip, std::size_t f, const Tensor& frame);

struct Translation {
  int dx = 0;
  int dy = 0;
  double score = 0.0;
};

// Integer (dx, dy) within +-max_lag maximizing the normalized correlation of
// `frame` with `reference` warped by that displacement (source convention, so
// a right pan of f px reads dx = +f). Ties keep the smallest |dx|+|dy|.
Translation estimate_translation(const Tensor& reference, const Tensor& frame, int max_lag);

void save_flow(const FlowField& field, const std::filesystem::path& path);
FlowField load_flow(const std::filesystem::path& path);

}  // namespace vs
