#include "videostudio/camera.hpp"

#include <cmath>

#include "videostudio/kernels.hpp"
#include "videostudio/tensor_io.hpp"

namespace vs {

namespace {

void require_field(const Tensor& disp) {
  if (disp.rank() != 4 || disp.dim(3) != 2) throw DimensionMismatch("flow field must be [F,H,W,2], got " + shape_str(disp.shape()));
}

}  // namespace

double SpeedTable::translation_px(CameraSpeed s) const { return translation[static_cast<std::size_t>(s)]; }
double SpeedTable::zoom_rate(CameraSpeed s) const { return zoom[static_cast<std::size_t>(s)]; }

Tensor FlowField::frame(std::size_t f) const {
  const std::size_t n = height() * width() * 2;
  if (f >= frames()) throw DimensionMismatch("flow frame " + std::to_string(f) + " of " + std::to_string(frames()));
  std::vector<double> out(disp.values().begin() + static_cast<std::ptrdiff_t>(f * n),
                          disp.values().begin() + static_cast<std::ptrdiff_t>((f + 1) * n));
  return Tensor({height(), width(), 2}, std::move(out));
}

std::pair<double, double> translation_unit(CameraDirection d) {
  switch (d) {
    case CameraDirection::Left: return {-1.0, 0.0};
    case CameraDirection::Right: return {1.0, 0.0};
    case CameraDirection::Up: return {0.0, -1.0};
    case CameraDirection::Down: return {0.0, 1.0};
    default: return {0.0, 0.0};
  }
}

FlowField synthesize_flow(const CameraMove& move, std::size_t frames, std::size_t height, std::size_t width,
                          const SpeedTable& table) {
  if (frames == 0 || height == 0 || width == 0) throw DimensionMismatch("flow field needs F,H,W >= 1");
  FlowField field{Tensor({frames, height, width, 2})};
  auto& d = field.disp;
  const double cx = 0.5 * static_cast<double>(width - 1), cy = 0.5 * static_cast<double>(height - 1);
  for (std::size_t f = 0; f < frames; ++f) {
    const double ff = static_cast<double>(f);
    double scale = 1.0;  // source offset from centre = scale * destination offset
    double tx = 0.0, ty = 0.0;
    switch (move.direction) {
      case CameraDirection::Static: break;
      case CameraDirection::Forward: scale = 1.0 / (1.0 + ff * table.zoom_rate(move.speed)); break;
      case CameraDirection::Backward: scale = 1.0 + ff * table.zoom_rate(move.speed); break;
      default: {
        const auto [ux, uy] = translation_unit(move.direction);
        const double v = ff * table.translation_px(move.speed);
        tx = v * ux;
        ty = v * uy;
      }
    }
    for (std::size_t y = 0; y < height; ++y) {
      for (std::size_t x = 0; x < width; ++x) {
        const std::size_t i = ((f * height + y) * width + x) * 2;
        d[i] = tx + (scale - 1.0) * (static_cast<double>(x) - cx);
        d[i + 1] = ty + (scale - 1.0) * (static_cast<double>(y) - cy);
      }
    }
  }
  return field;
}

Tensor warp_frame(const Tensor& frame, const Tensor& flow) {
  if (frame.rank() != 3 || flow.rank() != 3 || flow.dim(2) != 2 || flow.dim(0) != frame.dim(1) ||
      flow.dim(1) != frame.dim(2)) {
    throw DimensionMismatch("warp_frame: frame " + shape_str(frame.shape()) + " flow " + shape_str(flow.shape()));
  }
  if (!all_finite(flow)) throw DimensionMismatch("warp_frame: flow contains non-finite values");
  return warp_bilinear(frame, flow);
}

Tensor clip_frame(const Tensor& clip, std::size_t f) {
  require_rank(clip, 4, "clip_frame");
  const std::size_t c = clip.dim(0), nf = clip.dim(1), hw = clip.dim(2) * clip.dim(3);
  Tensor out({c, clip.dim(2), clip.dim(3)});
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t i = 0; i < hw; ++i) out[ch * hw + i] = clip[(ch * nf + f) * hw + i];
  return out;
}

void set_clip_frame(Tensor& clip, std::size_t f, const Tensor& frame) {
  const std::size_t c = clip.dim(0), nf = clip.dim(1), hw = clip.dim(2) * clip.dim(3);
  if (frame.shape() != Shape{c, clip.dim(2), clip.dim(3)}) throw DimensionMismatch("set_clip_frame");
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t i = 0; i < hw; ++i) clip[(ch * nf + f) * hw + i] = frame[ch * hw + i];
}

Tensor warp_clip(const Tensor& clip, const FlowField& field) {
  if (clip.rank() != 4) throw DimensionMismatch("warp_clip: clip must be [C,F,H,W], got " + shape_str(clip.shape()));
  require_field(field.disp);
  if (field.frames() != clip.dim(1) || field.height() != clip.dim(2) || field.width() != clip.dim(3)) {
    throw DimensionMismatch("warp_clip: clip " + shape_str(clip.shape()) + " field " + shape_str(field.disp.shape()));
  }
  if (!all_finite(field.disp)) throw DimensionMismatch("warp_clip: flow contains non-finite values");
  if (max_abs(field.disp) == 0.0) return clip;
  Tensor out = clip;
  const Tensor first = clip_frame(clip, 0);
  const std::size_t n = clip.dim(1);
  std::vector<Tensor> frames(n);
#pragma omp parallel for schedule(static) if (n > 1)
  for (std::size_t f = 1; f < n; ++f) frames[f] = kernels::serial::warp_bilinear(first, field.frame(f));
  for (std::size_t f = 1; f < n; ++f) set_clip_frame(out, f, frames[f]);
  return out;
}

Translation estimate_translation(const Tensor& reference, const Tensor& frame, int max_lag) {
  require_same_shape(reference, frame, "estimate_translation");
  require_rank(frame, 3, "estimate_translation");
  const std::size_t h = frame.dim(1), w = frame.dim(2);
  Translation best{0, 0, -2.0};
  for (int dy = -max_lag; dy <= max_lag; ++dy) {
    for (int dx = -max_lag; dx <= max_lag; ++dx) {
      Tensor flow({h, w, 2});
      for (std::size_t i = 0; i < h * w; ++i) {
        flow[2 * i] = dx;
        flow[2 * i + 1] = dy;
      }
      const Tensor shifted = kernels::serial::warp_bilinear(reference, flow);
      const double norm = std::sqrt(dot(shifted, shifted) * dot(frame, frame));
      const double score = norm > 0.0 ? dot(shifted, frame) / norm : 0.0;
      const bool closer = std::abs(dx) + std::abs(dy) < std::abs(best.dx) + std::abs(best.dy);
      if (score > best.score + 1e-12 || (std::abs(score - best.score) <= 1e-12 && closer)) best = {dx, dy, score};
    }
  }
  return best;
}

void save_flow(const FlowField& field, const std::filesystem::path& path) { save_tensor(field.disp, path); }

FlowField load_flow(const std::filesystem::path& path) {
  FlowField f{load_tensor(path)};
  require_field(f.disp);
  return f;
}

}  // namespace vs
