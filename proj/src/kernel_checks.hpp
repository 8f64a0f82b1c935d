#pragma once

#include <string>

#include "videostudio/tensor.hpp"

namespace vs::detail {

inline void check_matmul(const Tensor& a, const Tensor& b, std::size_t a_inner, std::size_t b_inner,
                         const char* op) {
  require_rank(a, 2, op);
  require_rank(b, 2, op);
  if (a.dim(a_inner) != b.dim(b_inner)) {
    throw ShapeMismatch(std::string(op) + ": " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
}

inline void check_conv2d(const Tensor& x, const Tensor& kernel, const char* op) {
  require_rank(x, 3, op);
  require_rank(kernel, 4, op);
  if (kernel.dim(1) != x.dim(0) || kernel.dim(2) != 3 || kernel.dim(3) != 3) {
    throw ShapeMismatch(std::string(op) + ": kernel " + shape_str(kernel.shape()) + " vs input " +
                        shape_str(x.shape()));
  }
}

inline void check_temporal(const Tensor& x, const Tensor& kernel, const char* op) {
  require_rank(x, 4, op);
  require_rank(kernel, 3, op);
  if (kernel.dim(1) != x.dim(0) || kernel.dim(2) != 3) {
    throw ShapeMismatch(std::string(op) + ": kernel " + shape_str(kernel.shape()) + " vs input " +
                        shape_str(x.shape()));
  }
}

inline void check_bias(const Tensor& bias, std::size_t channels, const char* op) {
  if (bias.rank() != 1 || bias.dim(0) != channels) {
    throw ShapeMismatch(std::string(op) + ": bias " + shape_str(bias.shape()));
  }
}

inline void check_warp(const Tensor& frame, const Tensor& flow) {
  require_rank(frame, 3, "warp");
  require_rank(flow, 3, "warp");
  if (flow.dim(0) != frame.dim(1) || flow.dim(1) != frame.dim(2) || flow.dim(2) != 2) {
    throw ShapeMismatch("warp: flow " + shape_str(flow.shape()) + " vs frame " + shape_str(frame.shape()));
  }
}

// Bilinear sample of one channel plane with clamp-to-edge. Lerp form keeps
// constant planes exact and integer offsets exact.
inline double sample_bilinear(const double* plane, std::size_t h, std::size_t w, double sy, double sx) {
  const double max_x = static_cast<double>(w - 1);
  const double max_y = static_cast<double>(h - 1);
  sx = sx < 0.0 ? 0.0 : (sx > max_x ? max_x : sx);
  sy = sy < 0.0 ? 0.0 : (sy > max_y ? max_y : sy);
  const auto x0 = static_cast<std::size_t>(sx);
  const auto y0 = static_cast<std::size_t>(sy);
  const std::size_t x1 = x0 + 1 < w ? x0 + 1 : x0;
  const std::size_t y1 = y0 + 1 < h ? y0 + 1 : y0;
  const double fx = sx - static_cast<double>(x0);
  const double fy = sy - static_cast<double>(y0);
  const double a = plane[y0 * w + x0], b = plane[y0 * w + x1];
  const double c = plane[y1 * w + x0], d = plane[y1 * w + x1];
  const double top = a + fx * (b - a);
  const double bottom = c + fx * (d - c);
  return top + fy * (bottom - top);
}

}  // namespace vs::detail
