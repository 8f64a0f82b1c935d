#include <algorithm>
#include <cmath>

#include "kernel_checks.hpp"
#include "videostudio/kernels.hpp"

namespace vs::kernels::serial {

Tensor matmul(const Tensor& a, const Tensor& b) {
  detail::check_matmul(a, b, 1, 0, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor out({m, n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[p * n + j];
      out[i * n + j] = s;
    }
  return out;
}

Tensor matmul_tn(const Tensor& a, const Tensor& b) {
  detail::check_matmul(a, b, 0, 0, "matmul_tn");
  const std::size_t k = a.dim(0), m = a.dim(1), n = b.dim(1);
  Tensor out({m, n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += a[p * m + i] * b[p * n + j];
      out[i * n + j] = s;
    }
  return out;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  detail::check_matmul(a, b, 1, 1, "matmul_nt");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
  Tensor out({m, n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[j * k + p];
      out[i * n + j] = s;
    }
  return out;
}

Tensor softmax_lastdim(const Tensor& t) {
  if (t.rank() == 0) throw ShapeMismatch("softmax_lastdim: rank 0");
  const std::size_t cols = t.shape().back();
  Tensor out(t.shape());
  if (cols == 0) return out;
  const std::size_t rows = t.numel() / cols;
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = t.data() + r * cols;
    double* o = out.data() + r * cols;
    const double mx = *std::max_element(in, in + cols);
    double z = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      o[c] = std::exp(in[c] - mx);
      z += o[c];
    }
    for (std::size_t c = 0; c < cols; ++c) o[c] /= z;
  }
  return out;
}

Tensor softmax_lastdim_backward(const Tensor& y, const Tensor& dy) {
  require_same_shape(y, dy, "softmax_lastdim_backward");
  const std::size_t cols = y.rank() ? y.shape().back() : 0;
  Tensor dx(y.shape());
  if (cols == 0) return dx;
  const std::size_t rows = y.numel() / cols;
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t base = r * cols;
    double s = 0.0;
    for (std::size_t c = 0; c < cols; ++c) s += y[base + c] * dy[base + c];
    for (std::size_t c = 0; c < cols; ++c) dx[base + c] = y[base + c] * (dy[base + c] - s);
  }
  return dx;
}

Tensor conv2d_3x3(const Tensor& x, const Tensor& kernel, const Tensor& bias) {
  detail::check_conv2d(x, kernel, "conv2d_3x3");
  const std::size_t cin = x.dim(0), h = x.dim(1), w = x.dim(2), cout = kernel.dim(0);
  detail::check_bias(bias, cout, "conv2d_3x3");
  Tensor out({cout, h, w});
  for (std::size_t o = 0; o < cout; ++o)
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < w; ++j) {
        double s = bias[o];
        for (std::size_t c = 0; c < cin; ++c)
          for (std::size_t a = 0; a < 3; ++a)
            for (std::size_t b = 0; b < 3; ++b) {
              const auto ii = static_cast<std::ptrdiff_t>(i + a) - 1;
              const auto jj = static_cast<std::ptrdiff_t>(j + b) - 1;
              if (ii < 0 || jj < 0 || ii >= static_cast<std::ptrdiff_t>(h) || jj >= static_cast<std::ptrdiff_t>(w))
                continue;
              s += kernel[((o * cin + c) * 3 + a) * 3 + b] * x[(c * h + static_cast<std::size_t>(ii)) * w +
                                                               static_cast<std::size_t>(jj)];
            }
        out[(o * h + i) * w + j] = s;
      }
  return out;
}

ConvGrads conv2d_3x3_backward(const Tensor& x, const Tensor& kernel, const Tensor& dy) {
  detail::check_conv2d(x, kernel, "conv2d_3x3_backward");
  const std::size_t cin = x.dim(0), h = x.dim(1), w = x.dim(2), cout = kernel.dim(0);
  if (dy.shape() != Shape{cout, h, w}) throw ShapeMismatch("conv2d_3x3_backward: dy " + shape_str(dy.shape()));
  ConvGrads g{Tensor(x.shape()), Tensor(kernel.shape()), Tensor({cout})};
  for (std::size_t o = 0; o < cout; ++o)
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < w; ++j) {
        const double d = dy[(o * h + i) * w + j];
        g.dbias[o] += d;
        for (std::size_t c = 0; c < cin; ++c)
          for (std::size_t a = 0; a < 3; ++a)
            for (std::size_t b = 0; b < 3; ++b) {
              const auto ii = static_cast<std::ptrdiff_t>(i + a) - 1;
              const auto jj = static_cast<std::ptrdiff_t>(j + b) - 1;
              if (ii < 0 || jj < 0 || ii >= static_cast<std::ptrdiff_t>(h) || jj >= static_cast<std::ptrdiff_t>(w))
                continue;
              const std::size_t xi = (c * h + static_cast<std::size_t>(ii)) * w + static_cast<std::size_t>(jj);
              const std::size_t ki = ((o * cin + c) * 3 + a) * 3 + b;
              g.dkernel[ki] += d * x[xi];
              g.dx[xi] += d * kernel[ki];
            }
      }
  return g;
}

Tensor temporal_conv1d(const Tensor& x, const Tensor& kernel, const Tensor& bias) {
  detail::check_temporal(x, kernel, "temporal_conv1d");
  const std::size_t cin = x.dim(0), f = x.dim(1), hw = x.dim(2) * x.dim(3), cout = kernel.dim(0);
  detail::check_bias(bias, cout, "temporal_conv1d");
  Tensor out({cout, f, x.dim(2), x.dim(3)});
  for (std::size_t o = 0; o < cout; ++o)
    for (std::size_t t = 0; t < f; ++t)
      for (std::size_t p = 0; p < hw; ++p) {
        double s = bias[o];
        for (std::size_t c = 0; c < cin; ++c)
          for (std::size_t a = 0; a < 3; ++a) {
            const auto tt = static_cast<std::ptrdiff_t>(t + a) - 1;
            if (tt < 0 || tt >= static_cast<std::ptrdiff_t>(f)) continue;
            s += kernel[(o * cin + c) * 3 + a] * x[(c * f + static_cast<std::size_t>(tt)) * hw + p];
          }
        out[(o * f + t) * hw + p] = s;
      }
  return out;
}

ConvGrads temporal_conv1d_backward(const Tensor& x, const Tensor& kernel, const Tensor& dy) {
  detail::check_temporal(x, kernel, "temporal_conv1d_backward");
  const std::size_t cin = x.dim(0), f = x.dim(1), hw = x.dim(2) * x.dim(3), cout = kernel.dim(0);
  if (dy.shape() != Shape{cout, f, x.dim(2), x.dim(3)})
    throw ShapeMismatch("temporal_conv1d_backward: dy " + shape_str(dy.shape()));
  ConvGrads g{Tensor(x.shape()), Tensor(kernel.shape()), Tensor({cout})};
  for (std::size_t o = 0; o < cout; ++o)
    for (std::size_t t = 0; t < f; ++t)
      for (std::size_t p = 0; p < hw; ++p) {
        const double d = dy[(o * f + t) * hw + p];
        g.dbias[o] += d;
        for (std::size_t c = 0; c < cin; ++c)
          for (std::size_t a = 0; a < 3; ++a) {
            const auto tt = static_cast<std::ptrdiff_t>(t + a) - 1;
            if (tt < 0 || tt >= static_cast<std::ptrdiff_t>(f)) continue;
            const std::size_t xi = (c * f + static_cast<std::size_t>(tt)) * hw + p;
            const std::size_t ki = (o * cin + c) * 3 + a;
            g.dkernel[ki] += d * x[xi];
            g.dx[xi] += d * kernel[ki];
          }
      }
  return g;
}

Tensor warp_bilinear(const Tensor& frame, const Tensor& flow) {
  detail::check_warp(frame, flow);
  const std::size_t ch = frame.dim(0), h = frame.dim(1), w = frame.dim(2);
  Tensor out(frame.shape());
  for (std::size_t c = 0; c < ch; ++c)
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < w; ++j) {
        const double dx = flow[(i * w + j) * 2];
        const double dy = flow[(i * w + j) * 2 + 1];
        out[(c * h + i) * w + j] = detail::sample_bilinear(frame.data() + c * h * w, h, w,
                                                           static_cast<double>(i) + dy, static_cast<double>(j) + dx);
      }
  return out;
}

}  // namespace vs::kernels::serial
