#include <omp.h>

#include <algorithm>
#include <cmath>

#include "kernel_checks.hpp"
#include "videostudio/kernels.hpp"

// Parallel kernels. Loops are split over independent output elements only;
// the reduction order inside each element matches kernels::serial so forward
// results are bitwise equal to the reference. Backward passes gather instead
// of scatter, which reorders sums (parity is within 1e-12, not bitwise).

namespace vs::kernels::omp {

namespace {

using idx = std::ptrdiff_t;

// Below this many multiply-adds the fork/join cost dominates.
constexpr std::size_t kParallelWork = 1 << 14;

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  detail::check_matmul(a, b, 1, 0, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  const Tensor bt = transpose2d(b);
  Tensor out({m, n});
  const double* pa = a.data();
  const double* pb = bt.data();
  double* po = out.data();
#pragma omp parallel for schedule(static) if (m * n * k > kParallelWork)
  for (idx i = 0; i < static_cast<idx>(m); ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const double* ra = pa + static_cast<std::size_t>(i) * k;
      const double* rb = pb + j * k;
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += ra[p] * rb[p];
      po[static_cast<std::size_t>(i) * n + j] = s;
    }
  return out;
}

Tensor matmul_tn(const Tensor& a, const Tensor& b) {
  detail::check_matmul(a, b, 0, 0, "matmul_tn");
  const Tensor at = transpose2d(a);
  return matmul(at, b);
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  detail::check_matmul(a, b, 1, 1, "matmul_nt");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
  Tensor out({m, n});
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.data();
#pragma omp parallel for schedule(static) if (m * n * k > kParallelWork)
  for (idx i = 0; i < static_cast<idx>(m); ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const double* ra = pa + static_cast<std::size_t>(i) * k;
      const double* rb = pb + j * k;
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += ra[p] * rb[p];
      po[static_cast<std::size_t>(i) * n + j] = s;
    }
  return out;
}

Tensor softmax_lastdim(const Tensor& t) {
  if (t.rank() == 0) throw ShapeMismatch("softmax_lastdim: rank 0");
  const std::size_t cols = t.shape().back();
  Tensor out(t.shape());
  if (cols == 0) return out;
  const std::size_t rows = t.numel() / cols;
  const double* pin = t.data();
  double* pout = out.data();
#pragma omp parallel for schedule(static) if (t.numel() > kParallelWork)
  for (idx r = 0; r < static_cast<idx>(rows); ++r) {
    const double* in = pin + static_cast<std::size_t>(r) * cols;
    double* o = pout + static_cast<std::size_t>(r) * cols;
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
#pragma omp parallel for schedule(static) if (y.numel() > kParallelWork)
  for (idx r = 0; r < static_cast<idx>(rows); ++r) {
    const std::size_t base = static_cast<std::size_t>(r) * cols;
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
  const idx hi = static_cast<idx>(h), wi = static_cast<idx>(w);
#pragma omp parallel for collapse(2) schedule(static) if (cout * h * w * cin * 9 > kParallelWork)
  for (idx o = 0; o < static_cast<idx>(cout); ++o)
    for (idx i = 0; i < hi; ++i)
      for (idx j = 0; j < wi; ++j) {
        double s = bias[static_cast<std::size_t>(o)];
        for (std::size_t c = 0; c < cin; ++c)
          for (idx a = 0; a < 3; ++a)
            for (idx b = 0; b < 3; ++b) {
              const idx ii = i + a - 1, jj = j + b - 1;
              if (ii < 0 || jj < 0 || ii >= hi || jj >= wi) continue;
              s += kernel[((static_cast<std::size_t>(o) * cin + c) * 3 + static_cast<std::size_t>(a)) * 3 +
                          static_cast<std::size_t>(b)] *
                   x[(c * h + static_cast<std::size_t>(ii)) * w + static_cast<std::size_t>(jj)];
            }
        out[(static_cast<std::size_t>(o) * h + static_cast<std::size_t>(i)) * w + static_cast<std::size_t>(j)] = s;
      }
  return out;
}

ConvGrads conv2d_3x3_backward(const Tensor& x, const Tensor& kernel, const Tensor& dy) {
  detail::check_conv2d(x, kernel, "conv2d_3x3_backward");
  const std::size_t cin = x.dim(0), h = x.dim(1), w = x.dim(2), cout = kernel.dim(0);
  if (dy.shape() != Shape{cout, h, w}) throw ShapeMismatch("conv2d_3x3_backward: dy " + shape_str(dy.shape()));
  ConvGrads g{Tensor(x.shape()), Tensor(kernel.shape()), Tensor({cout})};
  const idx hi = static_cast<idx>(h), wi = static_cast<idx>(w);
  const bool par = cout * h * w * cin * 9 > kParallelWork;

#pragma omp parallel for schedule(static) if (par)
  for (idx o = 0; o < static_cast<idx>(cout); ++o) {
    const auto ou = static_cast<std::size_t>(o);
    double s = 0.0;
    for (std::size_t p = 0; p < h * w; ++p) s += dy[ou * h * w + p];
    g.dbias[ou] = s;
    for (std::size_t c = 0; c < cin; ++c)
      for (idx a = 0; a < 3; ++a)
        for (idx b = 0; b < 3; ++b) {
          double acc = 0.0;
          for (idx i = 0; i < hi; ++i)
            for (idx j = 0; j < wi; ++j) {
              const idx ii = i + a - 1, jj = j + b - 1;
              if (ii < 0 || jj < 0 || ii >= hi || jj >= wi) continue;
              acc += dy[(ou * h + static_cast<std::size_t>(i)) * w + static_cast<std::size_t>(j)] *
                     x[(c * h + static_cast<std::size_t>(ii)) * w + static_cast<std::size_t>(jj)];
            }
          g.dkernel[((ou * cin + c) * 3 + static_cast<std::size_t>(a)) * 3 + static_cast<std::size_t>(b)] = acc;
        }
  }

#pragma omp parallel for collapse(2) schedule(static) if (par)
  for (idx c = 0; c < static_cast<idx>(cin); ++c)
    for (idx i = 0; i < hi; ++i)
      for (idx j = 0; j < wi; ++j) {
        double acc = 0.0;
        for (std::size_t o = 0; o < cout; ++o)
          for (idx a = 0; a < 3; ++a)
            for (idx b = 0; b < 3; ++b) {
              // output (i - a + 1, j - b + 1) read input (i, j) through tap (a, b)
              const idx oi = i - a + 1, oj = j - b + 1;
              if (oi < 0 || oj < 0 || oi >= hi || oj >= wi) continue;
              acc += dy[(o * h + static_cast<std::size_t>(oi)) * w + static_cast<std::size_t>(oj)] *
                     kernel[((o * cin + static_cast<std::size_t>(c)) * 3 + static_cast<std::size_t>(a)) * 3 +
                            static_cast<std::size_t>(b)];
            }
        g.dx[(static_cast<std::size_t>(c) * h + static_cast<std::size_t>(i)) * w + static_cast<std::size_t>(j)] = acc;
      }
  return g;
}

Tensor temporal_conv1d(const Tensor& x, const Tensor& kernel, const Tensor& bias) {
  detail::check_temporal(x, kernel, "temporal_conv1d");
  const std::size_t cin = x.dim(0), f = x.dim(1), hw = x.dim(2) * x.dim(3), cout = kernel.dim(0);
  detail::check_bias(bias, cout, "temporal_conv1d");
  Tensor out({cout, f, x.dim(2), x.dim(3)});
  const idx fi = static_cast<idx>(f);
#pragma omp parallel for collapse(2) schedule(static) if (cout * f * hw * cin * 3 > kParallelWork)
  for (idx o = 0; o < static_cast<idx>(cout); ++o)
    for (idx t = 0; t < fi; ++t)
      for (std::size_t p = 0; p < hw; ++p) {
        double s = bias[static_cast<std::size_t>(o)];
        for (std::size_t c = 0; c < cin; ++c)
          for (idx a = 0; a < 3; ++a) {
            const idx tt = t + a - 1;
            if (tt < 0 || tt >= fi) continue;
            s += kernel[(static_cast<std::size_t>(o) * cin + c) * 3 + static_cast<std::size_t>(a)] *
                 x[(c * f + static_cast<std::size_t>(tt)) * hw + p];
          }
        out[(static_cast<std::size_t>(o) * f + static_cast<std::size_t>(t)) * hw + p] = s;
      }
  return out;
}

ConvGrads temporal_conv1d_backward(const Tensor& x, const Tensor& kernel, const Tensor& dy) {
  detail::check_temporal(x, kernel, "temporal_conv1d_backward");
  const std::size_t cin = x.dim(0), f = x.dim(1), hw = x.dim(2) * x.dim(3), cout = kernel.dim(0);
  if (dy.shape() != Shape{cout, f, x.dim(2), x.dim(3)})
    throw ShapeMismatch("temporal_conv1d_backward: dy " + shape_str(dy.shape()));
  ConvGrads g{Tensor(x.shape()), Tensor(kernel.shape()), Tensor({cout})};
  const idx fi = static_cast<idx>(f);
  const bool par = cout * f * hw * cin * 3 > kParallelWork;

#pragma omp parallel for schedule(static) if (par)
  for (idx o = 0; o < static_cast<idx>(cout); ++o) {
    const auto ou = static_cast<std::size_t>(o);
    double s = 0.0;
    for (std::size_t p = 0; p < f * hw; ++p) s += dy[ou * f * hw + p];
    g.dbias[ou] = s;
    for (std::size_t c = 0; c < cin; ++c)
      for (idx a = 0; a < 3; ++a) {
        double acc = 0.0;
        for (idx t = 0; t < fi; ++t) {
          const idx tt = t + a - 1;
          if (tt < 0 || tt >= fi) continue;
          for (std::size_t p = 0; p < hw; ++p)
            acc += dy[(ou * f + static_cast<std::size_t>(t)) * hw + p] * x[(c * f + static_cast<std::size_t>(tt)) * hw + p];
        }
        g.dkernel[(ou * cin + c) * 3 + static_cast<std::size_t>(a)] = acc;
      }
  }

#pragma omp parallel for collapse(2) schedule(static) if (par)
  for (idx c = 0; c < static_cast<idx>(cin); ++c)
    for (idx t = 0; t < fi; ++t)
      for (std::size_t p = 0; p < hw; ++p) {
        double acc = 0.0;
        for (std::size_t o = 0; o < cout; ++o)
          for (idx a = 0; a < 3; ++a) {
            const idx ot = t - a + 1;
            if (ot < 0 || ot >= fi) continue;
            acc += dy[(o * f + static_cast<std::size_t>(ot)) * hw + p] *
                   kernel[(o * cin + static_cast<std::size_t>(c)) * 3 + static_cast<std::size_t>(a)];
          }
        g.dx[(static_cast<std::size_t>(c) * f + static_cast<std::size_t>(t)) * hw + p] = acc;
      }
  return g;
}

Tensor warp_bilinear(const Tensor& frame, const Tensor& flow) {
  detail::check_warp(frame, flow);
  const std::size_t ch = frame.dim(0), h = frame.dim(1), w = frame.dim(2);
  Tensor out(frame.shape());
#pragma omp parallel for collapse(2) schedule(static) if (ch * h * w > kParallelWork / 4)
  for (idx c = 0; c < static_cast<idx>(ch); ++c)
    for (idx i = 0; i < static_cast<idx>(h); ++i)
      for (std::size_t j = 0; j < w; ++j) {
        const auto iu = static_cast<std::size_t>(i);
        const double dx = flow[(iu * w + j) * 2];
        const double dy = flow[(iu * w + j) * 2 + 1];
        out[(static_cast<std::size_t>(c) * h + iu) * w + j] = detail::sample_bilinear(
            frame.data() + static_cast<std::size_t>(c) * h * w, h, w, static_cast<double>(iu) + dy,
            static_cast<double>(j) + dx);
      }
  return out;
}

}  // namespace vs::kernels::omp
