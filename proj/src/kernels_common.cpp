#include <cmath>
#include <numbers>

#include "videostudio/kernels.hpp"

namespace vs {

MatmulGrads matmul_backward(const Tensor& a, const Tensor& b, const Tensor& dy) {
  return {matmul_nt(dy, b), matmul_tn(a, dy)};
}

Tensor gelu(const Tensor& t) {
  Tensor out(t.shape());
  for (std::size_t i = 0; i < t.numel(); ++i) {
    const double x = t[i];
    out[i] = 0.5 * x * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0));
  }
  return out;
}

Tensor gelu_backward(const Tensor& x, const Tensor& dy) {
  require_same_shape(x, dy, "gelu_backward");
  const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
  Tensor dx(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const double v = x[i];
    const double cdf = 0.5 * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0));
    const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
    dx[i] = dy[i] * (cdf + v * pdf);
  }
  return dx;
}

namespace {

void check_layer_norm(const Tensor& x, const Tensor& gain, const char* op) {
  require_rank(x, 2, op);
  if (gain.rank() != 1 || gain.dim(0) != x.dim(1)) {
    throw ShapeMismatch(std::string(op) + ": gain " + shape_str(gain.shape()) + " vs " + shape_str(x.shape()));
  }
}

}  // namespace

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  check_layer_norm(x, gain, "layer_norm");
  require_same_shape(gain, bias, "layer_norm");
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  Tensor out(x.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = x.data() + r * cols;
    double mean = 0.0;
    for (std::size_t c = 0; c < cols; ++c) mean += in[c];
    mean /= static_cast<double>(cols);
    double var = 0.0;
    for (std::size_t c = 0; c < cols; ++c) var += (in[c] - mean) * (in[c] - mean);
    var /= static_cast<double>(cols);
    const double inv = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = gain[c] * (in[c] - mean) * inv + bias[c];
  }
  return out;
}

LayerNormGrads layer_norm_backward(const Tensor& x, const Tensor& gain, const Tensor& dy, double eps) {
  check_layer_norm(x, gain, "layer_norm_backward");
  require_same_shape(x, dy, "layer_norm_backward");
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  const double n = static_cast<double>(cols);
  LayerNormGrads g{Tensor(x.shape()), Tensor(gain.shape()), Tensor(gain.shape())};
  std::vector<double> xhat(cols), dxhat(cols);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = x.data() + r * cols;
    const double* d = dy.data() + r * cols;
    double mean = 0.0;
    for (std::size_t c = 0; c < cols; ++c) mean += in[c];
    mean /= n;
    double var = 0.0;
    for (std::size_t c = 0; c < cols; ++c) var += (in[c] - mean) * (in[c] - mean);
    var /= n;
    const double inv = 1.0 / std::sqrt(var + eps);
    double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      xhat[c] = (in[c] - mean) * inv;
      dxhat[c] = d[c] * gain[c];
      g.dgain[c] += d[c] * xhat[c];
      g.dbias[c] += d[c];
      mean_dxhat += dxhat[c];
      mean_dxhat_xhat += dxhat[c] * xhat[c];
    }
    mean_dxhat /= n;
    mean_dxhat_xhat /= n;
    for (std::size_t c = 0; c < cols; ++c) {
      g.dx[r * cols + c] = inv * (dxhat[c] - mean_dxhat - xhat[c] * mean_dxhat_xhat);
    }
  }
  return g;
}

}  // namespace vs
