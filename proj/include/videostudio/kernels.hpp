#pragma once

// Dense kernels with manual backward passes.
//
// Hot kernels exist twice: `kernels::serial` is the plain reference, and
// `kernels::omp` parallelizes over output elements with OpenMP. Each output
// element is accumulated in the same order by both, so results are bitwise
// equal. The unqualified `vs::` entry points route to the OpenMP versions.

#include "videostudio/tensor.hpp"

namespace vs {

struct MatmulGrads {
  Tensor da, db;
};

struct LayerNormGrads {
  Tensor dx, dgain, dbias;
};

struct ConvGrads {
  Tensor dx, dkernel, dbias;
};

namespace kernels {

namespace serial {

// [m,k] x [k,n] -> [m,n]
Tensor matmul(const Tensor& a, const Tensor& b);
// a^T b with a [k,m], b [k,n] -> [m,n]
Tensor matmul_tn(const Tensor& a, const Tensor& b);
// a b^T with a [m,k], b [n,k] -> [m,n]
Tensor matmul_nt(const Tensor& a, const Tensor& b);
Tensor softmax_lastdim(const Tensor& t);
Tensor softmax_lastdim_backward(const Tensor& y, const Tensor& dy);
// x [C,H,W], kernel [C',C,3,3], bias [C'] -> [C',H,W], zero padding 1
Tensor conv2d_3x3(const Tensor& x, const Tensor& kernel, const Tensor& bias);
ConvGrads conv2d_3x3_backward(const Tensor& x, const Tensor& kernel, const Tensor& dy);
// x [C,F,H,W], kernel [C',C,3], bias [C'] -> [C',F,H,W], zero padding 1 along F
Tensor temporal_conv1d(const Tensor& x, const Tensor& kernel, const Tensor& bias);
ConvGrads temporal_conv1d_backward(const Tensor& x, const Tensor& kernel, const Tensor& dy);
// frame [C,H,W], flow [H,W,2]: out(y,x) = bilinear(frame, x+dx, y+dy), clamp to edge
Tensor warp_bilinear(const Tensor& frame, const Tensor& flow);

}  // namespace serial

namespace omp {

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor matmul_tn(const Tensor& a, const Tensor& b);
Tensor matmul_nt(const Tensor& a, const Tensor& b);
Tensor softmax_lastdim(const Tensor& t);
Tensor softmax_lastdim_backward(const Tensor& y, const Tensor& dy);
Tensor conv2d_3x3(const Tensor& x, const Tensor& kernel, const Tensor& bias);
ConvGrads conv2d_3x3_backward(const Tensor& x, const Tensor& kernel, const Tensor& dy);
Tensor temporal_conv1d(const Tensor& x, const Tensor& kernel, const Tensor& bias);
ConvGrads temporal_conv1d_backward(const Tensor& x, const Tensor& kernel, const Tensor& dy);
Tensor warp_bilinear(const Tensor& frame, const Tensor& flow);

}  // namespace omp

}  // namespace kernels

using kernels::omp::conv2d_3x3;
using kernels::omp::conv2d_3x3_backward;
using kernels::omp::matmul;
using kernels::omp::matmul_nt;
using kernels::omp::matmul_tn;
using kernels::omp::softmax_lastdim;
using kernels::omp::softmax_lastdim_backward;
using kernels::omp::temporal_conv1d;
using kernels::omp::temporal_conv1d_backward;
using kernels::omp::warp_bilinear;

MatmulGrads matmul_backward(const Tensor& a, const Tensor& b, const Tensor& dy);

// Exact (erf) GELU.
Tensor gelu(const Tensor& t);
Tensor gelu_backward(const Tensor& x, const Tensor& dy);

// Row-wise layer norm over the last dim of a [rows, cols] tensor.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);
LayerNormGrads layer_norm_backward(const Tensor& x, const Tensor& gain, const Tensor& dy, double eps = 1e-5);

}  // namespace vs
