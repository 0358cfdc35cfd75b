#pragma once

#include <cstddef>

// Dense compute kernels behind the tensor ops. Every kernel exists twice:
// the OpenMP-parallel version in wase::kernels and a plain serial reference
// in wase::kernels::serial with the same signature. The parallel versions
// split work so that each output element is accumulated by exactly one
// thread in a fixed order, so both versions produce bit-identical results
// for any thread count (see test_kernels.cpp and the bench tool).
//
// All arrays are row-major doubles.

namespace wase::kernels {

// y[co,lo] = sum_{ci,j} x[ci, lo*stride + j] * w[co,ci,j] (+ bias[co])
// x: c_in x l_in, w: c_out x c_in x k, y: c_out x l_out with
// l_out = (l_in - k) / stride + 1.
void conv1d_fwd(const double* x, int c_in, int l_in, const double* w, int c_out, int k,
                int stride, const double* bias, double* y, int l_out);

/// y[co,t] = sum_{ci,j : t = lo*stride + j} x[ci,lo] * w[ci,co,j]
// x: c_in x l_in, w: c_in x c_out x k, y: c_out x l_out with
// l_out = (l_in - 1)*stride + k. Also serves as conv1d's input gradient.
void tconv1d_fwd(const double* x, int c_in, int l_in, const double* w, int c_out, int k,
                 int stride, double* y, int l_out);

// gw[a,b,j] = sum_lo gy[a,lo] * x[b, lo*stride + j]
// Weight gradient for conv1d (a=c_out, b=c_in) and, with gy/x swapped,
// for tconv1d (a=c_in, b=c_out).
void convlike_dw(const double* gy, int a, int l_out, const double* x, int b, int l_in,
                 int k, int stride, double* gw);

// gb[co] = sum_lo gy[co,lo]
void rowsum(const double* gy, int rows, int cols, double* gb);

// Depthwise conv with dilation and symmetric zero padding that preserves L.
// y[c,l] = sum_j w[c,j] * x[c, l + j*dil - left], left = (k-1)*dil/2.
void dwconv_fwd(const double* x, int c, int l, const double* w, int k, int dil, double* y);
void dwconv_dx(const double* gy, int c, int l, const double* w, int k, int dil, double* gx);
void dwconv_dw(const double* gy, const double* x, int c, int l, int k, int dil, double* gw);

// Y(m x n) = A(m x p) * B(p x n)
void matmul_nn(const double* a, int m, int p, const double* b, int n, double* y);
// Y(m x n) = A^T * B with A stored p x m
void matmul_tn(const double* a, int p, int m, const double* b, int n, double* y);
// Y(m x n) = A * B^T with B stored n x p
void matmul_nt(const double* a, int m, int p, const double* b, int n, double* y);

namespace serial {
void conv1d_fwd(const double* x, int c_in, int l_in, const double* w, int c_out, int k,
                int stride, const double* bias, double* y, int l_out);
void tconv1d_fwd(const double* x, int c_in, int l_in, const double* w, int c_out, int k,
                 int stride, double* y, int l_out);
void convlike_dw(const double* gy, int a, int l_out, const double* x, int b, int l_in,
                 int k, int stride, double* gw);
void rowsum(const double* gy, int rows, int cols, double* gb);
void dwconv_fwd(const double* x, int c, int l, const double* w, int k, int dil, double* y);
void dwconv_dx(const double* gy, int c, int l, const double* w, int k, int dil, double* gx);
void dwconv_dw(const double* gy, const double* x, int c, int l, int k, int dil, double* gw);
void matmul_nn(const double* a, int m, int p, const double* b, int n, double* y);
void matmul_tn(const double* a, int p, int m, const double* b, int n, double* y);
void matmul_nt(const double* a, int m, int p, const double* b, int n, double* y);
}  // namespace serial

}  // namespace wase::kernels
