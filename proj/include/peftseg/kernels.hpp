#pragma once

// Dense numeric kernels behind the autograd ops. Every kernel has an OpenMP
// version (namespace kernels) and a plain serial version (kernels::reference)
// that the tests and the benchmark compare against.
//
// All matrices are row-major and densely packed.

#include <cstdint>
#include <span>

namespace peftseg::kernels {

using Index = std::int64_t;

// C[M,N] = A[M,K] * B[K,N]        (+= when accumulate)
void gemm_nn(Index m, Index n, Index k, std::span<const double> a, std::span<const double> b,
             std::span<double> c, bool accumulate = false);
// C[M,N] = A[M,K] * B[N,K]^T
void gemm_nt(Index m, Index n, Index k, std::span<const double> a, std::span<const double> b,
             std::span<double> c, bool accumulate = false);
// C[M,N] = A[K,M]^T * B[K,N]
void gemm_tn(Index m, Index n, Index k, std::span<const double> a, std::span<const double> b,
             std::span<double> c, bool accumulate = false);

void softmax_rows(Index rows, Index cols, std::span<const double> in, std::span<double> out);

// y = (x - mean) * rstd * gamma + beta per row; mean/rstd are saved for backward.
void layer_norm_rows(Index rows, Index cols, std::span<const double> x, std::span<const double> gamma,
                     std::span<const double> beta, double eps, std::span<double> y,
                     std::span<double> mean, std::span<double> rstd);

// Bilinear resize of `planes` independent HxW planes, half-pixel centers
// (align_corners = false).
void bilinear_resize(Index planes, Index h, Index w, Index out_h, Index out_w,
                     std::span<const double> in, std::span<double> out);
// Adjoint of bilinear_resize: accumulates grad_out into grad_in.
void bilinear_resize_backward(Index planes, Index h, Index w, Index out_h, Index out_w,
                              std::span<const double> grad_out, std::span<double> grad_in);

void gelu(std::span<const double> x, std::span<double> y);

namespace reference {

void gemm_nn(Index m, Index n, Index k, std::span<const double> a, std::span<const double> b,
             std::span<double> c, bool accumulate = false);
void gemm_nt(Index m, Index n, Index k, std::span<const double> a, std::span<const double> b,
             std::span<double> c, bool accumulate = false);
void gemm_tn(Index m, Index n, Index k, std::span<const double> a, std::span<const double> b,
             std::span<double> c, bool accumulate = false);
void softmax_rows(Index rows, Index cols, std::span<const double> in, std::span<double> out);
void layer_norm_rows(Index rows, Index cols, std::span<const double> x, std::span<const double> gamma,
                     std::span<const double> beta, double eps, std::span<double> y,
                     std::span<double> mean, std::span<double> rstd);
void bilinear_resize(Index planes, Index h, Index w, Index out_h, Index out_w,
                     std::span<const double> in, std::span<double> out);
void bilinear_resize_backward(Index planes, Index h, Index w, Index out_h, Index out_w,
                              std::span<const double> grad_out, std::span<double> grad_in);
void gelu(std::span<const double> x, std::span<double> y);

}  // namespace reference

/// Exact tanh-free GELU, x * Phi(x).
double gelu_scalar(double x);
double gelu_grad_scalar(double x);

}  // namespace peftseg::kernels
