#pragma once

#include <cstdint>
#include <vector>

#include "peftseg/tensor.hpp"

namespace peftseg::ops {

/// y = x W^T + b for x [..., in], W [out, in], b [out] (bias may be undefined).
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias = {});

/// Batched a [B,M,K] * b [B,N,K]^T -> [B,M,N]. Rank-2 inputs are treated as B = 1.
Tensor matmul_nt(const Tensor& a, const Tensor& b);
/// Batched a [B,M,K] * b [B,K,N] -> [B,M,N].
Tensor matmul_nn(const Tensor& a, const Tensor& b);

Tensor add(const Tensor& a, const Tensor& b);
/// x + y where y's shape is a suffix of x's shape (bias / positional broadcast).
Tensor add_broadcast(const Tensor& x, const Tensor& y);
Tensor scale(const Tensor& x, double s);

Tensor gelu(const Tensor& x);
Tensor relu(const Tensor& x);

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps);
Tensor softmax_last(const Tensor& x);

Tensor reshape(const Tensor& x, Shape shape);
/// General axis permutation (rank <= 6).
Tensor permute(const Tensor& x, const std::vector<int>& perm);

Tensor slice_last(const Tensor& x, std::int64_t start, std::int64_t length);
/// Copy of x with y added into x[..., start:start+y.dim(-1)].
Tensor add_into_slice_last(const Tensor& x, const Tensor& y, std::int64_t start);

/// Output row i is input row indices[i], where rows are `row_len` contiguous
/// values. out_shape must hold indices.size() * row_len values.
Tensor gather_rows(const Tensor& x, std::int64_t row_len, const std::vector<std::int64_t>& indices, Shape out_shape);

/// [B,H,W,4C] -> [B,2H,2W,C]; input channel (dy*2+dx)*C + c lands at (2y+dy, 2x+dx, c).
Tensor pixel_shuffle2(const Tensor& x);

/// [B,H,W,C] -> [B, (H/p)*(W/p), p*p*C] non-overlapping patches in row-major order.
Tensor patchify(const Tensor& x, std::int64_t patch);

/// [B,H,W,C] -> [B*nW, ws*ws, C] and its inverse. H and W must be multiples of ws.
Tensor window_partition(const Tensor& x, std::int64_t ws);
Tensor window_unpartition(const Tensor& x, std::int64_t batch, std::int64_t h, std::int64_t w, std::int64_t ws);

/// Bilinear resize of the two trailing axes.
Tensor bilinear_resize(const Tensor& x, std::int64_t out_h, std::int64_t out_w);

/// t [...] -> [B, ...] by repetition.
Tensor broadcast_batch(const Tensor& t, std::int64_t batch);

/// Independent linear map per group: x [B,G,in], W [G,out,in], b [G,out] -> [B,G,out].
Tensor grouped_linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

Tensor sum(const Tensor& x);

}  // namespace peftseg::ops
