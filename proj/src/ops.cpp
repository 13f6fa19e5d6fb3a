#include "peftseg/ops.hpp"

#include <algorithm>
#include <cmath>

#include "peftseg/errors.hpp"
#include "peftseg/kernels.hpp"

namespace peftseg::ops {
namespace {

using detail::make_result;
using NodePtr = std::shared_ptr<TensorNode>;
using Index = std::int64_t;

std::span<const double> sub(std::span<const double> s, Index offset, Index n) {
  return s.subspan(static_cast<std::size_t>(offset), static_cast<std::size_t>(n));
}
std::span<double> sub(std::span<double> s, Index offset, Index n) {
  return s.subspan(static_cast<std::size_t>(offset), static_cast<std::size_t>(n));
}

// out[i] = x[idx[i]] over blocks of row_len values.
Tensor gather_impl(const Tensor& x, Index row_len, std::shared_ptr<const std::vector<Index>> idx, Shape out_shape) {
  if (static_cast<Index>(idx->size()) * row_len != shape_numel(out_shape))
    throw ShapeError("gather: " + std::to_string(idx->size()) + " rows of " + std::to_string(row_len) +
                     " do not fill " + shape_str(out_shape));
  auto y = make_result(std::move(out_shape), {&x});
  const auto src = x.data();
  auto dst = y.data();
  const auto n = static_cast<Index>(idx->size());
#pragma omp parallel for schedule(static)
  for (Index i = 0; i < n; ++i) {
    const Index s = (*idx)[static_cast<std::size_t>(i)];
    std::copy_n(src.begin() + s * row_len, row_len, dst.begin() + i * row_len);
  }
  if (y.requires_grad()) {
    y.node()->backward = [xn = x.node_ptr(), idx, row_len](TensorNode& self) {
      auto gx = xn->grad_buffer();
      const auto& gy = self.grad;
      for (std::size_t i = 0; i < idx->size(); ++i) {
        const Index s = (*idx)[i];
        for (Index j = 0; j < row_len; ++j) gx[static_cast<std::size_t>(s * row_len + j)] += gy[i * static_cast<std::size_t>(row_len) + static_cast<std::size_t>(j)];
      }
    };
  }
  return y;
}

void check_batched(const Tensor& a, const Tensor& b, const char* op) {
  if (a.rank() < 2 || a.rank() > 3 || b.rank() != a.rank())
    throw ShapeError(std::string(op) + ": expected matching rank-2/3 operands, got " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  if (a.rank() == 3 && a.dim(0) != b.dim(0))
    throw ShapeError(std::string(op) + ": batch axis mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

}  // namespace

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  const Index in = x.dim(-1);
  if (weight.rank() != 2 || weight.dim(1) != in)
    throw ShapeError("linear: input last axis " + std::to_string(in) + " does not match weight input axis of " +
                     shape_str(weight.shape()));
  const Index out = weight.dim(0);
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != out))
    throw ShapeError("linear: bias " + shape_str(bias.shape()) + " does not match weight output axis " +
                     std::to_string(out));
  Shape os = x.shape();
  os.back() = out;
  auto y = make_result(std::move(os), {&x, &weight, &bias});
  const Index m = x.numel() / in;
  kernels::gemm_nt(m, out, in, x.data(), weight.data(), y.data());
  if (bias.defined()) {
    auto yd = y.data();
    const auto bd = bias.data();
#pragma omp parallel for schedule(static)
    for (Index r = 0; r < m; ++r)
      for (Index o = 0; o < out; ++o) yd[r * out + o] += bd[o];
  }
  if (y.requires_grad()) {
    y.node()->backward = [xn = x.node_ptr(), wn = weight.node_ptr(), bn = bias.defined() ? bias.node_ptr() : NodePtr{},
                          m, in, out](TensorNode& self) {
      const std::span<const double> gy = self.grad;
      if (xn->requires_grad) kernels::gemm_nn(m, in, out, gy, wn->value, xn->grad_buffer(), true);
      if (wn->requires_grad) kernels::gemm_tn(out, in, m, gy, xn->value, wn->grad_buffer(), true);
      if (bn && bn->requires_grad) {
        auto gb = bn->grad_buffer();
        for (Index r = 0; r < m; ++r)
          for (Index o = 0; o < out; ++o) gb[o] += gy[r * out + o];
      }
    };
  }
  return y;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  check_batched(a, b, "matmul_nt");
  const Index batch = a.rank() == 3 ? a.dim(0) : 1;
  const Index m = a.dim(-2), k = a.dim(-1), n = b.dim(-2);
  if (b.dim(-1) != k)
    throw ShapeError("matmul_nt: contraction axis mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Shape os = a.rank() == 3 ? Shape{batch, m, n} : Shape{m, n};
  auto y = make_result(std::move(os), {&a, &b});
  for (Index i = 0; i < batch; ++i)
    kernels::gemm_nt(m, n, k, sub(a.data(), i * m * k, m * k), sub(b.data(), i * n * k, n * k), sub(y.data(), i * m * n, m * n));
  if (y.requires_grad()) {
    y.node()->backward = [an = a.node_ptr(), bn = b.node_ptr(), batch, m, n, k](TensorNode& self) {
      const std::span<const double> gy = self.grad;
      for (Index i = 0; i < batch; ++i) {
        const auto gyi = sub(gy, i * m * n, m * n);
        if (an->requires_grad)
          kernels::gemm_nn(m, k, n, gyi, sub(std::span<const double>(bn->value), i * n * k, n * k),
                           sub(an->grad_buffer(), i * m * k, m * k), true);
        if (bn->requires_grad)
          kernels::gemm_tn(n, k, m, gyi, sub(std::span<const double>(an->value), i * m * k, m * k),
                           sub(bn->grad_buffer(), i * n * k, n * k), true);
      }
    };
  }
  return y;
}

Tensor matmul_nn(const Tensor& a, const Tensor& b) {
  check_batched(a, b, "matmul_nn");
  const Index batch = a.rank() == 3 ? a.dim(0) : 1;
  const Index m = a.dim(-2), k = a.dim(-1), n = b.dim(-1);
  if (b.dim(-2) != k)
    throw ShapeError("matmul_nn: contraction axis mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Shape os = a.rank() == 3 ? Shape{batch, m, n} : Shape{m, n};
  auto y = make_result(std::move(os), {&a, &b});
  for (Index i = 0; i < batch; ++i)
    kernels::gemm_nn(m, n, k, sub(a.data(), i * m * k, m * k), sub(b.data(), i * k * n, k * n), sub(y.data(), i * m * n, m * n));
  if (y.requires_grad()) {
    y.node()->backward = [an = a.node_ptr(), bn = b.node_ptr(), batch, m, n, k](TensorNode& self) {
      const std::span<const double> gy = self.grad;
      for (Index i = 0; i < batch; ++i) {
        const auto gyi = sub(gy, i * m * n, m * n);
        if (an->requires_grad)
          kernels::gemm_nt(m, k, n, gyi, sub(std::span<const double>(bn->value), i * k * n, k * n),
                           sub(an->grad_buffer(), i * m * k, m * k), true);
        if (bn->requires_grad)
          kernels::gemm_tn(k, n, m, sub(std::span<const double>(an->value), i * m * k, m * k), gyi,
                           sub(bn->grad_buffer(), i * k * n, k * n), true);
      }
    };
  }
  return y;
}

Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw ShapeError("add: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  auto y = make_result(a.shape(), {&a, &b});
  auto yd = y.data();
  const auto ad = a.data(), bd = b.data();
  const Index n = a.numel();
#pragma omp parallel for schedule(static)
  for (Index i = 0; i < n; ++i) yd[i] = ad[i] + bd[i];
  if (y.requires_grad()) {
    y.node()->backward = [an = a.node_ptr(), bn = b.node_ptr()](TensorNode& self) {
      for (const auto& in : {an, bn}) {
        if (!in->requires_grad) continue;
        auto g = in->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
      }
    };
  }
  return y;
}

Tensor add_broadcast(const Tensor& x, const Tensor& y) {
  const auto& xs = x.shape();
  const auto& ys = y.shape();
  if (ys.size() > xs.size() || !std::equal(ys.rbegin(), ys.rend(), xs.rbegin()))
    throw ShapeError("add_broadcast: " + shape_str(ys) + " is not a suffix of " + shape_str(xs));
  auto out = make_result(xs, {&x, &y});
  const Index inner = y.numel();
  const Index outer = x.numel() / inner;
  auto od = out.data();
  const auto xd = x.data(), yd = y.data();
#pragma omp parallel for schedule(static)
  for (Index o = 0; o < outer; ++o)
    for (Index i = 0; i < inner; ++i) od[o * inner + i] = xd[o * inner + i] + yd[i];
  if (out.requires_grad()) {
    out.node()->backward = [xn = x.node_ptr(), yn = y.node_ptr(), inner, outer](TensorNode& self) {
      if (xn->requires_grad) {
        auto g = xn->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
      }
      if (yn->requires_grad) {
        auto g = yn->grad_buffer();
        for (Index o = 0; o < outer; ++o)
          for (Index i = 0; i < inner; ++i) g[i] += self.grad[static_cast<std::size_t>(o * inner + i)];
      }
    };
  }
  return out;
}

Tensor scale(const Tensor& x, double s) {
  auto y = make_result(x.shape(), {&x});
  auto yd = y.data();
  const auto xd = x.data();
  for (std::size_t i = 0; i < yd.size(); ++i) yd[i] = s * xd[i];
  if (y.requires_grad()) {
    y.node()->backward = [xn = x.node_ptr(), s](TensorNode& self) {
      auto g = xn->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * self.grad[i];
    };
  }
  return y;
}

Tensor gelu(const Tensor& x) {
  auto y = make_result(x.shape(), {&x});
  kernels::gelu(x.data(), y.data());
  if (y.requires_grad()) {
    y.node()->backward = [xn = x.node_ptr()](TensorNode& self) {
      auto g = xn->grad_buffer();
      const auto n = static_cast<Index>(g.size());
#pragma omp parallel for schedule(static)
      for (Index i = 0; i < n; ++i) g[i] += self.grad[static_cast<std::size_t>(i)] * kernels::gelu_grad_scalar(xn->value[static_cast<std::size_t>(i)]);
    };
  }
  return y;
}

Tensor relu(const Tensor& x) {
  auto y = make_result(x.shape(), {&x});
  auto yd = y.data();
  const auto xd = x.data();
  for (std::size_t i = 0; i < yd.size(); ++i) yd[i] = xd[i] > 0.0 ? xd[i] : 0.0;
  if (y.requires_grad()) {
    y.node()->backward = [xn = x.node_ptr()](TensorNode& self) {
      auto g = xn->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i)
        if (xn->value[i] > 0.0) g[i] += self.grad[i];
    };
  }
  return y;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  const Index cols = x.dim(-1);
  if (gamma.numel() != cols || beta.numel() != cols)
    throw ShapeError("layer_norm: affine parameters " + shape_str(gamma.shape()) + " do not match last axis " +
                     std::to_string(cols));
  const Index rows = x.numel() / cols;
  auto y = make_result(x.shape(), {&x, &gamma, &beta});
  auto mean = std::make_shared<std::vector<double>>(static_cast<std::size_t>(rows));
  auto rstd = std::make_shared<std::vector<double>>(static_cast<std::size_t>(rows));
  kernels::layer_norm_rows(rows, cols, x.data(), gamma.data(), beta.data(), eps, y.data(), *mean, *rstd);
  if (y.requires_grad()) {
    y.node()->backward = [xn = x.node_ptr(), gn = gamma.node_ptr(), bn = beta.node_ptr(), mean, rstd, rows,
                          cols](TensorNode& self) {
      const auto& gy = self.grad;
      const auto& xv = xn->value;
      const auto& gv = gn->value;
      if (gn->requires_grad || bn->requires_grad) {
        std::span<double> gg = gn->requires_grad ? gn->grad_buffer() : std::span<double>{};
        std::span<double> gb = bn->requires_grad ? bn->grad_buffer() : std::span<double>{};
        for (Index r = 0; r < rows; ++r)
          for (Index j = 0; j < cols; ++j) {
            const auto i = static_cast<std::size_t>(r * cols + j);
            if (!gg.empty()) gg[j] += gy[i] * (xv[i] - (*mean)[r]) * (*rstd)[r];
            if (!gb.empty()) gb[j] += gy[i];
          }
      }
      if (xn->requires_grad) {
        auto gx = xn->grad_buffer();
#pragma omp parallel for schedule(static)
        for (Index r = 0; r < rows; ++r) {
          const double mu = (*mean)[r];
          const double rs = (*rstd)[r];
          double mg = 0.0, mgx = 0.0;
          for (Index j = 0; j < cols; ++j) {
            const auto i = static_cast<std::size_t>(r * cols + j);
            const double g = gy[i] * gv[j];
            mg += g;
            mgx += g * (xv[i] - mu) * rs;
          }
          mg /= static_cast<double>(cols);
          mgx /= static_cast<double>(cols);
          for (Index j = 0; j < cols; ++j) {
            const auto i = static_cast<std::size_t>(r * cols + j);
            const double xhat = (xv[i] - mu) * rs;
            gx[i] += rs * (gy[i] * gv[j] - mg - xhat * mgx);
          }
        }
      }
    };
  }
  return y;
}

Tensor softmax_last(const Tensor& x) {
  const Index cols = x.dim(-1);
  const Index rows = x.numel() / cols;
  auto y = make_result(x.shape(), {&x});
  kernels::softmax_rows(rows, cols, x.data(), y.data());
  if (y.requires_grad()) {
    y.node()->backward = [xn = x.node_ptr(), rows, cols](TensorNode& self) {
      auto gx = xn->grad_buffer();
      const auto& yv = self.value;
      const auto& gy = self.grad;
#pragma omp parallel for schedule(static)
      for (Index r = 0; r < rows; ++r) {
        double dot = 0.0;
        for (Index j = 0; j < cols; ++j) dot += gy[static_cast<std::size_t>(r * cols + j)] * yv[static_cast<std::size_t>(r * cols + j)];
        for (Index j = 0; j < cols; ++j) {
          const auto i = static_cast<std::size_t>(r * cols + j);
          gx[i] += yv[i] * (gy[i] - dot);
        }
      }
    };
  }
  return y;
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel())
    throw ShapeError("reshape: " + shape_str(x.shape()) + " cannot become " + shape_str(shape));
  auto y = make_result(std::move(shape), {&x});
  std::copy(x.data().begin(), x.data().end(), y.data().begin());
  if (y.requires_grad()) {
    y.node()->backward = [xn = x.node_ptr()](TensorNode& self) {
      auto g = xn->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    };
  }
  return y;
}

Tensor permute(const Tensor& x, const std::vector<int>& perm) {
  const int r = x.rank();
  if (static_cast<int>(perm.size()) != r || r > 6) throw ShapeError("permute: bad permutation for " + shape_str(x.shape()));
  std::vector<Index> in_stride(static_cast<std::size_t>(r), 1);
  for (int i = r - 2; i >= 0; --i) in_stride[i] = in_stride[i + 1] * x.shape()[static_cast<std::size_t>(i + 1)];
  Shape out_shape(static_cast<std::size_t>(r));
  std::vector<Index> src_stride(static_cast<std::size_t>(r));
  for (int i = 0; i < r; ++i) {
    out_shape[i] = x.shape()[static_cast<std::size_t>(perm[i])];
    src_stride[i] = in_stride[static_cast<std::size_t>(perm[i])];
  }
  auto idx = std::make_shared<std::vector<Index>>(static_cast<std::size_t>(x.numel()));
  std::vector<Index> counter(static_cast<std::size_t>(r), 0);
  Index src = 0;
  for (auto& v : *idx) {
    v = src;
    for (int ax = r - 1; ax >= 0; --ax) {
      src += src_stride[ax];
      if (++counter[ax] < out_shape[ax]) break;
      src -= src_stride[ax] * out_shape[ax];
      counter[ax] = 0;
    }
  }
  return gather_impl(x, 1, std::move(idx), std::move(out_shape));
}

Tensor slice_last(const Tensor& x, Index start, Index length) {
  const Index cols = x.dim(-1);
  if (start < 0 || length < 0 || start + length > cols)
    throw ShapeError("slice_last: [" + std::to_string(start) + ", " + std::to_string(start + length) +
                     ") outside last axis of " + shape_str(x.shape()));
  const Index rows = x.numel() / cols;
  Shape os = x.shape();
  os.back() = length;
  auto y = make_result(std::move(os), {&x});
  auto yd = y.data();
  const auto xd = x.data();
  for (Index r = 0; r < rows; ++r) std::copy_n(xd.begin() + r * cols + start, length, yd.begin() + r * length);
  if (y.requires_grad()) {
    y.node()->backward = [xn = x.node_ptr(), rows, cols, start, length](TensorNode& self) {
      auto g = xn->grad_buffer();
      for (Index r = 0; r < rows; ++r)
        for (Index j = 0; j < length; ++j) g[static_cast<std::size_t>(r * cols + start + j)] += self.grad[static_cast<std::size_t>(r * length + j)];
    };
  }
  return y;
}

Tensor add_into_slice_last(const Tensor& x, const Tensor& y, Index start) {
  const Index cols = x.dim(-1);
  const Index length = y.dim(-1);
  const Index rows = x.numel() / cols;
  if (start < 0 || start + length > cols || y.numel() != rows * length)
    throw ShapeError("add_into_slice_last: " + shape_str(y.shape()) + " at offset " + std::to_string(start) +
                     " does not fit " + shape_str(x.shape()));
  auto out = make_result(x.shape(), {&x, &y});
  auto od = out.data();
  std::copy(x.data().begin(), x.data().end(), od.begin());
  const auto yd = y.data();
  for (Index r = 0; r < rows; ++r)
    for (Index j = 0; j < length; ++j) od[r * cols + start + j] += yd[r * length + j];
  if (out.requires_grad()) {
    out.node()->backward = [xn = x.node_ptr(), yn = y.node_ptr(), rows, cols, start, length](TensorNode& self) {
      if (xn->requires_grad) {
        auto g = xn->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
      }
      if (yn->requires_grad) {
        auto g = yn->grad_buffer();
        for (Index r = 0; r < rows; ++r)
          for (Index j = 0; j < length; ++j) g[static_cast<std::size_t>(r * length + j)] += self.grad[static_cast<std::size_t>(r * cols + start + j)];
      }
    };
  }
  return out;
}

Tensor gather_rows(const Tensor& x, Index row_len, const std::vector<Index>& indices, Shape out_shape) {
  const Index rows = x.numel() / row_len;
  for (auto i : indices)
    if (i < 0 || i >= rows) throw ShapeError("gather_rows: row " + std::to_string(i) + " out of range");
  return gather_impl(x, row_len, std::make_shared<const std::vector<Index>>(indices), std::move(out_shape));
}

Tensor pixel_shuffle2(const Tensor& x) {
  if (x.rank() != 4 || x.dim(3) % 4 != 0) throw ShapeError("pixel_shuffle2: expected [B,H,W,4C], got " + shape_str(x.shape()));
  const Index b = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3) / 4;
  auto idx = std::make_shared<std::vector<Index>>();
  idx->reserve(static_cast<std::size_t>(b * h * w * 4));
  for (Index bi = 0; bi < b; ++bi)
    for (Index yy = 0; yy < 2 * h; ++yy)
      for (Index xx = 0; xx < 2 * w; ++xx)
        idx->push_back(((bi * h + yy / 2) * w + xx / 2) * 4 + (yy % 2) * 2 + (xx % 2));
  return gather_impl(x, c, std::move(idx), {b, 2 * h, 2 * w, c});
}

Tensor patchify(const Tensor& x, Index patch) {
  if (x.rank() != 4 || x.dim(1) % patch != 0 || x.dim(2) % patch != 0)
    throw ShapeError("patchify: " + shape_str(x.shape()) + " is not divisible into " + std::to_string(patch) + "px patches");
  const Index b = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
  const Index th = h / patch, tw = w / patch;
  auto idx = std::make_shared<std::vector<Index>>();
  idx->reserve(static_cast<std::size_t>(b * h * w));
  for (Index bi = 0; bi < b; ++bi)
    for (Index ty = 0; ty < th; ++ty)
      for (Index tx = 0; tx < tw; ++tx)
        for (Index py = 0; py < patch; ++py)
          for (Index px = 0; px < patch; ++px) idx->push_back((bi * h + ty * patch + py) * w + tx * patch + px);
  return gather_impl(x, c, std::move(idx), {b, th * tw, patch * patch * c});
}

Tensor window_partition(const Tensor& x, Index ws) {
  if (x.rank() != 4 || x.dim(1) % ws != 0 || x.dim(2) % ws != 0)
    throw ShapeError("window_partition: " + shape_str(x.shape()) + " not divisible by window " + std::to_string(ws));
  const Index b = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
  const Index nwy = h / ws, nwx = w / ws;
  auto idx = std::make_shared<std::vector<Index>>();
  idx->reserve(static_cast<std::size_t>(b * h * w));
  for (Index bi = 0; bi < b; ++bi)
    for (Index wy = 0; wy < nwy; ++wy)
      for (Index wx = 0; wx < nwx; ++wx)
        for (Index iy = 0; iy < ws; ++iy)
          for (Index ix = 0; ix < ws; ++ix) idx->push_back((bi * h + wy * ws + iy) * w + wx * ws + ix);
  return gather_impl(x, c, std::move(idx), {b * nwy * nwx, ws * ws, c});
}

Tensor window_unpartition(const Tensor& x, Index batch, Index h, Index w, Index ws) {
  const Index c = x.dim(-1);
  const Index nwy = h / ws, nwx = w / ws;
  if (x.numel() != batch * h * w * c) throw ShapeError("window_unpartition: size mismatch for " + shape_str(x.shape()));
  auto idx = std::make_shared<std::vector<Index>>();
  idx->reserve(static_cast<std::size_t>(batch * h * w));
  for (Index bi = 0; bi < batch; ++bi)
    for (Index y = 0; y < h; ++y)
      for (Index xx = 0; xx < w; ++xx)
        idx->push_back(((bi * nwy + y / ws) * nwx + xx / ws) * ws * ws + (y % ws) * ws + xx % ws);
  return gather_impl(x, c, std::move(idx), {batch, h, w, c});
}

Tensor bilinear_resize(const Tensor& x, Index out_h, Index out_w) {
  if (x.rank() < 2) throw ShapeError("bilinear_resize: needs at least 2 axes, got " + shape_str(x.shape()));
  const Index h = x.dim(-2), w = x.dim(-1);
  const Index planes = x.numel() / (h * w);
  Shape os = x.shape();
  os[os.size() - 2] = out_h;
  os[os.size() - 1] = out_w;
  auto y = make_result(std::move(os), {&x});
  kernels::bilinear_resize(planes, h, w, out_h, out_w, x.data(), y.data());
  if (y.requires_grad()) {
    y.node()->backward = [xn = x.node_ptr(), planes, h, w, out_h, out_w](TensorNode& self) {
      kernels::bilinear_resize_backward(planes, h, w, out_h, out_w, self.grad, xn->grad_buffer());
    };
  }
  return y;
}

Tensor broadcast_batch(const Tensor& t, Index batch) {
  Shape os{batch};
  os.insert(os.end(), t.shape().begin(), t.shape().end());
  auto y = make_result(std::move(os), {&t});
  const Index n = t.numel();
  for (Index b = 0; b < batch; ++b) std::copy(t.data().begin(), t.data().end(), y.data().begin() + b * n);
  if (y.requires_grad()) {
    y.node()->backward = [tn = t.node_ptr(), batch, n](TensorNode& self) {
      auto g = tn->grad_buffer();
      for (Index b = 0; b < batch; ++b)
        for (Index i = 0; i < n; ++i) g[static_cast<std::size_t>(i)] += self.grad[static_cast<std::size_t>(b * n + i)];
    };
  }
  return y;
}

Tensor grouped_linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  if (x.rank() != 3 || weight.rank() != 3 || weight.dim(0) != x.dim(1) || weight.dim(2) != x.dim(2))
    throw ShapeError("grouped_linear: input " + shape_str(x.shape()) + " incompatible with weight " +
                     shape_str(weight.shape()));
  const Index b = x.dim(0), g = x.dim(1), in = x.dim(2), out = weight.dim(1);
  if (bias.numel() != g * out) throw ShapeError("grouped_linear: bias " + shape_str(bias.shape()));
  auto y = make_result({b, g, out}, {&x, &weight, &bias});
  auto yd = y.data();
  const auto xd = x.data(), wd = weight.data(), bd = bias.data();
  for (Index bi = 0; bi < b; ++bi)
    for (Index gi = 0; gi < g; ++gi)
      for (Index o = 0; o < out; ++o) {
        double s = bd[gi * out + o];
        for (Index i = 0; i < in; ++i) s += wd[(gi * out + o) * in + i] * xd[(bi * g + gi) * in + i];
        yd[(bi * g + gi) * out + o] = s;
      }
  if (y.requires_grad()) {
    y.node()->backward = [xn = x.node_ptr(), wn = weight.node_ptr(), bn = bias.node_ptr(), b, g, in,
                          out](TensorNode& self) {
      const auto& gy = self.grad;
      std::span<double> gx = xn->requires_grad ? xn->grad_buffer() : std::span<double>{};
      std::span<double> gw = wn->requires_grad ? wn->grad_buffer() : std::span<double>{};
      std::span<double> gb = bn->requires_grad ? bn->grad_buffer() : std::span<double>{};
      for (Index bi = 0; bi < b; ++bi)
        for (Index gi = 0; gi < g; ++gi)
          for (Index o = 0; o < out; ++o) {
            const double d = gy[static_cast<std::size_t>((bi * g + gi) * out + o)];
            if (d == 0.0) continue;
            if (!gb.empty()) gb[gi * out + o] += d;
            for (Index i = 0; i < in; ++i) {
              if (!gx.empty()) gx[(bi * g + gi) * in + i] += d * wn->value[static_cast<std::size_t>((gi * out + o) * in + i)];
              if (!gw.empty()) gw[(gi * out + o) * in + i] += d * xn->value[static_cast<std::size_t>((bi * g + gi) * in + i)];
            }
          }
    };
  }
  return y;
}

Tensor sum(const Tensor& x) {
  auto y = make_result({}, {&x});
  double s = 0.0;
  for (double v : x.data()) s += v;
  y.data()[0] = s;
  if (y.requires_grad()) {
    y.node()->backward = [xn = x.node_ptr()](TensorNode& self) {
      auto g = xn->grad_buffer();
      for (auto& v : g) v += self.grad[0];
    };
  }
  return y;
}

}  // namespace peftseg::ops
