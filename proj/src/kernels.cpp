#include "peftseg/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

namespace peftseg::kernels {
namespace {

struct Tap {
  Index i0;
  Index i1;
  double w0;
  double w1;
};

// Source taps for half-pixel-center bilinear sampling along one axis.
std::vector<Tap> bilinear_taps(Index in, Index out) {
  std::vector<Tap> taps(static_cast<std::size_t>(out));
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (Index o = 0; o < out; ++o) {
    double src = (static_cast<double>(o) + 0.5) * scale - 0.5;
    if (src < 0.0) src = 0.0;
    Index i0 = static_cast<Index>(src);
    if (i0 > in - 1) i0 = in - 1;
    const Index i1 = std::min(i0 + 1, in - 1);
    const double l = src - static_cast<double>(i0);
    taps[static_cast<std::size_t>(o)] = {i0, i1, 1.0 - l, l};
  }
  return taps;
}

}  // namespace

double gelu_scalar(double x) { return 0.5 * x * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0)); }

double gelu_grad_scalar(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0));
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  return cdf + x * pdf;
}

namespace {

constexpr Index kRowBlock = 4;
constexpr Index kDepthBlock = 256;

// c0..c3 += a0..a3 * b over n columns.
inline void axpy4(Index n, const double* __restrict b, double a0, double a1, double a2, double a3,
                  double* __restrict c0, double* __restrict c1, double* __restrict c2, double* __restrict c3) {
  for (Index j = 0; j < n; ++j) {
    const double bv = b[j];
    c0[j] += a0 * bv;
    c1[j] += a1 * bv;
    c2[j] += a2 * bv;
    c3[j] += a3 * bv;
  }
}

inline void axpy1(Index n, const double* __restrict b, double a, double* __restrict c) {
  for (Index j = 0; j < n; ++j) c[j] += a * b[j];
}

}  // namespace

void gemm_nn(Index m, Index n, Index k, std::span<const double> a, std::span<const double> b,
             std::span<double> c, bool accumulate) {
  const double* pa = a.data();
  const double* pb = b.data();
  double* pc = c.data();
  const Index blocks = (m + kRowBlock - 1) / kRowBlock;
#pragma omp parallel for schedule(static)
  for (Index blk = 0; blk < blocks; ++blk) {
    const Index i0 = blk * kRowBlock;
    const Index rows = std::min(kRowBlock, m - i0);
    if (!accumulate) std::fill(pc + i0 * n, pc + (i0 + rows) * n, 0.0);
    if (rows == kRowBlock) {
      const double* a0 = pa + i0 * k;
      double* c0 = pc + i0 * n;
      for (Index p = 0; p < k; ++p)
        axpy4(n, pb + p * n, a0[p], a0[k + p], a0[2 * k + p], a0[3 * k + p], c0, c0 + n, c0 + 2 * n, c0 + 3 * n);
    } else {
      for (Index i = i0; i < i0 + rows; ++i)
        for (Index p = 0; p < k; ++p) axpy1(n, pb + p * n, pa[i * k + p], pc + i * n);
    }
  }
}

void gemm_nt(Index m, Index n, Index k, std::span<const double> a, std::span<const double> b,
             std::span<double> c, bool accumulate) {
  // Transpose B once so the inner loop streams contiguous memory.
  std::vector<double> bt(static_cast<std::size_t>(n * k));
  for (Index j = 0; j < n; ++j)
    for (Index p = 0; p < k; ++p) bt[static_cast<std::size_t>(p * n + j)] = b[static_cast<std::size_t>(j * k + p)];
  gemm_nn(m, n, k, a, bt, c, accumulate);
}

void gemm_tn(Index m, Index n, Index k, std::span<const double> a, std::span<const double> b,
             std::span<double> c, bool accumulate) {
  const double* pa = a.data();
  const double* pb = b.data();
  double* pc = c.data();
  const Index blocks = (m + kRowBlock - 1) / kRowBlock;
#pragma omp parallel for schedule(static)
  for (Index blk = 0; blk < blocks; ++blk) {
    const Index i0 = blk * kRowBlock;
    const Index rows = std::min(kRowBlock, m - i0);
    if (!accumulate) std::fill(pc + i0 * n, pc + (i0 + rows) * n, 0.0);
  }
  // Depth-blocked so each slab of B stays cached while every row block of C
  // passes over it.
  for (Index p0 = 0; p0 < k; p0 += kDepthBlock) {
    const Index p1 = std::min(k, p0 + kDepthBlock);
#pragma omp parallel for schedule(static)
    for (Index blk = 0; blk < blocks; ++blk) {
      const Index i0 = blk * kRowBlock;
      const Index rows = std::min(kRowBlock, m - i0);
      double* c0 = pc + i0 * n;
      if (rows == kRowBlock) {
        for (Index p = p0; p < p1; ++p) {
          const double* ar = pa + p * m + i0;
          axpy4(n, pb + p * n, ar[0], ar[1], ar[2], ar[3], c0, c0 + n, c0 + 2 * n, c0 + 3 * n);
        }
      } else {
        for (Index i = i0; i < i0 + rows; ++i)
          for (Index p = p0; p < p1; ++p) axpy1(n, pb + p * n, pa[p * m + i], pc + i * n);
      }
    }
  }
}

void softmax_rows(Index rows, Index cols, std::span<const double> in, std::span<double> out) {
#pragma omp parallel for schedule(static)
  for (Index r = 0; r < rows; ++r) {
    const double* x = in.data() + r * cols;
    double* y = out.data() + r * cols;
    double mx = x[0];
    for (Index j = 1; j < cols; ++j) mx = std::max(mx, x[j]);
    double sum = 0.0;
    for (Index j = 0; j < cols; ++j) {
      y[j] = std::exp(x[j] - mx);
      sum += y[j];
    }
    const double inv = 1.0 / sum;
    for (Index j = 0; j < cols; ++j) y[j] *= inv;
  }
}

void layer_norm_rows(Index rows, Index cols, std::span<const double> x, std::span<const double> gamma,
                     std::span<const double> beta, double eps, std::span<double> y,
                     std::span<double> mean, std::span<double> rstd) {
#pragma omp parallel for schedule(static)
  for (Index r = 0; r < rows; ++r) {
    const double* xr = x.data() + r * cols;
    double* yr = y.data() + r * cols;
    double mu = 0.0;
    for (Index j = 0; j < cols; ++j) mu += xr[j];
    mu /= static_cast<double>(cols);
    double var = 0.0;
    for (Index j = 0; j < cols; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<double>(cols);
    const double rs = 1.0 / std::sqrt(var + eps);
    for (Index j = 0; j < cols; ++j) yr[j] = (xr[j] - mu) * rs * gamma[j] + beta[j];
    mean[r] = mu;
    rstd[r] = rs;
  }
}

void bilinear_resize(Index planes, Index h, Index w, Index out_h, Index out_w,
                     std::span<const double> in, std::span<double> out) {
  const auto ty = bilinear_taps(h, out_h);
  const auto tx = bilinear_taps(w, out_w);
#pragma omp parallel for schedule(static)
  for (Index p = 0; p < planes; ++p) {
    const double* src = in.data() + p * h * w;
    double* dst = out.data() + p * out_h * out_w;
    for (Index oy = 0; oy < out_h; ++oy) {
      const Tap& y = ty[static_cast<std::size_t>(oy)];
      const double* r0 = src + y.i0 * w;
      const double* r1 = src + y.i1 * w;
      double* drow = dst + oy * out_w;
      for (Index ox = 0; ox < out_w; ++ox) {
        const Tap& x = tx[static_cast<std::size_t>(ox)];
        drow[ox] = y.w0 * (x.w0 * r0[x.i0] + x.w1 * r0[x.i1]) + y.w1 * (x.w0 * r1[x.i0] + x.w1 * r1[x.i1]);
      }
    }
  }
}

void bilinear_resize_backward(Index planes, Index h, Index w, Index out_h, Index out_w,
                              std::span<const double> grad_out, std::span<double> grad_in) {
  const auto ty = bilinear_taps(h, out_h);
  const auto tx = bilinear_taps(w, out_w);
  // Each plane is owned by one thread, so scatter-adds never race.
#pragma omp parallel for schedule(static)
  for (Index p = 0; p < planes; ++p) {
    const double* g = grad_out.data() + p * out_h * out_w;
    double* gi = grad_in.data() + p * h * w;
    std::vector<double> row(static_cast<std::size_t>(w));
    for (Index oy = 0; oy < out_h; ++oy) {
      std::fill(row.begin(), row.end(), 0.0);
      const double* grow = g + oy * out_w;
      for (Index ox = 0; ox < out_w; ++ox) {
        const Tap& x = tx[static_cast<std::size_t>(ox)];
        row[static_cast<std::size_t>(x.i0)] += x.w0 * grow[ox];
        row[static_cast<std::size_t>(x.i1)] += x.w1 * grow[ox];
      }
      const Tap& y = ty[static_cast<std::size_t>(oy)];
      double* r0 = gi + y.i0 * w;
      double* r1 = gi + y.i1 * w;
      for (Index j = 0; j < w; ++j) {
        r0[j] += y.w0 * row[static_cast<std::size_t>(j)];
        r1[j] += y.w1 * row[static_cast<std::size_t>(j)];
      }
    }
  }
}

void gelu(std::span<const double> x, std::span<double> y) {
  const auto n = static_cast<Index>(x.size());
#pragma omp parallel for schedule(static)
  for (Index i = 0; i < n; ++i) y[i] = gelu_scalar(x[i]);
}

namespace reference {

void gemm_nn(Index m, Index n, Index k, std::span<const double> a, std::span<const double> b,
             std::span<double> c, bool accumulate) {
  for (Index i = 0; i < m; ++i)
    for (Index j = 0; j < n; ++j) {
      double s = 0.0;
      for (Index p = 0; p < k; ++p) s += a[i * k + p] * b[p * n + j];
      c[i * n + j] = accumulate ? c[i * n + j] + s : s;
    }
}

void gemm_nt(Index m, Index n, Index k, std::span<const double> a, std::span<const double> b,
             std::span<double> c, bool accumulate) {
  for (Index i = 0; i < m; ++i)
    for (Index j = 0; j < n; ++j) {
      double s = 0.0;
      for (Index p = 0; p < k; ++p) s += a[i * k + p] * b[j * k + p];
      c[i * n + j] = accumulate ? c[i * n + j] + s : s;
    }
}

void gemm_tn(Index m, Index n, Index k, std::span<const double> a, std::span<const double> b,
             std::span<double> c, bool accumulate) {
  for (Index i = 0; i < m; ++i)
    for (Index j = 0; j < n; ++j) {
      double s = 0.0;
      for (Index p = 0; p < k; ++p) s += a[p * m + i] * b[p * n + j];
      c[i * n + j] = accumulate ? c[i * n + j] + s : s;
    }
}

void softmax_rows(Index rows, Index cols, std::span<const double> in, std::span<double> out) {
  for (Index r = 0; r < rows; ++r) {
    double mx = in[r * cols];
    for (Index j = 1; j < cols; ++j) mx = std::max(mx, in[r * cols + j]);
    double sum = 0.0;
    for (Index j = 0; j < cols; ++j) sum += std::exp(in[r * cols + j] - mx);
    for (Index j = 0; j < cols; ++j) out[r * cols + j] = std::exp(in[r * cols + j] - mx) / sum;
  }
}

void layer_norm_rows(Index rows, Index cols, std::span<const double> x, std::span<const double> gamma,
                     std::span<const double> beta, double eps, std::span<double> y,
                     std::span<double> mean, std::span<double> rstd) {
  for (Index r = 0; r < rows; ++r) {
    double mu = 0.0;
    for (Index j = 0; j < cols; ++j) mu += x[r * cols + j];
    mu /= static_cast<double>(cols);
    double var = 0.0;
    for (Index j = 0; j < cols; ++j) var += (x[r * cols + j] - mu) * (x[r * cols + j] - mu);
    var /= static_cast<double>(cols);
    mean[r] = mu;
    rstd[r] = 1.0 / std::sqrt(var + eps);
    for (Index j = 0; j < cols; ++j) y[r * cols + j] = (x[r * cols + j] - mu) * rstd[r] * gamma[j] + beta[j];
  }
}

// Direct per-output evaluation of the sampling formula, no tap tables.
void bilinear_resize(Index planes, Index h, Index w, Index out_h, Index out_w,
                     std::span<const double> in, std::span<double> out) {
  for (Index p = 0; p < planes; ++p)
    for (Index oy = 0; oy < out_h; ++oy)
      for (Index ox = 0; ox < out_w; ++ox) {
        const double sy = std::max(0.0, (oy + 0.5) * static_cast<double>(h) / out_h - 0.5);
        const double sx = std::max(0.0, (ox + 0.5) * static_cast<double>(w) / out_w - 0.5);
        const Index y0 = std::min(static_cast<Index>(std::floor(sy)), h - 1);
        const Index x0 = std::min(static_cast<Index>(std::floor(sx)), w - 1);
        const Index y1 = std::min(y0 + 1, h - 1);
        const Index x1 = std::min(x0 + 1, w - 1);
        const double ly = sy - y0;
        const double lx = sx - x0;
        const double* s = in.data() + p * h * w;
        out[(p * out_h + oy) * out_w + ox] = (1 - ly) * ((1 - lx) * s[y0 * w + x0] + lx * s[y0 * w + x1]) +
                                             ly * ((1 - lx) * s[y1 * w + x0] + lx * s[y1 * w + x1]);
      }
}

void bilinear_resize_backward(Index planes, Index h, Index w, Index out_h, Index out_w,
                              std::span<const double> grad_out, std::span<double> grad_in) {
  for (Index p = 0; p < planes; ++p)
    for (Index oy = 0; oy < out_h; ++oy)
      for (Index ox = 0; ox < out_w; ++ox) {
        const double sy = std::max(0.0, (oy + 0.5) * static_cast<double>(h) / out_h - 0.5);
        const double sx = std::max(0.0, (ox + 0.5) * static_cast<double>(w) / out_w - 0.5);
        const Index y0 = std::min(static_cast<Index>(std::floor(sy)), h - 1);
        const Index x0 = std::min(static_cast<Index>(std::floor(sx)), w - 1);
        const Index y1 = std::min(y0 + 1, h - 1);
        const Index x1 = std::min(x0 + 1, w - 1);
        const double ly = sy - y0;
        const double lx = sx - x0;
        const double g = grad_out[(p * out_h + oy) * out_w + ox];
        double* gi = grad_in.data() + p * h * w;
        gi[y0 * w + x0] += (1 - ly) * (1 - lx) * g;
        gi[y0 * w + x1] += (1 - ly) * lx * g;
        gi[y1 * w + x0] += ly * (1 - lx) * g;
        gi[y1 * w + x1] += ly * lx * g;
      }
}

void gelu(std::span<const double> x, std::span<double> y) {
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = gelu_scalar(x[i]);
}

}  // namespace reference
}  // namespace peftseg::kernels
