#include <array>
#include <cmath>
#include <random>
#include <vector>

#include "doctest.h"
#include "peftseg/kernels.hpp"

namespace k = peftseg::kernels;

namespace {

std::vector<double> randv(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  std::vector<double> v(n);
  for (auto& x : v) x = nd(rng);
  return v;
}

double max_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(a[i] - b[i]));
  return d;
}

}  // namespace

TEST_CASE("gemm variants match the serial reference on ragged sizes") {
  const std::vector<std::array<k::Index, 3>> sizes{{1, 1, 1}, {7, 5, 3}, {33, 17, 300}, {64, 48, 257}, {5, 129, 9}};
  for (auto [m, n, kk] : sizes) {
    const auto a = randv(std::size_t(m * kk), 1), b = randv(std::size_t(kk * n), 2), bt = randv(std::size_t(n * kk), 3),
               at = randv(std::size_t(kk * m), 4);
    for (bool acc : {false, true}) {
      auto c0 = randv(std::size_t(m * n), 5), c1 = c0;
      k::gemm_nn(m, n, kk, a, b, c0, acc);
      k::reference::gemm_nn(m, n, kk, a, b, c1, acc);
      CHECK(max_diff(c0, c1) < 1e-10);
      c0 = randv(std::size_t(m * n), 6), c1 = c0;
      k::gemm_nt(m, n, kk, a, bt, c0, acc);
      k::reference::gemm_nt(m, n, kk, a, bt, c1, acc);
      CHECK(max_diff(c0, c1) < 1e-10);
      c0 = randv(std::size_t(m * n), 7), c1 = c0;
      k::gemm_tn(m, n, kk, at, b, c0, acc);
      k::reference::gemm_tn(m, n, kk, at, b, c1, acc);
      CHECK(max_diff(c0, c1) < 1e-10);
    }
  }
}

TEST_CASE("gemm_nn against a hand product") {
  const std::vector<double> a{1, 2, 3, 4, 5, 6}, b{7, 8, 9, 10, 11, 12};
  std::vector<double> c(4);
  k::gemm_nn(2, 2, 3, a, b, c);
  CHECK(c == std::vector<double>{58, 64, 139, 154});
}

TEST_CASE("row softmax and layer norm match the reference") {
  const auto x = randv(37 * 19, 8);
  std::vector<double> y0(x.size()), y1(x.size());
  k::softmax_rows(37, 19, x, y0);
  k::reference::softmax_rows(37, 19, x, y1);
  CHECK(max_diff(y0, y1) < 1e-14);
  for (int r = 0; r < 37; ++r) {
    double s = 0.0;
    for (int c = 0; c < 19; ++c) s += y0[std::size_t(r * 19 + c)];
    CHECK(s == doctest::Approx(1.0).epsilon(1e-14));
  }
  const auto g = randv(19, 9), b = randv(19, 10);
  std::vector<double> m0(37), r0(37), m1(37), r1(37);
  k::layer_norm_rows(37, 19, x, g, b, 1e-6, y0, m0, r0);
  k::reference::layer_norm_rows(37, 19, x, g, b, 1e-6, y1, m1, r1);
  CHECK(max_diff(y0, y1) < 1e-12);
  CHECK(max_diff(m0, m1) < 1e-14);
}

TEST_CASE("softmax is stable for large logits") {
  const std::vector<double> x{1000.0, 1000.0, -1000.0};
  std::vector<double> y(3);
  k::softmax_rows(1, 3, x, y);
  CHECK(y[0] == doctest::Approx(0.5));
  CHECK(y[2] == 0.0);
}

TEST_CASE("bilinear resize matches the reference and its backward is the adjoint") {
  const int planes = 3, h = 5, w = 7, oh = 12, ow = 9;
  const auto x = randv(planes * h * w, 11), gy = randv(planes * oh * ow, 12);
  std::vector<double> y0(gy.size()), y1(gy.size());
  k::bilinear_resize(planes, h, w, oh, ow, x, y0);
  k::reference::bilinear_resize(planes, h, w, oh, ow, x, y1);
  CHECK(max_diff(y0, y1) < 1e-14);
  std::vector<double> gx0(x.size(), 0.0), gx1(x.size(), 0.0);
  k::bilinear_resize_backward(planes, h, w, oh, ow, gy, gx0);
  k::reference::bilinear_resize_backward(planes, h, w, oh, ow, gy, gx1);
  CHECK(max_diff(gx0, gx1) < 1e-12);
  double lhs = 0.0, rhs = 0.0;
  for (std::size_t i = 0; i < y0.size(); ++i) lhs += y0[i] * gy[i];
  for (std::size_t i = 0; i < x.size(); ++i) rhs += x[i] * gx0[i];
  CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
}

TEST_CASE("bilinear resize to the same size is the identity") {
  const auto x = randv(2 * 4 * 6, 13);
  std::vector<double> y(x.size());
  k::bilinear_resize(2, 4, 6, 4, 6, x, y);
  CHECK(max_diff(x, y) < 1e-15);
}

TEST_CASE("gelu is x * Phi(x) with the matching derivative") {
  for (double x : {-3.0, -0.5, 0.0, 0.7, 2.5}) {
    const double phi = 0.5 * (1.0 + std::erf(x / std::sqrt(2.0)));
    CHECK(k::gelu_scalar(x) == doctest::Approx(x * phi).epsilon(1e-15));
    const double h = 1e-6;
    const double fd = (k::gelu_scalar(x + h) - k::gelu_scalar(x - h)) / (2 * h);
    CHECK(k::gelu_grad_scalar(x) == doctest::Approx(fd).epsilon(1e-8));
  }
  const auto x = randv(1000, 14);
  std::vector<double> y0(x.size()), y1(x.size());
  k::gelu(x, y0);
  k::reference::gelu(x, y1);
  CHECK(max_diff(y0, y1) == 0.0);
}
