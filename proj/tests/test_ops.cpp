#include <numeric>

#include "doctest.h"
#include "peftseg/ops.hpp"
#include "support/fixtures.hpp"

using namespace peftseg;
using peftseg::testing::check_gradient;
using peftseg::testing::random_tensor;

namespace {

// sum(y * w) for a fixed random w, so every output element reaches the loss.
Tensor probe(const Tensor& y, std::uint64_t seed = 99) {
  const auto n = y.numel();
  const auto w = random_tensor({1, n}, seed);
  return ops::sum(ops::matmul_nt(ops::reshape(y, {1, n}), w));
}

}  // namespace

TEST_CASE("finite differences agree with backward for the core ops") {
  auto x = random_tensor({2, 3, 4}, 1, 1.0, true);
  auto w = random_tensor({5, 4}, 2, 1.0, true);
  auto b = random_tensor({5}, 3, 1.0, true);
  auto g = random_tensor({4}, 4, 1.0, true);
  auto bt = random_tensor({4}, 5, 1.0, true);
  auto sq = random_tensor({2, 4, 3}, 6, 1.0, true);

  SUBCASE("linear") {
    auto f = [&] { return probe(ops::linear(x, w, b)); };
    CHECK(check_gradient(x, f).max_rel_error < 1e-6);
    CHECK(check_gradient(w, f).max_rel_error < 1e-6);
    CHECK(check_gradient(b, f).max_rel_error < 1e-6);
  }
  SUBCASE("batched matmuls") {
    CHECK(check_gradient(x, [&] { return probe(ops::matmul_nn(x, sq)); }).max_rel_error < 1e-6);
    CHECK(check_gradient(sq, [&] { return probe(ops::matmul_nn(x, sq)); }).max_rel_error < 1e-6);
    CHECK(check_gradient(x, [&] { return probe(ops::matmul_nt(x, x)); }).max_rel_error < 1e-6);
  }
  SUBCASE("layer norm") {
    auto f = [&] { return probe(ops::layer_norm(x, g, bt, 1e-6)); };
    CHECK(check_gradient(x, f).max_rel_error < 1e-5);
    CHECK(check_gradient(g, f).max_rel_error < 1e-6);
    CHECK(check_gradient(bt, f).max_rel_error < 1e-6);
  }
  SUBCASE("pointwise and softmax") {
    CHECK(check_gradient(x, [&] { return probe(ops::gelu(x)); }).max_rel_error < 1e-6);
    CHECK(check_gradient(x, [&] { return probe(ops::softmax_last(x)); }).max_rel_error < 1e-6);
    CHECK(check_gradient(x, [&] { return probe(ops::scale(ops::add(x, x), 0.3)); }).max_rel_error < 1e-6);
    CHECK(check_gradient(g, [&] { return probe(ops::add_broadcast(x, g)); }).max_rel_error < 1e-6);
  }
  SUBCASE("layout ops") {
    CHECK(check_gradient(x, [&] { return probe(ops::permute(x, {2, 0, 1})); }).max_rel_error < 1e-6);
    CHECK(check_gradient(x, [&] { return probe(ops::slice_last(x, 1, 2)); }).max_rel_error < 1e-6);
    auto y = random_tensor({2, 3, 2}, 7, 1.0, true);
    CHECK(check_gradient(y, [&] { return probe(ops::add_into_slice_last(x, y, 2)); }).max_rel_error < 1e-6);
    CHECK(check_gradient(x, [&] { return probe(ops::gather_rows(x, 4, {5, 0, 0, 2}, {4, 4})); }).max_rel_error < 1e-6);
    auto img = random_tensor({1, 2, 2, 8}, 8, 1.0, true);
    CHECK(check_gradient(img, [&] { return probe(ops::pixel_shuffle2(img)); }).max_rel_error < 1e-6);
    auto big = random_tensor({1, 4, 4, 2}, 9, 1.0, true);
    CHECK(check_gradient(big, [&] { return probe(ops::patchify(big, 2)); }).max_rel_error < 1e-6);
    CHECK(check_gradient(big, [&] { return probe(ops::window_partition(big, 2)); }).max_rel_error < 1e-6);
  }
  SUBCASE("bilinear resize and grouped linear") {
    auto planes = random_tensor({1, 2, 3, 5}, 10, 1.0, true);
    CHECK(check_gradient(planes, [&] { return probe(ops::bilinear_resize(planes, 7, 4)); }).max_rel_error < 1e-6);
    auto gx = random_tensor({2, 3, 4}, 11, 1.0, true);
    auto gw = random_tensor({3, 2, 4}, 12, 1.0, true);
    auto gb = random_tensor({3, 2}, 13, 1.0, true);
    auto f = [&] { return probe(ops::grouped_linear(gx, gw, gb)); };
    CHECK(check_gradient(gx, f).max_rel_error < 1e-6);
    CHECK(check_gradient(gw, f).max_rel_error < 1e-6);
    CHECK(check_gradient(gb, f).max_rel_error < 1e-6);
  }
}

TEST_CASE("window partition round-trips") {
  const auto x = random_tensor({2, 4, 6, 3}, 20);
  const auto back = ops::window_unpartition(ops::window_partition(x, 2), 2, 4, 6, 2);
  CHECK(back.shape() == x.shape());
  CHECK(std::equal(back.data().begin(), back.data().end(), x.data().begin()));
}

TEST_CASE("pixel_shuffle2 places channel blocks by offset") {
  std::vector<double> v(8);
  std::iota(v.begin(), v.end(), 0.0);
  const auto y = ops::pixel_shuffle2(Tensor::from_data({1, 1, 1, 8}, v));
  CHECK(y.shape() == Shape{1, 2, 2, 2});
  // (dy, dx) = (1, 0) holds channels 4 and 5.
  CHECK(y.data()[4] == 4.0);
  CHECK(y.data()[5] == 5.0);
}

TEST_CASE("no graph is recorded under NoGradGuard") {
  auto x = random_tensor({3}, 1, 1.0, true);
  NoGradGuard g;
  CHECK_FALSE(ops::gelu(x).requires_grad());
}
