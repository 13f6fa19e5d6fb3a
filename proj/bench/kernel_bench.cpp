// Serial reference vs OpenMP kernels. Thread count follows OMP_NUM_THREADS.

#include <random>
#include <vector>

#include <benchmark/benchmark.h>

#include "peftseg/kernels.hpp"

namespace k = peftseg::kernels;

namespace {

std::vector<double> randv(std::size_t n) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> nd;
  std::vector<double> v(n);
  for (auto& x : v) x = nd(rng);
  return v;
}

template <auto Fn>
void BM_gemm(benchmark::State& st) {
  const auto n = st.range(0);
  const auto a = randv(std::size_t(n * n)), b = randv(std::size_t(n * n));
  std::vector<double> c(std::size_t(n * n));
  for (auto _ : st) {
    Fn(n, n, n, a, b, c, false);
    benchmark::DoNotOptimize(c.data());
  }
  st.SetItemsProcessed(st.iterations() * 2 * n * n * n);
}

template <auto Fn>
void BM_softmax(benchmark::State& st) {
  const k::Index rows = st.range(0), cols = 1024;
  const auto x = randv(std::size_t(rows * cols));
  std::vector<double> y(x.size());
  for (auto _ : st) {
    Fn(rows, cols, x, y);
    benchmark::DoNotOptimize(y.data());
  }
}

template <auto Fn>
void BM_layer_norm(benchmark::State& st) {
  const k::Index rows = st.range(0), cols = 256;
  const auto x = randv(std::size_t(rows * cols)), g = randv(std::size_t(cols)), b = randv(std::size_t(cols));
  std::vector<double> y(x.size()), mean(static_cast<std::size_t>(rows)), rstd(static_cast<std::size_t>(rows));
  for (auto _ : st) {
    Fn(rows, cols, x, g, b, 1e-6, y, mean, rstd);
    benchmark::DoNotOptimize(y.data());
  }
}

template <auto Fn>
void BM_bilinear(benchmark::State& st) {
  const auto planes = st.range(0);
  const auto x = randv(std::size_t(planes * 128 * 128));
  std::vector<double> y(std::size_t(planes * 512 * 512));
  for (auto _ : st) {
    Fn(planes, 128, 128, 512, 512, x, y);
    benchmark::DoNotOptimize(y.data());
  }
}

}  // namespace

BENCHMARK(BM_gemm<k::reference::gemm_nn>)->Name("gemm_nn/serial")->Arg(64)->Arg(256);
BENCHMARK(BM_gemm<k::gemm_nn>)->Name("gemm_nn/openmp")->Arg(64)->Arg(256);
BENCHMARK(BM_gemm<k::reference::gemm_tn>)->Name("gemm_tn/serial")->Arg(64)->Arg(256);
BENCHMARK(BM_gemm<k::gemm_tn>)->Name("gemm_tn/openmp")->Arg(64)->Arg(256);
BENCHMARK(BM_softmax<k::reference::softmax_rows>)->Name("softmax/serial")->Arg(1024);
BENCHMARK(BM_softmax<k::softmax_rows>)->Name("softmax/openmp")->Arg(1024);
BENCHMARK(BM_layer_norm<k::reference::layer_norm_rows>)->Name("layer_norm/serial")->Arg(4096);
BENCHMARK(BM_layer_norm<k::layer_norm_rows>)->Name("layer_norm/openmp")->Arg(4096);
BENCHMARK(BM_bilinear<k::reference::bilinear_resize>)->Name("bilinear/serial")->Arg(5);
BENCHMARK(BM_bilinear<k::bilinear_resize>)->Name("bilinear/openmp")->Arg(5);

BENCHMARK_MAIN();
