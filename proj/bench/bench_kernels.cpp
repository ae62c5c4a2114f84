// Serial reference kernels against their OpenMP counterparts.

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "forge/kernels.hpp"

namespace k = forge::kernels;

namespace {

std::vector<float> noise(std::size_t n, unsigned seed) {
  std::mt19937 rng(seed);
  std::normal_distribution<float> d(0.0F, 1.0F);
  std::vector<float> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

template <bool Omp>
void BM_gemm_nt(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = noise(n * n, 1), b = noise(n * n, 2);
  std::vector<float> c(n * n);
  for (auto _ : state) {
    if constexpr (Omp) k::omp::gemm_nt<float>(a, b, c, n, n, n);
    else k::serial::gemm_nt<float>(a, b, c, n, n, n);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * 2 * n * n * n);
}

template <bool Omp>
void BM_layer_norm(benchmark::State& state) {
  const std::size_t rows = static_cast<std::size_t>(state.range(0)), d = 256;
  const auto x = noise(rows * d, 3), g = noise(d, 4), b = noise(d, 5);
  std::vector<float> y(rows * d), mean(rows), rstd(rows);
  for (auto _ : state) {
    if constexpr (Omp) k::omp::layer_norm<float>(x, g, b, y, mean, rstd, rows, d, 1e-5F);
    else k::serial::layer_norm<float>(x, g, b, y, mean, rstd, rows, d, 1e-5F);
    benchmark::DoNotOptimize(y.data());
  }
}

template <bool Omp>
void BM_attention(benchmark::State& state) {
  k::AttentionDims dims;
  dims.batch = 4;
  dims.seq = static_cast<std::size_t>(state.range(0));
  dims.heads = 4;
  dims.head_dim = 16;
  const std::size_t n = dims.rows() * dims.width();
  const auto q = noise(n, 6), kk = noise(n, 7), v = noise(n, 8);
  std::vector<float> out(n), probs(dims.batch * dims.heads * dims.seq * dims.seq);
  for (auto _ : state) {
    if constexpr (Omp) k::omp::attention<float>(q, kk, v, out, probs, dims);
    else k::serial::attention<float>(q, kk, v, out, probs, dims);
    benchmark::DoNotOptimize(out.data());
  }
}

template <bool Omp>
void BM_cross_entropy(benchmark::State& state) {
  const std::size_t rows = static_cast<std::size_t>(state.range(0)), vocab = 259;
  const auto logits = noise(rows * vocab, 9);
  std::vector<std::size_t> targets(rows);
  for (std::size_t i = 0; i < rows; ++i) targets[i] = (i * 37) % vocab;
  const std::vector<unsigned char> mask(rows, 1);
  std::vector<float> lse(rows);
  for (auto _ : state) {
    double loss = 0;
    if constexpr (Omp) loss = k::omp::cross_entropy<float>(logits, targets, mask, lse, rows, vocab);
    else loss = k::serial::cross_entropy<float>(logits, targets, mask, lse, rows, vocab);
    benchmark::DoNotOptimize(loss);
  }
}

}  // namespace

BENCHMARK(BM_gemm_nt<false>)->Name("gemm_nt/serial")->Arg(64)->Arg(256);
BENCHMARK(BM_gemm_nt<true>)->Name("gemm_nt/omp")->Arg(64)->Arg(256);
BENCHMARK(BM_layer_norm<false>)->Name("layer_norm/serial")->Arg(512)->Arg(4096);
BENCHMARK(BM_layer_norm<true>)->Name("layer_norm/omp")->Arg(512)->Arg(4096);
BENCHMARK(BM_attention<false>)->Name("attention/serial")->Arg(64)->Arg(256);
BENCHMARK(BM_attention<true>)->Name("attention/omp")->Arg(64)->Arg(256);
BENCHMARK(BM_cross_entropy<false>)->Name("cross_entropy/serial")->Arg(512)->Arg(4096);
BENCHMARK(BM_cross_entropy<true>)->Name("cross_entropy/omp")->Arg(512)->Arg(4096);

BENCHMARK_MAIN();
