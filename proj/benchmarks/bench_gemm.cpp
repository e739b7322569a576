// Matrix-product kernels at the shapes the conv lowering actually emits:
// m = spatial positions of one sample, k = in_ch * kernel^2, n = out_ch.

#include <benchmark/benchmark.h>

#include <cstdint>
#include <vector>

#include "dla/rng.hpp"
#include "dla/tensor.hpp"

namespace {

void fill(std::vector<double>& v, std::uint64_t seed) {
    dla::Rng rng(seed);
    for (auto& x : v) x = rng.uniform(-1.0, 1.0);
}

void bench_gemm_f64(benchmark::State& state) {
    int m = int(state.range(0)), n = int(state.range(1)), k = int(state.range(2));
    std::vector<double> a(std::size_t(m) * k), b(std::size_t(k) * n), c(std::size_t(m) * n);
    fill(a, 1);
    fill(b, 2);
    for (auto _ : state) {
        dla::gemm(false, false, m, n, k, 1.0, a.data(), k, b.data(), n, 0.0, c.data(), n);
        benchmark::DoNotOptimize(c.data());
    }
    state.SetItemsProcessed(state.iterations() * 2 * std::int64_t(m) * n * k);
}

void bench_gemm_f32(benchmark::State& state) {
    int m = int(state.range(0)), n = int(state.range(1)), k = int(state.range(2));
    std::vector<float> a(std::size_t(m) * k), b(std::size_t(k) * n), c(std::size_t(m) * n);
    dla::Rng rng(3);
    for (auto& x : a) x = float(rng.uniform(-1.0, 1.0));
    for (auto& x : b) x = float(rng.uniform(-1.0, 1.0));
    for (auto _ : state) {
        dla::gemm_f32(false, false, m, n, k, 1.0f, a.data(), k, b.data(), n, 0.0f, c.data(), n);
        benchmark::DoNotOptimize(c.data());
    }
    state.SetItemsProcessed(state.iterations() * 2 * std::int64_t(m) * n * k);
}

}  // namespace

// input conv 13x13 patch, 7 slices, 5x5 kernel, 16 filters
BENCHMARK(bench_gemm_f64)->Args({169, 16, 175});
BENCHMARK(bench_gemm_f32)->Args({169, 16, 175});
// trunk conv 13x13, 16 -> 16 channels, 3x3 kernel
BENCHMARK(bench_gemm_f64)->Args({169, 16, 144});
BENCHMARK(bench_gemm_f32)->Args({169, 16, 144});
// deepest stage 4x4, 64 -> 64 channels, 3x3 kernel
BENCHMARK(bench_gemm_f64)->Args({16, 64, 576});
BENCHMARK(bench_gemm_f32)->Args({16, 64, 576});
// wide-patch variant, 41x41 input conv
BENCHMARK(bench_gemm_f64)->Args({1681, 16, 125});
BENCHMARK(bench_gemm_f32)->Args({1681, 16, 125});

BENCHMARK_MAIN();
