// Voxel-classification throughput: patch assembly, single-batch prediction
// and whole-ROI classification with one and two workers.

#include <benchmark/benchmark.h>

#include <cstdint>
#include <vector>

#include "dla/inference.hpp"
#include "dla/net.hpp"
#include "dla/patches.hpp"
#include "dla/rng.hpp"
#include "dla/volume.hpp"

namespace {

dla::Volume head_volume(dla::Dims3 d) {
    dla::Volume v(d, 0.46f);
    dla::Rng rng(11);
    for (auto& x : v.data()) x = float(rng.uniform(-1000.0, 1800.0));
    return v;
}

dla::Architecture pipeline_arch() {
    dla::Architecture a;
    a.patch_p = 13;
    a.patch_s = 7;
    return a;
}

void bench_extract_patch(benchmark::State& state) {
    auto vol = head_volume({64, 64, 48});
    int p = int(state.range(0)), s = int(state.range(1));
    std::vector<float> out(std::size_t(p) * p * s);
    std::int64_t center = vol.size() / 2;
    for (auto _ : state) {
        dla::extract_patch_into_f32(vol, center, p, s, out.data());
        benchmark::DoNotOptimize(out.data());
        ++center;
    }
    state.SetItemsProcessed(state.iterations());
}

void bench_predict_batch(benchmark::State& state) {
    auto arch = pipeline_arch();
    dla::InferenceEngine engine(arch, dla::init_params(arch, 3));
    int b = int(state.range(0));
    std::size_t n = std::size_t(b) * arch.patch_s * arch.patch_p * arch.patch_p;
    std::vector<float> batch(n), probs(std::size_t(b) * arch.n_classes);
    dla::Rng rng(5);
    for (auto& x : batch) x = float(rng.uniform(-1000.0, 1800.0));
    for (auto _ : state) {
        engine.predict(batch.data(), b, probs.data());
        benchmark::DoNotOptimize(probs.data());
    }
    state.SetItemsProcessed(state.iterations() * b);
}

void bench_classify_roi(benchmark::State& state) {
    auto arch = pipeline_arch();
    dla::InferenceEngine engine(arch, dla::init_params(arch, 3));
    auto vol = head_volume({32, 32, 32});
    dla::Roi roi{{10, 10, 10}, {22, 22, 22}};  // 12^3 voxels
    int workers = int(state.range(0));
    for (auto _ : state) {
        auto r = dla::classify_volume(engine, vol, roi, workers);
        benchmark::DoNotOptimize(r.labels.labels().data());
    }
    state.SetItemsProcessed(state.iterations() * roi.voxels());
}

}  // namespace

BENCHMARK(bench_extract_patch)->Args({13, 7})->Args({41, 5});
BENCHMARK(bench_predict_batch)->Arg(128)->Arg(512);
BENCHMARK(bench_classify_roi)->Arg(1)->Arg(2)->Unit(benchmark::kMillisecond)->UseRealTime();

BENCHMARK_MAIN();
