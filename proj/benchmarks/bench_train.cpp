// Training-step costs: balanced batch assembly and one gradient evaluation.

#include <benchmark/benchmark.h>

#include <cstdint>
#include <vector>

#include "dla/labelgen.hpp"
#include "dla/net.hpp"
#include "dla/patches.hpp"
#include "dla/rng.hpp"
#include "dla/volume.hpp"

namespace {

struct LabeledCase {
    dla::Volume fill;
    dla::LabeledVoxelSet set;

    LabeledCase() : fill({64, 64, 48}, 0.46f) {
        dla::Rng rng(23);
        for (auto& x : fill.data()) x = float(rng.uniform(-1000.0, 1800.0));
        set.dims = fill.dims();
        std::int64_t idx = 0;
        for (std::uint8_t cls : {dla::kClassVessel, dla::kClassBone, dla::kClassSoft}) {
            for (int i = 0; i < 4000; ++i) set.entries.push_back({idx++, cls});
        }
        set.n_vessel = set.n_bone = set.n_soft = 4000;
    }
};

dla::Architecture pipeline_arch() {
    dla::Architecture a;
    a.patch_p = 13;
    a.patch_s = 7;
    return a;
}

void bench_sample_batch(benchmark::State& state) {
    LabeledCase data;
    auto arch = pipeline_arch();
    dla::BalancedSampler sampler({&data.fill}, {&data.set}, arch.patch_p, arch.patch_s, 9);
    int b = int(state.range(0));
    for (auto _ : state) {
        auto batch = sampler.next_batch(b);
        benchmark::DoNotOptimize(batch.values.data());
    }
    state.SetItemsProcessed(state.iterations() * b);
}

void bench_loss_and_grad(benchmark::State& state) {
    LabeledCase data;
    auto arch = pipeline_arch();
    auto params = dla::init_params(arch, 1);
    auto grads = dla::zeros_like(arch);
    dla::BalancedSampler sampler({&data.fill}, {&data.set}, arch.patch_p, arch.patch_s, 9);
    int b = int(state.range(0));
    auto batch = sampler.next_batch(b);
    for (auto _ : state) {
        double loss = dla::loss_and_grad(arch, params, batch.values.data(),
                                         batch.labels.data(), b, grads);
        benchmark::DoNotOptimize(loss);
    }
    state.SetItemsProcessed(state.iterations() * b);
}

}  // namespace

BENCHMARK(bench_sample_batch)->Arg(128)->Arg(512);
BENCHMARK(bench_loss_and_grad)->Arg(64)->Arg(128)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
