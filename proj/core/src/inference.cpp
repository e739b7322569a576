#include "dla/inference.hpp"

#include <atomic>
#include <chrono>
#include <thread>

#include "dla/error.hpp"
#include "dla/patches.hpp"

namespace dla {

void Roi::validate(const Dims3& dims) const {
    const int d[3] = {static_cast<int>(dims.nx), static_cast<int>(dims.ny),
                      static_cast<int>(dims.nz)};
    for (int a = 0; a < 3; ++a) {
        if (lo[a] < 0 || hi[a] > d[a]) throw ShapeError("roi: outside volume bounds");
        if (lo[a] >= hi[a]) throw ShapeError("roi: empty extent");
    }
}

InferenceResult classify_volume(const InferenceEngine& engine, const Volume& fill,
                                const Roi& roi, int workers, int batch_size) {
    roi.validate(fill.dims());
    if (workers < 1) throw ConfigError("classify_volume: workers must be positive");
    if (batch_size < 1) throw ConfigError("classify_volume: batch_size must be positive");

    const Architecture& arch = engine.arch();
    const Dims3 dims = fill.dims();
    const std::int64_t ex = roi.hi[0] - roi.lo[0];
    const std::int64_t ey = roi.hi[1] - roi.lo[1];
    const std::int64_t n = roi.voxels();
    const std::size_t sample = std::size_t(arch.patch_s) * arch.patch_p * arch.patch_p;

    InferenceResult res;
    res.probs.dims = dims;
    res.probs.roi = roi;
    res.probs.n_classes = arch.n_classes;
    res.probs.probs.resize(static_cast<std::size_t>(n) * arch.n_classes);
    res.labels = LabelVolume(dims, kClassUnlabeled);

    const std::int64_t n_batches = (n + batch_size - 1) / batch_size;
    std::atomic<std::int64_t> next{0};
    std::vector<std::exception_ptr> errs(workers);

    auto t0 = std::chrono::steady_clock::now();
    auto body = [&](int w) {
        try {
            std::vector<float> values(std::size_t(batch_size) * sample);
            std::vector<float> probs(std::size_t(batch_size) * arch.n_classes);
            for (;;) {
                std::int64_t bi = next.fetch_add(1);
                if (bi >= n_batches) return;
                const std::int64_t first = bi * batch_size;
                const int count = static_cast<int>(std::min<std::int64_t>(batch_size, n - first));
                for (int i = 0; i < count; ++i) {
                    std::int64_t v = first + i;
                    int x = roi.lo[0] + static_cast<int>(v % ex);
                    int y = roi.lo[1] + static_cast<int>((v / ex) % ey);
                    int z = roi.lo[2] + static_cast<int>(v / (ex * ey));
                    std::int64_t center =
                        x + std::int64_t(dims.nx) * (y + std::int64_t(dims.ny) * z);
                    extract_patch_into_f32(fill, center, arch.patch_p, arch.patch_s,
                                           values.data() + std::size_t(i) * sample);
                }
                engine.predict(values.data(), count, probs.data());
                for (int i = 0; i < count; ++i) {
                    std::int64_t v = first + i;
                    const float* p = probs.data() + std::size_t(i) * arch.n_classes;
                    std::copy(p, p + arch.n_classes,
                              res.probs.probs.data() + std::size_t(v) * arch.n_classes);
                    int x = roi.lo[0] + static_cast<int>(v % ex);
                    int y = roi.lo[1] + static_cast<int>((v / ex) % ey);
                    int z = roi.lo[2] + static_cast<int>(v / (ex * ey));
                    int best = 0;  // ties resolve to the lowest class code
                    for (int c = 1; c < arch.n_classes; ++c)
                        if (p[c] > p[best]) best = c;
                    res.labels[std::size_t(x) +
                               std::size_t(dims.nx) * (y + std::size_t(dims.ny) * z)] =
                        static_cast<std::uint8_t>(best + 1);
                }
            }
        } catch (...) {
            errs[w] = std::current_exception();
        }
    };

    if (workers == 1) {
        body(0);
    } else {
        std::vector<std::thread> threads;
        for (int w = 0; w < workers; ++w) threads.emplace_back(body, w);
        for (auto& t : threads) t.join();
    }
    for (auto& e : errs)
        if (e) std::rethrow_exception(e);
    auto t1 = std::chrono::steady_clock::now();
    double secs = std::chrono::duration<double>(t1 - t0).count();
    res.voxels_per_s = secs > 0.0 ? static_cast<double>(n) / secs : 0.0;
    return res;
}

Volume make_dla(const Volume& fill, const LabelVolume& labels) {
    if (!(fill.dims() == labels.dims())) throw ShapeError("make_dla: dimension mismatch");
    Volume out(fill.dims(), fill.spacing_mm(), kAirHU);
    const auto& src = fill.data();
    auto& dst = out.data();
    for (std::size_t i = 0; i < src.size(); ++i)
        if (labels[i] == kClassVessel) dst[i] = src[i];
    return out;
}

}  // namespace dla
