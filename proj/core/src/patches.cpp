#include "dla/patches.hpp"

#include <string>

#include "dla/error.hpp"

namespace dla {

namespace {

void check_patch_shape(int p, int s) {
    if (p < 1 || p % 2 == 0 || s < 1 || s % 2 == 0)
        throw ConfigError("patch dims must be odd and positive, got p=" + std::to_string(p) +
                          " s=" + std::to_string(s));
}

template <class F>
void walk_patch(const Volume& v, std::int64_t center_index, int p, int s, F&& emit) {
    check_patch_shape(p, s);
    if (center_index < 0 || center_index >= static_cast<std::int64_t>(v.size()))
        throw ShapeError("patch center out of range");
    const auto [nx, ny, nz] = v.dims();
    auto cx = static_cast<std::int64_t>(center_index % nx);
    auto cy = static_cast<std::int64_t>((center_index / nx) % ny);
    auto cz = static_cast<std::int64_t>(center_index / (std::size_t(nx) * ny));
    int hp = (p - 1) / 2, hs = (s - 1) / 2;
    for (std::int64_t z = cz - hs; z <= cz + hs; ++z)
        for (std::int64_t y = cy - hp; y <= cy + hp; ++y)
            for (std::int64_t x = cx - hp; x <= cx + hp; ++x) {
                bool in = x >= 0 && y >= 0 && z >= 0 && x < nx && y < ny && z < nz;
                emit(in ? v.data()[std::size_t(x) + std::size_t(nx) * (std::size_t(y) + std::size_t(ny) * std::size_t(z))]
                        : kAirHU);
            }
}

}  // namespace

std::vector<float> extract_patch(const Volume& v, std::int64_t center_index, int p, int s) {
    check_patch_shape(p, s);
    std::vector<float> out;
    out.reserve(std::size_t(p) * p * s);
    walk_patch(v, center_index, p, s, [&](float hu) { out.push_back(hu); });
    return out;
}

void extract_patch_into(const Volume& v, std::int64_t center_index, int p, int s, double* out) {
    walk_patch(v, center_index, p, s, [&](float hu) { *out++ = hu; });
}

void extract_patch_into_f32(const Volume& v, std::int64_t center_index, int p, int s,
                            float* out) {
    walk_patch(v, center_index, p, s, [&](float hu) { *out++ = hu; });
}

BalancedSampler::BalancedSampler(std::vector<const Volume*> fills,
                                 const std::vector<const LabeledVoxelSet*>& sets, int p, int s,
                                 std::uint64_t seed)
    : fills_(std::move(fills)), p_(p), s_(s), rng_(seed) {
    check_patch_shape(p, s);
    if (fills_.size() != sets.size())
        throw ShapeError("sampler: one labeled set per case required");
    for (std::size_t c = 0; c < sets.size(); ++c) {
        if (!(fills_[c]->dims() == sets[c]->dims))
            throw ShapeError("sampler: case " + std::to_string(c) + " dims mismatch");
        for (const auto& e : sets[c]->entries)
            pools_[e.cls - 1].refs.push_back({static_cast<int>(c), e.index, e.cls});
    }
    const char* names[3] = {"vessel", "bone", "soft-tissue"};
    for (int k = 0; k < 3; ++k) {
        if (pools_[k].refs.empty())
            throw DataError(std::string("sampler: ") + names[k] + " pool is empty");
        rng_.shuffle(pools_[k].refs);
    }
}

const PatchRef& BalancedSampler::draw(Pool& pool) {
    if (pool.cursor == pool.refs.size()) {
        rng_.shuffle(pool.refs);
        pool.cursor = 0;
    }
    const PatchRef& ref = pool.refs[pool.cursor++];
    if (pool.cursor == pool.refs.size()) ++pool.passes;
    return ref;
}

Batch BalancedSampler::next_batch(int b) {
    if (b < 1) throw ConfigError("batch size must be positive");
    Batch batch;
    batch.b = b;
    batch.p = p_;
    batch.s = s_;
    std::size_t patch_len = std::size_t(p_) * p_ * s_;
    batch.values.resize(std::size_t(b) * patch_len);
    batch.labels.resize(b);
    batch.refs.resize(b);
    for (int i = 0; i < b; ++i) {
        auto cls = static_cast<std::uint8_t>(rng_.uniform_int(kClassVessel, kClassSoft));
        const PatchRef& ref = draw(pools_[cls - 1]);
        batch.refs[i] = ref;
        batch.labels[i] = ref.cls;
        extract_patch_into(*fills_[ref.case_id], ref.index, p_, s_,
                           batch.values.data() + std::size_t(i) * patch_len);
    }
    return batch;
}

}  // namespace dla
