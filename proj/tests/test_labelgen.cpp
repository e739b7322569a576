#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <map>
#include <vector>

#include "doctest.h"

#include "dla/error.hpp"
#include "dla/labelgen.hpp"
#include "dla/phantom.hpp"
#include "dla/rng.hpp"
#include "dla/volume.hpp"

namespace fs = std::filesystem;
using namespace dla;

namespace {

BinaryMask random_mask(Dims3 d, double p, Rng& rng) {
    BinaryMask m(d);
    for (std::size_t i = 0; i < m.size(); ++i) m.set(i, rng.uniform01() < p);
    return m;
}

// flood-fill reference for connected_components
struct BruteCc {
    std::vector<int> ids;
    std::vector<std::size_t> sizes;
};

BruteCc brute_components(const BinaryMask& m, int connectivity) {
    const auto d = m.dims();
    const int nx = d.nx, ny = d.ny, nz = d.nz;
    BruteCc out;
    out.ids.assign(m.size(), 0);
    auto idx = [&](int x, int y, int z) { return std::size_t(x) + std::size_t(nx) * (y + std::size_t(ny) * z); };
    int next = 0;
    std::vector<std::size_t> stack;
    for (int z0 = 0; z0 < nz; ++z0)
        for (int y0 = 0; y0 < ny; ++y0)
            for (int x0 = 0; x0 < nx; ++x0) {
                std::size_t s = idx(x0, y0, z0);
                if (!m[s] || out.ids[s]) continue;
                ++next;
                out.sizes.push_back(0);
                stack.assign(1, s);
                out.ids[s] = next;
                while (!stack.empty()) {
                    std::size_t cur = stack.back();
                    stack.pop_back();
                    ++out.sizes[next - 1];
                    int x = int(cur % nx), y = int((cur / nx) % ny), z = int(cur / (std::size_t(nx) * ny));
                    for (int dz = -1; dz <= 1; ++dz)
                        for (int dy = -1; dy <= 1; ++dy)
                            for (int dx = -1; dx <= 1; ++dx) {
                                if (!dx && !dy && !dz) continue;
                                int manh = std::abs(dx) + std::abs(dy) + std::abs(dz);
                                if (connectivity == 6 && manh > 1) continue;
                                if (connectivity == 18 && manh > 2) continue;
                                int X = x + dx, Y = y + dy, Z = z + dz;
                                if (X < 0 || Y < 0 || Z < 0 || X >= nx || Y >= ny || Z >= nz)
                                    continue;
                                std::size_t t = idx(X, Y, Z);
                                if (m[t] && !out.ids[t]) {
                                    out.ids[t] = next;
                                    stack.push_back(t);
                                }
                            }
                }
            }
    return out;
}

BinaryMask brute_erode(const BinaryMask& m, int radius) {
    const auto d = m.dims();
    const int nx = d.nx, ny = d.ny, nz = d.nz;
    BinaryMask out(d);
    for (int z = 0; z < nz; ++z)
        for (int y = 0; y < ny; ++y)
            for (int x = 0; x < nx; ++x) {
                bool keep = true;
                for (int dz = -radius; dz <= radius && keep; ++dz)
                    for (int dy = -radius; dy <= radius && keep; ++dy)
                        for (int dx = -radius; dx <= radius && keep; ++dx) {
                            int X = x + dx, Y = y + dy, Z = z + dz;
                            if (X < 0 || Y < 0 || Z < 0 || X >= nx || Y >= ny || Z >= nz ||
                                !m.at(X, Y, Z))
                                keep = false;
                        }
                out.set(std::size_t(x) + std::size_t(nx) * (y + std::size_t(ny) * z), keep);
            }
    return out;
}

// same-partition comparison that ignores the id numbering
bool same_partition(const std::vector<std::int32_t>& a, const std::vector<int>& b) {
    if (a.size() != b.size()) return false;
    std::map<std::int32_t, int> fwd;
    std::map<int, std::int32_t> rev;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if ((a[i] == 0) != (b[i] == 0)) return false;
        if (a[i] == 0) continue;
        auto [fit, fnew] = fwd.emplace(a[i], b[i]);
        if (!fnew && fit->second != b[i]) return false;
        auto [rit, rnew] = rev.emplace(b[i], a[i]);
        if (!rnew && rit->second != a[i]) return false;
    }
    return true;
}

}  // namespace

TEST_CASE("connected components match brute-force flood fill on random masks") {
    Rng rng(77);
    for (int trial = 0; trial < 100; ++trial) {
        double p = 0.05 + 0.9 * (trial / 99.0);
        BinaryMask m = random_mask({8, 8, 8}, p, rng);
        for (int conn : {6, 18, 26}) {
            ComponentLabeling cc = connected_components(m, conn);
            BruteCc ref = brute_components(m, conn);
            CAPTURE(trial);
            CAPTURE(conn);
            REQUIRE(same_partition(cc.ids, ref.ids));
            // per-component sizes must agree up to id renumbering
            std::vector<std::size_t> a = cc.sizes, b = ref.sizes;
            std::sort(a.begin(), a.end());
            std::sort(b.begin(), b.end());
            REQUIRE(a == b);
        }
    }
}

TEST_CASE("erosion matches the brute-force cube minimum on random masks") {
    Rng rng(78);
    for (int trial = 0; trial < 100; ++trial) {
        double p = 0.3 + 0.6 * (trial / 99.0);
        BinaryMask m = random_mask({8, 8, 8}, p, rng);
        for (int radius : {0, 1, 2}) {
            BinaryMask got = erode(m, radius);
            BinaryMask ref = brute_erode(m, radius);
            CAPTURE(trial);
            CAPTURE(radius);
            REQUIRE(got.bits() == ref.bits());
        }
    }
}

TEST_CASE("component ids follow first-encounter scan order and sizes are exact") {
    BinaryMask m({5, 1, 1});
    m.set(0, true);
    m.set(1, true);
    m.set(3, true);
    ComponentLabeling cc = connected_components(m, 6);
    CHECK(cc.count() == 2);
    CHECK(cc.ids[0] == 1);
    CHECK(cc.ids[1] == 1);
    CHECK(cc.ids[2] == 0);
    CHECK(cc.ids[3] == 2);
    CHECK(cc.sizes == std::vector<std::size_t>{2, 1});

    BinaryMask kept = keep_components(cc, 2);
    CHECK(kept[0] == 1);
    CHECK(kept[3] == 0);

    CHECK_THROWS_AS(connected_components(m, 7), ConfigError);
    CHECK_THROWS_AS(erode(m, -1), ConfigError);
}

TEST_CASE("noise-free extraction reproduces the vessel truth exactly") {
    PhantomSpec spec;
    spec.dims = {64, 64, 48};
    spec.seed = 33;
    spec.noise_sigma_hu = 0.0;
    PhantomCase pc = generate_phantom(spec);
    LabelGenConfig cfg;
    BinaryMask v = extract_vasculature(subtract(pc.fill, pc.mask), cfg);
    for (std::size_t i = 0; i < v.size(); ++i)
        REQUIRE(bool(v[i]) == (pc.truth[i] == kClassVessel));
}

TEST_CASE("undersampling balances the three classes") {
    Dims3 d{16, 16, 16};
    Rng rng(99);
    BinaryMask vessels(d), bone(d), soft(d);
    for (std::size_t i = 0; i < d.voxels(); ++i) {
        double u = rng.uniform01();
        if (u < 0.02) vessels.set(i, true);
        else if (u < 0.40) bone.set(i, true);
        else if (u < 0.90) soft.set(i, true);
    }
    LabelGenResult res = build_and_undersample(vessels, bone, soft, 7);
    CHECK(res.samples.n_vessel == vessels.count());
    CHECK(res.samples.n_bone == res.samples.n_vessel);
    CHECK(res.samples.n_soft == res.samples.n_vessel);
    CHECK_FALSE(res.samples.bone_shortfall);
    CHECK_FALSE(res.samples.soft_shortfall);
    CHECK(res.samples.entries.size() == 3 * res.samples.n_vessel);

    // the label volume mirrors the masks with vessel > bone > soft precedence
    for (std::size_t i = 0; i < d.voxels(); ++i) {
        std::uint8_t expect = vessels[i] ? kClassVessel
                              : bone[i]  ? kClassBone
                              : soft[i]  ? kClassSoft
                                         : kClassUnlabeled;
        REQUIRE(res.labels[i] == expect);
    }

    // every sampled entry points at a voxel of its class
    for (const auto& e : res.samples.entries)
        REQUIRE(res.labels[std::size_t(e.index)] == e.cls);

    SUBCASE("deterministic in the seed") {
        LabelGenResult again = build_and_undersample(vessels, bone, soft, 7);
        CHECK(again.samples.entries.size() == res.samples.entries.size());
        for (std::size_t i = 0; i < res.samples.entries.size(); ++i) {
            CHECK(again.samples.entries[i].index == res.samples.entries[i].index);
            CHECK(again.samples.entries[i].cls == res.samples.entries[i].cls);
        }
        LabelGenResult other = build_and_undersample(vessels, bone, soft, 8);
        bool identical = other.samples.entries.size() == res.samples.entries.size();
        if (identical)
            for (std::size_t i = 0; i < res.samples.entries.size(); ++i)
                if (other.samples.entries[i].index != res.samples.entries[i].index) {
                    identical = false;
                    break;
                }
        CHECK_FALSE(identical);
    }
}

TEST_CASE("majority shortfall takes the whole pool and sets the flag") {
    Dims3 d{8, 8, 8};
    BinaryMask vessels(d), bone(d), soft(d);
    for (std::size_t i = 0; i < 40; ++i) vessels.set(i, true);
    for (std::size_t i = 40; i < 50; ++i) bone.set(i, true);
    for (std::size_t i = 50; i < 150; ++i) soft.set(i, true);
    LabelGenResult res = build_and_undersample(vessels, bone, soft, 1);
    CHECK(res.samples.n_vessel == 40);
    CHECK(res.samples.n_bone == 10);
    CHECK(res.samples.bone_shortfall);
    CHECK(res.samples.n_soft == 40);
    CHECK_FALSE(res.samples.soft_shortfall);
}

TEST_CASE("an empty class is a data error") {
    Dims3 d{4, 4, 4};
    BinaryMask vessels(d), bone(d), soft(d);
    vessels.set(0, true);
    soft.set(1, true);
    CHECK_THROWS_AS(build_and_undersample(vessels, bone, soft, 0), DataError);
}

TEST_CASE("precedence removes overlapping voxels from weaker classes") {
    Dims3 d{4, 1, 1};
    BinaryMask vessels(d), bone(d), soft(d);
    vessels.set(0, true);
    bone.set(0, true);   // overlaps vessel
    bone.set(1, true);
    soft.set(1, true);   // overlaps bone
    soft.set(2, true);
    LabelGenResult res = build_and_undersample(vessels, bone, soft, 0);
    CHECK(res.labels[0] == kClassVessel);
    CHECK(res.labels[1] == kClassBone);
    CHECK(res.labels[2] == kClassSoft);
    CHECK(res.samples.n_vessel == 1);
    CHECK(res.samples.n_bone == 1);
    CHECK(res.samples.n_soft == 1);
}

TEST_CASE("samples round-trip through the tsv form") {
    Dims3 d{8, 8, 8};
    Rng rng(3);
    BinaryMask vessels(d), bone(d), soft(d);
    for (std::size_t i = 0; i < d.voxels(); ++i) {
        double u = rng.uniform01();
        if (u < 0.1) vessels.set(i, true);
        else if (u < 0.5) bone.set(i, true);
        else soft.set(i, true);
    }
    LabeledVoxelSet s = build_and_undersample(vessels, bone, soft, 5).samples;
    fs::path dir = fs::temp_directory_path() / "dla_test_labelgen";
    fs::create_directories(dir);
    fs::path p = dir / "samples.tsv";
    save_samples(s, p);
    LabeledVoxelSet back = load_samples(p, d);
    REQUIRE(back.entries.size() == s.entries.size());
    for (std::size_t i = 0; i < s.entries.size(); ++i) {
        CHECK(back.entries[i].index == s.entries[i].index);
        CHECK(back.entries[i].cls == s.entries[i].cls);
    }
    CHECK(back.n_vessel == s.n_vessel);
    CHECK(back.n_bone == s.n_bone);
    CHECK(back.n_soft == s.n_soft);

    SUBCASE("loader rejects an out-of-range index") {
        CHECK_THROWS_AS(load_samples(p, Dims3{2, 2, 2}), DataError);
    }
}
