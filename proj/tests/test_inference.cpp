#include <cmath>
#include <cstdint>
#include <vector>

#include "doctest.h"

#include "dla/error.hpp"
#include "dla/inference.hpp"
#include "dla/net.hpp"
#include "dla/rng.hpp"
#include "dla/volume.hpp"

using namespace dla;

namespace {

Architecture small_arch() {
    Architecture a;
    a.conv_layers = 2;
    a.base_channels = 2;
    a.stage_boundaries = {};
    a.patch_p = 5;
    a.patch_s = 3;
    a.n_classes = 3;
    a.input_kernel = 3;
    return a;
}

Volume random_volume(Dims3 d, std::uint64_t seed) {
    Volume v(d, 1.0f);
    Rng rng(seed);
    for (std::size_t i = 0; i < v.size(); ++i) v.data()[i] = float(rng.uniform(-1000.0, 1800.0));
    return v;
}

}  // namespace

TEST_CASE("roi validation") {
    Dims3 d{10, 8, 6};
    CHECK_NOTHROW(Roi::full(d).validate(d));
    CHECK(Roi::full(d).voxels() == 480);

    Roi inner{{2, 3, 1}, {5, 8, 2}};
    CHECK_NOTHROW(inner.validate(d));
    CHECK(inner.voxels() == 3 * 5 * 1);

    Roi neg{{-1, 0, 0}, {5, 5, 5}};
    CHECK_THROWS_AS(neg.validate(d), ShapeError);
    Roi over{{0, 0, 0}, {11, 8, 6}};
    CHECK_THROWS_AS(over.validate(d), ShapeError);
    Roi empty{{3, 0, 0}, {3, 8, 6}};
    CHECK_THROWS_AS(empty.validate(d), ShapeError);
    Roi inverted{{4, 0, 0}, {2, 8, 6}};
    CHECK_THROWS_AS(inverted.validate(d), ShapeError);
}

TEST_CASE("probability volume indexing is x-fastest inside the box") {
    ClassProbVolume pv;
    pv.dims = {8, 8, 8};
    pv.roi = {{2, 3, 4}, {5, 6, 6}};  // 3 x 3 x 2 box
    pv.n_classes = 3;
    pv.probs.resize(std::size_t(pv.roi.voxels()) * 3);
    for (std::size_t i = 0; i < pv.probs.size(); ++i) pv.probs[i] = float(i);

    CHECK(pv.at(2, 3, 4) == pv.probs.data());
    CHECK(pv.at(3, 3, 4) == pv.probs.data() + 3);
    CHECK(pv.at(2, 4, 4) == pv.probs.data() + 3 * 3);
    CHECK(pv.at(2, 3, 5) == pv.probs.data() + 9 * 3);
    CHECK(pv.at(4, 5, 5) == pv.probs.data() + (2 + 3 * (2 + 3 * 1)) * 3);
}

TEST_CASE("zero parameters label every roi voxel as vessel") {
    Architecture a = small_arch();
    ModelParams p = zeros_like(a);
    InferenceEngine engine(a, p);
    Volume fill = random_volume({12, 10, 8}, 3);

    Roi roi{{2, 1, 3}, {9, 7, 6}};
    InferenceResult res = classify_volume(engine, fill, roi, 1, 64);

    CHECK(res.labels.dims() == fill.dims());
    CHECK(res.probs.roi.voxels() == roi.voxels());
    CHECK(res.voxels_per_s > 0.0);

    const auto d = fill.dims();
    for (int z = 0; z < int(d.nz); ++z)
        for (int y = 0; y < int(d.ny); ++y)
            for (int x = 0; x < int(d.nx); ++x) {
                std::size_t i = std::size_t(x) + d.nx * (std::size_t(y) + d.ny * std::size_t(z));
                bool inside = x >= roi.lo[0] && x < roi.hi[0] && y >= roi.lo[1] &&
                              y < roi.hi[1] && z >= roi.lo[2] && z < roi.hi[2];
                // ties resolve to the lowest class code, vessel
                CHECK(res.labels[i] == (inside ? kClassVessel : 0));
                if (inside)
                    for (int c = 0; c < 3; ++c)
                        CHECK(res.probs.at(x, y, z)[c] == doctest::Approx(1.0f / 3).epsilon(1e-6));
            }
}

TEST_CASE("worker count and batch size leave the output bitwise unchanged") {
    Architecture a = small_arch();
    ModelParams p = init_params(a, 17);
    InferenceEngine engine(a, p);
    Volume fill = random_volume({14, 12, 6}, 9);
    Roi roi{{1, 2, 1}, {13, 11, 5}};

    InferenceResult base = classify_volume(engine, fill, roi, 1, 128);
    for (int workers : {2, 3}) {
        for (int batch : {128, 50, 7}) {
            InferenceResult res = classify_volume(engine, fill, roi, workers, batch);
            CHECK(res.probs.probs == base.probs.probs);
            bool labels_equal = true;
            for (std::size_t i = 0; i < fill.size(); ++i)
                if (res.labels[i] != base.labels[i]) labels_equal = false;
            CHECK(labels_equal);
        }
    }
}

TEST_CASE("labels agree with the argmax of the probabilities") {
    Architecture a = small_arch();
    ModelParams p = init_params(a, 29);
    InferenceEngine engine(a, p);
    Volume fill = random_volume({10, 9, 7}, 31);
    Roi roi{{0, 0, 0}, {10, 9, 7}};

    InferenceResult res = classify_volume(engine, fill, roi, 2, 64);
    for (int z = 0; z < 7; ++z)
        for (int y = 0; y < 9; ++y)
            for (int x = 0; x < 10; ++x) {
                const float* pr = res.probs.at(x, y, z);
                double dp[3] = {pr[0], pr[1], pr[2]};
                std::size_t i = std::size_t(x) + 10 * (std::size_t(y) + 9 * std::size_t(z));
                CHECK(int(res.labels[i]) == argmax_class(dp, 3));
            }
}

TEST_CASE("classification validates its arguments") {
    Architecture a = small_arch();
    ModelParams p = zeros_like(a);
    InferenceEngine engine(a, p);
    Volume fill = random_volume({8, 8, 4}, 5);
    Roi roi{{0, 0, 0}, {8, 8, 4}};

    CHECK_THROWS_AS((void)classify_volume(engine, fill, roi, 0, 64), ConfigError);
    CHECK_THROWS_AS((void)classify_volume(engine, fill, roi, 1, 0), ConfigError);
    Roi bad{{0, 0, 0}, {9, 8, 4}};
    CHECK_THROWS_AS((void)classify_volume(engine, fill, bad, 1, 64), ShapeError);
}

TEST_CASE("the vessels-only volume keeps fill values under the vessel label") {
    Volume fill({4, 3, 2}, 0.46f);
    for (std::size_t i = 0; i < fill.size(); ++i) fill.data()[i] = 10.0f * float(i) + 3.0f;
    LabelVolume labels({4, 3, 2});
    for (std::size_t i = 0; i < labels.size(); ++i)
        labels[i] = std::uint8_t(i % 4);  // cycles 0, vessel, bone, soft

    Volume dla = make_dla(fill, labels);
    CHECK(dla.dims() == fill.dims());
    CHECK(dla.spacing_mm() == fill.spacing_mm());
    for (std::size_t i = 0; i < dla.size(); ++i) {
        if (labels[i] == kClassVessel)
            CHECK(dla.data()[i] == fill.data()[i]);
        else
            CHECK(dla.data()[i] == kAirHU);
    }

    LabelVolume wrong({4, 3, 1});
    CHECK_THROWS_AS((void)make_dla(fill, wrong), ShapeError);
}
