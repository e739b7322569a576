#include <cmath>
#include <cstring>
#include <numbers>

#include "doctest.h"

#include "dla/error.hpp"
#include "dla/phantom.hpp"
#include "dla/volume.hpp"

using namespace dla;

namespace {

bool same_volume(const Volume& a, const Volume& b) {
    return a.dims() == b.dims() && a.spacing_mm() == b.spacing_mm() &&
           std::memcmp(a.data().data(), b.data().data(), a.size() * 4) == 0;
}

PhantomSpec small_spec(std::uint64_t seed) {
    PhantomSpec s;
    s.dims = {64, 64, 48};
    s.seed = seed;
    return s;
}

}  // namespace

TEST_CASE("generation is deterministic in the seed") {
    PhantomCase a = generate_phantom(small_spec(5));
    PhantomCase b = generate_phantom(small_spec(5));
    CHECK(same_volume(a.mask, b.mask));
    CHECK(same_volume(a.fill, b.fill));
    CHECK(a.truth.labels() == b.truth.labels());

    PhantomCase c = generate_phantom(small_spec(6));
    CHECK_FALSE(same_volume(a.fill, c.fill));
}

TEST_CASE("noise-free static subtraction is exactly the contrast signal") {
    PhantomSpec spec = small_spec(11);
    spec.noise_sigma_hu = 0.0;
    PhantomCase pc = generate_phantom(spec);
    Volume dsa = subtract(pc.fill, pc.mask);
    for (std::size_t i = 0; i < dsa.size(); ++i) {
        if (pc.truth[i] == kClassVessel) {
            // contrast stays well above the labeling threshold by design
            CHECK(dsa.data()[i] > 600.0f);
        } else {
            CHECK(dsa.data()[i] == 0.0f);
        }
    }
}

TEST_CASE("truth regions carry the advertised intensities when noise is off") {
    PhantomSpec spec = small_spec(12);
    spec.noise_sigma_hu = 0.0;
    PhantomCase pc = generate_phantom(spec);
    std::size_t n_air = 0, n_bone = 0, n_soft = 0, n_vessel = 0;
    for (std::size_t i = 0; i < pc.mask.size(); ++i) {
        float hu = pc.mask.data()[i];
        switch (pc.truth[i]) {
            case kClassUnlabeled:
                CHECK(hu == kAirHU);
                ++n_air;
                break;
            case kClassBone:
                CHECK(hu >= spec.skull.bone_hu_lo);
                CHECK(hu <= spec.skull.bone_hu_hi);
                ++n_bone;
                break;
            case kClassSoft:
                CHECK(hu >= spec.soft_hu_lo);
                CHECK(hu <= spec.soft_hu_hi);
                ++n_soft;
                break;
            default:
                ++n_vessel;
        }
    }
    CHECK(n_air > 0);
    CHECK(n_bone > 0);
    CHECK(n_soft > 0);
    CHECK(n_vessel > 200);
    // the fill sweep adds contrast only inside vessels
    for (std::size_t i = 0; i < pc.fill.size(); ++i)
        if (pc.truth[i] != kClassVessel) CHECK(pc.fill.data()[i] == pc.mask.data()[i]);
}

TEST_CASE("identity motion returns the volume unchanged") {
    Volume v({6, 5, 4}, 0.5f);
    for (std::size_t i = 0; i < v.size(); ++i) v.data()[i] = float(i);
    RigidTransform t;
    CHECK(t.is_identity());
    CHECK(same_volume(apply_motion(v, t), v));
}

TEST_CASE("whole-voxel translation shifts exactly and pads with air") {
    Volume v({8, 4, 3}, 0.46f);
    for (std::size_t i = 0; i < v.size(); ++i) v.data()[i] = float(i) * 3.0f + 1.0f;
    RigidTransform t;
    t.tx_mm = 2.0 * 0.46;  // exactly two voxels
    Volume out = apply_motion(v, t);
    for (std::uint32_t z = 0; z < 3; ++z)
        for (std::uint32_t y = 0; y < 4; ++y)
            for (std::uint32_t x = 0; x < 8; ++x) {
                float expect = x >= 2 ? v.at(x - 2, y, z) : kAirHU;
                CHECK(out.at(x, y, z) == doctest::Approx(expect).epsilon(1e-6));
            }
}

TEST_CASE("motion followed by its inverse restores the interior") {
    SUBCASE("integer shift is exact") {
        Volume v({10, 10, 6}, 0.46f);
        for (std::size_t i = 0; i < v.size(); ++i) v.data()[i] = float(i % 37);
        // one voxel expressed through the stored spacing so the shift is an
        // exact integer in voxel units
        const double vox = double(v.spacing_mm());
        RigidTransform t;
        t.tx_mm = vox;
        t.ty_mm = -2.0 * vox;
        Volume back = apply_motion(apply_motion(v, t), t.inverse());
        // rows that never touched the border must match exactly
        for (std::uint32_t z = 0; z < 6; ++z)
            for (std::uint32_t y = 2; y < 10; ++y)
                for (std::uint32_t x = 1; x < 9; ++x)
                    CHECK(back.at(x, y, z) == v.at(x, y, z));
    }
    SUBCASE("small rotation round-trips a smooth field") {
        Volume v({32, 32, 8}, 1.0f);
        for (std::uint32_t z = 0; z < 8; ++z)
            for (std::uint32_t y = 0; y < 32; ++y)
                for (std::uint32_t x = 0; x < 32; ++x)
                    v.at(x, y, z) = 500.0f * std::sin(0.3 * x) * std::sin(0.25 * y + 1.0);
        RigidTransform t;
        t.rot_z_deg = 5.0;
        Volume back = apply_motion(apply_motion(v, t), t.inverse());
        double worst = 0.0;
        for (std::uint32_t z = 0; z < 8; ++z)
            for (std::uint32_t y = 8; y < 24; ++y)
                for (std::uint32_t x = 8; x < 24; ++x)
                    worst = std::max(worst, std::abs(double(back.at(x, y, z)) - v.at(x, y, z)));
        CHECK(worst < 25.0);  // two trilinear passes over a smooth field
    }
}

TEST_CASE("impossible geometry is rejected") {
    PhantomSpec tiny = small_spec(0);
    tiny.dims = {8, 8, 8};
    CHECK_THROWS_AS(generate_phantom(tiny), DataError);

    PhantomSpec thick = small_spec(0);
    thick.skull.thickness_mm = 13.0;  // exceeds the z semi-axis
    CHECK_THROWS_AS(generate_phantom(thick), DataError);

    PhantomSpec inverted = small_spec(0);
    inverted.aneurysm.count_lo = 3;
    inverted.aneurysm.count_hi = 1;
    CHECK_THROWS_AS(generate_phantom(inverted), DataError);

    PhantomSpec roots = small_spec(0);
    roots.vessels.n_root_branches = 0;
    CHECK_THROWS_AS(generate_phantom(roots), DataError);
}
