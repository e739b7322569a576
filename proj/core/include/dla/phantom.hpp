#pragma once

#include <cstdint>

#include "dla/volume.hpp"

namespace dla {

// Rigid inter-sweep motion: translation plus a small rotation about the z
// axis through the volume center. Applied to the mask acquisition only.
struct RigidTransform {
    double tx_mm = 0.0, ty_mm = 0.0, tz_mm = 0.0;
    double rot_z_deg = 0.0;

    bool is_identity() const {
        return tx_mm == 0.0 && ty_mm == 0.0 && tz_mm == 0.0 && rot_z_deg == 0.0;
    }
    RigidTransform inverse() const;
};

struct VesselTreeSpec {
    int n_root_branches = 2;
    int branch_depth = 3;
    double radius_mm_lo = 0.5, radius_mm_hi = 2.5;
    double fill_hu_lo = 800.0, fill_hu_hi = 1500.0;  // added contrast
};

struct SkullSpec {
    double semi_x_mm = 19.0, semi_y_mm = 19.0, semi_z_mm = 12.5;  // outer shell
    double thickness_mm = 4.0;
    double bone_hu_lo = 700.0, bone_hu_hi = 1600.0;
};

struct AneurysmSpec {
    int count_lo = 0, count_hi = 2;
    double radius_mm_lo = 1.0, radius_mm_hi = 2.0;
};

struct PhantomSpec {
    Dims3 dims{96, 96, 64};
    float spacing_mm = 0.46f;
    std::uint64_t seed = 0;
    VesselTreeSpec vessels;
    SkullSpec skull;
    AneurysmSpec aneurysm;
    double soft_hu_lo = 0.0, soft_hu_hi = 80.0;
    double noise_sigma_hu = 15.0;
    RigidTransform motion;
};

// A synthetic cranial CTA acquisition pair with exact voxelwise truth.
// mask: non-contrast sweep (motion and noise applied)
// fill: contrast sweep (noise applied, no motion)
// truth: 1 vessel, 2 bone shell, 3 soft interior, 0 exterior air
struct PhantomCase {
    Volume mask;
    Volume fill;
    LabelVolume truth;
    PhantomSpec spec;
};

PhantomCase generate_phantom(const PhantomSpec& spec);

// Resample v through the inverse transform with trilinear interpolation;
// positions mapping outside the grid read as air. An identity transform
// returns a bitwise-equal copy.
Volume apply_motion(const Volume& v, const RigidTransform& t);

}  // namespace dla
