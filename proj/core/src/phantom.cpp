#include "dla/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include "dla/error.hpp"
#include "dla/rng.hpp"

namespace dla {

namespace {

struct Vec3 {
    double x = 0, y = 0, z = 0;
};

Vec3 operator+(Vec3 a, Vec3 b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
Vec3 operator-(Vec3 a, Vec3 b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
Vec3 operator*(double s, Vec3 a) { return {s * a.x, s * a.y, s * a.z}; }
double dot(Vec3 a, Vec3 b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
double norm(Vec3 a) { return std::sqrt(dot(a, a)); }
Vec3 normalized(Vec3 a) {
    double n = norm(a);
    return {a.x / n, a.y / n, a.z / n};
}
Vec3 cross(Vec3 a, Vec3 b) {
    return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}

// Rodrigues rotation of v around unit axis by angle
Vec3 rotate(Vec3 v, Vec3 axis, double angle) {
    double c = std::cos(angle), s = std::sin(angle);
    return c * v + s * cross(axis, v) + (dot(axis, v) * (1.0 - c)) * axis;
}

// Low-frequency separable sine texture bounded by [lo, hi]. Second
// derivatives are kept small so trilinear resampling stays accurate away
// from tissue boundaries.
struct SmoothField {
    double mid, amp;
    double kx, ky, kz;     // rad/mm
    double px, py, pz;     // phases

    SmoothField(double lo, double hi, double spacing_mm, Rng& rng) {
        mid = 0.5 * (lo + hi);
        amp = 0.40 * (hi - lo);  // |sin product| <= 1 keeps values in [lo+0.1r, hi-0.1r]
        auto wavelen = [&] { return rng.uniform(20.0, 28.0) * spacing_mm; };
        kx = 2.0 * std::numbers::pi / wavelen();
        ky = 2.0 * std::numbers::pi / wavelen();
        kz = 2.0 * std::numbers::pi / wavelen();
        px = rng.uniform(0.0, 2.0 * std::numbers::pi);
        py = rng.uniform(0.0, 2.0 * std::numbers::pi);
        pz = rng.uniform(0.0, 2.0 * std::numbers::pi);
    }

    double at(Vec3 p_mm) const {
        return mid + amp * std::sin(kx * p_mm.x + px) * std::sin(ky * p_mm.y + py) *
                         std::sin(kz * p_mm.z + pz);
    }
};

struct Segment {
    Vec3 p0, p1;
    double radius_mm;
    bool bifurcates;
};

struct Sphere {
    Vec3 center;
    double radius_mm;
};

class Builder {
public:
    explicit Builder(const PhantomSpec& spec) : spec_(spec), rng_(spec.seed) {
        const auto& s = spec_.skull;
        if (s.thickness_mm >= std::min({s.semi_x_mm, s.semi_y_mm, s.semi_z_mm}))
            throw DataError("phantom: skull thickness exceeds a semi-axis");
        if (spec_.dims.nx < 16 || spec_.dims.ny < 16 || spec_.dims.nz < 16)
            throw DataError("phantom: dims too small");
        center_ = {0.5 * (spec_.dims.nx - 1), 0.5 * (spec_.dims.ny - 1), 0.5 * (spec_.dims.nz - 1)};
        outer_ = {s.semi_x_mm, s.semi_y_mm, s.semi_z_mm};
        inner_ = {s.semi_x_mm - s.thickness_mm, s.semi_y_mm - s.thickness_mm,
                  s.semi_z_mm - s.thickness_mm};
    }

    PhantomCase build();

private:
    Vec3 voxel_to_mm(double x, double y, double z) const {
        double h = spec_.spacing_mm;
        return {(x - center_.x) * h, (y - center_.y) * h, (z - center_.z) * h};
    }

    double rho2(Vec3 p_mm, Vec3 semi) const {
        double a = p_mm.x / semi.x, b = p_mm.y / semi.y, c = p_mm.z / semi.z;
        return a * a + b * b + c * c;
    }

    bool inside_inner(Vec3 p_mm, double margin_mm) const {
        Vec3 shrunk{inner_.x - margin_mm, inner_.y - margin_mm, inner_.z - margin_mm};
        if (shrunk.x <= 0 || shrunk.y <= 0 || shrunk.z <= 0) return false;
        return rho2(p_mm, shrunk) < 1.0;
    }

    void grow_tree();
    void grow_segment(Vec3 p0, Vec3 dir, double radius_mm, int depth);
    void place_aneurysms();
    void rasterize(BinaryMask& vessel) const;

    const PhantomSpec& spec_;
    Rng rng_;
    Vec3 center_;          // voxel coords of the grid center
    Vec3 outer_, inner_;   // ellipsoid semi-axes, mm
    std::vector<Segment> segments_;
    std::vector<Vec3> bifurcations_;
    std::vector<Sphere> aneurysms_;
};

void Builder::grow_segment(Vec3 p0, Vec3 dir, double radius_mm, int depth) {
    const auto& vs = spec_.vessels;
    double margin = radius_mm + 1.5 * spec_.spacing_mm;
    Vec3 p1;
    bool placed = false;
    if (depth == 0) {
        // the entry segment crosses air and skull; aim it at a point in the
        // lower half of the interior so the endpoint always lands inside
        for (int attempt = 0; attempt < 60 && !placed; ++attempt) {
            Vec3 target{rng_.uniform(-0.35, 0.35) * inner_.x, rng_.uniform(-0.35, 0.35) * inner_.y,
                        rng_.uniform(-0.55, -0.05) * inner_.z};
            if (inside_inner(target, margin)) {
                p1 = target;
                dir = normalized(p1 - p0);
                placed = true;
            }
        }
    } else {
        // late attempts bend toward the interior center and shorten; the
        // inner ellipsoid is convex, so a short inward step always lands
        for (int attempt = 0; attempt < 120 && !placed; ++attempt) {
            double bend = std::min(1.0, std::max(0, attempt - 20) / 40.0);
            double len = rng_.uniform(5.0, 8.5) * std::pow(0.85, depth) * (1.0 - 0.6 * bend);
            Vec3 jitter{rng_.uniform(-0.2, 0.2), rng_.uniform(-0.2, 0.2), rng_.uniform(-0.2, 0.2)};
            Vec3 d = dir + jitter;
            if (bend > 0.0) {
                Vec3 inward = norm(p0) > 1e-9 ? normalized(-1.0 * p0) : Vec3{0, 0, -1};
                d = (1.0 - bend) * normalized(d) + bend * inward;
                if (norm(d) < 1e-9) d = inward;
            }
            d = normalized(d);
            Vec3 q = p0 + len * d;
            if (inside_inner(q, margin)) {
                p1 = q;
                dir = d;
                placed = true;
            }
        }
    }
    if (!placed)
        throw DataError("phantom: vessel tree cannot fit inside the skull interior");

    bool bifurcates = depth < vs.branch_depth;
    segments_.push_back({p0, p1, radius_mm, bifurcates});
    if (!bifurcates) return;

    bifurcations_.push_back(p1);
    Vec3 ref = std::abs(dir.z) < 0.9 ? Vec3{0, 0, 1} : Vec3{1, 0, 0};
    Vec3 u = normalized(cross(dir, ref));
    Vec3 v = cross(dir, u);
    double psi = rng_.uniform(0.0, 2.0 * std::numbers::pi);
    for (int child = 0; child < 2; ++child) {
        double angle = rng_.uniform(0.35, 0.70);  // 20..40 degrees
        double phi = psi + child * std::numbers::pi + rng_.uniform(-0.4, 0.4);
        Vec3 axis = normalized(std::cos(phi) * u + std::sin(phi) * v);
        Vec3 cdir = normalized(rotate(dir, axis, angle));
        double cradius = std::clamp(radius_mm * rng_.uniform(0.65, 0.80), vs.radius_mm_lo,
                                    vs.radius_mm_hi);
        grow_segment(p1, cdir, cradius, depth + 1);
    }
}

void Builder::grow_tree() {
    const auto& vs = spec_.vessels;
    if (vs.n_root_branches < 1) throw DataError("phantom: need at least one root branch");
    if (vs.radius_mm_lo > vs.radius_mm_hi) throw DataError("phantom: vessel radius range inverted");
    double root_radius = vs.radius_mm_lo + 0.35 * (vs.radius_mm_hi - vs.radius_mm_lo);
    for (int r = 0; r < vs.n_root_branches; ++r) {
        // enter through the z=0 face, aimed at the interior
        Vec3 entry = voxel_to_mm(center_.x + rng_.uniform(-0.18, 0.18) * spec_.dims.nx,
                                 center_.y + rng_.uniform(-0.18, 0.18) * spec_.dims.ny, 0.0);
        Vec3 dir = normalized({rng_.uniform(-0.25, 0.25), rng_.uniform(-0.25, 0.25), 1.0});
        grow_segment(entry, dir, root_radius, 0);
    }
}

void Builder::place_aneurysms() {
    const auto& an = spec_.aneurysm;
    if (an.count_lo > an.count_hi) throw DataError("phantom: aneurysm count range inverted");
    int count = static_cast<int>(rng_.uniform_int(an.count_lo, an.count_hi));
    if (count == 0 || bifurcations_.empty()) return;
    for (int i = 0; i < count; ++i) {
        bool placed = false;
        // random draws first, then a deterministic sweep over every
        // bifurcation at the smallest radius
        for (int attempt = 0; attempt < 60 + int(bifurcations_.size()) && !placed; ++attempt) {
            bool sweep = attempt >= 60;
            const Vec3& at =
                sweep ? bifurcations_[std::size_t(attempt - 60)]
                      : bifurcations_[static_cast<std::size_t>(rng_.uniform_int(
                            0, static_cast<std::int64_t>(bifurcations_.size()) - 1))];
            double radius = sweep ? an.radius_mm_lo : rng_.uniform(an.radius_mm_lo, an.radius_mm_hi);
            if (inside_inner(at, radius + 1.5 * spec_.spacing_mm)) {
                aneurysms_.push_back({at, radius});
                placed = true;
            }
        }
        if (!placed)
            throw DataError("phantom: vessel tree cannot fit inside the skull interior");
    }
}

void Builder::rasterize(BinaryMask& vessel) const {
    const auto [nx, ny, nz] = spec_.dims;
    double h = spec_.spacing_mm;
    auto mark_ball = [&](auto&& dist2_to, Vec3 lo_mm, Vec3 hi_mm, double radius) {
        double r2 = radius * radius;
        auto clampi = [](double v, std::int64_t hi_idx) {
            return std::clamp<std::int64_t>(static_cast<std::int64_t>(v), 0, hi_idx);
        };
        std::int64_t x0 = clampi(std::floor((lo_mm.x / h) + center_.x - radius / h - 1), nx - 1);
        std::int64_t x1 = clampi(std::ceil((hi_mm.x / h) + center_.x + radius / h + 1), nx - 1);
        std::int64_t y0 = clampi(std::floor((lo_mm.y / h) + center_.y - radius / h - 1), ny - 1);
        std::int64_t y1 = clampi(std::ceil((hi_mm.y / h) + center_.y + radius / h + 1), ny - 1);
        std::int64_t z0 = clampi(std::floor((lo_mm.z / h) + center_.z - radius / h - 1), nz - 1);
        std::int64_t z1 = clampi(std::ceil((hi_mm.z / h) + center_.z + radius / h + 1), nz - 1);
        for (std::int64_t z = z0; z <= z1; ++z)
            for (std::int64_t y = y0; y <= y1; ++y)
                for (std::int64_t x = x0; x <= x1; ++x) {
                    Vec3 p = voxel_to_mm(double(x), double(y), double(z));
                    if (dist2_to(p) <= r2)
                        vessel.set(std::size_t(x) + std::size_t(nx) * (std::size_t(y) + std::size_t(ny) * std::size_t(z)), true);
                }
    };

    for (const auto& s : segments_) {
        Vec3 d = s.p1 - s.p0;
        double dd = dot(d, d);
        Vec3 lo{std::min(s.p0.x, s.p1.x), std::min(s.p0.y, s.p1.y), std::min(s.p0.z, s.p1.z)};
        Vec3 hi{std::max(s.p0.x, s.p1.x), std::max(s.p0.y, s.p1.y), std::max(s.p0.z, s.p1.z)};
        mark_ball(
            [&](Vec3 p) {
                double t = dd > 0 ? std::clamp(dot(p - s.p0, d) / dd, 0.0, 1.0) : 0.0;
                Vec3 q = s.p0 + t * d;
                return dot(p - q, p - q);
            },
            lo, hi, s.radius_mm);
    }
    for (const auto& a : aneurysms_)
        mark_ball([&](Vec3 p) { return dot(p - a.center, p - a.center); }, a.center, a.center,
                  a.radius_mm);
}

PhantomCase Builder::build() {
    SmoothField bone_field(spec_.skull.bone_hu_lo, spec_.skull.bone_hu_hi, spec_.spacing_mm, rng_);
    SmoothField soft_field(spec_.soft_hu_lo, spec_.soft_hu_hi, spec_.spacing_mm, rng_);
    SmoothField contrast_field(spec_.vessels.fill_hu_lo, spec_.vessels.fill_hu_hi,
                               spec_.spacing_mm, rng_);
    grow_tree();
    place_aneurysms();

    const auto dims = spec_.dims;
    BinaryMask vessel(dims);
    rasterize(vessel);

    Volume base(dims, spec_.spacing_mm);
    LabelVolume truth(dims);
    std::size_t i = 0;
    for (std::uint32_t z = 0; z < dims.nz; ++z)
        for (std::uint32_t y = 0; y < dims.ny; ++y)
            for (std::uint32_t x = 0; x < dims.nx; ++x, ++i) {
                Vec3 p = voxel_to_mm(x, y, z);
                double r_out = rho2(p, outer_);
                float hu;
                std::uint8_t region;
                if (r_out > 1.0) {
                    hu = kAirHU;
                    region = kClassUnlabeled;
                } else if (rho2(p, inner_) >= 1.0) {
                    hu = static_cast<float>(bone_field.at(p));
                    region = kClassBone;
                } else {
                    hu = static_cast<float>(soft_field.at(p));
                    region = kClassSoft;
                }
                base.data()[i] = hu;
                truth[i] = vessel[i] ? std::uint8_t(kClassVessel) : region;
            }

    Volume fill = base;
    for (i = 0; i < fill.size(); ++i)
        if (vessel[i]) {
            std::uint32_t x = i % dims.nx;
            std::uint32_t y = (i / dims.nx) % dims.ny;
            std::uint32_t z = static_cast<std::uint32_t>(i / (std::size_t(dims.nx) * dims.ny));
            fill.data()[i] += static_cast<float>(contrast_field.at(voxel_to_mm(x, y, z)));
        }

    Volume mask = spec_.motion.is_identity() ? base : apply_motion(base, spec_.motion);

    if (spec_.noise_sigma_hu > 0.0) {
        for (auto& v : mask.data()) v += static_cast<float>(rng_.normal(0.0, spec_.noise_sigma_hu));
        for (auto& v : fill.data()) v += static_cast<float>(rng_.normal(0.0, spec_.noise_sigma_hu));
    }

    return {std::move(mask), std::move(fill), std::move(truth), spec_};
}

}  // namespace

RigidTransform RigidTransform::inverse() const {
    // inverse of p -> R(p - c) + c + t is q -> R^T(q - c - t) + c
    double th = -rot_z_deg * std::numbers::pi / 180.0;
    double c = std::cos(th), s = std::sin(th);
    RigidTransform inv;
    inv.rot_z_deg = -rot_z_deg;
    inv.tx_mm = -(c * tx_mm - s * ty_mm);
    inv.ty_mm = -(s * tx_mm + c * ty_mm);
    inv.tz_mm = -tz_mm;
    return inv;
}

PhantomCase generate_phantom(const PhantomSpec& spec) { return Builder(spec).build(); }

Volume apply_motion(const Volume& v, const RigidTransform& t) {
    if (t.is_identity()) return v;
    const auto [nx, ny, nz] = v.dims();
    double h = v.spacing_mm();
    double cx = 0.5 * (nx - 1), cy = 0.5 * (ny - 1), cz = 0.5 * (nz - 1);
    double th = t.rot_z_deg * std::numbers::pi / 180.0;
    double cth = std::cos(th), sth = std::sin(th);
    double tx = t.tx_mm / h, ty = t.ty_mm / h, tz = t.tz_mm / h;

    Volume out(v.dims(), v.spacing_mm());
    auto sample = [&](std::int64_t x, std::int64_t y, std::int64_t z) -> double {
        if (x < 0 || y < 0 || z < 0 || x >= nx || y >= ny || z >= nz) return kAirHU;
        return v.data()[std::size_t(x) + std::size_t(nx) * (std::size_t(y) + std::size_t(ny) * std::size_t(z))];
    };

    std::size_t i = 0;
    for (std::uint32_t z = 0; z < nz; ++z)
        for (std::uint32_t y = 0; y < ny; ++y)
            for (std::uint32_t x = 0; x < nx; ++x, ++i) {
                // inverse transform of the output voxel position
                double qx = x - cx - tx, qy = y - cy - ty, qz = z - cz - tz;
                double sx = cth * qx + sth * qy + cx;
                double sy = -sth * qx + cth * qy + cy;
                double sz = qz + cz;
                double fx = std::floor(sx), fy = std::floor(sy), fz = std::floor(sz);
                double ax = sx - fx, ay = sy - fy, az = sz - fz;
                auto X = static_cast<std::int64_t>(fx);
                auto Y = static_cast<std::int64_t>(fy);
                auto Z = static_cast<std::int64_t>(fz);
                double c00 = sample(X, Y, Z) * (1 - ax) + sample(X + 1, Y, Z) * ax;
                double c10 = sample(X, Y + 1, Z) * (1 - ax) + sample(X + 1, Y + 1, Z) * ax;
                double c01 = sample(X, Y, Z + 1) * (1 - ax) + sample(X + 1, Y, Z + 1) * ax;
                double c11 = sample(X, Y + 1, Z + 1) * (1 - ax) + sample(X + 1, Y + 1, Z + 1) * ax;
                double c0 = c00 * (1 - ay) + c10 * ay;
                double c1 = c01 * (1 - ay) + c11 * ay;
                out.data()[i] = static_cast<float>(c0 * (1 - az) + c1 * az);
            }
    return out;
}

}  // namespace dla
