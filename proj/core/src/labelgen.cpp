#include "dla/labelgen.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <limits>
#include <string>

#include "dla/error.hpp"
#include "dla/rng.hpp"

namespace dla {

namespace {

struct Offset {
    int dx, dy, dz;
};

std::vector<Offset> neighbor_offsets(int connectivity) {
    if (connectivity != 6 && connectivity != 18 && connectivity != 26)
        throw ConfigError("connectivity must be 6, 18 or 26");
    std::vector<Offset> out;
    for (int dz = -1; dz <= 1; ++dz)
        for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx) {
                int manhattan = std::abs(dx) + std::abs(dy) + std::abs(dz);
                if (manhattan == 0) continue;
                if (connectivity == 6 && manhattan > 1) continue;
                if (connectivity == 18 && manhattan > 2) continue;
                out.push_back({dx, dy, dz});
            }
    return out;
}

}  // namespace

ComponentLabeling connected_components(const BinaryMask& mask, int connectivity) {
    auto offsets = neighbor_offsets(connectivity);
    const auto [nx, ny, nz] = mask.dims();
    ComponentLabeling cc;
    cc.dims = mask.dims();
    cc.ids.assign(mask.size(), 0);

    std::vector<std::size_t> stack;
    std::int32_t next_id = 0;
    std::size_t i = 0;
    for (std::uint32_t z = 0; z < nz; ++z)
        for (std::uint32_t y = 0; y < ny; ++y)
            for (std::uint32_t x = 0; x < nx; ++x, ++i) {
                if (!mask[i] || cc.ids[i] != 0) continue;
                ++next_id;
                std::size_t size = 0;
                cc.ids[i] = next_id;
                stack.push_back(i);
                while (!stack.empty()) {
                    std::size_t j = stack.back();
                    stack.pop_back();
                    ++size;
                    auto jx = static_cast<std::int64_t>(j % nx);
                    auto jy = static_cast<std::int64_t>((j / nx) % ny);
                    auto jz = static_cast<std::int64_t>(j / (std::size_t(nx) * ny));
                    for (const auto& o : offsets) {
                        std::int64_t qx = jx + o.dx, qy = jy + o.dy, qz = jz + o.dz;
                        if (qx < 0 || qy < 0 || qz < 0 || qx >= nx || qy >= ny || qz >= nz)
                            continue;
                        std::size_t q = std::size_t(qx) + std::size_t(nx) * (std::size_t(qy) + std::size_t(ny) * std::size_t(qz));
                        if (mask[q] && cc.ids[q] == 0) {
                            cc.ids[q] = next_id;
                            stack.push_back(q);
                        }
                    }
                }
                cc.sizes.push_back(size);
            }
    return cc;
}

BinaryMask keep_components(const ComponentLabeling& cc, std::size_t min_voxels) {
    BinaryMask out(cc.dims);
    for (std::size_t i = 0; i < cc.ids.size(); ++i) {
        std::int32_t id = cc.ids[i];
        if (id != 0 && cc.sizes[static_cast<std::size_t>(id) - 1] >= min_voxels) out.set(i, true);
    }
    return out;
}

BinaryMask erode(const BinaryMask& mask, int radius) {
    if (radius < 0) throw ConfigError("erosion radius must be non-negative");
    if (radius == 0) return mask;
    const auto [nx, ny, nz] = mask.dims();
    // separable min filter, one axis at a time
    BinaryMask cur = mask;
    BinaryMask next(mask.dims());
    const std::int64_t ext[3] = {nx, ny, nz};
    const std::size_t stride[3] = {1, nx, std::size_t(nx) * ny};
    for (int axis = 0; axis < 3; ++axis) {
        std::size_t i = 0;
        for (std::int64_t z = 0; z < nz; ++z)
            for (std::int64_t y = 0; y < ny; ++y)
                for (std::int64_t x = 0; x < nx; ++x, ++i) {
                    std::int64_t pos = axis == 0 ? x : axis == 1 ? y : z;
                    std::uint8_t all = 1;
                    if (pos - radius < 0 || pos + radius >= ext[axis]) {
                        all = 0;  // outside the grid counts as unset
                    } else {
                        auto base = static_cast<std::int64_t>(i);
                        auto step = static_cast<std::int64_t>(stride[axis]);
                        for (int d = -radius; d <= radius && all; ++d)
                            all = cur[static_cast<std::size_t>(base + d * step)] ? all : 0;
                    }
                    next.set(i, all != 0);
                }
        std::swap(cur, next);
    }
    return cur;
}

BinaryMask extract_vasculature(const Volume& subtraction, const LabelGenConfig& cfg) {
    BinaryMask m = threshold_mask(subtraction, cfg.vessel_threshold_hu,
                                  std::numeric_limits<float>::infinity());
    return keep_components(connected_components(m, 26), cfg.vessel_min_component_voxels);
}

BinaryMask extract_bone(const Volume& fill, const BinaryMask& vessels, const LabelGenConfig& cfg) {
    if (!(fill.dims() == vessels.dims())) throw ShapeError("extract_bone: dimension mismatch");
    Volume scrubbed = fill;
    for (std::size_t i = 0; i < scrubbed.size(); ++i)
        if (vessels[i]) scrubbed.data()[i] = 0.0f;
    BinaryMask m = threshold_mask(scrubbed, cfg.bone_threshold_hu,
                                  std::numeric_limits<float>::infinity());
    return keep_components(connected_components(m, 26), cfg.bone_min_component_voxels);
}

BinaryMask extract_soft_tissue(const Volume& fill, const BinaryMask& vessels,
                               const BinaryMask& bone, const LabelGenConfig& cfg) {
    if (!(fill.dims() == vessels.dims()) || !(fill.dims() == bone.dims()))
        throw ShapeError("extract_soft_tissue: dimension mismatch");
    if (cfg.soft_lo_hu > cfg.soft_hi_hu) throw ConfigError("soft-tissue window inverted");
    BinaryMask m = threshold_mask(fill, cfg.soft_lo_hu, cfg.soft_hi_hu);
    m = erode(m, cfg.erosion_radius_voxels);
    for (std::size_t i = 0; i < m.size(); ++i)
        if (vessels[i] || bone[i]) m.set(i, false);
    return m;
}

namespace {

// first n entries of a seeded partial Fisher-Yates shuffle; draw order is
// the emission order
std::vector<std::int64_t> sample_without_replacement(std::vector<std::int64_t>& pool,
                                                     std::size_t n, Rng& rng) {
    for (std::size_t i = 0; i < n; ++i) {
        auto j = static_cast<std::size_t>(
            rng.uniform_int(static_cast<std::int64_t>(i), static_cast<std::int64_t>(pool.size()) - 1));
        std::swap(pool[i], pool[j]);
    }
    return {pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(n)};
}

}  // namespace

LabelGenResult build_and_undersample(const BinaryMask& vessels, const BinaryMask& bone,
                                     const BinaryMask& soft, std::uint64_t seed) {
    if (!(vessels.dims() == bone.dims()) || !(vessels.dims() == soft.dims()))
        throw ShapeError("build_and_undersample: dimension mismatch");

    LabelGenResult out;
    out.labels = LabelVolume(vessels.dims());
    out.samples.dims = vessels.dims();

    std::vector<std::int64_t> vessel_idx, bone_idx, soft_idx;
    for (std::size_t i = 0; i < vessels.size(); ++i) {
        if (vessels[i]) {
            out.labels[i] = kClassVessel;
            vessel_idx.push_back(static_cast<std::int64_t>(i));
        } else if (bone[i]) {
            out.labels[i] = kClassBone;
            bone_idx.push_back(static_cast<std::int64_t>(i));
        } else if (soft[i]) {
            out.labels[i] = kClassSoft;
            soft_idx.push_back(static_cast<std::int64_t>(i));
        }
    }
    if (vessel_idx.empty()) throw DataError("undersample: vessel class is empty");
    if (bone_idx.empty()) throw DataError("undersample: bone class is empty");
    if (soft_idx.empty()) throw DataError("undersample: soft-tissue class is empty");

    std::size_t n = vessel_idx.size();
    Rng rng(seed);

    auto& entries = out.samples.entries;
    entries.reserve(3 * n);
    for (auto i : vessel_idx) entries.push_back({i, kClassVessel});
    out.samples.n_vessel = n;

    auto take = [&](std::vector<std::int64_t>& pool, std::uint8_t cls, bool& shortfall) {
        std::size_t want = std::min(n, pool.size());
        shortfall = pool.size() < n;
        auto picked = shortfall ? pool : sample_without_replacement(pool, want, rng);
        for (auto i : picked) entries.push_back({i, cls});
        return picked.size();
    };
    out.samples.n_bone = take(bone_idx, kClassBone, out.samples.bone_shortfall);
    out.samples.n_soft = take(soft_idx, kClassSoft, out.samples.soft_shortfall);
    return out;
}

void save_samples(const LabeledVoxelSet& s, const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("cannot open for writing: " + path.string());
    for (const auto& e : s.entries) os << e.index << '\t' << int(e.cls) << '\n';
    if (!os) throw IoError("write failed: " + path.string());
}

LabeledVoxelSet load_samples(const std::filesystem::path& path, Dims3 dims) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open: " + path.string());
    LabeledVoxelSet s;
    s.dims = dims;
    auto voxels = static_cast<std::int64_t>(dims.voxels());
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        auto where = path.string() + ":" + std::to_string(lineno);
        auto tab = line.find('\t');
        if (tab == std::string::npos) throw FormatError(where + ": expected index<TAB>class");
        std::int64_t idx = 0;
        int cls = 0;
        auto r1 = std::from_chars(line.data(), line.data() + tab, idx);
        auto r2 = std::from_chars(line.data() + tab + 1, line.data() + line.size(), cls);
        if (r1.ec != std::errc{} || r2.ec != std::errc{})
            throw FormatError(where + ": malformed line");
        if (idx < 0 || idx >= voxels) throw FormatError(where + ": index out of range");
        if (cls < kClassVessel || cls > kClassSoft) throw FormatError(where + ": bad class code");
        s.entries.push_back({idx, static_cast<std::uint8_t>(cls)});
        if (cls == kClassVessel) ++s.n_vessel;
        else if (cls == kClassBone) ++s.n_bone;
        else ++s.n_soft;
    }
    return s;
}

}  // namespace dla
