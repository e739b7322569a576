#include "dla/render.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "dla/error.hpp"

namespace dla {

std::vector<std::uint8_t> window_bytes(const Image2D& img) {
    float max = 0.0f;
    for (float v : img.pixels) max = std::max(max, v);
    std::vector<std::uint8_t> out(img.pixels.size(), 0);
    if (max <= 0.0f) return out;
    for (std::size_t i = 0; i < img.pixels.size(); ++i) {
        float v = img.pixels[i];
        if (v <= 0.0f) continue;
        out[i] = static_cast<std::uint8_t>(std::lround(std::min(v / max, 1.0f) * 255.0f));
    }
    return out;
}

void save_pgm(const std::vector<std::uint8_t>& bytes, std::uint32_t width, std::uint32_t height,
              const std::filesystem::path& path) {
    if (bytes.size() != std::size_t(width) * height)
        throw ShapeError("save_pgm: byte count does not match dimensions");
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open for writing: " + path.string());
    os << "P5\n" << width << " " << height << "\n255\n";
    os.write(reinterpret_cast<const char*>(bytes.data()),
             static_cast<std::streamsize>(bytes.size()));
    if (!os) throw IoError("write failed: " + path.string());
}

std::pair<Image2D, Image2D> render_mip_pair(const Volume& dsa, const Volume& dla, int axis,
                                            const std::filesystem::path& out_dir) {
    if (!(dsa.dims() == dla.dims())) throw ShapeError("render_mip_pair: dimension mismatch");
    if (axis < 0 || axis > 2) throw ConfigError("render_mip_pair: axis must be 0, 1 or 2");
    Image2D a = mip(dsa, axis);
    Image2D b = mip(dla, axis);
    const char* names = "xyz";
    save_pgm(window_bytes(a), a.width, a.height,
             out_dir / (std::string("dsa_mip_") + names[axis] + ".pgm"));
    save_pgm(window_bytes(b), b.width, b.height,
             out_dir / (std::string("dla_mip_") + names[axis] + ".pgm"));
    return {std::move(a), std::move(b)};
}

ArtifactReport artifact_report(const PhantomCase& c, const LabelVolume& dla_labels,
                               const LabelGenConfig& cfg, const std::string& case_id) {
    if (!(c.truth.dims() == dla_labels.dims()) || !(c.fill.dims() == dla_labels.dims()) ||
        !(c.mask.dims() == dla_labels.dims()))
        throw ShapeError("artifact_report: dimension mismatch");
    ArtifactReport rep;
    rep.case_id = case_id;
    const auto& fill = c.fill.data();
    const auto& mask = c.mask.data();
    for (std::size_t i = 0; i < fill.size(); ++i) {
        if (dla_labels[i] == kClassUnlabeled || c.truth[i] != kClassBone) continue;
        if (fill[i] - mask[i] >= cfg.vessel_threshold_hu) ++rep.residual_bone_voxels_dsa;
        if (dla_labels[i] == kClassVessel) ++rep.residual_bone_voxels_dla;
    }
    if (rep.residual_bone_voxels_dsa > 0) {
        rep.ratio = static_cast<double>(rep.residual_bone_voxels_dla) /
                    static_cast<double>(rep.residual_bone_voxels_dsa);
        rep.ratio_defined = true;
    }
    return rep;
}

}  // namespace dla
