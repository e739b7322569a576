#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "dla/labelgen.hpp"
#include "dla/phantom.hpp"
#include "dla/volume.hpp"

namespace dla {

// linear window from [0, max pixel] to [0, 255]; non-positive pixels map to
// black, as does the whole image when nothing is positive
std::vector<std::uint8_t> window_bytes(const Image2D& img);

// binary graymap with header "P5\n<width> <height>\n255\n"
void save_pgm(const std::vector<std::uint8_t>& bytes, std::uint32_t width, std::uint32_t height,
              const std::filesystem::path& path);

// writes dsa_mip_<axis>.pgm and dla_mip_<axis>.pgm into out_dir (axis 0/1/2
// named x/y/z); returns the two projections
std::pair<Image2D, Image2D> render_mip_pair(const Volume& dsa, const Volume& dla, int axis,
                                            const std::filesystem::path& out_dir);

struct ArtifactReport {
    std::string case_id;
    std::int64_t residual_bone_voxels_dsa = 0;
    std::int64_t residual_bone_voxels_dla = 0;
    double ratio = 0.0;       // dla / dsa
    bool ratio_defined = false;  // false when the dsa count is zero
};

// Residual bone signal in each angiogram, counted over the evaluated region
// (voxels the classifier labeled, i.e. labels != 0). A bone-truth voxel
// counts on the DSA side when its subtraction value reaches the vessel
// threshold, and on the DLA side when the model called it vessel. The DLA
// side never touches the mask volume.
ArtifactReport artifact_report(const PhantomCase& c, const LabelVolume& dla_labels,
                               const LabelGenConfig& cfg, const std::string& case_id);

}  // namespace dla
