#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "dla/volume.hpp"

namespace dla {

struct LabelGenConfig {
    float vessel_threshold_hu = 600.0f;
    std::size_t vessel_min_component_voxels = 50;
    float bone_threshold_hu = 400.0f;
    std::size_t bone_min_component_voxels = 500;
    float soft_lo_hu = -400.0f, soft_hi_hu = 500.0f;
    int erosion_radius_voxels = 1;
    std::uint64_t seed = 0;
};

// Connected component ids, assigned in first-encounter scan order starting
// at 1; 0 marks background. sizes[k-1] is the voxel count of component k.
struct ComponentLabeling {
    Dims3 dims;
    std::vector<std::int32_t> ids;
    std::vector<std::size_t> sizes;

    int count() const { return static_cast<int>(sizes.size()); }
};

// connectivity must be 6, 18 or 26
ComponentLabeling connected_components(const BinaryMask& mask, int connectivity);

BinaryMask keep_components(const ComponentLabeling& cc, std::size_t min_voxels);

// Binary erosion by a Chebyshev cube of side 2*radius+1. Voxels outside the
// grid count as unset, so set regions touching the border erode inward there
// as well. radius 0 is the identity.
BinaryMask erode(const BinaryMask& mask, int radius);

// threshold the DSA subtraction at [vessel_threshold, inf), then drop
// 26-connected components smaller than the minimum size
BinaryMask extract_vasculature(const Volume& subtraction, const LabelGenConfig& cfg);

// zero out vessel voxels in the contrast sweep, threshold at
// [bone_threshold, inf), drop small 26-connected components
BinaryMask extract_bone(const Volume& fill, const BinaryMask& vessels, const LabelGenConfig& cfg);

// threshold the contrast sweep to the soft-tissue window, erode, then remove
// anything already claimed by vessels or bone
BinaryMask extract_soft_tissue(const Volume& fill, const BinaryMask& vessels,
                               const BinaryMask& bone, const LabelGenConfig& cfg);

struct LabeledVoxelSet {
    struct Entry {
        std::int64_t index;
        std::uint8_t cls;
    };

    Dims3 dims;
    std::vector<Entry> entries;
    std::size_t n_vessel = 0, n_bone = 0, n_soft = 0;
    // set when a majority-class pool was smaller than the vessel count and
    // was taken whole instead of undersampled
    bool bone_shortfall = false, soft_shortfall = false;
};

struct LabelGenResult {
    LabelVolume labels;
    LabeledVoxelSet samples;
};

// Combine the tissue masks with precedence vessel > bone > soft and balance
// classes by random undersampling: all vessel voxels, then an equal number
// of bone and of soft voxels drawn without replacement. An empty class is a
// data error.
LabelGenResult build_and_undersample(const BinaryMask& vessels, const BinaryMask& bone,
                                     const BinaryMask& soft, std::uint64_t seed);

// one `linear_index<TAB>class` line per entry
void save_samples(const LabeledVoxelSet& s, const std::filesystem::path& path);
LabeledVoxelSet load_samples(const std::filesystem::path& path, Dims3 dims);

}  // namespace dla
