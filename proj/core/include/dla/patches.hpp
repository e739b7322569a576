#pragma once

#include <cstdint>
#include <vector>

#include "dla/labelgen.hpp"
#include "dla/rng.hpp"
#include "dla/volume.hpp"

namespace dla {

// P x P x S neighborhood of a voxel, slices along z. P and S must be odd so
// the voxel sits at the exact center; positions outside the volume read as
// air. Values are raw HU.
std::vector<float> extract_patch(const Volume& v, std::int64_t center_index, int p, int s);

// same neighborhood written as doubles, for batch assembly
void extract_patch_into(const Volume& v, std::int64_t center_index, int p, int s, double* out);

// float variant for the inference path
void extract_patch_into_f32(const Volume& v, std::int64_t center_index, int p, int s,
                            float* out);

struct PatchRef {
    int case_id;
    std::int64_t index;
    std::uint8_t cls;
};

// Sample batch, laid out (b, s, p, p): slice-major within a sample so the
// network can treat slices as input channels.
struct Batch {
    int b = 0, p = 0, s = 0;
    std::vector<double> values;
    std::vector<std::uint8_t> labels;
    std::vector<PatchRef> refs;
};

// Class-balanced patch stream over one or more labeled cases. Every batch
// slot draws its class uniformly from {vessel, bone, soft}, then takes the
// next member of that class's pool without replacement; an exhausted pool is
// reshuffled and restarted. Fully deterministic for a given seed.
class BalancedSampler {
public:
    BalancedSampler(std::vector<const Volume*> fills,
                    const std::vector<const LabeledVoxelSet*>& sets, int p, int s,
                    std::uint64_t seed);

    Batch next_batch(int b);

    std::size_t pool_size(std::uint8_t cls) const { return pools_[cls - 1].refs.size(); }
    // completed passes over the vessel pool; the trainer's epoch unit
    std::int64_t vessel_passes() const { return pools_[0].passes; }

private:
    struct Pool {
        std::vector<PatchRef> refs;
        std::size_t cursor = 0;
        std::int64_t passes = 0;
    };

    const PatchRef& draw(Pool& pool);

    std::vector<const Volume*> fills_;
    Pool pools_[3];
    int p_, s_;
    Rng rng_;
};

}  // namespace dla
