#pragma once

#include <cstdint>
#include <vector>

#include "dla/net.hpp"
#include "dla/volume.hpp"

namespace dla {

// axis-aligned sub-box, inclusive lo / exclusive hi per axis
struct Roi {
    int lo[3] = {0, 0, 0};
    int hi[3] = {0, 0, 0};

    void validate(const Dims3& dims) const;
    std::int64_t voxels() const {
        return std::int64_t(hi[0] - lo[0]) * (hi[1] - lo[1]) * (hi[2] - lo[2]);
    }
    static Roi full(const Dims3& dims) {
        return {{0, 0, 0},
                {static_cast<int>(dims.nx), static_cast<int>(dims.ny), static_cast<int>(dims.nz)}};
    }
};

// per-voxel class probabilities over an ROI, x-fastest within the box
struct ClassProbVolume {
    Dims3 dims;  // dims of the underlying volume
    Roi roi;
    int n_classes = 3;
    std::vector<float> probs;  // roi.voxels() * n_classes

    const float* at(int x, int y, int z) const {
        std::int64_t ex = roi.hi[0] - roi.lo[0];
        std::int64_t ey = roi.hi[1] - roi.lo[1];
        std::int64_t i = (x - roi.lo[0]) + ex * ((y - roi.lo[1]) + ey * (z - roi.lo[2]));
        return probs.data() + i * n_classes;
    }
};

struct InferenceResult {
    ClassProbVolume probs;
    LabelVolume labels;  // full dims; 0 marks voxels outside the ROI
    double voxels_per_s = 0.0;
};

// classifies every ROI voxel from its patch. Voxels are visited in scan
// order in fixed-size batches; workers claim whole batches, so the output is
// bitwise identical for any worker count.
InferenceResult classify_volume(const InferenceEngine& engine, const Volume& fill,
                                const Roi& roi, int workers, int batch_size = 512);

// vessels-only volume: fill HU where labeled vessel, air everywhere else
Volume make_dla(const Volume& fill, const LabelVolume& labels);

}  // namespace dla
