#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace dla {

struct Dims3 {
    std::uint32_t nx = 0, ny = 0, nz = 0;

    std::size_t voxels() const { return std::size_t(nx) * ny * nz; }
    bool operator==(const Dims3&) const = default;
};

constexpr float kAirHU = -1000.0f;

// Dense scalar field in Hounsfield units. Storage is x-fastest row-major:
// index = x + nx*(y + ny*z). Voxels are isotropic.
class Volume {
public:
    Volume() = default;
    Volume(Dims3 dims, float spacing_mm, float fill_value = 0.0f);

    const Dims3& dims() const { return dims_; }
    float spacing_mm() const { return spacing_mm_; }
    std::size_t size() const { return data_.size(); }

    float at(std::uint32_t x, std::uint32_t y, std::uint32_t z) const {
        return data_[index(x, y, z)];
    }
    float& at(std::uint32_t x, std::uint32_t y, std::uint32_t z) {
        return data_[index(x, y, z)];
    }
    std::size_t index(std::uint32_t x, std::uint32_t y, std::uint32_t z) const {
        return x + std::size_t(dims_.nx) * (y + std::size_t(dims_.ny) * z);
    }

    const std::vector<float>& data() const { return data_; }
    std::vector<float>& data() { return data_; }

private:
    Dims3 dims_;
    float spacing_mm_ = 0.46f;
    std::vector<float> data_;
};

// 0/1 occupancy over the same grid layout as Volume.
class BinaryMask {
public:
    BinaryMask() = default;
    explicit BinaryMask(Dims3 dims, std::uint8_t value = 0)
        : dims_(dims), bits_(dims.voxels(), value) {}

    const Dims3& dims() const { return dims_; }
    std::size_t size() const { return bits_.size(); }
    std::size_t count() const;

    std::uint8_t operator[](std::size_t i) const { return bits_[i]; }
    void set(std::size_t i, bool v) { bits_[i] = v ? 1 : 0; }
    std::uint8_t at(std::uint32_t x, std::uint32_t y, std::uint32_t z) const {
        return bits_[x + std::size_t(dims_.nx) * (y + std::size_t(dims_.ny) * z)];
    }

    const std::vector<std::uint8_t>& bits() const { return bits_; }
    std::vector<std::uint8_t>& bits() { return bits_; }

private:
    Dims3 dims_;
    std::vector<std::uint8_t> bits_;
};

// Voxelwise class codes: 0 unlabeled, 1 vessel, 2 bone, 3 soft tissue.
enum : std::uint8_t {
    kClassUnlabeled = 0,
    kClassVessel = 1,
    kClassBone = 2,
    kClassSoft = 3,
};

class LabelVolume {
public:
    LabelVolume() = default;
    explicit LabelVolume(Dims3 dims, std::uint8_t value = kClassUnlabeled)
        : dims_(dims), labels_(dims.voxels(), value) {}

    const Dims3& dims() const { return dims_; }
    std::size_t size() const { return labels_.size(); }

    std::uint8_t operator[](std::size_t i) const { return labels_[i]; }
    std::uint8_t& operator[](std::size_t i) { return labels_[i]; }
    std::uint8_t at(std::uint32_t x, std::uint32_t y, std::uint32_t z) const {
        return labels_[x + std::size_t(dims_.nx) * (y + std::size_t(dims_.ny) * z)];
    }

    const std::vector<std::uint8_t>& labels() const { return labels_; }
    std::vector<std::uint8_t>& labels() { return labels_; }

private:
    Dims3 dims_;
    std::vector<std::uint8_t> labels_;
};

struct Image2D {
    std::uint32_t width = 0, height = 0;
    std::vector<float> pixels;  // row-major, row 0 on top

    float at(std::uint32_t x, std::uint32_t y) const { return pixels[x + std::size_t(width) * y]; }
    float& at(std::uint32_t x, std::uint32_t y) { return pixels[x + std::size_t(width) * y]; }
};

// --- file formats -----------------------------------------------------------
//
// Volume (.dlav), little-endian:
//   magic "DLAV" | version u16 = 1 | dtype u8 = 1 (float32) | reserved u8 = 0
//   | nx, ny, nz as u32 | spacing_mm f32 | payload nx*ny*nz float32
// Labels (.dlal), little-endian:
//   magic "DLAL" | version u16 = 1 | dtype u8 = 2 (uint8) | reserved u8 = 0
//   | nx, ny, nz as u32 | payload nx*ny*nz uint8
void save_volume(const Volume& v, const std::filesystem::path& path);
Volume load_volume(const std::filesystem::path& path);
void save_labels(const LabelVolume& l, const std::filesystem::path& path);
LabelVolume load_labels(const std::filesystem::path& path);

// --- basic operations -------------------------------------------------------

// a - b; requires identical dims and spacing
Volume subtract(const Volume& a, const Volume& b);

// closed interval [lo, hi]; lo may be -inf and hi +inf
BinaryMask threshold_mask(const Volume& v, float lo, float hi);

// Maximum intensity projection along axis 0=x, 1=y, 2=z. Voxels where
// exclude is set are treated as air. Output axes keep (first-remaining,
// second-remaining) order: x->(y,z), y->(x,z), z->(x,y).
Image2D mip(const Volume& v, int axis, const BinaryMask* exclude = nullptr);

}  // namespace dla
