#include "dla/volume.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>

#include "dla/error.hpp"

static_assert(std::endian::native == std::endian::little,
              "file formats are little-endian; big-endian hosts are not supported");

namespace dla {

Volume::Volume(Dims3 dims, float spacing_mm, float fill_value)
    : dims_(dims), spacing_mm_(spacing_mm), data_(dims.voxels(), fill_value) {
    if (dims.voxels() == 0) throw ShapeError("volume dims must be positive");
    if (!(spacing_mm > 0.0f)) throw ShapeError("voxel spacing must be positive");
}

std::size_t BinaryMask::count() const {
    std::size_t n = 0;
    for (auto b : bits_) n += b;
    return n;
}

namespace {

constexpr std::uint16_t kFormatVersion = 1;
constexpr std::uint8_t kDtypeFloat32 = 1;
constexpr std::uint8_t kDtypeUint8 = 2;

template <class T>
void put(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <class T>
T get(std::istream& is, const std::filesystem::path& path, const char* what) {
    T v;
    is.read(reinterpret_cast<char*>(&v), sizeof v);
    if (!is) throw FormatError("truncated file (" + std::string(what) + "): " + path.string());
    return v;
}

Dims3 read_header(std::istream& is, const std::filesystem::path& path,
                  const char* magic, std::uint8_t dtype) {
    char m[4];
    is.read(m, 4);
    if (!is || std::memcmp(m, magic, 4) != 0)
        throw FormatError("bad magic, expected " + std::string(magic) + ": " + path.string());
    auto version = get<std::uint16_t>(is, path, "version");
    if (version != kFormatVersion)
        throw FormatError("unsupported format version " + std::to_string(version) + ": " + path.string());
    auto dt = get<std::uint8_t>(is, path, "dtype");
    if (dt != dtype)
        throw FormatError("unexpected dtype code " + std::to_string(dt) + ": " + path.string());
    get<std::uint8_t>(is, path, "reserved");
    Dims3 d;
    d.nx = get<std::uint32_t>(is, path, "nx");
    d.ny = get<std::uint32_t>(is, path, "ny");
    d.nz = get<std::uint32_t>(is, path, "nz");
    if (d.voxels() == 0) throw FormatError("zero-sized volume: " + path.string());
    return d;
}

void expect_eof(std::istream& is, const std::filesystem::path& path) {
    if (is.peek() != std::char_traits<char>::eof())
        throw FormatError("trailing bytes after payload: " + path.string());
}

}  // namespace

void save_volume(const Volume& v, const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open for writing: " + path.string());
    os.write("DLAV", 4);
    put(os, kFormatVersion);
    put(os, kDtypeFloat32);
    put(os, std::uint8_t{0});
    put(os, v.dims().nx);
    put(os, v.dims().ny);
    put(os, v.dims().nz);
    put(os, v.spacing_mm());
    os.write(reinterpret_cast<const char*>(v.data().data()),
             static_cast<std::streamsize>(v.size() * sizeof(float)));
    if (!os) throw IoError("write failed: " + path.string());
}

Volume load_volume(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open: " + path.string());
    Dims3 d = read_header(is, path, "DLAV", kDtypeFloat32);
    auto spacing = get<float>(is, path, "spacing_mm");
    if (!(spacing > 0.0f) || !std::isfinite(spacing))
        throw FormatError("non-positive voxel spacing: " + path.string());
    Volume v(d, spacing);
    is.read(reinterpret_cast<char*>(v.data().data()),
            static_cast<std::streamsize>(v.size() * sizeof(float)));
    if (!is) throw FormatError("truncated payload: " + path.string());
    expect_eof(is, path);
    for (float f : v.data())
        if (!std::isfinite(f)) throw FormatError("non-finite voxel value: " + path.string());
    return v;
}

void save_labels(const LabelVolume& l, const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open for writing: " + path.string());
    os.write("DLAL", 4);
    put(os, kFormatVersion);
    put(os, kDtypeUint8);
    put(os, std::uint8_t{0});
    put(os, l.dims().nx);
    put(os, l.dims().ny);
    put(os, l.dims().nz);
    os.write(reinterpret_cast<const char*>(l.labels().data()),
             static_cast<std::streamsize>(l.size()));
    if (!os) throw IoError("write failed: " + path.string());
}

LabelVolume load_labels(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open: " + path.string());
    Dims3 d = read_header(is, path, "DLAL", kDtypeUint8);
    LabelVolume l(d);
    is.read(reinterpret_cast<char*>(l.labels().data()), static_cast<std::streamsize>(l.size()));
    if (!is) throw FormatError("truncated payload: " + path.string());
    expect_eof(is, path);
    for (auto c : l.labels())
        if (c > kClassSoft) throw FormatError("label code out of range: " + path.string());
    return l;
}

Volume subtract(const Volume& a, const Volume& b) {
    if (!(a.dims() == b.dims()))
        throw ShapeError("subtract: dimension mismatch");
    if (a.spacing_mm() != b.spacing_mm())
        throw ShapeError("subtract: spacing mismatch");
    Volume out(a.dims(), a.spacing_mm());
    const float* pa = a.data().data();
    const float* pb = b.data().data();
    float* po = out.data().data();
    for (std::size_t i = 0, n = a.size(); i < n; ++i) po[i] = pa[i] - pb[i];
    return out;
}

BinaryMask threshold_mask(const Volume& v, float lo, float hi) {
    if (lo > hi) throw ShapeError("threshold_mask: lo > hi");
    BinaryMask m(v.dims());
    const float* p = v.data().data();
    auto* b = m.bits().data();
    for (std::size_t i = 0, n = v.size(); i < n; ++i) b[i] = (p[i] >= lo && p[i] <= hi) ? 1 : 0;
    return m;
}

Image2D mip(const Volume& v, int axis, const BinaryMask* exclude) {
    if (axis < 0 || axis > 2) throw ShapeError("mip: axis must be 0, 1 or 2");
    if (exclude && !(exclude->dims() == v.dims()))
        throw ShapeError("mip: exclude mask dimension mismatch");
    const auto [nx, ny, nz] = v.dims();
    Image2D img;
    switch (axis) {
        case 0: img.width = ny; img.height = nz; break;
        case 1: img.width = nx; img.height = nz; break;
        default: img.width = nx; img.height = ny; break;
    }
    img.pixels.assign(std::size_t(img.width) * img.height, kAirHU);
    for (std::uint32_t z = 0; z < nz; ++z)
        for (std::uint32_t y = 0; y < ny; ++y)
            for (std::uint32_t x = 0; x < nx; ++x) {
                std::size_t i = v.index(x, y, z);
                float val = (exclude && (*exclude)[i]) ? kAirHU : v.data()[i];
                float* px = nullptr;
                switch (axis) {
                    case 0: px = &img.at(y, z); break;
                    case 1: px = &img.at(x, z); break;
                    default: px = &img.at(x, y); break;
                }
                if (val > *px) *px = val;
            }
    return img;
}

}  // namespace dla
