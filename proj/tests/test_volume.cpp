#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "doctest.h"

#include "dla/error.hpp"
#include "dla/volume.hpp"

namespace fs = std::filesystem;
using namespace dla;

namespace {

fs::path test_dir() {
    fs::path d = fs::temp_directory_path() / "dla_test_volume";
    fs::create_directories(d);
    return d;
}

struct ByteSink {
    std::vector<unsigned char> bytes;

    void u8(std::uint8_t v) { bytes.push_back(v); }
    void u16(std::uint16_t v) {
        bytes.push_back(v & 0xff);
        bytes.push_back((v >> 8) & 0xff);
    }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) bytes.push_back((v >> (8 * i)) & 0xff);
    }
    void f32(float v) {
        std::uint32_t u;
        std::memcpy(&u, &v, 4);
        u32(u);
    }
    void text(const char* s) {
        while (*s) bytes.push_back(std::uint8_t(*s++));
    }
};

std::vector<unsigned char> file_bytes(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    REQUIRE(bool(is));
    return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

void write_bytes(const fs::path& p, const std::vector<unsigned char>& b) {
    std::ofstream os(p, std::ios::binary);
    os.write(reinterpret_cast<const char*>(b.data()), std::streamsize(b.size()));
}

}  // namespace

TEST_CASE("single voxel volume serializes to the frozen 28-byte layout") {
    Volume v({1, 1, 1}, 0.46f);
    v.data()[0] = 42.5f;
    fs::path p = test_dir() / "one.dlav";
    save_volume(v, p);

    ByteSink expect;
    expect.text("DLAV");
    expect.u16(1);   // version
    expect.u8(1);    // float32 payload
    expect.u8(0);    // reserved
    expect.u32(1);
    expect.u32(1);
    expect.u32(1);
    expect.f32(0.46f);
    expect.f32(42.5f);
    REQUIRE(expect.bytes.size() == 28);
    CHECK(file_bytes(p) == expect.bytes);
}

TEST_CASE("two-voxel label file serializes to the frozen 22-byte layout") {
    LabelVolume l({2, 1, 1});
    l[0] = kClassVessel;
    l[1] = kClassSoft;
    fs::path p = test_dir() / "two.dlal";
    save_labels(l, p);

    ByteSink expect;
    expect.text("DLAL");
    expect.u16(1);
    expect.u8(2);  // uint8 payload
    expect.u8(0);
    expect.u32(2);
    expect.u32(1);
    expect.u32(1);
    expect.u8(1);
    expect.u8(3);
    REQUIRE(expect.bytes.size() == 22);
    CHECK(file_bytes(p) == expect.bytes);
}

TEST_CASE("volume round-trip is bitwise") {
    Volume v({5, 4, 3}, 0.46f);
    for (std::size_t i = 0; i < v.size(); ++i)
        v.data()[i] = float(i) * 7.25f - 1000.0f;
    v.data()[7] = kAirHU;
    v.data()[9] = -0.0f;
    fs::path p = test_dir() / "rt.dlav";
    save_volume(v, p);
    Volume w = load_volume(p);
    REQUIRE(w.dims() == v.dims());
    CHECK(w.spacing_mm() == v.spacing_mm());
    CHECK(std::memcmp(w.data().data(), v.data().data(), v.size() * 4) == 0);
}

TEST_CASE("label round-trip preserves every code") {
    LabelVolume l({3, 3, 2});
    for (std::size_t i = 0; i < l.size(); ++i) l[i] = std::uint8_t(i % 4);
    fs::path p = test_dir() / "rt.dlal";
    save_labels(l, p);
    LabelVolume m = load_labels(p);
    REQUIRE(m.dims() == l.dims());
    CHECK(m.labels() == l.labels());
}

TEST_CASE("loader rejects malformed files") {
    fs::path dir = test_dir();
    Volume v({2, 2, 2}, 1.0f);
    fs::path good = dir / "good.dlav";
    save_volume(v, good);
    auto bytes = file_bytes(good);

    SUBCASE("missing file") {
        CHECK_THROWS_AS(load_volume(dir / "absent.dlav"), IoError);
    }
    SUBCASE("bad magic") {
        auto b = bytes;
        b[0] = 'X';
        write_bytes(dir / "bad.dlav", b);
        CHECK_THROWS_AS(load_volume(dir / "bad.dlav"), FormatError);
    }
    SUBCASE("unsupported version") {
        auto b = bytes;
        b[4] = 9;
        write_bytes(dir / "bad.dlav", b);
        CHECK_THROWS_AS(load_volume(dir / "bad.dlav"), FormatError);
    }
    SUBCASE("wrong dtype code") {
        auto b = bytes;
        b[6] = 2;
        write_bytes(dir / "bad.dlav", b);
        CHECK_THROWS_AS(load_volume(dir / "bad.dlav"), FormatError);
    }
    SUBCASE("truncated payload") {
        auto b = bytes;
        b.resize(b.size() - 3);
        write_bytes(dir / "bad.dlav", b);
        CHECK_THROWS_AS(load_volume(dir / "bad.dlav"), FormatError);
    }
    SUBCASE("trailing bytes") {
        auto b = bytes;
        b.push_back(0);
        write_bytes(dir / "bad.dlav", b);
        CHECK_THROWS_AS(load_volume(dir / "bad.dlav"), FormatError);
    }
    SUBCASE("non-finite voxel") {
        auto b = bytes;
        b[20] = 0;
        b[21] = 0;
        b[22] = 0x80;
        b[23] = 0x7f;  // +inf
        write_bytes(dir / "bad.dlav", b);
        CHECK_THROWS_AS(load_volume(dir / "bad.dlav"), FormatError);
    }
    SUBCASE("label code out of range") {
        LabelVolume l({1, 1, 1});
        l[0] = kClassSoft;
        fs::path lp = dir / "bad.dlal";
        save_labels(l, lp);
        auto lb = file_bytes(lp);
        lb.back() = 4;
        write_bytes(lp, lb);
        CHECK_THROWS_AS(load_labels(lp), FormatError);
    }
    SUBCASE("volume loader rejects a label file") {
        LabelVolume l({2, 2, 2});
        fs::path lp = dir / "labels.dlal";
        save_labels(l, lp);
        CHECK_THROWS_AS(load_volume(lp), FormatError);
    }
}

TEST_CASE("subtract is elementwise and shape-checked") {
    Volume a({2, 1, 1}, 1.0f), b({2, 1, 1}, 1.0f);
    a.data() = {10.0f, -4.0f};
    b.data() = {3.0f, 1.5f};
    Volume d = subtract(a, b);
    CHECK(d.data()[0] == 7.0f);
    CHECK(d.data()[1] == -5.5f);
    Volume c({1, 2, 1}, 1.0f);
    CHECK_THROWS_AS(subtract(a, c), ShapeError);
}

TEST_CASE("threshold_mask keeps the closed interval") {
    Volume v({4, 1, 1}, 1.0f);
    v.data() = {1.0f, 2.0f, 3.0f, 4.0f};
    BinaryMask m = threshold_mask(v, 2.0f, 3.0f);
    CHECK(m[0] == 0);
    CHECK(m[1] == 1);
    CHECK(m[2] == 1);
    CHECK(m[3] == 0);
    CHECK(m.count() == 2);
}

TEST_CASE("mip projects the maximum and honors the exclude mask") {
    Volume v({2, 2, 2}, 1.0f);
    for (std::size_t i = 0; i < 8; ++i) v.data()[i] = float(i);
    // along z the top pixel (x, y) sees max over z: value at z=1 plane
    Image2D mz = mip(v, 2);
    CHECK(mz.width == 2);
    CHECK(mz.height == 2);
    CHECK(mz.at(0, 0) == 4.0f);
    CHECK(mz.at(1, 1) == 7.0f);
    Image2D mx = mip(v, 0);  // (y, z) image
    CHECK(mx.width == 2);
    CHECK(mx.at(0, 0) == 1.0f);
    CHECK(mx.at(1, 1) == 7.0f);
    Image2D my = mip(v, 1);  // (x, z)
    CHECK(my.at(0, 1) == 6.0f);

    BinaryMask excl(v.dims());
    excl.set(7, true);
    Image2D mz2 = mip(v, 2, &excl);
    CHECK(mz2.at(1, 1) == 3.0f);

    CHECK_THROWS_AS(mip(v, 3), ShapeError);
}
