#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>

#include "perx/volume.hpp"

using namespace perx;
namespace fs = std::filesystem;

namespace {

std::string tmp_path(const std::string& name) {
    return (fs::temp_directory_path() / name).string();
}

std::string file_bytes(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("phantom: degenerate spec has exactly body and spine levels") {
    PhantomSpec spec;
    spec.seed = 3;
    spec.n_organs = 0;
    spec.body_density = {0.2, 0.2};
    Volume vol = generate_phantom(spec, {24, 24, 24});
    std::set<float> levels(vol.data.begin(), vol.data.end());
    levels.erase(0.0f);
    CHECK(levels == std::set<float>{0.2f, 0.9f});
}

TEST_CASE("phantom: deterministic per seed") {
    PhantomSpec spec;
    spec.seed = 42;
    Volume a = generate_phantom(spec, {20, 20, 20});
    Volume b = generate_phantom(spec, {20, 20, 20});
    CHECK(a.data == b.data);

    spec.seed = 43;
    Volume c = generate_phantom(spec, {20, 20, 20});
    CHECK(a.data != c.data);
}

TEST_CASE("phantom: rejects bad parameters") {
    PhantomSpec spec;
    CHECK_THROWS_AS(generate_phantom(spec, {8, 20, 20}), ParameterError);
    spec.body_axes = {0.6, 0.3, 0.3};
    CHECK_THROWS_AS(generate_phantom(spec, {20, 20, 20}), ParameterError);
    spec = PhantomSpec{};
    spec.organ_density = {0.5, 1.2};
    CHECK_THROWS_AS(generate_phantom(spec, {20, 20, 20}), ParameterError);
}

TEST_CASE("extract_slice: identity resample for native axial slice") {
    PhantomSpec spec;
    spec.seed = 7;
    Volume vol = generate_phantom(spec, {16, 16, 16});
    SliceSpec s{Plane::Axial, 5, std::nullopt, 0, 0};
    SliceSample out = extract_slice(vol, s, 8, 8);
    REQUIRE(out.image.h == 16);
    REQUIRE(out.image.w == 16);
    for (int r = 0; r < 16; ++r)
        for (int c = 0; c < 16; ++c)
            CHECK(out.image.at(r, c) == doctest::Approx(vol.at(5, r, c)).epsilon(1e-14));
}

TEST_CASE("extract_slice: axial grid has constant coordinate along the plane normal") {
    PhantomSpec spec;
    Volume vol = generate_phantom(spec, {16, 16, 16});
    SliceSpec s{Plane::Axial, 3, std::nullopt, 0, 0};
    auto grid = slice_coordinate_grid(vol, s, 8, 8);
    for (const auto& p : grid) CHECK(p.z == doctest::Approx(grid[0].z).epsilon(1e-15));
}

TEST_CASE("extract_slice: crop grid is a denser sampling sharing the window corners") {
    PhantomSpec spec;
    Volume vol = generate_phantom(spec, {32, 32, 32});
    SliceSpec full{Plane::Axial, 10, std::nullopt, 0, 0};
    SliceSpec quad{Plane::Axial, 10, CropWindow{0, 0, 16, 16}, 0, 0};
    int gh = 8, gw = 8;
    auto gfull = slice_coordinate_grid(vol, full, gh, gw);
    auto gquad = slice_coordinate_grid(vol, quad, gh, gw);

    // top-left corners coincide
    CHECK(gquad[0].x == doctest::Approx(gfull[0].x).epsilon(1e-12));
    CHECK(gquad[0].y == doctest::Approx(gfull[0].y).epsilon(1e-12));
    // crop bottom-right corner = pixel (15,15) = full-slice grid midpoint of extent
    Vec3 expect = vol.index_to_world(10, 15, 15);
    const Vec3& br = gquad[gh * gw - 1];
    CHECK(br.x == doctest::Approx(expect.x).epsilon(1e-12));
    CHECK(br.y == doctest::Approx(expect.y).epsilon(1e-12));
    // closed-form affine positions
    for (int k = 0; k < gh; ++k) {
        double want_y = vol.index_to_world(10, 15.0 * k / (gh - 1), 0).y;
        CHECK(gquad[k * gw].y == doctest::Approx(want_y).epsilon(1e-12));
    }
}

TEST_CASE("extract_slice: crop of the full window equals no crop") {
    PhantomSpec spec;
    spec.seed = 5;
    Volume vol = generate_phantom(spec, {16, 16, 16});
    SliceSpec a{Plane::Coronal, 4, std::nullopt, 0, 0};
    SliceSpec b{Plane::Coronal, 4, CropWindow{0, 0, 16, 16}, 0, 0};
    SliceSample sa = extract_slice(vol, a, 8, 8);
    SliceSample sb = extract_slice(vol, b, 8, 8);
    CHECK(sa.image.pix == sb.image.pix);
    for (size_t i = 0; i < sa.grid.size(); ++i) {
        CHECK(sa.grid[i].x == sb.grid[i].x);
        CHECK(sa.grid[i].y == sb.grid[i].y);
        CHECK(sa.grid[i].z == sb.grid[i].z);
    }
}

TEST_CASE("extract_slice: coordinate grids are affine in (i,j)") {
    PhantomSpec spec;
    Volume vol = generate_phantom(spec, {20, 24, 28});
    SliceSpec s{Plane::Sagittal, 9, CropWindow{2, 3, 15, 17}, 0, 0};
    int gh = 7, gw = 6;
    auto grid = slice_coordinate_grid(vol, s, gh, gw);
    auto at = [&](int r, int c) { return grid[r * gw + c]; };
    for (int c = 0; c < gw; ++c)
        for (int r = 0; r + 2 < gh; ++r) {
            double d2 = (at(r + 2, c).z - at(r + 1, c).z) - (at(r + 1, c).z - at(r, c).z);
            CHECK(std::abs(d2) < 1e-12);
        }
    for (int r = 0; r < gh; ++r)
        for (int c = 0; c + 2 < gw; ++c) {
            double d2 = (at(r, c + 2).y - at(r, c + 1).y) - (at(r, c + 1).y - at(r, c).y);
            CHECK(std::abs(d2) < 1e-12);
        }
}

TEST_CASE("extract_slice: bounds errors") {
    PhantomSpec spec;
    Volume vol = generate_phantom(spec, {16, 16, 16});
    CHECK_THROWS_AS(extract_slice(vol, {Plane::Axial, 16, std::nullopt, 0, 0}, 4, 4), BoundsError);
    CHECK_THROWS_AS(extract_slice(vol, {Plane::Axial, 0, CropWindow{8, 8, 16, 4}, 0, 0}, 4, 4),
                    BoundsError);
}

TEST_CASE("volume I/O: round-trip is bit-exact") {
    PhantomSpec spec;
    spec.seed = 11;
    Volume vol = generate_phantom(spec, {16, 18, 20});
    std::string path = tmp_path("perx_vol_roundtrip.vol");
    save_volume(vol, path);
    Volume back = load_volume(path);
    CHECK(back.dims == vol.dims);
    REQUIRE(back.data.size() == vol.data.size());
    CHECK(std::memcmp(back.data.data(), vol.data.data(), vol.data.size() * sizeof(float)) == 0);

    // saving the loaded volume reproduces identical bytes
    std::string path2 = tmp_path("perx_vol_roundtrip2.vol");
    save_volume(back, path2);
    CHECK(file_bytes(path) == file_bytes(path2));
}

TEST_CASE("volume I/O: truncated payload names expected vs actual byte count") {
    PhantomSpec spec;
    Volume vol = generate_phantom(spec, {16, 16, 16});
    std::string path = tmp_path("perx_vol_trunc.vol");
    save_volume(vol, path);
    std::string bytes = file_bytes(path);
    std::ofstream f(path, std::ios::binary);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size() - 100));
    f.close();
    try {
        load_volume(path);
        FAIL("expected FormatError");
    } catch (const FormatError& e) {
        std::string msg = e.what();
        CHECK(msg.find(std::to_string(16 * 16 * 16 * 4)) != std::string::npos);
        CHECK(msg.find("expected") != std::string::npos);
    }
}

TEST_CASE("volume I/O: 4x4x4 header with 256-byte payload accepted") {
    std::string path = tmp_path("perx_vol_444.vol");
    {
        std::ofstream f(path, std::ios::binary);
        f << R"({"dims":[4,4,4],"dtype":"f32le"})" << "\n";
        std::vector<float> payload(64, 0.5f);
        f.write(reinterpret_cast<const char*>(payload.data()), 256);
    }
    Volume vol = load_volume(path);
    CHECK(vol.dims == std::array<int, 3>{4, 4, 4});
    CHECK(vol.data.size() == 64);
}

TEST_CASE("volume I/O: non-finite payload rejected") {
    std::string path = tmp_path("perx_vol_nan.vol");
    {
        std::ofstream f(path, std::ios::binary);
        f << R"({"dims":[2,2,2],"dtype":"f32le"})" << "\n";
        std::vector<float> payload(8, 0.0f);
        payload[3] = std::numeric_limits<float>::quiet_NaN();
        f.write(reinterpret_cast<const char*>(payload.data()), 32);
    }
    CHECK_THROWS_AS(load_volume(path), DataError);
}

TEST_CASE("image I/O: raw round-trip and PNG export") {
    Image2D img(9, 13);
    for (int r = 0; r < img.h; ++r)
        for (int c = 0; c < img.w; ++c) img.at(r, c) = (r * 13 + c) / 117.0;
    std::string raw = tmp_path("perx_img.xray");
    save_image_raw(img, raw);
    Image2D back = load_image_raw(raw);
    REQUIRE(back.h == img.h);
    REQUIRE(back.w == img.w);
    for (size_t i = 0; i < img.pix.size(); ++i)
        CHECK(back.pix[i] == doctest::Approx(img.pix[i]).epsilon(1e-7));

    std::string png = tmp_path("perx_img.png");
    save_image_png(img, png);
    std::string bytes = file_bytes(png);
    REQUIRE(bytes.size() > 8);
    CHECK(static_cast<unsigned char>(bytes[1]) == 'P');
    CHECK(bytes.find("IHDR") != std::string::npos);
    CHECK(bytes.find("IEND") != std::string::npos);
}
