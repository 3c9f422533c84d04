#include <doctest.h>

#include <cmath>
#include <random>

#include "perx/resampler.hpp"
#include "perx/volume.hpp"

using namespace perx;

namespace {

FeatureMap random_map(int h, int w, int c, std::uint64_t seed) {
    FeatureMap fm(h, w, c);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> dist(-1, 1);
    for (double& v : fm.data) v = dist(rng);
    return fm;
}

std::vector<Vec3> random_grid(size_t n, std::uint64_t seed, double lo = -0.7, double hi = 0.7) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> dist(lo, hi);
    std::vector<Vec3> g(n);
    for (auto& p : g) p = {dist(rng), dist(rng), dist(rng)};
    return g;
}

}  // namespace

TEST_CASE("bilinear_sample: node identity, midpoint average, clamping") {
    FeatureMap fm(2, 2, 1);
    fm.at(0, 0)[0] = 0;
    fm.at(0, 1)[0] = 1;
    fm.at(1, 0)[0] = 2;
    fm.at(1, 1)[0] = 3;

    CHECK(bilinear_sample(fm, {-1, -1})[0] == 0.0);
    CHECK(bilinear_sample(fm, {1, -1})[0] == 1.0);
    CHECK(bilinear_sample(fm, {-1, 1})[0] == 2.0);
    CHECK(bilinear_sample(fm, {1, 1})[0] == 3.0);
    CHECK(bilinear_sample(fm, {0, 0})[0] == doctest::Approx(1.5).epsilon(1e-15));

    auto clamped = bilinear_sample(fm, {-2, 0});
    auto border = bilinear_sample(fm, {-1, 0});
    CHECK(clamped[0] == border[0]);

    // zero border pads with zeros: halfway outside keeps half the border value,
    // fully outside vanishes
    auto zero = bilinear_sample(fm, {-2, 0}, BorderMode::Zero);
    CHECK(zero[0] == doctest::Approx(0.5 * border[0]).epsilon(1e-12));
    auto far = bilinear_sample(fm, {-3.5, 0}, BorderMode::Zero);
    CHECK(far[0] == 0.0);
}

TEST_CASE("bilinear_sample: partition of unity on an all-ones map") {
    FeatureMap fm(5, 7, 3);
    std::fill(fm.data.begin(), fm.data.end(), 1.0);
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> dist(-1.8, 1.8);  // includes clamped regions
    for (int i = 0; i < 200; ++i) {
        auto v = bilinear_sample(fm, {dist(rng), dist(rng)});
        for (double x : v) CHECK(x == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("resample_local_features: matches the per-point composition oracle") {
    FeatureMap fm = random_map(4, 4, 2, 5);
    auto [pa, lat] = make_biplanar_rig(3.0, 2.0);
    auto grid = random_grid(9, 6);
    ResampledFeatures rf = resample_local_features(fm, pa, grid, 3, 3);
    REQUIRE(rf.h == 3);
    REQUIRE(rf.w == 3);
    REQUIRE(rf.c == 2);
    for (size_t i = 0; i < grid.size(); ++i) {
        auto ref = bilinear_sample(fm, project_point(pa, grid[i]).u);
        for (int ch = 0; ch < 2; ++ch)
            CHECK(std::abs(rf.data[i * 2 + ch] - ref[ch]) < 1e-12);
    }
}

TEST_CASE("resample_local_features: constant map gives constant output") {
    FeatureMap fm(6, 6, 2);
    for (size_t i = 0; i < fm.data.size(); i += 2) {
        fm.data[i] = 0.3;
        fm.data[i + 1] = -0.8;
    }
    auto [pa, lat] = make_biplanar_rig(3.0, 2.0);
    auto grid = random_grid(25, 7);
    ResampledFeatures rf = resample_local_features(fm, lat, grid, 5, 5);
    for (size_t i = 0; i < grid.size(); ++i) {
        CHECK(rf.data[i * 2] == doctest::Approx(0.3).epsilon(1e-12));
        CHECK(rf.data[i * 2 + 1] == doctest::Approx(-0.8).epsilon(1e-12));
    }
}

TEST_CASE("resample: linearity in the feature map") {
    auto [pa, lat] = make_biplanar_rig(3.0, 2.0);
    auto grid = random_grid(16, 8);
    FeatureMap f1 = random_map(4, 5, 3, 9);
    FeatureMap f2 = random_map(4, 5, 3, 10);
    double alpha = 2.75;
    FeatureMap combo(4, 5, 3);
    for (size_t i = 0; i < combo.data.size(); ++i)
        combo.data[i] = alpha * f1.data[i] + f2.data[i];
    auto r1 = resample_local_features(f1, pa, grid, 4, 4);
    auto r2 = resample_local_features(f2, pa, grid, 4, 4);
    auto rc = resample_local_features(combo, pa, grid, 4, 4);
    for (size_t i = 0; i < rc.data.size(); ++i)
        CHECK(rc.data[i] == doctest::Approx(alpha * r1.data[i] + r2.data[i]).epsilon(1e-9));
}

TEST_CASE("resample_backward: adjoint identity") {
    auto [pa, lat] = make_biplanar_rig(3.0, 2.0);
    std::mt19937_64 rng(12);
    std::uniform_real_distribution<double> dist(-1, 1);
    for (int trial = 0; trial < 10; ++trial) {
        FeatureMap fm = random_map(5, 4, 2, 100 + trial);
        auto grid = random_grid(12, 200 + trial);
        auto mf = resample_local_features(fm, pa, grid, 3, 4);
        ResampledFeatures g;
        g.h = 3; g.w = 4; g.c = 2;
        g.data.resize(mf.data.size());
        for (double& v : g.data) v = dist(rng);
        FeatureMap mtg = resample_backward(fm, pa, grid, 3, 4, g);

        double lhs = 0, rhs = 0;
        for (size_t i = 0; i < mf.data.size(); ++i) lhs += mf.data[i] * g.data[i];
        for (size_t i = 0; i < fm.data.size(); ++i) rhs += fm.data[i] * mtg.data[i];
        CHECK(lhs == doctest::Approx(rhs).epsilon(1e-9));
    }
}

TEST_CASE("resample_backward: zero upstream and node hits") {
    FeatureMap fm = random_map(4, 4, 1, 44);
    auto [pa, lat] = make_biplanar_rig(3.0, 2.0);
    auto grid = random_grid(4, 45);
    ResampledFeatures zero{2, 2, 1, std::vector<double>(4, 0.0)};
    FeatureMap g = resample_backward(fm, pa, grid, 2, 2, zero);
    for (double v : g.data) CHECK(v == 0.0);

    ResampledFeatures bad{2, 3, 1, std::vector<double>(6, 0.0)};
    CHECK_THROWS_AS(resample_backward(fm, pa, grid, 2, 2, bad), ParameterError);
}

TEST_CASE("resample_backward: matches central finite differences") {
    auto [pa, lat] = make_biplanar_rig(3.0, 2.0);
    FeatureMap fm = random_map(4, 4, 2, 77);
    auto grid = random_grid(9, 78);
    // scalarized loss: weighted sum of resampled outputs
    std::mt19937_64 rng(79);
    std::uniform_real_distribution<double> dist(-1, 1);
    ResampledFeatures wgt{3, 3, 2, {}};
    wgt.data.resize(18);
    for (double& v : wgt.data) v = dist(rng);

    auto loss = [&](const FeatureMap& m) {
        auto r = resample_local_features(m, pa, grid, 3, 3);
        double s = 0;
        for (size_t i = 0; i < r.data.size(); ++i) s += r.data[i] * wgt.data[i];
        return s;
    };
    FeatureMap analytic = resample_backward(fm, pa, grid, 3, 3, wgt);
    double h = 1e-6;
    for (size_t i = 0; i < fm.data.size(); ++i) {
        FeatureMap p = fm, m = fm;
        p.data[i] += h;
        m.data[i] -= h;
        double num = (loss(p) - loss(m)) / (2 * h);
        double a = analytic.data[i];
        CHECK(std::abs(num - a) / std::max(std::abs(num) + std::abs(a), 1.0) < 1e-4);
    }
}

TEST_CASE("resample_orthogonal: slices stacked along the dropped axis replicate") {
    // PA drops the y axis; coronal slices differ only in y
    PhantomSpec spec;
    Volume vol = generate_phantom(spec, {16, 16, 16});
    FeatureMap fm = random_map(6, 6, 3, 55);
    SliceSpec s1{Plane::Coronal, 2, std::nullopt, 0, 0};
    SliceSpec s2{Plane::Coronal, 12, std::nullopt, 0, 0};
    auto g1 = slice_coordinate_grid(vol, s1, 5, 5);
    auto g2 = slice_coordinate_grid(vol, s2, 5, 5);
    auto r1 = resample_orthogonal(fm, View::PA, g1, 5, 5);
    auto r2 = resample_orthogonal(fm, View::PA, g2, 5, 5);
    for (size_t i = 0; i < r1.data.size(); ++i) CHECK(r1.data[i] == r2.data[i]);
    CHECK(r1.h == 5);
    CHECK(r1.c == 3);
}

TEST_CASE("resample_orthogonal: telecentric limit of the perspective path") {
    // camera on the +y axis looking -y with focal/source_dist = 1 approaches
    // the PA parallel-beam projection u = (x, z)
    double s = 1e6;
    CameraPose cam;
    cam.rotation = Mat3::from_rows({1, 0, 0}, {0, 0, 1}, {0, -1, 0});
    cam.translation = (cam.rotation * Vec3{0, s, 0}) * -1.0;
    cam.focal = s;
    cam.validate();

    FeatureMap fm = random_map(4, 4, 2, 61);
    auto grid = random_grid(16, 62);
    auto persp = resample_local_features(fm, cam, grid, 4, 4);
    auto ortho = resample_orthogonal(fm, View::PA, grid, 4, 4);
    for (size_t i = 0; i < persp.data.size(); ++i)
        CHECK(std::abs(persp.data[i] - ortho.data[i]) <= 1e-3);
}

TEST_CASE("resample_op: autodiff forward matches vectorized path, adjoint holds") {
    using ad::Tensor;
    auto [pa, lat] = make_biplanar_rig(3.0, 2.0);
    int h = 4, w = 5, c = 3, gh = 3, gw = 4;
    FeatureMap fm = random_map(h, w, c, 91);
    auto grid = random_grid(gh * gw, 92);
    std::vector<Vec2> uv;
    for (const auto& x : grid) uv.push_back(project_point(pa, x).u);

    // channels-first tensor with the same content
    std::vector<double> chw(fm.data.size());
    for (int r = 0; r < h; ++r)
        for (int q = 0; q < w; ++q)
            for (int ch = 0; ch < c; ++ch)
                chw[(static_cast<size_t>(ch) * h + r) * w + q] = fm.at(r, q)[ch];
    Tensor fmt = Tensor::from_data({c, h, w}, chw, true);
    Tensor out = resample_op(fmt, uv, gh, gw);
    auto ref = resample_local_features(fm, pa, grid, gh, gw);
    for (int i = 0; i < gh * gw; ++i)
        for (int ch = 0; ch < c; ++ch)
            CHECK(std::abs(out.value()[static_cast<size_t>(ch) * gh * gw + i] -
                           ref.data[static_cast<size_t>(i) * c + ch]) < 1e-12);

    // sum-backward equals resample_backward of an all-ones upstream
    ad::sum_all(out).backward();
    ResampledFeatures ones{gh, gw, c, std::vector<double>(static_cast<size_t>(gh) * gw * c, 1.0)};
    FeatureMap gref = resample_backward(fm, pa, grid, gh, gw, ones);
    for (int r = 0; r < h; ++r)
        for (int q = 0; q < w; ++q)
            for (int ch = 0; ch < c; ++ch)
                CHECK(std::abs(fmt.grad()[(static_cast<size_t>(ch) * h + r) * w + q] -
                               gref.at(r, q)[ch]) < 1e-12);
}
