#include <doctest.h>

#include <cmath>
#include <random>

#include "perx/geometry.hpp"

using namespace perx;

namespace {

Mat3 rot_z(double theta) {
    double c = std::cos(theta), s = std::sin(theta);
    return Mat3::from_rows({c, -s, 0}, {s, c, 0}, {0, 0, 1});
}

}  // namespace

TEST_CASE("rig: perpendicular axes through the origin") {
    auto [pa, lat] = make_biplanar_rig(3.0, 2.0);
    Vec3 apa = pa.optical_axis();
    Vec3 alat = lat.optical_axis();
    CHECK(std::abs(apa.dot(alat)) < 1e-12);

    ProjectionPoint upa = project_point(pa, {0, 0, 0});
    ProjectionPoint ulat = project_point(lat, {0, 0, 0});
    CHECK(std::abs(upa.u.x - pa.principal_point.x) < 1e-12);
    CHECK(std::abs(upa.u.y - pa.principal_point.y) < 1e-12);
    CHECK(std::abs(ulat.u.x) < 1e-12);
    CHECK(std::abs(ulat.u.y) < 1e-12);

    Vec3 src = pa.source_position();
    CHECK(src.x == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(src.y == doctest::Approx(-3.0).epsilon(1e-12));
    CHECK(src.z == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("rig: source inside the bounding sphere rejected") {
    CHECK_THROWS_AS(make_biplanar_rig(1.2, 2.0), GeometryError);
    CHECK_THROWS_AS(make_biplanar_rig(3.0, -1.0), GeometryError);
    CHECK_NOTHROW(make_biplanar_rig(1.8, 2.0));
}

TEST_CASE("project_point: perspective magnification by similar triangles") {
    // source at distance 3, detector at distance 6 -> transverse magnification 2
    auto [pa, lat] = make_biplanar_rig(3.0, 6.0);
    ProjectionPoint p = project_point(pa, {0.5, 0, 0});
    CHECK(p.depth == doctest::Approx(3.0).epsilon(1e-12));
    CHECK(std::abs(p.u.x - 1.0) < 1e-9);
    CHECK(std::abs(p.u.y - 0.0) < 1e-9);
}

TEST_CASE("project_point: collinear points share a projection") {
    auto [pa, lat] = make_biplanar_rig(3.0, 2.0);
    std::mt19937_64 rng(99);
    std::uniform_real_distribution<double> dist(-0.6, 0.6);
    for (int trial = 0; trial < 50; ++trial) {
        for (const CameraPose& cam : {pa, lat}) {
            Vec3 src = cam.source_position();
            Vec3 target{dist(rng), dist(rng), dist(rng)};
            Vec3 dir = (target - src).normalized();
            Vec2 u1 = project_point(cam, src + dir * 2.0).u;
            Vec2 u2 = project_point(cam, src + dir * 3.5).u;
            CHECK(std::abs(u1.x - u2.x) < 1e-9);
            CHECK(std::abs(u1.y - u2.y) < 1e-9);
        }
    }
}

TEST_CASE("project_point: transverse scale equivariance") {
    auto [pa, lat] = make_biplanar_rig(3.0, 2.0);
    Vec3 x{0.21, 0.1, -0.33};        // fixed depth along the PA axis
    Vec3 x2{0.42, 0.1, -0.66};
    Vec2 u = project_point(pa, x).u;
    Vec2 u2 = project_point(pa, x2).u;
    CHECK(std::abs(u2.x - 2 * u.x) < 1e-12);
    CHECK(std::abs(u2.y - 2 * u.y) < 1e-12);
}

TEST_CASE("project_point: behind-source rejection") {
    auto [pa, lat] = make_biplanar_rig(3.0, 2.0);
    CHECK_THROWS_AS(project_point(pa, {0, -5.0, 0}), ProjectionError);
    CHECK_THROWS_AS(project_point(pa, {0, -3.0, 0.2}), ProjectionError);
}

TEST_CASE("project_point: rotation invariance") {
    auto [pa, lat] = make_biplanar_rig(3.0, 2.0);
    Mat3 rw = rot_z(0.7);
    CameraPose rotated = pa;
    rotated.rotation = pa.rotation * rw;
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> dist(-0.5, 0.5);
    Mat3 rwt = rw.transposed();
    for (int i = 0; i < 20; ++i) {
        Vec3 x{dist(rng), dist(rng), dist(rng)};
        Vec2 a = project_point(pa, x).u;
        Vec2 b = project_point(rotated, rwt * x).u;
        CHECK(std::abs(a.x - b.x) < 1e-9);
        CHECK(std::abs(a.y - b.y) < 1e-9);
    }
}

TEST_CASE("orthogonal projection drops the view axis") {
    Vec2 u = project_point_orthogonal(View::PA, {0.5, 0.77, -0.25});
    CHECK(u.x == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(u.y == doctest::Approx(-0.25).epsilon(1e-15));
    for (double y : {-1.0, -0.3, 0.2, 1.0}) {
        Vec2 v = project_point_orthogonal(View::PA, {0.5, y, -0.25});
        CHECK(v.x == u.x);
        CHECK(v.y == u.y);
    }
    Vec2 w = project_point_orthogonal(View::Lat, {0.5, 0.3, -0.25});
    CHECK(w.x == doctest::Approx(0.3).epsilon(1e-15));
    CHECK(w.y == doctest::Approx(-0.25).epsilon(1e-15));
}

TEST_CASE("perspective depends on depth where orthogonal does not") {
    auto [pa, lat] = make_biplanar_rig(3.0, 2.0);
    Vec3 x{0.4, 0.2, 0.1};
    double k = 1.5;
    Vec3 scaled{0.4 * k, 0.2, 0.1 * k};
    // not a similar-triangles pair: moving transverse coords at fixed depth moves u
    Vec2 up1 = project_point(pa, x).u;
    Vec2 up2 = project_point(pa, scaled).u;
    CHECK(std::abs(up1.x - up2.x) > 1e-6);
    // changing only the dropped coordinate never moves the orthogonal projection
    Vec2 uo1 = project_point_orthogonal(View::PA, x);
    Vec2 uo2 = project_point_orthogonal(View::PA, {0.4, 0.9, 0.1});
    CHECK(uo1.x == uo2.x);
    CHECK(uo1.y == uo2.y);
    // while perspective does move
    Vec2 up3 = project_point(pa, {0.4, 0.9, 0.1}).u;
    CHECK(std::abs(up1.x - up3.x) > 1e-6);
}

TEST_CASE("camera pose: validation and JSON round-trip") {
    auto [pa, lat] = make_biplanar_rig(3.0, 2.0);
    CameraPose back = CameraPose::from_json(pa.to_json());
    CHECK(back.focal == pa.focal);
    CHECK(back.view == View::PA);
    for (int i = 0; i < 9; ++i) CHECK(back.rotation.m[i] == pa.rotation.m[i]);
    CHECK(back.translation.y == pa.translation.y);

    CameraPose bad = pa;
    bad.rotation.m[0] = 1.5;
    CHECK_THROWS_AS(bad.validate(), GeometryError);
    bad = pa;
    bad.focal = 0;
    CHECK_THROWS_AS(bad.validate(), GeometryError);
}
