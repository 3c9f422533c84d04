#include "perx/geometry.hpp"

#include <cmath>

#include <json.hpp>

namespace perx {

using nlohmann::json;

const char* view_name(View v) { return v == View::PA ? "PA" : "Lat"; }

View view_from_name(const std::string& s) {
    if (s == "PA") return View::PA;
    if (s == "Lat") return View::Lat;
    throw ParameterError("unknown view: " + s);
}

Vec3 CameraPose::source_position() const {
    // C = -R^T t
    return rotation.transposed() * (translation * -1.0);
}

Vec3 CameraPose::optical_axis() const {
    Mat3 rt = rotation.transposed();
    return {rt(0, 2), rt(1, 2), rt(2, 2)};
}

void CameraPose::validate() const {
    Mat3 rtr = rotation.transposed() * rotation;
    double worst = 0;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
            worst = std::max(worst, std::abs(rtr(i, j) - (i == j ? 1.0 : 0.0)));
    if (worst > 1e-9) throw GeometryError("camera rotation is not orthonormal");
    if (std::abs(rotation.det() - 1.0) > 1e-9)
        throw GeometryError("camera rotation must have det 1");
    if (focal <= 0) throw GeometryError("focal must be > 0");
}

std::string CameraPose::to_json() const {
    json j{{"rotation", rotation.m},
           {"translation", std::array<double, 3>{translation.x, translation.y, translation.z}},
           {"focal", focal},
           {"principal_point", std::array<double, 2>{principal_point.x, principal_point.y}},
           {"view", view_name(view)}};
    return j.dump();
}

CameraPose CameraPose::from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw FormatError(std::string("bad camera JSON: ") + e.what());
    }
    CameraPose p;
    auto rot = j.at("rotation").get<std::array<double, 9>>();
    p.rotation.m = rot;
    auto t = j.at("translation").get<std::array<double, 3>>();
    p.translation = {t[0], t[1], t[2]};
    p.focal = j.at("focal").get<double>();
    auto pp = j.at("principal_point").get<std::array<double, 2>>();
    p.principal_point = {pp[0], pp[1]};
    p.view = view_from_name(j.at("view").get<std::string>());
    p.validate();
    return p;
}

std::pair<CameraPose, CameraPose> make_biplanar_rig(double source_dist, double focal) {
    if (focal <= 0) throw GeometryError("focal must be > 0");
    // the unit cube's bounding sphere has radius sqrt(3)
    if (source_dist <= std::sqrt(3.0))
        throw GeometryError("source distance places the source inside the volume bounding sphere");

    CameraPose pa;
    pa.view = View::PA;
    pa.rotation = Mat3::from_rows({1, 0, 0}, {0, 0, -1}, {0, 1, 0});
    Vec3 pa_src{0, -source_dist, 0};
    pa.translation = (pa.rotation * pa_src) * -1.0;
    pa.focal = focal;

    CameraPose lat;
    lat.view = View::Lat;
    lat.rotation = Mat3::from_rows({0, 1, 0}, {0, 0, -1}, {-1, 0, 0});
    Vec3 lat_src{source_dist, 0, 0};
    lat.translation = (lat.rotation * lat_src) * -1.0;
    lat.focal = focal;

    pa.validate();
    lat.validate();
    return {pa, lat};
}

ProjectionPoint project_point(const CameraPose& pose, const Vec3& x) {
    if (!std::isfinite(x.x) || !std::isfinite(x.y) || !std::isfinite(x.z))
        throw ParameterError("non-finite point");
    Vec3 p = pose.rotation * x + pose.translation;
    if (p.z <= kMinProjectionDepth)
        throw ProjectionError("point at or behind the X-ray source");
    ProjectionPoint out;
    out.depth = p.z;
    out.u = {pose.principal_point.x + pose.focal * p.x / p.z,
             pose.principal_point.y + pose.focal * p.y / p.z};
    return out;
}

Vec2 project_point_orthogonal(View view, const Vec3& x) {
    if (!std::isfinite(x.x) || !std::isfinite(x.y) || !std::isfinite(x.z))
        throw ParameterError("non-finite point");
    if (view == View::PA) return {x.x, x.z};
    return {x.y, x.z};
}

}  // namespace perx
