#pragma once

#include <string>
#include <utility>

#include "perx/common.hpp"

namespace perx {

enum class View { PA, Lat };

const char* view_name(View v);
View view_from_name(const std::string& s);

// Pinhole camera. The camera frame looks along +z; world -> camera is
// p = R*x + t. Detector coordinates u are normalized to [-1,1]^2.
struct CameraPose {
    Mat3 rotation;
    Vec3 translation;
    double focal = 2.0;
    Vec2 principal_point{0, 0};
    View view = View::PA;

    Vec3 source_position() const;        // camera center in world frame
    Vec3 optical_axis() const;           // viewing direction in world frame
    void validate() const;               // orthonormality, det, focal

    std::string to_json() const;
    static CameraPose from_json(const std::string& text);
};

struct ProjectionPoint {
    Vec2 u;
    double depth = 0;
};

// Two perpendicular cameras: PA source at (0,-source_dist,0) looking +y,
// lateral source at (+source_dist,0,0) looking -x; both axes pass through
// the origin.
std::pair<CameraPose, CameraPose> make_biplanar_rig(double source_dist, double focal);

constexpr double kMinProjectionDepth = 1e-6;

// Perspective projection with division by depth. Throws ProjectionError when
// the point is at or behind the source plane.
ProjectionPoint project_point(const CameraPose& pose, const Vec3& x);

// Parallel-beam variant: drops the coordinate along the view axis and returns
// the remaining two world coordinates as detector coordinates.
Vec2 project_point_orthogonal(View view, const Vec3& x);

}  // namespace perx
