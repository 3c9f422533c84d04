#pragma once

#include "perx/geometry.hpp"
#include "perx/volume.hpp"

namespace perx {

struct DRRImage {
    Image2D pixels;
    CameraPose pose;
    double step = 1.0 / 128.0;
};

// Path integral of attenuation along origin + t*dir, sampled at uniform
// steps strictly inside the volume's bounding box (midpoint offsets),
// trilinear interpolation, 0 outside the grid. Returns 0 on a miss.
double cast_ray(const Volume& vol, const Vec3& origin, const Vec3& dir, double step);

// Perspective DRR: one ray per pixel center in [-1,1]^2 (align-corners),
// intensity 1 - exp(-P), then min-max normalized over the image.
DRRImage render_drr(const Volume& vol, const CameraPose& pose, int h, int w, double step);

std::pair<DRRImage, DRRImage> render_pair(const Volume& vol, const CameraPose& pa,
                                          const CameraPose& lat, int h, int w,
                                          double step = 1.0 / 128.0);

}  // namespace perx
