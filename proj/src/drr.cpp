#include "perx/drr.hpp"

#include <algorithm>
#include <cmath>

namespace perx {

double cast_ray(const Volume& vol, const Vec3& origin, const Vec3& dir, double step) {
    double n = dir.norm();
    if (n == 0) throw ParameterError("zero-length ray direction");
    if (std::abs(n - 1.0) > 1e-9) throw ParameterError("ray direction must be unit length");
    if (step <= 0) throw ParameterError("step must be > 0");

    Vec3 half = vol.half_extents();
    double t0 = -std::numeric_limits<double>::infinity();
    double t1 = std::numeric_limits<double>::infinity();
    const double o[3] = {origin.x, origin.y, origin.z};
    const double d[3] = {dir.x, dir.y, dir.z};
    const double hx[3] = {half.x, half.y, half.z};
    for (int k = 0; k < 3; ++k) {
        if (std::abs(d[k]) < 1e-15) {
            if (o[k] < -hx[k] || o[k] > hx[k]) return 0.0;
            continue;
        }
        double ta = (-hx[k] - o[k]) / d[k];
        double tb = (hx[k] - o[k]) / d[k];
        if (ta > tb) std::swap(ta, tb);
        t0 = std::max(t0, ta);
        t1 = std::min(t1, tb);
    }
    if (!(t0 < t1)) return 0.0;

    auto n_samples = static_cast<std::int64_t>(std::floor((t1 - t0) / step));
    double acc = 0;
    for (std::int64_t k = 0; k < n_samples; ++k) {
        double t = t0 + (k + 0.5) * step;
        acc += vol.sample_world(origin + dir * t);
    }
    return acc * step;
}

DRRImage render_drr(const Volume& vol, const CameraPose& pose, int h, int w, double step) {
    if (h < 8 || w < 8) throw ParameterError("DRR resolution must be >= 8");
    pose.validate();
    Vec3 src = pose.source_position();
    Mat3 rt = pose.rotation.transposed();

    DRRImage out;
    out.pose = pose;
    out.step = step;
    out.pixels = Image2D(h, w);

    parallel_for(h, [&](std::int64_t r0, std::int64_t r1) {
        for (std::int64_t r = r0; r < r1; ++r) {
            double uy = h == 1 ? 0.0 : -1.0 + 2.0 * static_cast<double>(r) / (h - 1);
            for (int c = 0; c < w; ++c) {
                double ux = w == 1 ? 0.0 : -1.0 + 2.0 * static_cast<double>(c) / (w - 1);
                Vec3 dir_cam{(ux - pose.principal_point.x) / pose.focal,
                             (uy - pose.principal_point.y) / pose.focal, 1.0};
                Vec3 dir = (rt * dir_cam).normalized();
                double p = cast_ray(vol, src, dir, step);
                out.pixels.at(static_cast<int>(r), c) = 1.0 - std::exp(-p);
            }
        }
    });

    double lo = *std::min_element(out.pixels.pix.begin(), out.pixels.pix.end());
    double hi = *std::max_element(out.pixels.pix.begin(), out.pixels.pix.end());
    if (hi > lo) {
        double inv = 1.0 / (hi - lo);
        for (double& v : out.pixels.pix) v = (v - lo) * inv;
    } else {
        std::fill(out.pixels.pix.begin(), out.pixels.pix.end(), 0.0);
    }
    return out;
}

std::pair<DRRImage, DRRImage> render_pair(const Volume& vol, const CameraPose& pa,
                                          const CameraPose& lat, int h, int w, double step) {
    return {render_drr(vol, pa, h, w, step), render_drr(vol, lat, h, w, step)};
}

}  // namespace perx
