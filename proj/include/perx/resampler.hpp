#pragma once

#include <vector>

#include "perx/geometry.hpp"
#include "perx/tensor.hpp"

namespace perx {

enum class BorderMode { Clamp, Zero };

// Spatial grid of channel vectors over the normalized detector frame
// [-1,1]^2, align-corners. Storage is channels-last (h, w, c).
struct FeatureMap {
    int h = 0, w = 0, c = 0;
    std::vector<double> data;

    FeatureMap() = default;
    FeatureMap(int h_, int w_, int c_)
        : h(h_), w(w_), c(c_), data(static_cast<size_t>(h_) * w_ * c_, 0.0) {}

    double* at(int r, int col) { return data.data() + (static_cast<size_t>(r) * w + col) * c; }
    const double* at(int r, int col) const {
        return data.data() + (static_cast<size_t>(r) * w + col) * c;
    }
    void validate() const;
};

// Same layout, aligned with the slice coordinate grid.
struct ResampledFeatures {
    int h = 0, w = 0, c = 0;
    std::vector<double> data;
};

// Bilinear interpolation of the 4 nearest nodes at detector coordinate u.
// Clamp mode clamps u to the border; Zero mode treats outside as zeros.
std::vector<double> bilinear_sample(const FeatureMap& fm, const Vec2& u,
                                    BorderMode border = BorderMode::Clamp);

// Perspective path: fm value at project_point(pose, x_i).u for every grid point.
ResampledFeatures resample_local_features(const FeatureMap& fm, const CameraPose& pose,
                                          const std::vector<Vec3>& grid, int gh, int gw,
                                          BorderMode border = BorderMode::Clamp);

// Gradient of resample_local_features with respect to fm: scatters each
// upstream vector into its 4 source nodes with the bilinear weights.
FeatureMap resample_backward(const FeatureMap& fm, const CameraPose& pose,
                             const std::vector<Vec3>& grid, int gh, int gw,
                             const ResampledFeatures& upstream,
                             BorderMode border = BorderMode::Clamp);

// Parallel-beam ablation path using project_point_orthogonal.
ResampledFeatures resample_orthogonal(const FeatureMap& fm, View view,
                                      const std::vector<Vec3>& grid, int gh, int gw,
                                      BorderMode border = BorderMode::Clamp);

// Autodiff wrapper: fm is a (C,H,W) tensor, uv are precomputed detector
// coordinates (row-major gh x gw); output is (C,gh,gw). Gradients flow to fm
// only, not to the sampling coordinates.
ad::Tensor resample_op(const ad::Tensor& fm, const std::vector<Vec2>& uv, int gh, int gw,
                       BorderMode border = BorderMode::Clamp);

// Debug dump of a resampled grid as raw f32le with JSON header.
void dump_resampled(const ResampledFeatures& rf, const std::string& path);

}  // namespace perx
