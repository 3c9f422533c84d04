#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "perx/common.hpp"

namespace perx {

// Simple dense 2D image, row-major.
struct Image2D {
    int h = 0, w = 0;
    std::vector<double> pix;

    Image2D() = default;
    Image2D(int h_, int w_) : h(h_), w(w_), pix(static_cast<size_t>(h_) * w_, 0.0) {}
    double& at(int r, int c) { return pix[static_cast<size_t>(r) * w + c]; }
    double at(int r, int c) const { return pix[static_cast<size_t>(r) * w + c]; }
};

// 3D attenuation grid. Values in [0,1], data stored D-major then row-major
// (index order d,h,w). Immutable by convention after construction.
//
// World frame: the volume is centered at the origin and the longest physical
// extent maps to [-1,1]. Axis map: d -> world z, h -> world y, w -> world x.
struct Volume {
    std::array<int, 3> dims{0, 0, 0};           // D,H,W
    std::array<double, 3> spacing{1, 1, 1};     // mm/voxel along d,h,w
    std::array<double, 3> origin{0, 0, 0};      // world mm of voxel (0,0,0) center
    std::vector<float> data;

    float& at(int d, int h, int w) {
        return data[(static_cast<size_t>(d) * dims[1] + h) * dims[2] + w];
    }
    float at(int d, int h, int w) const {
        return data[(static_cast<size_t>(d) * dims[1] + h) * dims[2] + w];
    }

    // Physical extent (mm) between first and last voxel centers along axis k.
    double extent(int k) const { return (dims[k] - 1) * spacing[k]; }

    // Scale from mm to the normalized world frame.
    double world_scale() const;

    // Half sizes of the volume's bounding box in the normalized frame;
    // returned in world axis order (x,y,z).
    Vec3 half_extents() const;

    // Continuous voxel index (d,h,w) -> normalized world position.
    Vec3 index_to_world(double d, double h, double w) const;

    // Inverse of index_to_world.
    void world_to_index(const Vec3& p, double& d, double& h, double& w) const;

    // Trilinear interpolation at a normalized world position; 0 outside the box.
    double sample_world(const Vec3& p) const;

    // Trilinear interpolation at a continuous voxel index; 0 outside the grid.
    double sample_index(double d, double h, double w) const;

    void validate() const;
};

enum class Plane { Axial, Coronal, Sagittal };

const char* plane_name(Plane p);
Plane plane_from_name(const std::string& s);

// Number of slices along the plane normal.
int plane_extent(const Volume& vol, Plane p);
// Native (rows, cols) of a slice in that plane.
std::pair<int, int> slice_native_size(const Volume& vol, Plane p);

struct CropWindow {
    int row0 = 0, col0 = 0, rows = 0, cols = 0;
};

struct SliceSpec {
    Plane plane = Plane::Axial;
    int index = 0;
    std::optional<CropWindow> crop;
    int out_h = 0, out_w = 0;  // 0 = native
};

struct SliceSample {
    Image2D image;             // ground-truth slice resampled to out_res
    std::vector<Vec3> grid;    // world coordinates, row-major gh x gw
    int gh = 0, gw = 0;
};

// Extracts the ground-truth slice (bilinear, align-corners over the crop
// window) and the world coordinate grid at feature resolution (gh, gw).
SliceSample extract_slice(const Volume& vol, const SliceSpec& spec, int gh, int gw);

// Coordinate grid only (no image resampling).
std::vector<Vec3> slice_coordinate_grid(const Volume& vol, const SliceSpec& spec, int gh, int gw);

struct PhantomSpec {
    std::uint64_t seed = 0;
    int n_organs = 5;
    Vec3 body_axes{0.40, 0.35, 0.48};                 // fraction of extent per world axis x,y,z
    std::array<double, 2> body_density{0.20, 0.35};
    std::array<double, 2> organ_density{0.30, 0.70};
    double spine_density = 0.90;
    double spine_radius = 0.06;                       // fraction of extent
};

// Procedural phantom: body ellipsoid + axial high-density cylinder + random
// interior ellipsoids. Pure function of (spec, dims).
Volume generate_phantom(const PhantomSpec& spec, std::array<int, 3> dims);

// File format: one UTF-8 JSON header line, newline, then raw f32le payload.
void save_volume(const Volume& vol, const std::string& path);
Volume load_volume(const std::string& path);

// Same container with dims [1,H,W].
void save_image_raw(const Image2D& img, const std::string& path);
Image2D load_image_raw(const std::string& path);

// 8-bit grayscale PNG, min-max scaled.
void save_image_png(const Image2D& img, const std::string& path);

}  // namespace perx
