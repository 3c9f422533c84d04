#include "perx/volume.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>

#include <json.hpp>

namespace perx {

using nlohmann::json;

double Volume::world_scale() const {
    double m = std::max({extent(0), extent(1), extent(2)});
    return 2.0 / m;
}

Vec3 Volume::half_extents() const {
    double s = world_scale() * 0.5;
    // axis order d,h,w -> world z,y,x
    return {extent(2) * s, extent(1) * s, extent(0) * s};
}

Vec3 Volume::index_to_world(double d, double h, double w) const {
    double s = world_scale();
    return {(w * spacing[2] - extent(2) * 0.5) * s,
            (h * spacing[1] - extent(1) * 0.5) * s,
            (d * spacing[0] - extent(0) * 0.5) * s};
}

void Volume::world_to_index(const Vec3& p, double& d, double& h, double& w) const {
    double s = world_scale();
    d = (p.z / s + extent(0) * 0.5) / spacing[0];
    h = (p.y / s + extent(1) * 0.5) / spacing[1];
    w = (p.x / s + extent(2) * 0.5) / spacing[2];
}

double Volume::sample_index(double d, double h, double w) const {
    if (d < 0 || h < 0 || w < 0 || d > dims[0] - 1 || h > dims[1] - 1 || w > dims[2] - 1)
        return 0.0;
    int d0 = std::min(static_cast<int>(d), dims[0] - 2);
    int h0 = std::min(static_cast<int>(h), dims[1] - 2);
    int w0 = std::min(static_cast<int>(w), dims[2] - 2);
    d0 = std::max(d0, 0);
    h0 = std::max(h0, 0);
    w0 = std::max(w0, 0);
    double fd = d - d0, fh = h - h0, fw = w - w0;
    double acc = 0;
    for (int dd = 0; dd < 2; ++dd)
        for (int dh = 0; dh < 2; ++dh)
            for (int dw = 0; dw < 2; ++dw) {
                double wgt = (dd ? fd : 1 - fd) * (dh ? fh : 1 - fh) * (dw ? fw : 1 - fw);
                acc += wgt * at(d0 + dd, h0 + dh, w0 + dw);
            }
    return acc;
}

double Volume::sample_world(const Vec3& p) const {
    double d, h, w;
    world_to_index(p, d, h, w);
    return sample_index(d, h, w);
}

void Volume::validate() const {
    for (int k = 0; k < 3; ++k) {
        if (dims[k] < 2) throw ParameterError("volume dims must be >= 2");
        if (spacing[k] <= 0) throw ParameterError("volume spacing must be > 0");
    }
    if (data.size() != static_cast<size_t>(dims[0]) * dims[1] * dims[2])
        throw ParameterError("volume data length does not match dims");
    for (float v : data) {
        if (!std::isfinite(v)) throw DataError("volume contains non-finite values");
        if (v < 0.0f || v > 1.0f) throw DataError("volume values outside [0,1]");
    }
}

const char* plane_name(Plane p) {
    switch (p) {
        case Plane::Axial: return "axial";
        case Plane::Coronal: return "coronal";
        default: return "sagittal";
    }
}

Plane plane_from_name(const std::string& s) {
    if (s == "axial") return Plane::Axial;
    if (s == "coronal") return Plane::Coronal;
    if (s == "sagittal") return Plane::Sagittal;
    throw ParameterError("unknown plane: " + s);
}

int plane_extent(const Volume& vol, Plane p) {
    switch (p) {
        case Plane::Axial: return vol.dims[0];
        case Plane::Coronal: return vol.dims[1];
        default: return vol.dims[2];
    }
}

std::pair<int, int> slice_native_size(const Volume& vol, Plane p) {
    switch (p) {
        case Plane::Axial: return {vol.dims[1], vol.dims[2]};
        case Plane::Coronal: return {vol.dims[0], vol.dims[2]};
        default: return {vol.dims[0], vol.dims[1]};
    }
}

namespace {

// Slice pixel (r,c) at slice index n -> continuous voxel index (d,h,w).
void slice_to_index(Plane p, int n, double r, double c, double& d, double& h, double& w) {
    switch (p) {
        case Plane::Axial: d = n; h = r; w = c; break;
        case Plane::Coronal: d = r; h = n; w = c; break;
        default: d = r; h = c; w = n; break;
    }
}

CropWindow resolve_crop(const Volume& vol, const SliceSpec& spec) {
    auto [rows, cols] = slice_native_size(vol, spec.plane);
    if (!spec.crop) return {0, 0, rows, cols};
    const CropWindow& c = *spec.crop;
    if (c.rows < 2 || c.cols < 2) throw BoundsError("crop window too small");
    if (c.row0 < 0 || c.col0 < 0 || c.row0 + c.rows > rows || c.col0 + c.cols > cols)
        throw BoundsError("crop window outside slice");
    return c;
}

void check_spec(const Volume& vol, const SliceSpec& spec) {
    int ext = plane_extent(vol, spec.plane);
    if (spec.index < 0 || spec.index >= ext)
        throw BoundsError("slice index out of range");
}

// Align-corners position: k-th of n samples spanning [lo, lo+len-1].
double lerp_pos(int lo, int len, int k, int n) {
    if (n == 1) return lo + (len - 1) * 0.5;
    return lo + static_cast<double>(k) * (len - 1) / (n - 1);
}

}  // namespace

std::vector<Vec3> slice_coordinate_grid(const Volume& vol, const SliceSpec& spec, int gh, int gw) {
    check_spec(vol, spec);
    CropWindow win = resolve_crop(vol, spec);
    std::vector<Vec3> grid;
    grid.reserve(static_cast<size_t>(gh) * gw);
    for (int k = 0; k < gh; ++k) {
        double r = lerp_pos(win.row0, win.rows, k, gh);
        for (int j = 0; j < gw; ++j) {
            double c = lerp_pos(win.col0, win.cols, j, gw);
            double d, h, w;
            slice_to_index(spec.plane, spec.index, r, c, d, h, w);
            grid.push_back(vol.index_to_world(d, h, w));
        }
    }
    return grid;
}

SliceSample extract_slice(const Volume& vol, const SliceSpec& spec, int gh, int gw) {
    check_spec(vol, spec);
    CropWindow win = resolve_crop(vol, spec);
    auto [nrows, ncols] = slice_native_size(vol, spec.plane);
    int oh = spec.out_h > 0 ? spec.out_h : nrows;
    int ow = spec.out_w > 0 ? spec.out_w : ncols;

    SliceSample out;
    out.image = Image2D(oh, ow);
    for (int p = 0; p < oh; ++p) {
        double r = lerp_pos(win.row0, win.rows, p, oh);
        for (int q = 0; q < ow; ++q) {
            double c = lerp_pos(win.col0, win.cols, q, ow);
            double d, h, w;
            slice_to_index(spec.plane, spec.index, r, c, d, h, w);
            out.image.at(p, q) = vol.sample_index(d, h, w);
        }
    }
    out.grid = slice_coordinate_grid(vol, spec, gh, gw);
    out.gh = gh;
    out.gw = gw;
    return out;
}

// ---------------------------------------------------------------------------
// Phantom generation

namespace {

struct Ellipsoid {
    Vec3 center;
    Vec3 semi;  // semi-axes in normalized world units
    double density;

    bool contains(const Vec3& p) const {
        double u = (p.x - center.x) / semi.x;
        double v = (p.y - center.y) / semi.y;
        double w = (p.z - center.z) / semi.z;
        return u * u + v * v + w * w <= 1.0;
    }
};

}  // namespace

Volume generate_phantom(const PhantomSpec& spec, std::array<int, 3> dims) {
    for (int k = 0; k < 3; ++k)
        if (dims[k] < 16) throw ParameterError("phantom dims must be >= 16");
    if (spec.n_organs < 0) throw ParameterError("n_organs must be >= 0");
    auto check_range = [](const std::array<double, 2>& r, const char* what) {
        if (r[0] < 0 || r[1] > 1 || r[0] > r[1])
            throw ParameterError(std::string("density range invalid for ") + what);
    };
    check_range(spec.body_density, "body");
    check_range(spec.organ_density, "organs");
    if (spec.spine_density < 0 || spec.spine_density > 1)
        throw ParameterError("spine density outside [0,1]");
    for (int k = 0; k < 3; ++k) {
        double a = spec.body_axes[k];
        if (a <= 0 || a > 0.5) throw ParameterError("body axes must be in (0, 0.5]");
    }

    Volume vol;
    vol.dims = dims;
    vol.spacing = {1, 1, 1};
    vol.data.assign(static_cast<size_t>(dims[0]) * dims[1] * dims[2], 0.0f);
    Vec3 half = vol.half_extents();

    std::mt19937_64 rng(spec.seed);
    auto uniform = [&rng](double lo, double hi) {
        return std::uniform_real_distribution<double>(lo, hi)(rng);
    };

    // semi-axes as fractions of the full extent per world axis
    Ellipsoid body{{0, 0, 0},
                   {spec.body_axes.x * 2 * half.x, spec.body_axes.y * 2 * half.y,
                    spec.body_axes.z * 2 * half.z},
                   uniform(spec.body_density[0], spec.body_density[1])};

    std::vector<Ellipsoid> organs;
    for (int i = 0; i < spec.n_organs; ++i) {
        Ellipsoid e;
        e.center = {uniform(-0.55, 0.55) * body.semi.x, uniform(-0.55, 0.55) * body.semi.y,
                    uniform(-0.55, 0.55) * body.semi.z};
        e.semi = {uniform(0.08, 0.30) * body.semi.x, uniform(0.08, 0.30) * body.semi.y,
                  uniform(0.08, 0.35) * body.semi.z};
        e.density = uniform(spec.organ_density[0], spec.organ_density[1]);
        organs.push_back(e);
    }

    // spine: axial cylinder toward the back of the body (-y side)
    double spine_r = spec.spine_radius * 2 * std::min(half.x, half.y);
    double spine_cy = -0.55 * body.semi.y;

    for (int d = 0; d < dims[0]; ++d)
        for (int h = 0; h < dims[1]; ++h)
            for (int w = 0; w < dims[2]; ++w) {
                Vec3 p = vol.index_to_world(d, h, w);
                double val = 0.0;
                if (body.contains(p)) {
                    val = body.density;
                    for (const auto& e : organs)
                        if (e.contains(p)) val = e.density;
                    double dx = p.x, dy = p.y - spine_cy;
                    double zr = p.z / body.semi.z;
                    if (dx * dx + dy * dy <= spine_r * spine_r && std::abs(zr) <= 0.9)
                        val = spec.spine_density;
                }
                vol.at(d, h, w) = static_cast<float>(std::clamp(val, 0.0, 1.0));
            }
    return vol;
}

// ---------------------------------------------------------------------------
// File I/O

namespace {

void write_payload(std::ofstream& f, const json& header, const float* data, size_t count) {
    std::string head = header.dump();
    f.write(head.data(), static_cast<std::streamsize>(head.size()));
    f.put('\n');
    f.write(reinterpret_cast<const char*>(data),
            static_cast<std::streamsize>(count * sizeof(float)));
}

json read_header(std::ifstream& f, const std::string& path) {
    std::string line;
    if (!std::getline(f, line)) throw FormatError("missing header line in " + path);
    json j;
    try {
        j = json::parse(line);
    } catch (const json::exception& e) {
        throw FormatError("bad JSON header in " + path + ": " + e.what());
    }
    if (!j.contains("dims") || !j.contains("dtype"))
        throw FormatError("header missing dims/dtype in " + path);
    if (j["dtype"] != "f32le") throw FormatError("unsupported dtype in " + path);
    return j;
}

std::vector<float> read_payload(std::ifstream& f, size_t count, const std::string& path) {
    std::vector<float> buf(count);
    f.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(count * sizeof(float)));
    size_t got = static_cast<size_t>(f.gcount());
    // a trailing byte probe detects oversized payloads
    char extra;
    bool more = static_cast<bool>(f.read(&extra, 1));
    if (got != count * sizeof(float) || more)
        throw FormatError("payload size mismatch in " + path + ": expected " +
                          std::to_string(count * sizeof(float)) + " bytes, got " +
                          std::to_string(got + (more ? 1u : 0u)) + (more ? "+ bytes" : " bytes"));
    return buf;
}

}  // namespace

void save_volume(const Volume& vol, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw FormatError("cannot open for write: " + path);
    json j{{"dims", vol.dims}, {"spacing", vol.spacing}, {"origin", vol.origin},
           {"dtype", "f32le"}};
    write_payload(f, j, vol.data.data(), vol.data.size());
    if (!f) throw FormatError("write failed: " + path);
}

Volume load_volume(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw FormatError("cannot open: " + path);
    json j = read_header(f, path);
    Volume vol;
    auto dims = j["dims"].get<std::vector<int>>();
    if (dims.size() != 3) throw FormatError("dims must have 3 entries in " + path);
    vol.dims = {dims[0], dims[1], dims[2]};
    if (j.contains("spacing")) {
        auto sp = j["spacing"].get<std::vector<double>>();
        if (sp.size() != 3) throw FormatError("spacing must have 3 entries in " + path);
        vol.spacing = {sp[0], sp[1], sp[2]};
    }
    if (j.contains("origin")) {
        auto o = j["origin"].get<std::vector<double>>();
        if (o.size() != 3) throw FormatError("origin must have 3 entries in " + path);
        vol.origin = {o[0], o[1], o[2]};
    }
    for (int k = 0; k < 3; ++k)
        if (vol.dims[k] < 1) throw FormatError("non-positive dims in " + path);
    size_t count = static_cast<size_t>(vol.dims[0]) * vol.dims[1] * vol.dims[2];
    vol.data = read_payload(f, count, path);
    for (float v : vol.data)
        if (!std::isfinite(v)) throw DataError("non-finite value in " + path);
    return vol;
}

void save_image_raw(const Image2D& img, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw FormatError("cannot open for write: " + path);
    json j{{"dims", std::array<int, 3>{1, img.h, img.w}}, {"dtype", "f32le"}};
    std::vector<float> buf(img.pix.begin(), img.pix.end());
    write_payload(f, j, buf.data(), buf.size());
    if (!f) throw FormatError("write failed: " + path);
}

Image2D load_image_raw(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw FormatError("cannot open: " + path);
    json j = read_header(f, path);
    auto dims = j["dims"].get<std::vector<int>>();
    if (dims.size() != 3 || dims[0] != 1) throw FormatError("expected dims [1,H,W] in " + path);
    Image2D img(dims[1], dims[2]);
    auto buf = read_payload(f, img.pix.size(), path);
    for (size_t i = 0; i < buf.size(); ++i) {
        if (!std::isfinite(buf[i])) throw DataError("non-finite value in " + path);
        img.pix[i] = buf[i];
    }
    return img;
}

}  // namespace perx
