#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "perx/metrics.hpp"
#include "perx/model.hpp"
#include "perx/training.hpp"

namespace py = pybind11;
using namespace perx;

namespace {

Volume volume_from_array(py::array_t<float, py::array::c_style | py::array::forcecast> arr) {
    if (arr.ndim() != 3) throw ParameterError("volume array must be 3-D (depth, height, width)");
    Volume vol;
    vol.dims = {static_cast<int>(arr.shape(0)), static_cast<int>(arr.shape(1)),
                static_cast<int>(arr.shape(2))};
    vol.data.assign(arr.data(), arr.data() + arr.size());
    vol.validate();
    return vol;
}

py::array_t<float> volume_to_array(const Volume& vol) {
    py::array_t<float> arr({vol.dims[0], vol.dims[1], vol.dims[2]});
    std::copy(vol.data.begin(), vol.data.end(), arr.mutable_data());
    return arr;
}

Image2D image_from_array(py::array_t<double, py::array::c_style | py::array::forcecast> arr) {
    if (arr.ndim() != 2) throw ParameterError("image array must be 2-D");
    Image2D img(static_cast<int>(arr.shape(0)), static_cast<int>(arr.shape(1)));
    std::copy(arr.data(), arr.data() + arr.size(), img.pix.begin());
    return img;
}

py::array_t<double> image_to_array(const Image2D& img) {
    py::array_t<double> arr({img.h, img.w});
    std::copy(img.pix.begin(), img.pix.end(), arr.mutable_data());
    return arr;
}

CameraPose rig_pose(double source_dist, double focal, const std::string& view) {
    auto [pa, lat] = make_biplanar_rig(source_dist, focal);
    if (view == "pa") return pa;
    if (view == "lat") return lat;
    throw ParameterError("view must be 'pa' or 'lat'");
}

}  // namespace

PYBIND11_MODULE(perxct, m) {
    m.doc() = "Biplanar X-ray to CT slice reconstruction core";

    py::register_exception<Error>(m, "PerxError", PyExc_RuntimeError);

    m.def(
        "generate_phantom",
        [](std::uint64_t seed, int dims, int n_organs) {
            PhantomSpec spec;
            spec.seed = seed;
            spec.n_organs = n_organs;
            return volume_to_array(generate_phantom(spec, {dims, dims, dims}));
        },
        py::arg("seed"), py::arg("dims") = 64, py::arg("organs") = 5,
        "Procedural phantom volume as a (dims, dims, dims) float32 array");

    m.def(
        "save_volume",
        [](py::array_t<float, py::array::c_style | py::array::forcecast> arr,
           const std::string& path) { save_volume(volume_from_array(arr), path); },
        py::arg("volume"), py::arg("path"));

    m.def(
        "load_volume", [](const std::string& path) { return volume_to_array(load_volume(path)); },
        py::arg("path"));

    m.def(
        "project_point",
        [](double x, double y, double z, const std::string& view, double source_dist,
           double focal) {
            ProjectionPoint p = project_point(rig_pose(source_dist, focal, view), {x, y, z});
            return py::make_tuple(p.u.x, p.u.y, p.depth);
        },
        py::arg("x"), py::arg("y"), py::arg("z"), py::arg("view") = "pa",
        py::arg("source_dist") = 3.0, py::arg("focal") = 2.0,
        "Perspective projection onto the rig detector: (u, v, depth)");

    m.def(
        "render_drr",
        [](py::array_t<float, py::array::c_style | py::array::forcecast> arr,
           const std::string& view, int res, double step, double source_dist, double focal) {
            Volume vol = volume_from_array(arr);
            DRRImage img = render_drr(vol, rig_pose(source_dist, focal, view), res, res, step);
            return image_to_array(img.pixels);
        },
        py::arg("volume"), py::arg("view") = "pa", py::arg("res") = 64,
        py::arg("step") = 1.0 / 128, py::arg("source_dist") = 3.0, py::arg("focal") = 2.0,
        "Ray-cast X-ray of the volume, min-max normalized to [0, 1]");

    m.def(
        "extract_slice",
        [](py::array_t<float, py::array::c_style | py::array::forcecast> arr,
           const std::string& plane, int index) {
            Volume vol = volume_from_array(arr);
            SliceSpec spec{plane_from_name(plane), index, std::nullopt, 0, 0};
            auto [gh, gw] = slice_native_size(vol, spec.plane);
            return image_to_array(extract_slice(vol, spec, gh, gw).image);
        },
        py::arg("volume"), py::arg("plane"), py::arg("index"),
        "Native-resolution slice of the volume along axial/coronal/sagittal");

    m.def(
        "positional_encoding",
        [](double x, double y, double z, int L) {
            auto pe = positional_encoding({x, y, z}, L);
            py::array_t<double> arr(static_cast<py::ssize_t>(pe.size()));
            std::copy(pe.begin(), pe.end(), arr.mutable_data());
            return arr;
        },
        py::arg("x"), py::arg("y"), py::arg("z"), py::arg("freqs") = 10,
        "Sinusoidal coordinate features: [x, y, z] plus sin/cos at 2^k * pi");

    m.def(
        "psnr",
        [](py::array_t<double, py::array::c_style | py::array::forcecast> a,
           py::array_t<double, py::array::c_style | py::array::forcecast> b) {
            return psnr(image_from_array(a), image_from_array(b));
        },
        py::arg("a"), py::arg("b"));

    m.def(
        "ssim",
        [](py::array_t<double, py::array::c_style | py::array::forcecast> a,
           py::array_t<double, py::array::c_style | py::array::forcecast> b) {
            return ssim(image_from_array(a), image_from_array(b));
        },
        py::arg("a"), py::arg("b"));

    m.def("set_max_threads", &set_max_threads, py::arg("n"),
          "Cap worker threads (1 = bit-deterministic, 0 = hardware)");
}
