#include "perx/resampler.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

namespace perx {

void FeatureMap::validate() const {
    if (h < 2 || w < 2) throw ParameterError("feature map must be at least 2x2");
    if (data.size() != static_cast<size_t>(h) * w * c)
        throw ParameterError("feature map data length mismatch");
    for (double v : data)
        if (!std::isfinite(v)) throw DataError("feature map contains non-finite values");
}

namespace {

struct BilinearTaps {
    // corner node indices and weights; weight 0 marks a dropped (zero-border) tap
    int r[2], c[2];
    double wr[2], wc[2];
    bool rv[2], cv[2];  // node validity
};

BilinearTaps make_taps(int h, int w, const Vec2& u, BorderMode border) {
    double col = (u.x + 1.0) * 0.5 * (w - 1);
    double row = (u.y + 1.0) * 0.5 * (h - 1);
    if (border == BorderMode::Clamp) {
        col = std::clamp(col, 0.0, static_cast<double>(w - 1));
        row = std::clamp(row, 0.0, static_cast<double>(h - 1));
    }
    BilinearTaps t;
    double rf = std::floor(row), cf = std::floor(col);
    int r0 = static_cast<int>(rf), c0 = static_cast<int>(cf);
    if (border == BorderMode::Clamp) {
        r0 = std::min(r0, h - 2);
        c0 = std::min(c0, w - 2);
    }
    double fr = row - r0, fc = col - c0;
    t.r[0] = r0; t.r[1] = r0 + 1;
    t.c[0] = c0; t.c[1] = c0 + 1;
    t.wr[0] = 1 - fr; t.wr[1] = fr;
    t.wc[0] = 1 - fc; t.wc[1] = fc;
    for (int i = 0; i < 2; ++i) {
        t.rv[i] = t.r[i] >= 0 && t.r[i] < h;
        t.cv[i] = t.c[i] >= 0 && t.c[i] < w;
    }
    return t;
}

Vec2 project_for(const CameraPose* pose, const View* view, const Vec3& x) {
    return pose ? project_point(*pose, x).u : project_point_orthogonal(*view, x);
}

ResampledFeatures resample_impl(const FeatureMap& fm, const CameraPose* pose, const View* view,
                                const std::vector<Vec3>& grid, int gh, int gw, BorderMode border) {
    fm.validate();
    if (grid.size() != static_cast<size_t>(gh) * gw)
        throw ParameterError("grid size does not match gh*gw");
    ResampledFeatures out;
    out.h = gh;
    out.w = gw;
    out.c = fm.c;
    out.data.assign(grid.size() * fm.c, 0.0);
    for (size_t i = 0; i < grid.size(); ++i) {
        Vec2 u = project_for(pose, view, grid[i]);
        BilinearTaps t = make_taps(fm.h, fm.w, u, border);
        double* dst = out.data.data() + i * fm.c;
        for (int a = 0; a < 2; ++a)
            for (int b = 0; b < 2; ++b) {
                if (!t.rv[a] || !t.cv[b]) continue;
                double wgt = t.wr[a] * t.wc[b];
                if (wgt == 0) continue;
                const double* src = fm.at(t.r[a], t.c[b]);
                for (int ch = 0; ch < fm.c; ++ch) dst[ch] += wgt * src[ch];
            }
    }
    return out;
}

}  // namespace

std::vector<double> bilinear_sample(const FeatureMap& fm, const Vec2& u, BorderMode border) {
    fm.validate();
    if (!std::isfinite(u.x) || !std::isfinite(u.y))
        throw ParameterError("non-finite sample coordinate");
    BilinearTaps t = make_taps(fm.h, fm.w, u, border);
    std::vector<double> out(fm.c, 0.0);
    for (int a = 0; a < 2; ++a)
        for (int b = 0; b < 2; ++b) {
            if (!t.rv[a] || !t.cv[b]) continue;
            double wgt = t.wr[a] * t.wc[b];
            if (wgt == 0) continue;
            const double* src = fm.at(t.r[a], t.c[b]);
            for (int ch = 0; ch < fm.c; ++ch) out[ch] += wgt * src[ch];
        }
    return out;
}

ResampledFeatures resample_local_features(const FeatureMap& fm, const CameraPose& pose,
                                          const std::vector<Vec3>& grid, int gh, int gw,
                                          BorderMode border) {
    return resample_impl(fm, &pose, nullptr, grid, gh, gw, border);
}

ResampledFeatures resample_orthogonal(const FeatureMap& fm, View view,
                                      const std::vector<Vec3>& grid, int gh, int gw,
                                      BorderMode border) {
    return resample_impl(fm, nullptr, &view, grid, gh, gw, border);
}

FeatureMap resample_backward(const FeatureMap& fm, const CameraPose& pose,
                             const std::vector<Vec3>& grid, int gh, int gw,
                             const ResampledFeatures& upstream, BorderMode border) {
    fm.validate();
    if (grid.size() != static_cast<size_t>(gh) * gw)
        throw ParameterError("grid size does not match gh*gw");
    if (upstream.h != gh || upstream.w != gw || upstream.c != fm.c)
        throw ParameterError("upstream gradient shape mismatch");
    FeatureMap grad(fm.h, fm.w, fm.c);
    for (size_t i = 0; i < grid.size(); ++i) {
        Vec2 u = project_point(pose, grid[i]).u;
        BilinearTaps t = make_taps(fm.h, fm.w, u, border);
        const double* up = upstream.data.data() + i * fm.c;
        for (int a = 0; a < 2; ++a)
            for (int b = 0; b < 2; ++b) {
                if (!t.rv[a] || !t.cv[b]) continue;
                double wgt = t.wr[a] * t.wc[b];
                if (wgt == 0) continue;
                double* dst = grad.at(t.r[a], t.c[b]);
                for (int ch = 0; ch < fm.c; ++ch) dst[ch] += wgt * up[ch];
            }
    }
    return grad;
}

ad::Tensor resample_op(const ad::Tensor& fm, const std::vector<Vec2>& uv, int gh, int gw,
                       BorderMode border) {
    if (fm.shape().size() != 3) throw ParameterError("resample_op: fm must be (C,H,W)");
    if (uv.size() != static_cast<size_t>(gh) * gw)
        throw ParameterError("resample_op: uv size does not match gh*gw");
    int c = fm.dim(0), h = fm.dim(1), w = fm.dim(2);
    std::size_t hw = static_cast<std::size_t>(h) * w;
    std::size_t ghw = static_cast<std::size_t>(gh) * gw;

    auto taps = std::make_shared<std::vector<BilinearTaps>>();
    taps->reserve(uv.size());
    for (const Vec2& u : uv) taps->push_back(make_taps(h, w, u, border));

    std::vector<double> out(static_cast<std::size_t>(c) * ghw, 0.0);
    const auto& xv = fm.value();
    for (std::size_t i = 0; i < ghw; ++i) {
        const BilinearTaps& t = (*taps)[i];
        for (int a = 0; a < 2; ++a)
            for (int b = 0; b < 2; ++b) {
                if (!t.rv[a] || !t.cv[b]) continue;
                double wgt = t.wr[a] * t.wc[b];
                if (wgt == 0) continue;
                std::size_t src = static_cast<std::size_t>(t.r[a]) * w + t.c[b];
                for (int ch = 0; ch < c; ++ch)
                    out[ch * ghw + i] += wgt * xv[ch * hw + src];
            }
    }
    auto px = fm.node();
    return ad::make_op({c, gh, gw}, std::move(out), "resample", {px},
                       [px, taps, c, hw, ghw, w](ad::Node& n) {
                           px->ensure_grad();
                           for (std::size_t i = 0; i < ghw; ++i) {
                               const BilinearTaps& t = (*taps)[i];
                               for (int a = 0; a < 2; ++a)
                                   for (int b = 0; b < 2; ++b) {
                                       if (!t.rv[a] || !t.cv[b]) continue;
                                       double wgt = t.wr[a] * t.wc[b];
                                       if (wgt == 0) continue;
                                       std::size_t dst = static_cast<std::size_t>(t.r[a]) * w + t.c[b];
                                       for (int ch = 0; ch < c; ++ch)
                                           px->grad[ch * hw + dst] += wgt * n.grad[ch * ghw + i];
                                   }
                           }
                       });
}

void dump_resampled(const ResampledFeatures& rf, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw FormatError("cannot open for write: " + path);
    nlohmann::json j{{"dims", std::array<int, 3>{rf.h, rf.w, rf.c}}, {"dtype", "f32le"}};
    std::string head = j.dump();
    f.write(head.data(), static_cast<std::streamsize>(head.size()));
    f.put('\n');
    std::vector<float> buf(rf.data.begin(), rf.data.end());
    f.write(reinterpret_cast<const char*>(buf.data()),
            static_cast<std::streamsize>(buf.size() * sizeof(float)));
    if (!f) throw FormatError("write failed: " + path);
}

}  // namespace perx
