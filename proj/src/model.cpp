#include "perx/model.hpp"

#include <cmath>

#include <json.hpp>

namespace perx {

using ad::Tensor;
using nlohmann::json;

const char* projection_name(ProjectionMode m) {
    return m == ProjectionMode::Perspective ? "perspective" : "orthogonal";
}

ProjectionMode projection_from_name(const std::string& s) {
    if (s == "perspective") return ProjectionMode::Perspective;
    if (s == "orthogonal") return ProjectionMode::Orthogonal;
    throw ParameterError("unknown projection mode: " + s);
}

ModelConfig ModelConfig::small() {
    ModelConfig c;
    c.input_h = c.input_w = 32;
    c.c_local = 32;
    c.c_global = 16;
    c.feat_h = c.feat_w = 4;
    c.grid_h = c.grid_w = 8;
    c.out_h = c.out_w = 32;
    c.pe_freqs = 6;
    c.dec_c1 = 48;
    c.dec_c2 = 24;
    return c;
}

namespace {

bool is_pow2(int v) { return v > 0 && (v & (v - 1)) == 0; }

int norm_groups_for(int channels) {
    for (int g = 8; g > 1; --g)
        if (channels % g == 0) return g;
    return 1;
}

}  // namespace

void ModelConfig::validate() const {
    if (input_h < 8 || input_w < 8) throw ParameterError("input resolution too small");
    if (input_h % feat_h != 0 || !is_pow2(input_h / feat_h) || input_w % feat_w != 0 ||
        !is_pow2(input_w / feat_w))
        throw ParameterError("input/feat resolution ratio must be a power of two");
    if (out_h % grid_h != 0 || out_w % grid_w != 0)
        throw ParameterError("out resolution must be a multiple of the grid resolution");
    if (out_h / grid_h != 4 || out_w / grid_w != 4)
        throw ParameterError("decoder has two x2 upsampling blocks; out/grid ratio must be 4");
    if (pe_freqs < 1) throw ParameterError("pe_freqs must be >= 1");
    if (c_local < 1 || c_global < 1 || dec_c1 < 1 || dec_c2 < 1)
        throw ParameterError("channel counts must be >= 1");
}

std::string ModelConfig::to_json() const {
    json j{{"input_h", input_h}, {"input_w", input_w}, {"c_local", c_local},
           {"c_global", c_global}, {"feat_h", feat_h}, {"feat_w", feat_w},
           {"grid_h", grid_h}, {"grid_w", grid_w}, {"out_h", out_h}, {"out_w", out_w},
           {"pe_freqs", pe_freqs}, {"use_global", use_global}, {"use_pe", use_pe},
           {"projection", projection_name(projection)}, {"dec_c1", dec_c1}, {"dec_c2", dec_c2}};
    return j.dump();
}

ModelConfig ModelConfig::from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw FormatError(std::string("bad model config JSON: ") + e.what());
    }
    ModelConfig c;
    auto get = [&j](const char* k, auto& out) {
        if (j.contains(k)) out = j.at(k).template get<std::decay_t<decltype(out)>>();
    };
    get("input_h", c.input_h); get("input_w", c.input_w);
    get("c_local", c.c_local); get("c_global", c.c_global);
    get("feat_h", c.feat_h); get("feat_w", c.feat_w);
    get("grid_h", c.grid_h); get("grid_w", c.grid_w);
    get("out_h", c.out_h); get("out_w", c.out_w);
    get("pe_freqs", c.pe_freqs);
    get("use_global", c.use_global); get("use_pe", c.use_pe);
    get("dec_c1", c.dec_c1); get("dec_c2", c.dec_c2);
    if (j.contains("projection")) c.projection = projection_from_name(j.at("projection"));
    c.validate();
    return c;
}

std::string ModelConfig::digest() const {
    // FNV-1a over the canonical JSON
    std::string s = to_json();
    std::uint64_t h = 14695981039346656037ULL;
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 1099511628211ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

std::vector<double> positional_encoding(const Vec3& x, int L) {
    if (L < 1) throw ParameterError("positional encoding needs L >= 1");
    std::vector<double> out;
    out.reserve(3 + 6 * L);
    out.push_back(x.x);
    out.push_back(x.y);
    out.push_back(x.z);
    double freq = M_PI;
    for (int l = 0; l < L; ++l, freq *= 2) {
        out.push_back(std::sin(freq * x.x));
        out.push_back(std::sin(freq * x.y));
        out.push_back(std::sin(freq * x.z));
        out.push_back(std::cos(freq * x.x));
        out.push_back(std::cos(freq * x.y));
        out.push_back(std::cos(freq * x.z));
    }
    return out;
}

// ---------------------------------------------------------------------------

PerxModel::PerxModel(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    init_params(seed);
}

void PerxModel::init_params(std::uint64_t seed) {
    std::uint64_t s = seed;
    auto make_conv = [&s](int co, int ci, int k) {
        Conv c;
        c.w = Tensor::zeros({co, ci, k, k}, true);
        c.b = Tensor::zeros({co}, true);
        ad::kaiming_uniform_(c.w, ci * k * k, s++);
        return c;
    };

    int n_down = 0;
    for (int r = cfg_.input_h / cfg_.feat_h; r > 1; r /= 2) ++n_down;
    int cin = 1;
    for (int i = 0; i < n_down; ++i) {
        int cout = std::max(8, cfg_.c_local >> (n_down - 1 - i));
        if (i == n_down - 1) cout = cfg_.c_local;
        enc_.push_back(make_conv(cout, cin, 3));
        cin = cout;
    }
    enc_global_ = make_conv(cfg_.c_global, cfg_.c_local, 3);

    int dc = cfg_.decoder_in_channels();
    attn_.wq = Tensor::zeros({dc, dc, 1, 1}, true);
    attn_.wk = Tensor::zeros({dc, dc, 1, 1}, true);
    attn_.wv = Tensor::zeros({dc, dc, 1, 1}, true);
    ad::kaiming_uniform_(attn_.wq, dc, s++);
    ad::kaiming_uniform_(attn_.wk, dc, s++);
    ad::kaiming_uniform_(attn_.wv, dc, s++);
    attn_.bq = Tensor::zeros({dc}, true);
    attn_.bk = Tensor::zeros({dc}, true);
    attn_.bv = Tensor::zeros({dc}, true);

    dec1_ = make_conv(cfg_.dec_c1, dc, 3);
    dec2_ = make_conv(cfg_.dec_c2, cfg_.dec_c1, 3);
    dec_out_ = make_conv(1, cfg_.dec_c2, 1);
    gn1_gamma_ = Tensor::full({cfg_.dec_c1}, 1.0, true);
    gn1_beta_ = Tensor::zeros({cfg_.dec_c1}, true);
    gn2_gamma_ = Tensor::full({cfg_.dec_c2}, 1.0, true);
    gn2_beta_ = Tensor::zeros({cfg_.dec_c2}, true);
}

EncoderOutput PerxModel::encode(const ad::Tensor& image) const {
    if (image.shape() != std::vector<int>{1, cfg_.input_h, cfg_.input_w})
        throw ParameterError("encoder input must be (1,H,W) at the configured resolution");
    Tensor h = image;
    for (const auto& blk : enc_) h = ad::leaky_relu(ad::conv2d(h, blk.w, blk.b, 2, 1));
    EncoderOutput out;
    out.local = h;
    Tensor g = ad::leaky_relu(ad::conv2d(h, enc_global_.w, enc_global_.b, 2, 1));
    out.global_vec = ad::spatial_mean(g);
    return out;
}

std::vector<Vec2> PerxModel::project_grid(const std::vector<Vec3>& grid, const CameraPose& pose,
                                          View view) const {
    std::vector<Vec2> uv;
    uv.reserve(grid.size());
    for (const Vec3& x : grid) {
        if (cfg_.projection == ProjectionMode::Perspective)
            uv.push_back(project_point(pose, x).u);
        else
            uv.push_back(project_point_orthogonal(view, x));
    }
    return uv;
}

ad::Tensor PerxModel::decode(const ad::Tensor& stacked) const {
    if (stacked.shape() != std::vector<int>{cfg_.decoder_in_channels(), cfg_.grid_h, cfg_.grid_w})
        throw ParameterError("decoder input channel count does not match config");
    Tensor h = ad::self_attention(stacked, attn_);
    h = ad::nearest_upsample(h, 2);
    h = ad::conv2d(h, dec1_.w, dec1_.b, 1, 1);
    h = ad::group_norm(h, norm_groups_for(cfg_.dec_c1), gn1_gamma_, gn1_beta_);
    h = ad::leaky_relu(h);
    h = ad::nearest_upsample(h, 2);
    h = ad::conv2d(h, dec2_.w, dec2_.b, 1, 1);
    h = ad::group_norm(h, norm_groups_for(cfg_.dec_c2), gn2_gamma_, gn2_beta_);
    h = ad::leaky_relu(h);
    return ad::sigmoid(ad::conv2d(h, dec_out_.w, dec_out_.b, 1, 0));
}

ad::Tensor PerxModel::forward(const ad::Tensor& pa_image, const ad::Tensor& lat_image,
                              const std::vector<Vec3>& grid, const CameraPose& pa_pose,
                              const CameraPose& lat_pose) const {
    if (grid.size() != static_cast<size_t>(cfg_.grid_h) * cfg_.grid_w)
        throw ParameterError("grid size does not match the configured H_f x W_f");
    EncoderOutput pa = encode(pa_image);
    EncoderOutput lat = encode(lat_image);

    auto uv_pa = project_grid(grid, pa_pose, View::PA);
    auto uv_lat = project_grid(grid, lat_pose, View::Lat);
    Tensor f_pa = resample_op(pa.local, uv_pa, cfg_.grid_h, cfg_.grid_w);
    Tensor f_lat = resample_op(lat.local, uv_lat, cfg_.grid_h, cfg_.grid_w);

    std::vector<Tensor> parts{f_pa, f_lat};
    if (cfg_.use_global) {
        parts.push_back(ad::replicate_spatial(pa.global_vec, cfg_.grid_h, cfg_.grid_w));
        parts.push_back(ad::replicate_spatial(lat.global_vec, cfg_.grid_h, cfg_.grid_w));
    }
    if (cfg_.use_pe) {
        int pc = cfg_.pe_channels();
        std::size_t ghw = grid.size();
        std::vector<double> pe(static_cast<std::size_t>(pc) * ghw);
        for (std::size_t i = 0; i < ghw; ++i) {
            auto enc = positional_encoding(grid[i], cfg_.pe_freqs);
            for (int ch = 0; ch < pc; ++ch) pe[ch * ghw + i] = enc[ch];
        }
        parts.push_back(Tensor::from_data({pc, cfg_.grid_h, cfg_.grid_w}, std::move(pe)));
    }
    return decode(ad::concat_channels(parts));
}

std::vector<ad::Tensor> PerxModel::parameters() {
    std::vector<Tensor> out;
    for (auto& [name, t] : named_parameters()) out.push_back(t);
    return out;
}

std::vector<ad::NamedTensor> PerxModel::named_parameters() const {
    std::vector<ad::NamedTensor> out;
    for (size_t i = 0; i < enc_.size(); ++i) {
        out.push_back({"enc." + std::to_string(i) + ".w", enc_[i].w});
        out.push_back({"enc." + std::to_string(i) + ".b", enc_[i].b});
    }
    out.push_back({"enc_global.w", enc_global_.w});
    out.push_back({"enc_global.b", enc_global_.b});
    out.push_back({"attn.wq", attn_.wq});
    out.push_back({"attn.bq", attn_.bq});
    out.push_back({"attn.wk", attn_.wk});
    out.push_back({"attn.bk", attn_.bk});
    out.push_back({"attn.wv", attn_.wv});
    out.push_back({"attn.bv", attn_.bv});
    out.push_back({"dec1.w", dec1_.w});
    out.push_back({"dec1.b", dec1_.b});
    out.push_back({"gn1.gamma", gn1_gamma_});
    out.push_back({"gn1.beta", gn1_beta_});
    out.push_back({"dec2.w", dec2_.w});
    out.push_back({"dec2.b", dec2_.b});
    out.push_back({"gn2.gamma", gn2_gamma_});
    out.push_back({"gn2.beta", gn2_beta_});
    out.push_back({"dec_out.w", dec_out_.w});
    out.push_back({"dec_out.b", dec_out_.b});
    return out;
}

void PerxModel::zero_grad() {
    for (auto& p : parameters()) p.zero_grad();
}

namespace {

ad::Tensor digest_tensor(const std::string& digest) {
    std::vector<double> bytes;
    for (unsigned char c : digest) bytes.push_back(static_cast<double>(c));
    int n = static_cast<int>(bytes.size());
    return ad::Tensor::from_data({n}, std::move(bytes));
}

}  // namespace

void PerxModel::save(const std::string& path) const {
    auto params = named_parameters();
    params.insert(params.begin(), {"config_digest", digest_tensor(cfg_.digest())});
    ad::save_checkpoint(params, path);
}

PerxModel PerxModel::load(const std::string& path, const ModelConfig& cfg) {
    auto records = ad::load_checkpoint(path);
    PerxModel model(cfg, 0);
    auto params = model.named_parameters();
    auto find = [&records](const std::string& name) -> ad::Tensor& {
        for (auto& r : records)
            if (r.name == name) return r.tensor;
        throw FormatError("checkpoint missing tensor '" + name + "'");
    };
    ad::Tensor& dig = find("config_digest");
    std::string want = cfg.digest();
    std::string got;
    for (double v : dig.value()) got.push_back(static_cast<char>(v));
    if (got != want)
        throw FormatError("checkpoint config digest mismatch: checkpoint " + got +
                          " vs requested " + want);
    for (auto& [name, t] : params) {
        ad::Tensor& src = find(name);
        if (src.shape() != t.shape())
            throw FormatError("checkpoint tensor shape mismatch for '" + name + "'");
        t.value() = src.value();
    }
    return model;
}

}  // namespace perx
