#include "perx/training.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include <json.hpp>

namespace perx {

namespace fs = std::filesystem;
using ad::Tensor;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Manifest

namespace {

json rig_to_json(const RigConfig& r) {
    return json{{"source_dist", r.source_dist}, {"focal", r.focal}};
}

RigConfig rig_from_json(const json& j) {
    RigConfig r;
    r.source_dist = j.at("source_dist");
    r.focal = j.at("focal");
    return r;
}

}  // namespace

void Manifest::save(const std::string& path) const {
    json j;
    j["seed"] = seed;
    j["rig"] = rig_to_json(rig);
    j["vol_dims"] = vol_dims;
    j["drr_res"] = drr_res;
    json js;
    for (const auto& [split, entries] : splits) {
        json arr = json::array();
        for (const auto& e : entries) {
            json slices = json::array();
            for (const auto& s : e.slices)
                slices.push_back({{"plane", plane_name(s.plane)}, {"index", s.index}});
            arr.push_back({{"volume", e.volume},
                           {"drr_pa", e.drr_pa},
                           {"drr_lat", e.drr_lat},
                           {"slices", slices}});
        }
        js[split] = arr;
    }
    j["splits"] = js;
    std::ofstream f(path);
    if (!f) throw FormatError("cannot open for write: " + path);
    f << j.dump(2) << "\n";
}

Manifest Manifest::load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw FormatError("cannot open: " + path);
    json j;
    try {
        f >> j;
    } catch (const json::exception& e) {
        throw FormatError("bad manifest JSON in " + path + ": " + e.what());
    }
    Manifest m;
    m.seed = j.at("seed");
    m.rig = rig_from_json(j.at("rig"));
    auto vd = j.at("vol_dims").get<std::vector<int>>();
    if (vd.size() != 3) throw FormatError("vol_dims must have 3 entries");
    m.vol_dims = {vd[0], vd[1], vd[2]};
    m.drr_res = j.at("drr_res");
    for (const auto& [split, arr] : j.at("splits").items()) {
        std::vector<VolumeEntry> entries;
        for (const auto& e : arr) {
            VolumeEntry ve;
            ve.volume = e.at("volume");
            ve.drr_pa = e.at("drr_pa");
            ve.drr_lat = e.at("drr_lat");
            for (const auto& s : e.at("slices"))
                ve.slices.push_back({plane_from_name(s.at("plane")), s.at("index")});
            entries.push_back(std::move(ve));
        }
        m.splits[split] = std::move(entries);
    }
    return m;
}

Manifest build_dataset(const DatasetConfig& cfg, const std::string& out_dir) {
    if (cfg.n_train < 1 || cfg.n_val < 0 || cfg.n_test < 0)
        throw ParameterError("n_train must be >= 1 and n_val/n_test >= 0");
    if (cfg.slice_stride < 1) throw ParameterError("slice_stride must be >= 1");
    fs::create_directories(out_dir);
    auto [pa, lat] = cfg.rig.make();

    Manifest man;
    man.seed = cfg.seed;
    man.rig = cfg.rig;
    man.vol_dims = cfg.vol_dims;
    man.drr_res = cfg.drr_res;

    std::uint64_t counter = 0;
    auto build_split = [&](const std::string& split, int count) {
        if (count == 0) return;
        std::vector<VolumeEntry> entries;
        for (int i = 0; i < count; ++i) {
            PhantomSpec ps = cfg.phantom;
            ps.seed = cfg.seed * 1000003ULL + counter++;
            Volume vol = generate_phantom(ps, cfg.vol_dims);
            auto [ipa, ilat] = render_pair(vol, pa, lat, cfg.drr_res, cfg.drr_res, cfg.drr_step);

            char name[64];
            std::snprintf(name, sizeof name, "%s_%03d", split.c_str(), i);
            VolumeEntry e;
            e.volume = (fs::path(out_dir) / (std::string(name) + ".vol")).string();
            e.drr_pa = (fs::path(out_dir) / (std::string(name) + "_pa.xray")).string();
            e.drr_lat = (fs::path(out_dir) / (std::string(name) + "_lat.xray")).string();
            save_volume(vol, e.volume);
            save_image_raw(ipa.pixels, e.drr_pa);
            save_image_raw(ilat.pixels, e.drr_lat);

            for (Plane plane : {Plane::Axial, Plane::Coronal, Plane::Sagittal}) {
                int ext = plane_extent(vol, plane);
                for (int n = 0; n < ext; n += cfg.slice_stride) e.slices.push_back({plane, n});
            }
            entries.push_back(std::move(e));
        }
        man.splits[split] = std::move(entries);
    };
    build_split("train", cfg.n_train);
    build_split("val", cfg.n_val);
    build_split("test", cfg.n_test);
    man.save((fs::path(out_dir) / "manifest.json").string());
    return man;
}

// ---------------------------------------------------------------------------
// Crop sampling

std::optional<CropWindow> sample_crop(int rows, int cols, double p_part, int crop_min,
                                      std::mt19937_64& rng) {
    if (p_part < 0 || p_part > 1) throw ParameterError("p_part must be in [0,1]");
    if (crop_min < 2 || crop_min > rows || crop_min > cols)
        throw ParameterError("crop_min outside the native slice size");
    if (std::uniform_real_distribution<double>(0.0, 1.0)(rng) >= p_part) return std::nullopt;
    CropWindow w;
    w.rows = std::uniform_int_distribution<int>(crop_min, rows)(rng);
    w.cols = std::uniform_int_distribution<int>(crop_min, cols)(rng);
    w.row0 = std::uniform_int_distribution<int>(0, rows - w.rows)(rng);
    w.col0 = std::uniform_int_distribution<int>(0, cols - w.cols)(rng);
    return w;
}

// ---------------------------------------------------------------------------
// Loss

PerceptualNet::PerceptualNet(std::uint64_t seed) {
    const int widths[4] = {1, 8, 16, 16};
    for (int i = 0; i < 3; ++i) {
        Tensor w = Tensor::zeros({widths[i + 1], widths[i], 3, 3});
        ad::kaiming_uniform_(w, widths[i] * 9, seed + static_cast<std::uint64_t>(i));
        ws_.push_back(w);
        bs_.push_back(Tensor::zeros({widths[i + 1]}));
    }
}

ad::Tensor PerceptualNet::features(const ad::Tensor& img) const {
    Tensor h = img;
    for (size_t i = 0; i < ws_.size(); ++i)
        h = ad::leaky_relu(ad::conv2d(h, ws_[i], bs_[i], 2, 1));
    return h;
}

ad::Tensor loss_total(const ad::Tensor& pred, const ad::Tensor& target, double lambda_rec,
                      double lambda_p, const PerceptualNet* pnet) {
    if (pred.shape() != target.shape()) throw ParameterError("loss_total: shape mismatch");
    Tensor loss = ad::scale(ad::mse(pred, target), lambda_rec);
    if (lambda_p > 0) {
        if (!pnet) throw ParameterError("loss_total: perceptual net required when lambda_p > 0");
        loss = ad::add(loss,
                       ad::scale(ad::mse(pnet->features(pred), pnet->features(target)), lambda_p));
    }
    return loss;
}

// ---------------------------------------------------------------------------
// Train config serialization

std::string TrainConfig::to_json() const {
    json j{{"lambda_rec", lambda_rec},
           {"lambda_p", lambda_p},
           {"lr", adam.lr},
           {"beta1", adam.beta1},
           {"beta2", adam.beta2},
           {"eps", adam.eps},
           {"epochs", epochs},
           {"batch", batch},
           {"p_part", p_part},
           {"crop_min", crop_min},
           {"seed", seed},
           {"slices_per_volume_per_epoch", slices_per_volume_per_epoch},
           {"val_slices_per_volume", val_slices_per_volume},
           {"model", json::parse(model.to_json())}};
    return j.dump();
}

TrainConfig TrainConfig::from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw FormatError(std::string("bad train config JSON: ") + e.what());
    }
    TrainConfig c;
    auto get = [&j](const char* k, auto& out) {
        if (j.contains(k)) out = j.at(k).template get<std::decay_t<decltype(out)>>();
    };
    get("lambda_rec", c.lambda_rec);
    get("lambda_p", c.lambda_p);
    get("lr", c.adam.lr);
    get("beta1", c.adam.beta1);
    get("beta2", c.adam.beta2);
    get("eps", c.adam.eps);
    get("epochs", c.epochs);
    get("batch", c.batch);
    get("p_part", c.p_part);
    get("crop_min", c.crop_min);
    get("seed", c.seed);
    get("slices_per_volume_per_epoch", c.slices_per_volume_per_epoch);
    get("val_slices_per_volume", c.val_slices_per_volume);
    if (j.contains("model")) c.model = ModelConfig::from_json(j.at("model").dump());
    if (c.lambda_rec < 0 || c.lambda_p < 0) throw ParameterError("loss weights must be >= 0");
    return c;
}

std::string TrainConfig::digest() const {
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

// ---------------------------------------------------------------------------
// Training

Image2D tensor_to_image(const ad::Tensor& t) {
    if (t.shape().size() != 3 || t.dim(0) != 1)
        throw ParameterError("tensor_to_image: (1,H,W) required");
    Image2D img(t.dim(1), t.dim(2));
    img.pix = t.value();
    return img;
}

ad::Tensor image_to_tensor(const Image2D& img) {
    return Tensor::from_data({1, img.h, img.w}, img.pix);
}

namespace {

struct LoadedVolume {
    Volume vol;
    Tensor pa, lat;  // DRR pair as (1,H,W) tensors
};

struct SampleRef {
    int vol_idx;
    SliceRef slice;
};

std::vector<LoadedVolume> load_split(const Manifest& man, const std::string& split) {
    auto it = man.splits.find(split);
    if (it == man.splits.end()) throw ParameterError("manifest has no split '" + split + "'");
    std::vector<LoadedVolume> out;
    for (const auto& e : it->second) {
        LoadedVolume lv;
        lv.vol = load_volume(e.volume);
        lv.pa = image_to_tensor(load_image_raw(e.drr_pa));
        lv.lat = image_to_tensor(load_image_raw(e.drr_lat));
        out.push_back(std::move(lv));
    }
    return out;
}

std::vector<SampleRef> pick_samples(const std::vector<VolumeEntry>& entries, int per_volume,
                                    std::mt19937_64& rng) {
    std::vector<SampleRef> out;
    for (size_t v = 0; v < entries.size(); ++v) {
        const auto& slices = entries[v].slices;
        if (per_volume <= 0 || per_volume >= static_cast<int>(slices.size())) {
            for (const auto& s : slices) out.push_back({static_cast<int>(v), s});
        } else {
            std::vector<int> idx(slices.size());
            for (size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
            std::shuffle(idx.begin(), idx.end(), rng);
            for (int i = 0; i < per_volume; ++i) out.push_back({static_cast<int>(v), slices[idx[i]]});
        }
    }
    return out;
}

double eval_loss_psnr(const PerxModel& model, const std::vector<LoadedVolume>& vols,
                      const std::vector<SampleRef>& samples, const CameraPose& pa,
                      const CameraPose& lat, double lambda_rec, double lambda_p,
                      const PerceptualNet* pnet, double* out_psnr) {
    const ModelConfig& mc = model.config();
    double total = 0, psnr_sum = 0;
    int psnr_n = 0;
    for (const auto& s : samples) {
        const auto& lv = vols[s.vol_idx];
        SliceSpec spec{s.slice.plane, s.slice.index, std::nullopt, mc.out_h, mc.out_w};
        SliceSample ss = extract_slice(lv.vol, spec, mc.grid_h, mc.grid_w);
        Tensor target = image_to_tensor(ss.image);
        Tensor pred = model.forward(lv.pa, lv.lat, ss.grid, pa, lat);
        total += loss_total(pred, target, lambda_rec, lambda_p, pnet).item();
        double p = psnr(tensor_to_image(pred), ss.image);
        if (std::isfinite(p)) {
            psnr_sum += p;
            ++psnr_n;
        }
    }
    if (out_psnr) *out_psnr = psnr_n ? psnr_sum / psnr_n : 0.0;
    return samples.empty() ? 0.0 : total / static_cast<double>(samples.size());
}

}  // namespace

TrainResult train(const Manifest& man, const TrainConfig& cfg, const std::string& out_dir) {
    cfg.model.validate();
    if (cfg.epochs < 1 || cfg.batch < 1) throw ParameterError("epochs and batch must be >= 1");
    if (man.drr_res != cfg.model.input_h || man.drr_res != cfg.model.input_w)
        throw ParameterError("DRR resolution does not match the model input resolution");
    fs::create_directories(out_dir);

    auto [pa, lat] = man.rig.make();
    auto train_vols = load_split(man, "train");
    auto val_vols = load_split(man, "val");
    const auto& train_entries = man.splits.at("train");
    const auto& val_entries = man.splits.at("val");

    PerxModel model(cfg.model, cfg.seed);
    auto params = model.parameters();
    ad::AdamState opt;
    opt.cfg = cfg.adam;

    PerceptualNet pnet;
    const PerceptualNet* pnet_ptr = cfg.lambda_p > 0 ? &pnet : nullptr;

    std::mt19937_64 rng(cfg.seed);
    std::mt19937_64 val_rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
    auto val_samples = pick_samples(val_entries, cfg.val_slices_per_volume, val_rng);

    TrainResult res;
    res.best_val_loss = std::numeric_limits<double>::infinity();
    res.checkpoint_path = (fs::path(out_dir) / "model.ckpt").string();
    std::string curve_path = (fs::path(out_dir) / "loss_curve.csv").string();

    const ModelConfig& mc = cfg.model;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        auto samples = pick_samples(train_entries, cfg.slices_per_volume_per_epoch, rng);
        std::shuffle(samples.begin(), samples.end(), rng);

        double epoch_loss = 0;
        std::size_t done = 0;
        for (std::size_t start = 0; start < samples.size(); start += cfg.batch) {
            std::size_t stop = std::min(samples.size(), start + cfg.batch);
            model.zero_grad();
            double bsz = static_cast<double>(stop - start);
            for (std::size_t i = start; i < stop; ++i) {
                const auto& s = samples[i];
                const auto& lv = train_vols[s.vol_idx];
                auto [rows, cols] = slice_native_size(lv.vol, s.slice.plane);
                SliceSpec spec{s.slice.plane, s.slice.index,
                               sample_crop(rows, cols, cfg.p_part, cfg.crop_min, rng),
                               mc.out_h, mc.out_w};
                SliceSample ss = extract_slice(lv.vol, spec, mc.grid_h, mc.grid_w);
                Tensor target = image_to_tensor(ss.image);
                Tensor pred = model.forward(lv.pa, lv.lat, ss.grid, pa, lat);
                Tensor loss = loss_total(pred, target, cfg.lambda_rec, cfg.lambda_p, pnet_ptr);
                double lv_loss = loss.item();
                if (!std::isfinite(lv_loss))
                    throw NumericError("non-finite loss at epoch " + std::to_string(epoch) +
                                       ", sample " + std::to_string(i));
                epoch_loss += lv_loss;
                ++done;
                ad::scale(loss, 1.0 / bsz).backward();
            }
            adam_step(params, opt);
        }
        epoch_loss /= std::max<std::size_t>(done, 1);

        double val_psnr = 0;
        double val_loss = eval_loss_psnr(model, val_vols, val_samples, pa, lat, cfg.lambda_rec,
                                         cfg.lambda_p, pnet_ptr, &val_psnr);
        res.curve.push_back({epoch, epoch_loss, val_loss, val_psnr});
        if (val_loss < res.best_val_loss) {
            res.best_val_loss = val_loss;
            model.save(res.checkpoint_path);
        }
    }

    std::ofstream curve(curve_path);
    if (!curve) throw FormatError("cannot open for write: " + curve_path);
    curve << "epoch,train_loss,val_loss,val_psnr\n";
    for (const auto& e : res.curve)
        curve << e.epoch << "," << e.train_loss << "," << e.val_loss << "," << e.val_psnr << "\n";

    std::ofstream cj(fs::path(out_dir) / "train_config.json");
    cj << cfg.to_json() << "\n";
    return res;
}

// ---------------------------------------------------------------------------
// Evaluation

EvalReport evaluate(const PerxModel& model, const Manifest& man, const std::string& split,
                    bool crop_suite, int slice_stride, const std::string& csv_path) {
    if (slice_stride < 1) throw ParameterError("slice_stride must be >= 1");
    auto [pa, lat] = man.rig.make();
    auto vols = load_split(man, split);
    const auto& entries = man.splits.at(split);
    const ModelConfig& mc = model.config();

    EvalReport rep;
    struct Agg {
        double psnr = 0, ssim = 0;
        int n = 0;
    };
    std::map<std::string, Agg> agg;  // keyed by plane+crop

    auto eval_one = [&](int vi, const SliceRef& sr, const std::optional<CropWindow>& crop,
                        const std::string& crop_tag) {
        const auto& lv = vols[vi];
        SliceSpec spec{sr.plane, sr.index, crop, mc.out_h, mc.out_w};
        SliceSample ss = extract_slice(lv.vol, spec, mc.grid_h, mc.grid_w);
        Tensor pred = model.forward(lv.pa, lv.lat, ss.grid, pa, lat);
        Image2D pimg = tensor_to_image(pred);
        EvalRow row{split, plane_name(sr.plane), sr.index, crop_tag, psnr(pimg, ss.image),
                    ssim(pimg, ss.image)};
        rep.rows.push_back(row);
        for (const std::string& key : {std::string(plane_name(sr.plane)) + "|" + crop_tag,
                                       "all|" + crop_tag}) {
            auto& a = agg[key];
            if (std::isfinite(row.psnr_db)) {
                a.psnr += row.psnr_db;
                a.ssim += row.ssim;
                ++a.n;
            }
        }
    };

    for (size_t vi = 0; vi < entries.size(); ++vi) {
        for (size_t si = 0; si < entries[vi].slices.size(); si += slice_stride) {
            const SliceRef& sr = entries[vi].slices[si];
            eval_one(static_cast<int>(vi), sr, std::nullopt, "full");
            if (crop_suite) {
                auto [rows, cols] = slice_native_size(vols[vi].vol, sr.plane);
                for (int div : {2, 4}) {
                    int cr = rows / div, cc = cols / div;
                    if (cr < 2 || cc < 2) continue;
                    CropWindow w{(rows - cr) / 2, (cols - cc) / 2, cr, cc};
                    eval_one(static_cast<int>(vi), sr, w,
                             std::to_string(cr) + "x" + std::to_string(cc));
                }
            }
        }
    }

    for (const auto& [key, a] : agg) {
        auto bar = key.find('|');
        EvalRow row{split, key.substr(0, bar), -1, key.substr(bar + 1),
                    a.n ? a.psnr / a.n : 0.0, a.n ? a.ssim / a.n : 0.0};
        rep.rows.push_back(row);
        if (row.plane == "all" && row.crop == "full") {
            rep.mean_psnr = row.psnr_db;
            rep.mean_ssim = row.ssim;
        }
    }

    if (!csv_path.empty()) {
        std::ofstream f(csv_path);
        if (!f) throw FormatError("cannot open for write: " + csv_path);
        f << "split,plane,slice_index,crop,psnr_db,ssim\n";
        for (const auto& r : rep.rows)
            f << r.split << "," << r.plane << "," << r.slice_index << "," << r.crop << ","
              << r.psnr_db << "," << r.ssim << "\n";
    }
    return rep;
}

}  // namespace perx
