#include <CLI11.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>

#include <json.hpp>

#include "perx/training.hpp"

using namespace perx;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

void write_resolved_config(const std::string& out_dir, const std::string& command,
                           const json& cfg) {
    fs::create_directories(out_dir);
    json j;
    j["command"] = command;
    j["config"] = cfg;
    std::ofstream f(fs::path(out_dir) / "resolved_config.json");
    if (!f) throw FormatError("cannot write resolved config under " + out_dir);
    f << j.dump(2) << "\n";
}

json rig_json(const RigConfig& rig) {
    return json{{"source_dist", rig.source_dist}, {"focal", rig.focal}};
}

CropWindow parse_crop(const std::string& text) {
    CropWindow c{};
    if (std::sscanf(text.c_str(), "%d,%d,%d,%d", &c.row0, &c.col0, &c.rows, &c.cols) != 4)
        throw ParameterError("--crop expects row0,col0,rows,cols");
    return c;
}

// side-by-side panel: prediction | ground truth | absolute error
Image2D make_panels(const Image2D& pred, const Image2D& gt) {
    if (pred.h != gt.h || pred.w != gt.w)
        throw ParameterError("panel images must share dimensions");
    int gap = 2;
    Image2D panel(pred.h, pred.w * 3 + 2 * gap);
    for (double& v : panel.pix) v = 1.0;
    for (int r = 0; r < pred.h; ++r)
        for (int c = 0; c < pred.w; ++c) {
            panel.at(r, c) = pred.at(r, c);
            panel.at(r, pred.w + gap + c) = gt.at(r, c);
            panel.at(r, 2 * (pred.w + gap) + c) = std::abs(pred.at(r, c) - gt.at(r, c));
        }
    return panel;
}

TrainConfig load_train_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw FormatError("cannot open train config: " + path);
    std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return TrainConfig::from_json(text);
}

// ---------------------------------------------------------------------------

int cmd_phantom(const std::string& out_dir, int count, int dims, std::uint64_t seed,
                int n_organs) {
    fs::create_directories(out_dir);
    PhantomSpec spec;
    spec.n_organs = n_organs;
    for (int i = 0; i < count; ++i) {
        spec.seed = seed + static_cast<std::uint64_t>(i);
        Volume vol = generate_phantom(spec, {dims, dims, dims});
        char name[64];
        std::snprintf(name, sizeof name, "phantom_%03d", i);
        save_volume(vol, (fs::path(out_dir) / (std::string(name) + ".vol")).string());
        SliceSpec mid{Plane::Axial, dims / 2, std::nullopt, 0, 0};
        auto [gh, gw] = slice_native_size(vol, Plane::Axial);
        SliceSample s = extract_slice(vol, mid, gh, gw);
        save_image_png(s.image, (fs::path(out_dir) / (std::string(name) + "_mid.png")).string());
    }
    write_resolved_config(out_dir, "phantom",
                          json{{"out", out_dir},
                               {"count", count},
                               {"dims", dims},
                               {"seed", seed},
                               {"n_organs", n_organs}});
    std::cout << "wrote " << count << " phantom volume(s) to " << out_dir << "\n";
    return 0;
}

int cmd_drr(const std::string& volume_path, const std::string& out_dir, int res, double step,
            const RigConfig& rig) {
    Volume vol = load_volume(volume_path);
    auto [pa, lat] = rig.make();
    auto [ipa, ilat] = render_pair(vol, pa, lat, res, res, step);
    fs::create_directories(out_dir);
    std::string stem = fs::path(volume_path).stem().string();
    save_image_raw(ipa.pixels, (fs::path(out_dir) / (stem + "_pa.xray")).string());
    save_image_raw(ilat.pixels, (fs::path(out_dir) / (stem + "_lat.xray")).string());
    save_image_png(ipa.pixels, (fs::path(out_dir) / (stem + "_pa.png")).string());
    save_image_png(ilat.pixels, (fs::path(out_dir) / (stem + "_lat.png")).string());
    write_resolved_config(out_dir, "drr",
                          json{{"volume", volume_path},
                               {"out", out_dir},
                               {"res", res},
                               {"step", step},
                               {"rig", rig_json(rig)}});
    std::cout << "rendered " << res << "x" << res << " pair for " << stem << "\n";
    return 0;
}

int cmd_dataset(const DatasetConfig& cfg, const std::string& out_dir) {
    Manifest man = build_dataset(cfg, out_dir);
    size_t total = 0;
    for (const auto& [split, entries] : man.splits)
        for (const auto& e : entries) total += e.slices.size();
    write_resolved_config(out_dir, "dataset",
                          json{{"out", out_dir},
                               {"n_train", cfg.n_train},
                               {"n_val", cfg.n_val},
                               {"n_test", cfg.n_test},
                               {"vol_dims", cfg.vol_dims},
                               {"drr_res", cfg.drr_res},
                               {"drr_step", cfg.drr_step},
                               {"slice_stride", cfg.slice_stride},
                               {"seed", cfg.seed},
                               {"rig", rig_json(cfg.rig)}});
    std::cout << "dataset ready: " << total << " slice records under " << out_dir << "\n";
    return 0;
}

int cmd_train(const std::string& manifest_path, const TrainConfig& cfg,
              const std::string& out_dir) {
    Manifest man = Manifest::load(manifest_path);
    TrainResult res = train(man, cfg, out_dir);
    write_resolved_config(out_dir, "train",
                          json{{"manifest", manifest_path},
                               {"out", out_dir},
                               {"train_config", json::parse(cfg.to_json())}});
    std::cout << "trained " << res.curve.size() << " epoch(s), best val loss "
              << res.best_val_loss << ", checkpoint " << res.checkpoint_path << "\n";
    return 0;
}

int cmd_reconstruct(const std::string& ckpt, const std::string& train_config_path,
                    const std::string& volume_path, const std::string& pa_path,
                    const std::string& lat_path, const std::string& plane_str, int index,
                    const std::string& crop_str, const RigConfig& rig,
                    const std::string& out_dir) {
    TrainConfig tc = load_train_config(train_config_path);
    PerxModel model = PerxModel::load(ckpt, tc.model);
    Volume vol = load_volume(volume_path);
    Image2D ipa = load_image_raw(pa_path);
    Image2D ilat = load_image_raw(lat_path);
    auto [pa, lat] = rig.make();

    SliceSpec spec{plane_from_name(plane_str), index, std::nullopt, 0, 0};
    if (!crop_str.empty()) spec.crop = parse_crop(crop_str);
    const ModelConfig& mc = model.config();
    SliceSample sample = extract_slice(vol, spec, mc.grid_h, mc.grid_w);

    ad::Tensor pred = model.forward(image_to_tensor(ipa), image_to_tensor(ilat), sample.grid,
                                    pa, lat);
    Image2D pred_img = tensor_to_image(pred);

    // ground truth resampled at the output resolution over the same window
    SliceSpec gt_spec = spec;
    gt_spec.out_h = mc.out_h;
    gt_spec.out_w = mc.out_w;
    Image2D gt = extract_slice(vol, gt_spec, mc.grid_h, mc.grid_w).image;

    fs::create_directories(out_dir);
    save_image_raw(pred_img, (fs::path(out_dir) / "prediction.xray").string());
    save_image_png(make_panels(pred_img, gt), (fs::path(out_dir) / "panels.png").string());
    write_resolved_config(out_dir, "reconstruct",
                          json{{"checkpoint", ckpt},
                               {"train_config", train_config_path},
                               {"volume", volume_path},
                               {"pa", pa_path},
                               {"lat", lat_path},
                               {"plane", plane_str},
                               {"index", index},
                               {"crop", crop_str},
                               {"rig", rig_json(rig)},
                               {"out", out_dir}});
    std::cout << "psnr vs ground truth: " << psnr(pred_img, gt) << " dB\n";
    return 0;
}

int cmd_eval(const std::string& ckpt, const std::string& train_config_path,
             const std::string& manifest_path, const std::string& split, bool crop_suite,
             int stride, const std::string& out_dir) {
    TrainConfig tc = load_train_config(train_config_path);
    PerxModel model = PerxModel::load(ckpt, tc.model);
    Manifest man = Manifest::load(manifest_path);
    fs::create_directories(out_dir);
    std::string csv = (fs::path(out_dir) / "eval.csv").string();
    EvalReport rep = evaluate(model, man, split, crop_suite, stride, csv);
    write_resolved_config(out_dir, "eval",
                          json{{"checkpoint", ckpt},
                               {"train_config", train_config_path},
                               {"manifest", manifest_path},
                               {"split", split},
                               {"crop_suite", crop_suite},
                               {"slice_stride", stride},
                               {"out", out_dir}});
    std::cout << split << ": mean psnr " << rep.mean_psnr << " dB, mean ssim " << rep.mean_ssim
              << " (" << rep.rows.size() << " rows -> " << csv << ")\n";
    return 0;
}

int cmd_ablate(const std::string& manifest_path, TrainConfig base, const std::string& out_dir) {
    Manifest man = Manifest::load(manifest_path);
    fs::create_directories(out_dir);
    std::string csv_path = (fs::path(out_dir) / "ablation.csv").string();
    std::ofstream csv(csv_path);
    if (!csv) throw FormatError("cannot open for write: " + csv_path);
    csv << "projection,use_pe,use_global,best_val_loss,test_psnr_db,test_ssim\n";

    int row = 0;
    for (ProjectionMode proj : {ProjectionMode::Perspective, ProjectionMode::Orthogonal})
        for (bool use_pe : {true, false})
            for (bool use_global : {true, false}) {
                TrainConfig tc = base;
                tc.model.projection = proj;
                tc.model.use_pe = use_pe;
                tc.model.use_global = use_global;
                std::string run_dir =
                    (fs::path(out_dir) / ("run_" + std::to_string(row))).string();
                TrainResult res = train(man, tc, run_dir);
                PerxModel model = PerxModel::load(res.checkpoint_path, tc.model);
                EvalReport rep = evaluate(model, man, "test", false, 1, "");
                csv << projection_name(proj) << ',' << (use_pe ? 1 : 0) << ','
                    << (use_global ? 1 : 0) << ',' << res.best_val_loss << ',' << rep.mean_psnr
                    << ',' << rep.mean_ssim << "\n";
                std::cout << "[" << row + 1 << "/8] " << projection_name(proj)
                          << " pe=" << use_pe << " global=" << use_global << " -> "
                          << rep.mean_psnr << " dB\n";
                ++row;
            }
    write_resolved_config(out_dir, "ablate",
                          json{{"manifest", manifest_path},
                               {"out", out_dir},
                               {"train_config", json::parse(base.to_json())}});
    std::cout << "ablation grid done: " << row << " rows -> " << csv_path << "\n";
    return 0;
}

int cmd_gradcheck() {
    using ad::Tensor;
    std::mt19937_64 rng(314);
    std::uniform_real_distribution<double> dist(-1, 1);
    auto rnd = [&](std::vector<int> shape) {
        std::vector<double> data(ad::numel(shape));
        for (double& v : data) v = dist(rng);
        return Tensor::from_data(std::move(shape), std::move(data), true);
    };

    struct Check {
        std::string name;
        std::function<Tensor(std::vector<Tensor>&)> f;
        std::vector<Tensor> inputs;
    };
    std::vector<Check> checks;
    checks.push_back({"conv2d",
                      [](std::vector<Tensor>& in) {
                          return ad::sum_all(ad::mul(ad::conv2d(in[0], in[1], in[2], 2, 1),
                                                     ad::conv2d(in[0], in[1], in[2], 2, 1)));
                      },
                      {rnd({2, 5, 5}), rnd({3, 2, 3, 3}), rnd({3})}});
    checks.push_back({"group_norm",
                      [](std::vector<Tensor>& in) {
                          return ad::mse(ad::group_norm(in[0], 2, in[1], in[2]),
                                         Tensor::full({4, 4, 4}, 0.3));
                      },
                      {rnd({4, 4, 4}), rnd({4}), rnd({4})}});
    checks.push_back({"attention",
                      [](std::vector<Tensor>& in) {
                          ad::SelfAttentionParams p{in[1], in[2], in[3], in[4], in[5], in[6]};
                          return ad::sum_all(
                              ad::mul(ad::self_attention(in[0], p), ad::self_attention(in[0], p)));
                      },
                      {rnd({2, 3, 3}), rnd({2, 2, 1, 1}), rnd({2, 2, 1, 1}), rnd({2, 2, 1, 1}),
                       rnd({2}), rnd({2}), rnd({2})}});
    checks.push_back({"upsample+sigmoid",
                      [](std::vector<Tensor>& in) {
                          return ad::mse(ad::sigmoid(ad::nearest_upsample(in[0], 2)),
                                         Tensor::full({2, 6, 6}, 0.5));
                      },
                      {rnd({2, 3, 3})}});
    {
        auto [pa, lat] = make_biplanar_rig(3.0, 2.0);
        std::vector<Vec2> uv;
        std::mt19937_64 grng(1);
        std::uniform_real_distribution<double> gdist(-0.6, 0.6);
        for (int i = 0; i < 9; ++i)
            uv.push_back(project_point(pa, {gdist(grng), gdist(grng), gdist(grng)}).u);
        checks.push_back({"resample",
                          [uv](std::vector<Tensor>& in) {
                              return ad::sum_all(ad::mul(resample_op(in[0], uv, 3, 3),
                                                         resample_op(in[0], uv, 3, 3)));
                          },
                          {rnd({2, 4, 4})}});
    }
    {
        PerceptualNet pnet(7);
        std::vector<double> tv(64);
        for (double& v : tv) v = 0.5 * (dist(rng) + 1);
        Tensor target = Tensor::from_data({1, 8, 8}, tv);
        checks.push_back({"total_loss",
                          [target, pnet = std::make_shared<PerceptualNet>(7)](
                              std::vector<Tensor>& in) {
                              return loss_total(in[0], target, 1.0, 1.0, pnet.get());
                          },
                          {rnd({1, 8, 8})}});
    }

    bool all_pass = true;
    for (auto& c : checks) {
        ad::GradCheckReport rep = ad::grad_check(c.f, c.inputs, 1e-5, 1e-4, 25, 9);
        std::cout << (rep.pass ? "PASS " : "FAIL ") << c.name << " max rel err "
                  << rep.max_rel_err << "\n";
        all_pass = all_pass && rep.pass;
    }

    // full forward + loss pipeline on a miniature model
    {
        ModelConfig cfg;
        cfg.input_h = cfg.input_w = 16;
        cfg.c_local = 6;
        cfg.c_global = 4;
        cfg.feat_h = cfg.feat_w = 4;
        cfg.grid_h = cfg.grid_w = 4;
        cfg.out_h = cfg.out_w = 16;
        cfg.pe_freqs = 2;
        cfg.dec_c1 = 8;
        cfg.dec_c2 = 8;
        PerxModel model(cfg, 5);
        auto [pa, lat] = make_biplanar_rig(3.0, 2.0);
        std::vector<double> iv(256), lv(256), tv(256);
        for (double& v : iv) v = 0.5 * (dist(rng) + 1);
        for (double& v : lv) v = 0.5 * (dist(rng) + 1);
        for (double& v : tv) v = 0.5 * (dist(rng) + 1);
        Tensor ipa = Tensor::from_data({1, 16, 16}, iv);
        Tensor ilat = Tensor::from_data({1, 16, 16}, lv);
        Tensor target = Tensor::from_data({1, 16, 16}, tv);
        std::vector<Vec3> grid;
        for (int r = 0; r < 4; ++r)
            for (int c = 0; c < 4; ++c)
                grid.push_back({-1 + 2.0 * c / 3, -1 + 2.0 * r / 3, 0.2});
        auto params = model.parameters();
        auto f = [&](std::vector<Tensor>& in) {
            (void)in;
            return ad::mse(model.forward(ipa, ilat, grid, pa, lat), target);
        };
        ad::GradCheckReport rep = ad::grad_check(f, params, 1e-5, 1e-4, 3, 11);
        std::cout << (rep.pass ? "PASS " : "FAIL ") << "full_pipeline max rel err "
                  << rep.max_rel_err << "\n";
        all_pass = all_pass && rep.pass;
    }
    return all_pass ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Biplanar X-ray to CT slice reconstruction toolkit"};
    app.require_subcommand(1);
    int threads = 0;
    app.add_option("--threads", threads, "Worker thread cap (1 = bit-deterministic, 0 = auto)");

    // phantom
    auto* sc_phantom = app.add_subcommand("phantom", "Generate procedural CT phantom volumes");
    std::string ph_out = "phantoms";
    int ph_count = 1, ph_dims = 64, ph_organs = 5;
    std::uint64_t ph_seed = 1;
    sc_phantom->add_option("--out", ph_out, "Output directory");
    sc_phantom->add_option("--count", ph_count, "Number of volumes")->check(CLI::PositiveNumber);
    sc_phantom->add_option("--dims", ph_dims, "Cubic volume dimension");
    sc_phantom->add_option("--seed", ph_seed, "Base seed (volume i uses seed+i)");
    sc_phantom->add_option("--organs", ph_organs, "Organ count per phantom");

    // drr
    auto* sc_drr = app.add_subcommand("drr", "Render a biplanar X-ray pair from a volume");
    std::string drr_vol, drr_out = "drr";
    int drr_res = 64;
    double drr_step = 1.0 / 128;
    RigConfig drr_rig;
    sc_drr->add_option("--volume", drr_vol, "Input .vol file")->required();
    sc_drr->add_option("--out", drr_out, "Output directory");
    sc_drr->add_option("--res", drr_res, "Detector resolution");
    sc_drr->add_option("--step", drr_step, "Ray sampling step (world units)");
    sc_drr->add_option("--source-dist", drr_rig.source_dist, "Source distance from origin");
    sc_drr->add_option("--focal", drr_rig.focal, "Focal length");

    // dataset
    auto* sc_dataset = app.add_subcommand("dataset", "Build a phantom/DRR/slice dataset");
    DatasetConfig ds_cfg;
    std::string ds_out = "dataset";
    int ds_dims = 64;
    sc_dataset->add_option("--out", ds_out, "Output directory");
    sc_dataset->add_option("--train", ds_cfg.n_train, "Training volumes");
    sc_dataset->add_option("--val", ds_cfg.n_val, "Validation volumes");
    sc_dataset->add_option("--test", ds_cfg.n_test, "Test volumes");
    sc_dataset->add_option("--dims", ds_dims, "Cubic volume dimension");
    sc_dataset->add_option("--res", ds_cfg.drr_res, "DRR resolution");
    sc_dataset->add_option("--step", ds_cfg.drr_step, "Ray sampling step");
    sc_dataset->add_option("--stride", ds_cfg.slice_stride, "Keep every k-th slice");
    sc_dataset->add_option("--seed", ds_cfg.seed, "Dataset seed");
    sc_dataset->add_option("--source-dist", ds_cfg.rig.source_dist, "Source distance");
    sc_dataset->add_option("--focal", ds_cfg.rig.focal, "Focal length");

    // train (and shared train-config flags reused by ablate)
    auto add_train_flags = [](CLI::App* sc, TrainConfig& tc, std::string& config_path,
                              std::string& projection) {
        sc->add_option("--config", config_path, "Training config JSON (flags override)");
        sc->add_option("--epochs", tc.epochs, "Training epochs");
        sc->add_option("--batch", tc.batch, "Mini-batch size");
        sc->add_option("--lr", tc.adam.lr, "Adam learning rate");
        sc->add_option("--lambda-rec", tc.lambda_rec, "Reconstruction loss weight");
        sc->add_option("--lambda-p", tc.lambda_p, "Perceptual loss weight");
        sc->add_option("--p-part", tc.p_part, "Partial-crop sampling probability");
        sc->add_option("--crop-min", tc.crop_min, "Minimum crop size");
        sc->add_option("--seed", tc.seed, "Training seed");
        sc->add_option("--slices-per-volume", tc.slices_per_volume_per_epoch,
                       "Slice samples per volume per epoch (0 = all)");
        sc->add_option("--projection", projection, "perspective | orthogonal");
        sc->add_flag("--small", [&tc](std::int64_t) { tc.model = ModelConfig::small(); },
                     "Use the reduced 32x32 model configuration");
    };
    auto* sc_train = app.add_subcommand("train", "Train a reconstruction model");
    TrainConfig tr_cfg;
    std::string tr_manifest, tr_out = "train_out", tr_config_path, tr_projection;
    sc_train->add_option("--data", tr_manifest, "Dataset manifest.json")->required();
    sc_train->add_option("--out", tr_out, "Output directory");
    add_train_flags(sc_train, tr_cfg, tr_config_path, tr_projection);

    // reconstruct
    auto* sc_rec = app.add_subcommand("reconstruct", "Reconstruct one CT slice from a pair");
    std::string rec_ckpt, rec_tc, rec_vol, rec_pa, rec_lat, rec_plane = "axial", rec_crop,
                rec_out = "reconstruct_out";
    int rec_index = 0;
    RigConfig rec_rig;
    sc_rec->add_option("--checkpoint", rec_ckpt, "Model checkpoint")->required();
    sc_rec->add_option("--train-config", rec_tc, "train_config.json from the training run")
        ->required();
    sc_rec->add_option("--volume", rec_vol, "Ground-truth volume (.vol)")->required();
    sc_rec->add_option("--pa", rec_pa, "PA X-ray (.xray)")->required();
    sc_rec->add_option("--lat", rec_lat, "Lateral X-ray (.xray)")->required();
    sc_rec->add_option("--plane", rec_plane, "axial | coronal | sagittal");
    sc_rec->add_option("--index", rec_index, "Slice index");
    sc_rec->add_option("--crop", rec_crop, "row0,col0,rows,cols window (native pixels)");
    sc_rec->add_option("--source-dist", rec_rig.source_dist, "Source distance");
    sc_rec->add_option("--focal", rec_rig.focal, "Focal length");
    sc_rec->add_option("--out", rec_out, "Output directory");

    // eval
    auto* sc_eval = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset split");
    std::string ev_ckpt, ev_tc, ev_manifest, ev_split = "test", ev_out = "eval_out";
    bool ev_crops = false;
    int ev_stride = 1;
    sc_eval->add_option("--checkpoint", ev_ckpt, "Model checkpoint")->required();
    sc_eval->add_option("--train-config", ev_tc, "train_config.json from the training run")
        ->required();
    sc_eval->add_option("--data", ev_manifest, "Dataset manifest.json")->required();
    sc_eval->add_option("--split", ev_split, "train | val | test");
    sc_eval->add_flag("--crop-suite", ev_crops, "Also evaluate native/2 and native/4 crops");
    sc_eval->add_option("--stride", ev_stride, "Evaluate every k-th slice record");
    sc_eval->add_option("--out", ev_out, "Output directory");

    // ablate
    auto* sc_ablate = app.add_subcommand(
        "ablate", "Train the projection x positional-encoding x global-feature grid");
    TrainConfig ab_cfg;
    ab_cfg.model = ModelConfig::small();
    ab_cfg.epochs = 15;
    std::string ab_manifest, ab_out = "ablate_out", ab_config_path, ab_projection_unused;
    sc_ablate->add_option("--data", ab_manifest, "Dataset manifest.json")->required();
    sc_ablate->add_option("--out", ab_out, "Output directory");
    add_train_flags(sc_ablate, ab_cfg, ab_config_path, ab_projection_unused);

    // gradcheck
    app.add_subcommand("gradcheck", "Finite-difference self-test of the autodiff ops");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        return rc == 0 ? 0 : 1;  // usage errors -> 1, --help -> 0
    }

    set_max_threads(threads);

    try {
        if (sc_phantom->parsed())
            return cmd_phantom(ph_out, ph_count, ph_dims, ph_seed, ph_organs);
        if (sc_drr->parsed()) return cmd_drr(drr_vol, drr_out, drr_res, drr_step, drr_rig);
        if (sc_dataset->parsed()) {
            ds_cfg.vol_dims = {ds_dims, ds_dims, ds_dims};
            return cmd_dataset(ds_cfg, ds_out);
        }
        if (sc_train->parsed()) {
            if (!tr_config_path.empty()) {
                // file config is the base; flags that were passed keep their values
                TrainConfig flags = tr_cfg;
                TrainConfig merged = load_train_config(tr_config_path);
                auto passed = [&](const std::string& name) {
                    return sc_train->get_option(name)->count() > 0;
                };
                if (passed("--epochs")) merged.epochs = flags.epochs;
                if (passed("--batch")) merged.batch = flags.batch;
                if (passed("--lr")) merged.adam.lr = flags.adam.lr;
                if (passed("--lambda-rec")) merged.lambda_rec = flags.lambda_rec;
                if (passed("--lambda-p")) merged.lambda_p = flags.lambda_p;
                if (passed("--p-part")) merged.p_part = flags.p_part;
                if (passed("--crop-min")) merged.crop_min = flags.crop_min;
                if (passed("--seed")) merged.seed = flags.seed;
                if (passed("--slices-per-volume"))
                    merged.slices_per_volume_per_epoch = flags.slices_per_volume_per_epoch;
                if (passed("--small")) merged.model = ModelConfig::small();
                tr_cfg = merged;
            }
            if (!tr_projection.empty())
                tr_cfg.model.projection = projection_from_name(tr_projection);
            return cmd_train(tr_manifest, tr_cfg, tr_out);
        }
        if (sc_rec->parsed())
            return cmd_reconstruct(rec_ckpt, rec_tc, rec_vol, rec_pa, rec_lat, rec_plane,
                                   rec_index, rec_crop, rec_rig, rec_out);
        if (sc_eval->parsed())
            return cmd_eval(ev_ckpt, ev_tc, ev_manifest, ev_split, ev_crops, ev_stride, ev_out);
        if (sc_ablate->parsed()) {
            if (!ab_config_path.empty()) ab_cfg = load_train_config(ab_config_path);
            return cmd_ablate(ab_manifest, ab_cfg, ab_out);
        }
        return cmd_gradcheck();
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
