#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include "perx/training.hpp"

using namespace perx;
using ad::Tensor;

namespace fs = std::filesystem;

namespace {

std::string tmp_dir(const std::string& name) {
    fs::path p = fs::temp_directory_path() / name;
    fs::remove_all(p);
    fs::create_directories(p);
    return p.string();
}

Image2D random_img(int h, int w, std::uint64_t seed) {
    Image2D img(h, w);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> dist(0, 1);
    for (double& v : img.pix) v = dist(rng);
    return img;
}

DatasetConfig tiny_dataset_config() {
    DatasetConfig cfg;
    cfg.n_train = 2;
    cfg.n_val = 1;
    cfg.n_test = 1;
    cfg.vol_dims = {32, 32, 32};
    cfg.drr_res = 32;
    cfg.drr_step = 1.0 / 64;
    cfg.slice_stride = 8;
    return cfg;
}

TrainConfig tiny_train_config() {
    TrainConfig tc;
    tc.model = ModelConfig::small();
    tc.epochs = 2;
    tc.batch = 4;
    tc.slices_per_volume_per_epoch = 2;
    tc.val_slices_per_volume = 2;
    tc.lambda_p = 0.0;  // keep the smoke runs fast
    return tc;
}

}  // namespace

TEST_CASE("metrics: identical images give infinite psnr and unit ssim") {
    Image2D img = random_img(16, 16, 1);
    CHECK(std::isinf(psnr(img, img)));
    CHECK(ssim(img, img) == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(mse(img, img) == 0.0);
}

TEST_CASE("metrics: psnr of a known mse is exact") {
    Image2D a(8, 8), b(8, 8);
    for (double& v : b.pix) v = 0.1;  // uniform offset: mse = 0.01
    CHECK(mse(a, b) == doctest::Approx(0.01).epsilon(1e-12));
    CHECK(psnr(a, b) == doctest::Approx(20.0).epsilon(1e-9));
}

TEST_CASE("metrics: symmetry") {
    Image2D a = random_img(16, 16, 2);
    Image2D b = random_img(16, 16, 3);
    CHECK(psnr(a, b) == doctest::Approx(psnr(b, a)).epsilon(1e-9));
    CHECK(ssim(a, b) == doctest::Approx(ssim(b, a)).epsilon(1e-9));
}

TEST_CASE("metrics: anti-correlated structure drives ssim negative") {
    Image2D a(16, 16), b(16, 16);
    for (int r = 0; r < 16; ++r)
        for (int c = 0; c < 16; ++c) {
            double v = ((r + c) % 2 == 0) ? 1.0 : 0.0;
            a.at(r, c) = v;
            b.at(r, c) = 1.0 - v;
        }
    CHECK(ssim(a, b) < 0.0);
}

TEST_CASE("metrics: monotone degradation under increasing noise") {
    Image2D clean(24, 24);
    for (int r = 0; r < 24; ++r)
        for (int c = 0; c < 24; ++c) clean.at(r, c) = 0.5 + 0.4 * std::sin(r * 0.7) * std::cos(c * 0.5);
    std::vector<double> sigmas{0.01, 0.05, 0.1};
    std::vector<double> psnrs, ssims;
    std::mt19937_64 rng(4);
    for (double s : sigmas) {
        std::normal_distribution<double> noise(0, s);
        Image2D noisy = clean;
        for (double& v : noisy.pix) v += noise(rng);
        psnrs.push_back(psnr(clean, noisy));
        ssims.push_back(ssim(clean, noisy));
    }
    CHECK(psnrs[0] > psnrs[1]);
    CHECK(psnrs[1] > psnrs[2]);
    CHECK(ssims[0] > ssims[1]);
    CHECK(ssims[1] > ssims[2]);
}

TEST_CASE("metrics: ssim requires the 11x11 window to fit") {
    Image2D small(8, 8);
    CHECK_THROWS_AS(ssim(small, small), ParameterError);
    Image2D mismatched(16, 8);
    Image2D other(16, 16);
    CHECK_THROWS_AS(psnr(mismatched, other), ParameterError);
}

TEST_CASE("sample_crop: edge probabilities") {
    std::mt19937_64 rng(5);
    for (int i = 0; i < 50; ++i) CHECK_FALSE(sample_crop(32, 32, 0.0, 16, rng).has_value());
    for (int i = 0; i < 50; ++i) {
        auto c = sample_crop(32, 32, 1.0, 32, rng);
        REQUIRE(c.has_value());
        // crop_min == native forces the full window
        CHECK(c->rows == 32);
        CHECK(c->cols == 32);
        CHECK(c->row0 == 0);
        CHECK(c->col0 == 0);
    }
}

TEST_CASE("sample_crop: monte-carlo rate and bounds") {
    std::mt19937_64 rng(6);
    int hits = 0, n = 10000;
    for (int i = 0; i < n; ++i) {
        auto c = sample_crop(64, 48, 0.5, 16, rng);
        if (!c) continue;
        ++hits;
        CHECK(c->rows >= 16);
        CHECK(c->rows <= 64);
        CHECK(c->cols >= 16);
        CHECK(c->cols <= 48);
        CHECK(c->row0 >= 0);
        CHECK(c->row0 + c->rows <= 64);
        CHECK(c->col0 >= 0);
        CHECK(c->col0 + c->cols <= 48);
    }
    CHECK(std::abs(hits / double(n) - 0.5) < 0.02);
}

TEST_CASE("loss_total: zero at identity, exact mse when perceptual is off") {
    Tensor pred = Tensor::from_data({1, 2, 2}, {0.1, 0.9, 0.4, 0.6}, true);
    Tensor same = Tensor::from_data({1, 2, 2}, {0.1, 0.9, 0.4, 0.6});
    PerceptualNet pnet(7);
    CHECK(loss_total(pred, same, 1.0, 1.0, &pnet).value()[0] == doctest::Approx(0.0).epsilon(1e-15));

    // hand value: mean of (1, 0, 0, 1) = 0.5
    Tensor target = Tensor::from_data({1, 2, 2}, {1.1, 0.9, 0.4, -0.4});
    CHECK(loss_total(pred, target, 1.0, 0.0, nullptr).value()[0] ==
          doctest::Approx(0.5).epsilon(1e-12));
    // rec weight scales linearly
    CHECK(loss_total(pred, target, 2.0, 0.0, nullptr).value()[0] ==
          doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("loss_total: decomposes into its two terms") {
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> dist(0, 1);
    std::vector<double> pv(256), tv(256);
    for (double& v : pv) v = dist(rng);
    for (double& v : tv) v = dist(rng);
    Tensor pred = Tensor::from_data({1, 16, 16}, pv, true);
    Tensor target = Tensor::from_data({1, 16, 16}, tv);
    PerceptualNet pnet(7);
    double rec = loss_total(pred, target, 1.0, 0.0, nullptr).value()[0];
    double per = loss_total(pred, target, 0.0, 1.0, &pnet).value()[0];
    double tot = loss_total(pred, target, 0.7, 1.3, &pnet).value()[0];
    CHECK(tot == doctest::Approx(0.7 * rec + 1.3 * per).epsilon(1e-12));
    CHECK(per > 0.0);
}

TEST_CASE("loss_total: gradients match finite differences") {
    PerceptualNet pnet(7);
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> dist(0, 1);
    std::vector<double> pv(64), tv(64);
    for (double& v : pv) v = dist(rng);
    for (double& v : tv) v = dist(rng);
    Tensor target = Tensor::from_data({1, 8, 8}, tv);
    auto f = [&](std::vector<Tensor>& in) { return loss_total(in[0], target, 1.0, 1.0, &pnet); };
    ad::GradCheckReport rep = ad::grad_check(f, {Tensor::from_data({1, 8, 8}, pv, true)});
    INFO("worst ", rep.worst, " rel ", rep.max_rel_err);
    CHECK(rep.pass);
}

TEST_CASE("perceptual net: frozen and deterministic") {
    PerceptualNet a(7), b(7);
    Tensor img = Tensor::from_data({1, 16, 16}, std::vector<double>(256, 0.3));
    CHECK(a.features(img).value() == b.features(img).value());
    PerceptualNet c(8);
    CHECK(a.features(img).value() != c.features(img).value());
}

TEST_CASE("build_dataset: record counts, split layout, determinism") {
    DatasetConfig cfg;
    cfg.n_train = 1;
    cfg.n_val = 0;
    cfg.n_test = 0;
    cfg.vol_dims = {64, 64, 64};
    cfg.drr_res = 32;
    cfg.drr_step = 1.0 / 64;
    std::string dir = tmp_dir("perx_ds_counts");
    Manifest man = build_dataset(cfg, dir);
    REQUIRE(man.splits.count("train") == 1);
    const auto& entry = man.splits.at("train")[0];
    // 64 slices per plane over three planes
    CHECK(entry.slices.size() == 192);
    CHECK(fs::exists(entry.volume));
    CHECK(fs::exists(entry.drr_pa));
    CHECK(fs::exists(entry.drr_lat));
    CHECK(fs::exists(fs::path(dir) / "manifest.json"));

    Manifest back = Manifest::load((fs::path(dir) / "manifest.json").string());
    CHECK(back.splits.at("train")[0].slices.size() == 192);
    CHECK(back.seed == cfg.seed);
    CHECK(back.drr_res == 32);

    // same seed, second directory: identical volume payloads
    std::string dir2 = tmp_dir("perx_ds_counts2");
    Manifest man2 = build_dataset(cfg, dir2);
    Volume v1 = load_volume(man.splits.at("train")[0].volume);
    Volume v2 = load_volume(man2.splits.at("train")[0].volume);
    CHECK(v1.data == v2.data);
}

TEST_CASE("build_dataset: splits are disjoint and slice stride thins records") {
    DatasetConfig cfg = tiny_dataset_config();
    std::string dir = tmp_dir("perx_ds_splits");
    Manifest man = build_dataset(cfg, dir);
    REQUIRE(man.splits.at("train").size() == 2);
    REQUIRE(man.splits.at("val").size() == 1);
    REQUIRE(man.splits.at("test").size() == 1);
    std::set<std::string> paths;
    for (const auto& [split, entries] : man.splits)
        for (const auto& e : entries) CHECK(paths.insert(e.volume).second);
    // stride 8 on 32^3: 4 slices per plane, 12 per volume
    CHECK(man.splits.at("train")[0].slices.size() == 12);

    // volumes across splits differ
    Volume a = load_volume(man.splits.at("train")[0].volume);
    Volume b = load_volume(man.splits.at("val")[0].volume);
    CHECK(a.data != b.data);
}

TEST_CASE("train: zero learning rate leaves parameters fixed") {
    DatasetConfig dcfg = tiny_dataset_config();
    std::string ddir = tmp_dir("perx_train_lr0_data");
    Manifest man = build_dataset(dcfg, ddir);

    TrainConfig tc = tiny_train_config();
    tc.epochs = 1;
    tc.adam.lr = 0.0;
    std::string odir = tmp_dir("perx_train_lr0_out");
    TrainResult res = train(man, tc, odir);

    PerxModel fresh(tc.model, tc.seed);
    PerxModel trained = PerxModel::load(res.checkpoint_path, tc.model);
    auto a = fresh.named_parameters();
    auto b = trained.named_parameters();
    REQUIRE(a.size() == b.size());
    for (size_t i = 0; i < a.size(); ++i) {
        REQUIRE(a[i].name == b[i].name);
        for (size_t j = 0; j < a[i].tensor.size(); ++j)
            CHECK(a[i].tensor.value()[j] ==
                  doctest::Approx(b[i].tensor.value()[j]).epsilon(1e-6));
    }
}

TEST_CASE("train: seeded runs reproduce the loss curve and reduce the loss") {
    DatasetConfig dcfg = tiny_dataset_config();
    std::string ddir = tmp_dir("perx_train_repro_data");
    Manifest man = build_dataset(dcfg, ddir);

    TrainConfig tc = tiny_train_config();
    tc.epochs = 3;
    tc.adam.lr = 3e-3;
    std::string o1 = tmp_dir("perx_train_repro_out1");
    std::string o2 = tmp_dir("perx_train_repro_out2");
    TrainResult r1 = train(man, tc, o1);
    TrainResult r2 = train(man, tc, o2);
    REQUIRE(r1.curve.size() == 3);
    REQUIRE(r2.curve.size() == 3);
    for (size_t i = 0; i < r1.curve.size(); ++i) {
        CHECK(r1.curve[i].train_loss == r2.curve[i].train_loss);
        CHECK(r1.curve[i].val_loss == r2.curve[i].val_loss);
    }
    // training moves downhill on this tiny problem
    CHECK(r1.curve.back().train_loss < r1.curve.front().train_loss);
    CHECK(fs::exists(fs::path(o1) / "loss_curve.csv"));
    CHECK(fs::exists(fs::path(o1) / "train_config.json"));

    // curve CSV carries a header plus one row per epoch
    std::ifstream f(fs::path(o1) / "loss_curve.csv");
    std::string line;
    int lines = 0;
    while (std::getline(f, line))
        if (!line.empty()) ++lines;
    CHECK(lines == 4);
}

TEST_CASE("evaluate: finite full-frame metrics and aggregate rows") {
    DatasetConfig dcfg = tiny_dataset_config();
    std::string ddir = tmp_dir("perx_eval_data");
    Manifest man = build_dataset(dcfg, ddir);
    PerxModel model(ModelConfig::small(), 11);

    std::string csv = (fs::path(tmp_dir("perx_eval_out")) / "eval.csv").string();
    EvalReport rep = evaluate(model, man, "test", true, 1, csv);
    REQUIRE(!rep.rows.empty());
    bool saw_aggregate = false, saw_crop = false;
    for (const auto& row : rep.rows) {
        CHECK(std::isfinite(row.psnr_db));
        CHECK(std::isfinite(row.ssim));
        if (row.slice_index == -1 && row.plane == "all") saw_aggregate = true;
        if (row.crop != "full") saw_crop = true;
    }
    CHECK(saw_aggregate);
    CHECK(saw_crop);
    CHECK(std::isfinite(rep.mean_psnr));
    CHECK(rep.mean_ssim > -1.0);
    CHECK(rep.mean_ssim <= 1.0);

    std::ifstream f(csv);
    std::string header;
    std::getline(f, header);
    CHECK(header == "split,plane,slice_index,crop,psnr_db,ssim");
}

TEST_CASE("train config: JSON round-trip preserves the digest") {
    TrainConfig tc = tiny_train_config();
    tc.p_part = 0.5;
    tc.adam.lr = 2.5e-4;
    TrainConfig back = TrainConfig::from_json(tc.to_json());
    CHECK(back.digest() == tc.digest());
    CHECK(back.p_part == 0.5);
    CHECK(back.adam.lr == 2.5e-4);
    TrainConfig other = back;
    other.batch += 1;
    CHECK(other.digest() != tc.digest());
}

TEST_CASE("tensor/image conversion round-trip") {
    Image2D img = random_img(6, 9, 12);
    Tensor t = image_to_tensor(img);
    REQUIRE(t.shape() == std::vector<int>{1, 6, 9});
    Image2D back = tensor_to_image(t);
    CHECK(back.pix == img.pix);
}
