#pragma once

#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "perx/drr.hpp"
#include "perx/metrics.hpp"
#include "perx/model.hpp"
#include "perx/volume.hpp"

namespace perx {

struct RigConfig {
    double source_dist = 3.0;
    double focal = 2.0;

    std::pair<CameraPose, CameraPose> make() const {
        return make_biplanar_rig(source_dist, focal);
    }
};

struct DatasetConfig {
    int n_train = 40, n_val = 5, n_test = 5;
    std::array<int, 3> vol_dims{64, 64, 64};
    int drr_res = 64;
    double drr_step = 1.0 / 128.0;
    RigConfig rig;
    std::uint64_t seed = 1234;
    int slice_stride = 1;  // keep every k-th slice per plane
    PhantomSpec phantom;   // seed field is assigned per volume
};

struct SliceRef {
    Plane plane;
    int index;
};

struct VolumeEntry {
    std::string volume, drr_pa, drr_lat;
    std::vector<SliceRef> slices;
};

struct Manifest {
    std::uint64_t seed = 0;
    RigConfig rig;
    std::array<int, 3> vol_dims{0, 0, 0};
    int drr_res = 0;
    std::map<std::string, std::vector<VolumeEntry>> splits;

    void save(const std::string& path) const;
    static Manifest load(const std::string& path);
};

// Generates phantoms, renders DRR pairs, enumerates slices over the three
// planes and writes everything plus manifest.json under out_dir.
Manifest build_dataset(const DatasetConfig& cfg, const std::string& out_dir);

// With probability 1-p_part: no crop. Otherwise uniform size per axis in
// [crop_min, native] and uniform valid position.
std::optional<CropWindow> sample_crop(int rows, int cols, double p_part, int crop_min,
                                      std::mt19937_64& rng);

// Frozen randomly-initialized conv stack standing in for a perceptual
// feature extractor. Weights never receive gradients.
class PerceptualNet {
public:
    explicit PerceptualNet(std::uint64_t seed = 7);
    ad::Tensor features(const ad::Tensor& img) const;  // (1,H,W) -> (C,h,w)

private:
    std::vector<ad::Tensor> ws_, bs_;
};

// lambda_rec * MSE + lambda_p * feature-space MSE. pnet may be null when
// lambda_p is 0.
ad::Tensor loss_total(const ad::Tensor& pred, const ad::Tensor& target, double lambda_rec,
                      double lambda_p, const PerceptualNet* pnet);

struct TrainConfig {
    double lambda_rec = 1.0, lambda_p = 1.0;
    ad::AdamConfig adam{1e-4, 0.5, 0.9, 1e-8};
    int epochs = 15, batch = 16;
    double p_part = 0.0;
    int crop_min = 16;
    std::uint64_t seed = 42;
    int slices_per_volume_per_epoch = 16;  // 0 = every slice
    int val_slices_per_volume = 8;
    ModelConfig model;

    std::string to_json() const;
    static TrainConfig from_json(const std::string& text);
    std::string digest() const;
};

struct EpochStats {
    int epoch = 0;
    double train_loss = 0, val_loss = 0, val_psnr = 0;
};

struct TrainResult {
    std::string checkpoint_path;
    std::vector<EpochStats> curve;
    double best_val_loss = 0;
};

// Seeded mini-batch training with best-validation checkpointing. Writes
// model.ckpt and loss_curve.csv under out_dir.
TrainResult train(const Manifest& manifest, const TrainConfig& cfg, const std::string& out_dir);

struct EvalRow {
    std::string split;
    std::string plane;   // "axial"/"coronal"/"sagittal" or "all" for aggregates
    int slice_index = 0; // -1 for aggregate rows
    std::string crop;    // "full" or "RxC"
    double psnr_db = 0, ssim = 0;
};

struct EvalReport {
    std::vector<EvalRow> rows;
    double mean_psnr = 0, mean_ssim = 0;  // full-frame aggregate
};

// Full-frame metrics per plane plus aggregates; optional partial suite at
// native/2 and native/4 centered crops. Writes CSV when csv_path nonempty.
EvalReport evaluate(const PerxModel& model, const Manifest& manifest, const std::string& split,
                    bool crop_suite, int slice_stride, const std::string& csv_path);

Image2D tensor_to_image(const ad::Tensor& t);
ad::Tensor image_to_tensor(const Image2D& img);

}  // namespace perx
