#pragma once

#include <string>
#include <vector>

#include "perx/geometry.hpp"
#include "perx/resampler.hpp"
#include "perx/tensor.hpp"
#include "perx/volume.hpp"

namespace perx {

enum class ProjectionMode { Perspective, Orthogonal };

const char* projection_name(ProjectionMode m);
ProjectionMode projection_from_name(const std::string& s);

struct ModelConfig {
    int input_h = 64, input_w = 64;   // X-ray resolution consumed by the encoder
    int c_local = 64, c_global = 32;  // C_l, C_g
    int feat_h = 8, feat_w = 8;       // H_l, W_l of the encoder's local map
    int grid_h = 16, grid_w = 16;     // H_f, W_f of the resampled grid
    int out_h = 64, out_w = 64;       // decoder output resolution
    int pe_freqs = 10;                // L
    bool use_global = true;
    bool use_pe = true;
    ProjectionMode projection = ProjectionMode::Perspective;
    int dec_c1 = 64, dec_c2 = 32;     // decoder block widths

    // Reduced configuration for quick experiments (32^2 inputs).
    static ModelConfig small();

    int pe_channels() const { return use_pe ? 6 * pe_freqs + 3 : 0; }
    int decoder_in_channels() const {
        return 2 * c_local + (use_global ? 2 * c_global : 0) + pe_channels();
    }
    void validate() const;

    std::string to_json() const;
    static ModelConfig from_json(const std::string& text);
    std::string digest() const;  // stable hex hash of the canonical JSON
};

// gamma(x): raw coordinates followed by sin/cos at frequencies 2^k * pi.
// Length 3 + 6L.
std::vector<double> positional_encoding(const Vec3& x, int L);

struct EncoderOutput {
    ad::Tensor local;       // (C_l, H_l, W_l)
    ad::Tensor global_vec;  // (C_g)
};

class PerxModel {
public:
    PerxModel(const ModelConfig& cfg, std::uint64_t seed);

    const ModelConfig& config() const { return cfg_; }

    EncoderOutput encode(const ad::Tensor& image) const;  // (1,H,W) in [0,1]

    // Full pipeline for one slice: encode both views, resample per view,
    // replicate globals, positional-encode the grid, decode.
    ad::Tensor forward(const ad::Tensor& pa_image, const ad::Tensor& lat_image,
                       const std::vector<Vec3>& grid, const CameraPose& pa_pose,
                       const CameraPose& lat_pose) const;

    // Decoder only; inputs already at (decoder_in_channels, H_f, W_f).
    ad::Tensor decode(const ad::Tensor& stacked) const;

    std::vector<ad::Tensor> parameters();
    std::vector<ad::NamedTensor> named_parameters() const;
    void zero_grad();

    void save(const std::string& path) const;
    // Throws FormatError on a config digest mismatch.
    static PerxModel load(const std::string& path, const ModelConfig& cfg);

    // Detector coordinates of the grid under this model's projection mode.
    std::vector<Vec2> project_grid(const std::vector<Vec3>& grid, const CameraPose& pose,
                                   View view) const;

private:
    ModelConfig cfg_;
    struct Conv {
        ad::Tensor w, b;
    };
    std::vector<Conv> enc_;           // stride-2 blocks down to (C_l,H_l,W_l)
    Conv enc_global_;                 // one more stride-2 block to C_g
    ad::SelfAttentionParams attn_;
    Conv dec1_, dec2_, dec_out_;
    ad::Tensor gn1_gamma_, gn1_beta_, gn2_gamma_, gn2_beta_;

    void init_params(std::uint64_t seed);
};

}  // namespace perx
