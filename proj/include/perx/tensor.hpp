#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "perx/common.hpp"

namespace perx::ad {

struct Node;
using NodePtr = std::shared_ptr<Node>;

// One value in the computation graph. Gradients are accumulated into `grad`
// by the children's backward functions during Tensor::backward().
struct Node {
    std::vector<int> shape;
    std::vector<double> value;
    std::vector<double> grad;
    bool requires_grad = false;
    std::string op = "leaf";
    std::vector<NodePtr> parents;
    std::function<void(Node&)> backward_fn;

    std::size_t size() const { return value.size(); }
    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    }
};

class Tensor {
public:
    Tensor() = default;
    explicit Tensor(NodePtr n) : n_(std::move(n)) {}

    static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
    static Tensor full(std::vector<int> shape, double v, bool requires_grad = false);
    static Tensor from_data(std::vector<int> shape, std::vector<double> data,
                            bool requires_grad = false);

    bool defined() const { return static_cast<bool>(n_); }
    const std::vector<int>& shape() const { return n_->shape; }
    std::size_t size() const { return n_->size(); }
    int dim(int i) const { return n_->shape[i]; }

    std::vector<double>& value() { return n_->value; }
    const std::vector<double>& value() const { return n_->value; }
    std::vector<double>& grad() { n_->ensure_grad(); return n_->grad; }
    bool requires_grad() const { return n_->requires_grad; }
    void set_requires_grad(bool b) { n_->requires_grad = b; }
    void zero_grad() { n_->grad.assign(n_->value.size(), 0.0); }
    double item() const;

    const NodePtr& node() const { return n_; }

    // Reverse-mode sweep from a scalar output.
    void backward() const;

private:
    NodePtr n_;
};

// Graph construction helper for custom ops.
Tensor make_op(std::vector<int> shape, std::vector<double> value, std::string op,
               std::vector<NodePtr> parents, std::function<void(Node&)> backward_fn);

std::size_t numel(const std::vector<int>& shape);

// ---------------------------------------------------------------------------
// Elementwise / linear algebra

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);
Tensor matmul(const Tensor& a, const Tensor& b);       // (m,k) x (k,n)
Tensor transpose2d(const Tensor& a);                   // (m,n) -> (n,m)
Tensor reshape(const Tensor& a, std::vector<int> shape);
Tensor softmax_rows(const Tensor& a);                  // (m,n), softmax per row
Tensor sum_all(const Tensor& a);
Tensor mean_all(const Tensor& a);
Tensor mse(const Tensor& a, const Tensor& b);

// ---------------------------------------------------------------------------
// NN building blocks (channels-first, no batch dim)

Tensor leaky_relu(const Tensor& x, double slope = 0.2);
Tensor sigmoid(const Tensor& x);

// x: (Cin,H,W), w: (Cout,Cin,kh,kw), b: (Cout). Cross-correlation.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad);

// x: (C,H,W); per-group mean/var with eps 1e-6; gamma, beta: (C).
Tensor group_norm(const Tensor& x, int groups, const Tensor& gamma, const Tensor& beta);

Tensor nearest_upsample(const Tensor& x, int factor);  // (C,H,W) -> (C,fH,fW)
Tensor concat_channels(const std::vector<Tensor>& xs); // stack along C
Tensor spatial_mean(const Tensor& x);                  // (C,H,W) -> (C)
Tensor replicate_spatial(const Tensor& v, int h, int w);  // (C) -> (C,h,w)

struct SelfAttentionParams {
    Tensor wq, wk, wv;  // (C,C,1,1)
    Tensor bq, bk, bv;  // (C)
};

// Single-head attention over H*W positions with residual connection.
Tensor self_attention(const Tensor& x, const SelfAttentionParams& p);

// The (H*W, H*W) softmax weight matrix used by self_attention.
Tensor self_attention_weights(const Tensor& x, const SelfAttentionParams& p);

// ---------------------------------------------------------------------------
// Optimizer

struct AdamConfig {
    double lr = 1e-4;
    double beta1 = 0.5;
    double beta2 = 0.9;
    double eps = 1e-8;
};

struct AdamState {
    AdamConfig cfg;
    std::vector<std::vector<double>> m, v;
    std::int64_t t = 0;
};

// Standard bias-corrected Adam over params' accumulated gradients.
void adam_step(std::vector<Tensor>& params, AdamState& state);

// ---------------------------------------------------------------------------
// Gradient verification

struct GradCheckReport {
    double max_rel_err = 0;
    bool pass = false;
    std::string worst;  // "tensor#i[j]" of the worst element
};

// Central finite differences of a scalar-valued function against the tape
// gradients. Checks up to max_checks randomly chosen elements per tensor.
GradCheckReport grad_check(const std::function<Tensor(std::vector<Tensor>&)>& f,
                           std::vector<Tensor> inputs, double h = 1e-5, double tol = 1e-4,
                           int max_checks = 40, std::uint64_t seed = 0);

// ---------------------------------------------------------------------------
// Init and checkpoints

struct NamedTensor {
    std::string name;
    Tensor tensor;
};

void kaiming_uniform_(Tensor& w, int fan_in, std::uint64_t seed);

// "PXCT" magic, u32 version, then (name_len u32, name, rank u32, dims, f32le).
void save_checkpoint(const std::vector<NamedTensor>& params, const std::string& path);
std::vector<NamedTensor> load_checkpoint(const std::string& path);

}  // namespace perx::ad
