#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <unordered_set>

#include "perx/tensor.hpp"

namespace perx::ad {

// ---------------------------------------------------------------------------
// conv2d

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad) {
    if (x.shape().size() != 3 || w.shape().size() != 4 || b.shape().size() != 1)
        throw ParameterError("conv2d: expected x (C,H,W), w (Co,Ci,kh,kw), b (Co)");
    if (stride < 1 || pad < 0) throw ParameterError("conv2d: invalid stride/pad");
    int ci = x.dim(0), h = x.dim(1), wd = x.dim(2);
    int co = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    if (w.dim(1) != ci) throw ParameterError("conv2d: channel mismatch");
    if (b.dim(0) != co) throw ParameterError("conv2d: bias size mismatch");
    int oh = (h + 2 * pad - kh) / stride + 1;
    int ow = (wd + 2 * pad - kw) / stride + 1;
    if (oh < 1 || ow < 1) throw ParameterError("conv2d: kernel larger than padded input");

    std::vector<double> out(static_cast<std::size_t>(co) * oh * ow);
    const double* xv = x.value().data();
    const double* wv = w.value().data();
    const double* bv = b.value().data();

    auto forward_chan = [&](std::int64_t c0, std::int64_t c1) {
        for (std::int64_t oc = c0; oc < c1; ++oc) {
            const double* wk = wv + static_cast<std::size_t>(oc) * ci * kh * kw;
            double* dst = out.data() + static_cast<std::size_t>(oc) * oh * ow;
            for (int r = 0; r < oh; ++r)
                for (int c = 0; c < ow; ++c) {
                    double acc = bv[oc];
                    for (int ic = 0; ic < ci; ++ic)
                        for (int fr = 0; fr < kh; ++fr) {
                            int ir = r * stride - pad + fr;
                            if (ir < 0 || ir >= h) continue;
                            const double* xrow = xv + (static_cast<std::size_t>(ic) * h + ir) * wd;
                            const double* wrow = wk + (static_cast<std::size_t>(ic) * kh + fr) * kw;
                            for (int fc = 0; fc < kw; ++fc) {
                                int icol = c * stride - pad + fc;
                                if (icol < 0 || icol >= wd) continue;
                                acc += xrow[icol] * wrow[fc];
                            }
                        }
                    dst[static_cast<std::size_t>(r) * ow + c] = acc;
                }
        }
    };
    std::size_t work = static_cast<std::size_t>(co) * oh * ow * ci * kh * kw;
    if (work > (1u << 16))
        parallel_for(co, forward_chan);
    else
        forward_chan(0, co);

    auto px = x.node();
    auto pw = w.node();
    auto pb = b.node();
    auto bw = [px, pw, pb, stride, pad, ci, h, wd, co, kh, kw, oh, ow, work](Node& n) {
        const double* g = n.grad.data();
        if (pb->requires_grad) {
            pb->ensure_grad();
            for (int oc = 0; oc < co; ++oc) {
                double s = 0;
                const double* gc = g + static_cast<std::size_t>(oc) * oh * ow;
                for (int i = 0; i < oh * ow; ++i) s += gc[i];
                pb->grad[oc] += s;
            }
        }
        if (pw->requires_grad) {
            pw->ensure_grad();
            auto body = [&](std::int64_t c0, std::int64_t c1) {
                for (std::int64_t oc = c0; oc < c1; ++oc) {
                    const double* gc = g + static_cast<std::size_t>(oc) * oh * ow;
                    double* wg = pw->grad.data() + static_cast<std::size_t>(oc) * ci * kh * kw;
                    for (int ic = 0; ic < ci; ++ic)
                        for (int fr = 0; fr < kh; ++fr)
                            for (int fc = 0; fc < kw; ++fc) {
                                double s = 0;
                                for (int r = 0; r < oh; ++r) {
                                    int ir = r * stride - pad + fr;
                                    if (ir < 0 || ir >= h) continue;
                                    const double* xrow =
                                        px->value.data() + (static_cast<std::size_t>(ic) * h + ir) * wd;
                                    for (int c = 0; c < ow; ++c) {
                                        int icol = c * stride - pad + fc;
                                        if (icol < 0 || icol >= wd) continue;
                                        s += gc[static_cast<std::size_t>(r) * ow + c] * xrow[icol];
                                    }
                                }
                                wg[(static_cast<std::size_t>(ic) * kh + fr) * kw + fc] += s;
                            }
                }
            };
            if (work > (1u << 16))
                parallel_for(co, body);
            else
                body(0, co);
        }
        if (px->requires_grad) {
            px->ensure_grad();
            auto body = [&](std::int64_t i0, std::int64_t i1) {
                for (std::int64_t ic = i0; ic < i1; ++ic) {
                    double* xg = px->grad.data() + static_cast<std::size_t>(ic) * h * wd;
                    for (int oc = 0; oc < co; ++oc) {
                        const double* gc = g + static_cast<std::size_t>(oc) * oh * ow;
                        const double* wk = pw->value.data() +
                                           (static_cast<std::size_t>(oc) * ci + ic) * kh * kw;
                        for (int r = 0; r < oh; ++r)
                            for (int c = 0; c < ow; ++c) {
                                double gv = gc[static_cast<std::size_t>(r) * ow + c];
                                if (gv == 0) continue;
                                for (int fr = 0; fr < kh; ++fr) {
                                    int ir = r * stride - pad + fr;
                                    if (ir < 0 || ir >= h) continue;
                                    for (int fc = 0; fc < kw; ++fc) {
                                        int icol = c * stride - pad + fc;
                                        if (icol < 0 || icol >= wd) continue;
                                        xg[static_cast<std::size_t>(ir) * wd + icol] +=
                                            gv * wk[static_cast<std::size_t>(fr) * kw + fc];
                                    }
                                }
                            }
                    }
                }
            };
            if (work > (1u << 16))
                parallel_for(ci, body);
            else
                body(0, ci);
        }
    };
    return make_op({co, oh, ow}, std::move(out), "conv2d", {px, pw, pb}, bw);
}

// ---------------------------------------------------------------------------
// group_norm

Tensor group_norm(const Tensor& x, int groups, const Tensor& gamma, const Tensor& beta) {
    if (x.shape().size() != 3) throw ParameterError("group_norm: (C,H,W) required");
    int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    if (groups < 1 || c % groups != 0)
        throw ParameterError("group_norm: channels not divisible by groups");
    if (gamma.shape() != std::vector<int>{c} || beta.shape() != std::vector<int>{c})
        throw ParameterError("group_norm: gamma/beta must have shape (C)");
    constexpr double eps = 1e-6;
    int cg = c / groups;
    std::size_t hw = static_cast<std::size_t>(h) * w;
    std::size_t m = cg * hw;

    auto mean = std::make_shared<std::vector<double>>(groups);
    auto invstd = std::make_shared<std::vector<double>>(groups);
    std::vector<double> out(x.size());
    const auto& xv = x.value();
    for (int g = 0; g < groups; ++g) {
        std::size_t base = static_cast<std::size_t>(g) * m;
        double mu = 0;
        for (std::size_t i = 0; i < m; ++i) mu += xv[base + i];
        mu /= static_cast<double>(m);
        double var = 0;
        for (std::size_t i = 0; i < m; ++i) {
            double d = xv[base + i] - mu;
            var += d * d;
        }
        var /= static_cast<double>(m);
        (*mean)[g] = mu;
        (*invstd)[g] = 1.0 / std::sqrt(var + eps);
    }
    const auto& gv = gamma.value();
    const auto& bv = beta.value();
    for (int ch = 0; ch < c; ++ch) {
        int g = ch / cg;
        for (std::size_t i = 0; i < hw; ++i) {
            std::size_t idx = ch * hw + i;
            out[idx] = gv[ch] * (xv[idx] - (*mean)[g]) * (*invstd)[g] + bv[ch];
        }
    }

    auto px = x.node();
    auto pg = gamma.node();
    auto pb = beta.node();
    auto bw = [px, pg, pb, mean, invstd, groups, cg, hw, m, c](Node& n) {
        if (pb->requires_grad) {
            pb->ensure_grad();
            for (int ch = 0; ch < c; ++ch) {
                double s = 0;
                for (std::size_t i = 0; i < hw; ++i) s += n.grad[ch * hw + i];
                pb->grad[ch] += s;
            }
        }
        if (pg->requires_grad) {
            pg->ensure_grad();
            for (int ch = 0; ch < c; ++ch) {
                int g = ch / cg;
                double s = 0;
                for (std::size_t i = 0; i < hw; ++i) {
                    std::size_t idx = ch * hw + i;
                    s += n.grad[idx] * (px->value[idx] - (*mean)[g]) * (*invstd)[g];
                }
                pg->grad[ch] += s;
            }
        }
        if (px->requires_grad) {
            px->ensure_grad();
            for (int g = 0; g < groups; ++g) {
                std::size_t base = static_cast<std::size_t>(g) * m;
                double istd = (*invstd)[g];
                double mu = (*mean)[g];
                // dxhat, then the two reduction terms of the normalization
                double sum_dxhat = 0, sum_dxhat_xhat = 0;
                for (std::size_t i = 0; i < m; ++i) {
                    std::size_t idx = base + i;
                    int ch = static_cast<int>(idx / hw);
                    double dxh = n.grad[idx] * pg->value[ch];
                    double xhat = (px->value[idx] - mu) * istd;
                    sum_dxhat += dxh;
                    sum_dxhat_xhat += dxh * xhat;
                }
                double inv_m = 1.0 / static_cast<double>(m);
                for (std::size_t i = 0; i < m; ++i) {
                    std::size_t idx = base + i;
                    int ch = static_cast<int>(idx / hw);
                    double dxh = n.grad[idx] * pg->value[ch];
                    double xhat = (px->value[idx] - mu) * istd;
                    px->grad[idx] +=
                        istd * (dxh - inv_m * sum_dxhat - xhat * inv_m * sum_dxhat_xhat);
                }
            }
        }
    };
    return make_op(x.shape(), std::move(out), "group_norm", {px, pg, pb}, bw);
}

// ---------------------------------------------------------------------------
// self-attention

namespace {

Tensor attention_scores(const Tensor& x, const SelfAttentionParams& p) {
    int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    if (h * w > 4096) throw ParameterError("self_attention: H*W must be <= 4096");
    Tensor q = reshape(conv2d(x, p.wq, p.bq, 1, 0), {c, h * w});
    Tensor k = reshape(conv2d(x, p.wk, p.bk, 1, 0), {c, h * w});
    return scale(matmul(transpose2d(q), k), 1.0 / std::sqrt(static_cast<double>(c)));
}

}  // namespace

Tensor self_attention_weights(const Tensor& x, const SelfAttentionParams& p) {
    return softmax_rows(attention_scores(x, p));
}

Tensor self_attention(const Tensor& x, const SelfAttentionParams& p) {
    if (x.shape().size() != 3) throw ParameterError("self_attention: (C,H,W) required");
    int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    Tensor a = self_attention_weights(x, p);                       // (N,N)
    Tensor v = reshape(conv2d(x, p.wv, p.bv, 1, 0), {c, h * w});   // (C,N)
    Tensor mixed = matmul(v, transpose2d(a));                      // (C,N)
    return add(x, reshape(mixed, {c, h, w}));
}

// ---------------------------------------------------------------------------
// Adam

void adam_step(std::vector<Tensor>& params, AdamState& state) {
    if (state.m.empty()) {
        state.m.resize(params.size());
        state.v.resize(params.size());
        for (std::size_t i = 0; i < params.size(); ++i) {
            state.m[i].assign(params[i].size(), 0.0);
            state.v[i].assign(params[i].size(), 0.0);
        }
    }
    if (state.m.size() != params.size()) throw ParameterError("adam_step: state size mismatch");
    state.t += 1;
    double bc1 = 1.0 - std::pow(state.cfg.beta1, static_cast<double>(state.t));
    double bc2 = 1.0 - std::pow(state.cfg.beta2, static_cast<double>(state.t));
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& p = params[i];
        if (state.m[i].size() != p.size()) throw ParameterError("adam_step: parameter shape changed");
        auto& g = p.grad();
        auto& m = state.m[i];
        auto& v = state.v[i];
        auto& val = p.value();
        for (std::size_t j = 0; j < val.size(); ++j) {
            m[j] = state.cfg.beta1 * m[j] + (1 - state.cfg.beta1) * g[j];
            v[j] = state.cfg.beta2 * v[j] + (1 - state.cfg.beta2) * g[j] * g[j];
            double mh = m[j] / bc1;
            double vh = v[j] / bc2;
            val[j] -= state.cfg.lr * mh / (std::sqrt(vh) + state.cfg.eps);
        }
    }
}

// ---------------------------------------------------------------------------
// grad_check

namespace {

void throw_on_nonfinite(const Tensor& out) {
    // post-order so producers are checked before consumers: the error names
    // the op that introduced the bad value, not one that merely propagated it
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::function<void(Node*)> visit = [&](Node* n) {
        if (!seen.insert(n).second) return;
        for (auto& p : n->parents) visit(p.get());
        order.push_back(n);
    };
    visit(out.node().get());
    for (Node* n : order)
        for (double v : n->value)
            if (!std::isfinite(v))
                throw NumericError("non-finite value produced by op '" + n->op + "'");
}

}  // namespace

GradCheckReport grad_check(const std::function<Tensor(std::vector<Tensor>&)>& f,
                           std::vector<Tensor> inputs, double h, double tol, int max_checks,
                           std::uint64_t seed) {
    for (auto& in : inputs) in.zero_grad();
    Tensor out = f(inputs);
    if (out.size() != 1) throw ParameterError("grad_check: f must be scalar-valued");
    throw_on_nonfinite(out);
    out.backward();

    std::vector<std::vector<double>> analytic;
    for (auto& in : inputs) analytic.push_back(in.grad());

    GradCheckReport rep;
    std::mt19937_64 rng(seed);
    for (std::size_t ti = 0; ti < inputs.size(); ++ti) {
        if (!inputs[ti].requires_grad()) continue;
        std::size_t n = inputs[ti].size();
        std::vector<std::size_t> idx;
        if (static_cast<int>(n) <= max_checks) {
            idx.resize(n);
            for (std::size_t i = 0; i < n; ++i) idx[i] = i;
        } else {
            std::unordered_set<std::size_t> chosen;
            std::uniform_int_distribution<std::size_t> dist(0, n - 1);
            while (chosen.size() < static_cast<std::size_t>(max_checks)) chosen.insert(dist(rng));
            idx.assign(chosen.begin(), chosen.end());
            std::sort(idx.begin(), idx.end());
        }
        for (std::size_t j : idx) {
            double orig = inputs[ti].value()[j];
            inputs[ti].value()[j] = orig + h;
            double vp = f(inputs).item();
            inputs[ti].value()[j] = orig - h;
            double vm = f(inputs).item();
            inputs[ti].value()[j] = orig;
            double num = (vp - vm) / (2 * h);
            double a = analytic[ti][j];
            double rel = std::abs(num - a) / std::max(std::abs(num) + std::abs(a), 1e-6);
            if (rel > rep.max_rel_err) {
                rep.max_rel_err = rel;
                rep.worst = "tensor#" + std::to_string(ti) + "[" + std::to_string(j) + "]";
            }
        }
    }
    rep.pass = rep.max_rel_err <= tol;
    return rep;
}

// ---------------------------------------------------------------------------
// Init and checkpoints

void kaiming_uniform_(Tensor& w, int fan_in, std::uint64_t seed) {
    if (fan_in < 1) throw ParameterError("kaiming_uniform_: fan_in must be >= 1");
    double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (double& v : w.value()) v = dist(rng);
}

namespace {

void write_u32(std::ofstream& f, std::uint32_t v) {
    f.write(reinterpret_cast<const char*>(&v), 4);
}

std::uint32_t read_u32(std::ifstream& f, const std::string& path) {
    std::uint32_t v = 0;
    if (!f.read(reinterpret_cast<char*>(&v), 4))
        throw FormatError("truncated checkpoint: " + path);
    return v;
}

}  // namespace

void save_checkpoint(const std::vector<NamedTensor>& params, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw FormatError("cannot open for write: " + path);
    f.write("PXCT", 4);
    write_u32(f, 1);
    for (const auto& [name, t] : params) {
        write_u32(f, static_cast<std::uint32_t>(name.size()));
        f.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_u32(f, static_cast<std::uint32_t>(t.shape().size()));
        for (int d : t.shape()) write_u32(f, static_cast<std::uint32_t>(d));
        std::vector<float> buf(t.value().begin(), t.value().end());
        f.write(reinterpret_cast<const char*>(buf.data()),
                static_cast<std::streamsize>(buf.size() * sizeof(float)));
    }
    if (!f) throw FormatError("write failed: " + path);
}

std::vector<NamedTensor> load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw FormatError("cannot open: " + path);
    char magic[4];
    if (!f.read(magic, 4) || std::memcmp(magic, "PXCT", 4) != 0)
        throw FormatError("bad checkpoint magic in " + path);
    std::uint32_t version = read_u32(f, path);
    if (version != 1) throw FormatError("unsupported checkpoint version in " + path);
    std::vector<NamedTensor> out;
    while (true) {
        std::uint32_t nlen = 0;
        if (!f.read(reinterpret_cast<char*>(&nlen), 4)) break;  // clean EOF
        std::string name(nlen, '\0');
        if (!f.read(name.data(), nlen)) throw FormatError("truncated checkpoint: " + path);
        std::uint32_t rank = read_u32(f, path);
        if (rank > 8) throw FormatError("implausible tensor rank in " + path);
        std::vector<int> shape(rank);
        for (auto& d : shape) d = static_cast<int>(read_u32(f, path));
        std::size_t n = numel(shape);
        std::vector<float> buf(n);
        if (!f.read(reinterpret_cast<char*>(buf.data()),
                    static_cast<std::streamsize>(n * sizeof(float))))
            throw FormatError("truncated checkpoint payload in " + path);
        out.push_back({std::move(name),
                       Tensor::from_data(std::move(shape), std::vector<double>(buf.begin(), buf.end()))});
    }
    return out;
}

}  // namespace perx::ad
