#include "perx/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace perx::ad {

std::size_t numel(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (int d : shape) {
        if (d <= 0) throw ParameterError("non-positive tensor dimension");
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
    return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(std::vector<int> shape, double v, bool requires_grad) {
    auto n = std::make_shared<Node>();
    n->value.assign(numel(shape), v);
    n->shape = std::move(shape);
    n->requires_grad = requires_grad;
    return Tensor(n);
}

Tensor Tensor::from_data(std::vector<int> shape, std::vector<double> data, bool requires_grad) {
    if (numel(shape) != data.size()) throw ParameterError("data length does not match shape");
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->value = std::move(data);
    n->requires_grad = requires_grad;
    return Tensor(n);
}

double Tensor::item() const {
    if (size() != 1) throw ParameterError("item() requires a scalar tensor");
    return n_->value[0];
}

Tensor make_op(std::vector<int> shape, std::vector<double> value, std::string op,
               std::vector<NodePtr> parents, std::function<void(Node&)> backward_fn) {
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->value = std::move(value);
    n->op = std::move(op);
    for (auto& p : parents)
        if (p->requires_grad) n->requires_grad = true;
    n->parents = std::move(parents);
    if (n->requires_grad) n->backward_fn = std::move(backward_fn);
    return Tensor(n);
}

void Tensor::backward() const {
    if (size() != 1) throw ParameterError("backward() requires a scalar output");
    // topological order by DFS over parents
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack{{n_.get(), 0}};
    seen.insert(n_.get());
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            Node* p = node->parents[idx++].get();
            if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    n_->ensure_grad();
    n_->grad[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it)
        if ((*it)->backward_fn) (*it)->backward_fn(**it);
}

// ---------------------------------------------------------------------------

namespace {

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape())
        throw ParameterError(std::string(op) + ": shape mismatch");
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "add");
    std::vector<double> v(a.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.value()[i] + b.value()[i];
    auto pa = a.node(), pb = b.node();
    return make_op(a.shape(), std::move(v), "add", {pa, pb}, [pa, pb](Node& n) {
        if (pa->requires_grad) {
            pa->ensure_grad();
            for (std::size_t i = 0; i < n.size(); ++i) pa->grad[i] += n.grad[i];
        }
        if (pb->requires_grad) {
            pb->ensure_grad();
            for (std::size_t i = 0; i < n.size(); ++i) pb->grad[i] += n.grad[i];
        }
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "sub");
    std::vector<double> v(a.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.value()[i] - b.value()[i];
    auto pa = a.node(), pb = b.node();
    return make_op(a.shape(), std::move(v), "sub", {pa, pb}, [pa, pb](Node& n) {
        if (pa->requires_grad) {
            pa->ensure_grad();
            for (std::size_t i = 0; i < n.size(); ++i) pa->grad[i] += n.grad[i];
        }
        if (pb->requires_grad) {
            pb->ensure_grad();
            for (std::size_t i = 0; i < n.size(); ++i) pb->grad[i] -= n.grad[i];
        }
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "mul");
    std::vector<double> v(a.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.value()[i] * b.value()[i];
    auto pa = a.node(), pb = b.node();
    return make_op(a.shape(), std::move(v), "mul", {pa, pb}, [pa, pb](Node& n) {
        if (pa->requires_grad) {
            pa->ensure_grad();
            for (std::size_t i = 0; i < n.size(); ++i) pa->grad[i] += n.grad[i] * pb->value[i];
        }
        if (pb->requires_grad) {
            pb->ensure_grad();
            for (std::size_t i = 0; i < n.size(); ++i) pb->grad[i] += n.grad[i] * pa->value[i];
        }
    });
}

Tensor scale(const Tensor& a, double s) {
    std::vector<double> v(a.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.value()[i] * s;
    auto pa = a.node();
    return make_op(a.shape(), std::move(v), "scale", {pa}, [pa, s](Node& n) {
        pa->ensure_grad();
        for (std::size_t i = 0; i < n.size(); ++i) pa->grad[i] += n.grad[i] * s;
    });
}

Tensor add_scalar(const Tensor& a, double s) {
    std::vector<double> v(a.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.value()[i] + s;
    auto pa = a.node();
    return make_op(a.shape(), std::move(v), "add_scalar", {pa}, [pa](Node& n) {
        pa->ensure_grad();
        for (std::size_t i = 0; i < n.size(); ++i) pa->grad[i] += n.grad[i];
    });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.shape().size() != 2 || b.shape().size() != 2 || a.dim(1) != b.dim(0))
        throw ParameterError("matmul: incompatible shapes");
    int m = a.dim(0), k = a.dim(1), n2 = b.dim(1);
    std::vector<double> v(static_cast<std::size_t>(m) * n2, 0.0);
    const auto& av = a.value();
    const auto& bv = b.value();
    for (int i = 0; i < m; ++i)
        for (int l = 0; l < k; ++l) {
            double ail = av[static_cast<std::size_t>(i) * k + l];
            if (ail == 0) continue;
            for (int j = 0; j < n2; ++j)
                v[static_cast<std::size_t>(i) * n2 + j] += ail * bv[static_cast<std::size_t>(l) * n2 + j];
        }
    auto pa = a.node(), pb = b.node();
    return make_op({m, n2}, std::move(v), "matmul", {pa, pb}, [pa, pb, m, k, n2](Node& n) {
        if (pa->requires_grad) {
            pa->ensure_grad();
            // dA = dC * B^T
            for (int i = 0; i < m; ++i)
                for (int l = 0; l < k; ++l) {
                    double s = 0;
                    for (int j = 0; j < n2; ++j)
                        s += n.grad[static_cast<std::size_t>(i) * n2 + j] *
                             pb->value[static_cast<std::size_t>(l) * n2 + j];
                    pa->grad[static_cast<std::size_t>(i) * k + l] += s;
                }
        }
        if (pb->requires_grad) {
            pb->ensure_grad();
            // dB = A^T * dC
            for (int l = 0; l < k; ++l)
                for (int j = 0; j < n2; ++j) {
                    double s = 0;
                    for (int i = 0; i < m; ++i)
                        s += pa->value[static_cast<std::size_t>(i) * k + l] *
                             n.grad[static_cast<std::size_t>(i) * n2 + j];
                    pb->grad[static_cast<std::size_t>(l) * n2 + j] += s;
                }
        }
    });
}

Tensor transpose2d(const Tensor& a) {
    if (a.shape().size() != 2) throw ParameterError("transpose2d: rank-2 tensor required");
    int m = a.dim(0), n2 = a.dim(1);
    std::vector<double> v(a.size());
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n2; ++j)
            v[static_cast<std::size_t>(j) * m + i] = a.value()[static_cast<std::size_t>(i) * n2 + j];
    auto pa = a.node();
    return make_op({n2, m}, std::move(v), "transpose2d", {pa}, [pa, m, n2](Node& n) {
        pa->ensure_grad();
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n2; ++j)
                pa->grad[static_cast<std::size_t>(i) * n2 + j] +=
                    n.grad[static_cast<std::size_t>(j) * m + i];
    });
}

Tensor reshape(const Tensor& a, std::vector<int> shape) {
    if (numel(shape) != a.size()) throw ParameterError("reshape: element count mismatch");
    auto pa = a.node();
    return make_op(std::move(shape), a.value(), "reshape", {pa}, [pa](Node& n) {
        pa->ensure_grad();
        for (std::size_t i = 0; i < n.size(); ++i) pa->grad[i] += n.grad[i];
    });
}

Tensor softmax_rows(const Tensor& a) {
    if (a.shape().size() != 2) throw ParameterError("softmax_rows: rank-2 tensor required");
    int m = a.dim(0), n2 = a.dim(1);
    std::vector<double> v(a.size());
    for (int i = 0; i < m; ++i) {
        const double* row = a.value().data() + static_cast<std::size_t>(i) * n2;
        double* out = v.data() + static_cast<std::size_t>(i) * n2;
        double mx = *std::max_element(row, row + n2);
        double sum = 0;
        for (int j = 0; j < n2; ++j) sum += (out[j] = std::exp(row[j] - mx));
        for (int j = 0; j < n2; ++j) out[j] /= sum;
    }
    auto pa = a.node();
    return make_op(a.shape(), std::move(v), "softmax", {pa}, [pa, m, n2](Node& n) {
        pa->ensure_grad();
        for (int i = 0; i < m; ++i) {
            const double* y = n.value.data() + static_cast<std::size_t>(i) * n2;
            const double* gy = n.grad.data() + static_cast<std::size_t>(i) * n2;
            double dot = 0;
            for (int j = 0; j < n2; ++j) dot += y[j] * gy[j];
            double* gx = pa->grad.data() + static_cast<std::size_t>(i) * n2;
            for (int j = 0; j < n2; ++j) gx[j] += y[j] * (gy[j] - dot);
        }
    });
}

Tensor sum_all(const Tensor& a) {
    double s = 0;
    for (double v : a.value()) s += v;
    auto pa = a.node();
    return make_op({1}, {s}, "sum", {pa}, [pa](Node& n) {
        pa->ensure_grad();
        for (double& g : pa->grad) g += n.grad[0];
    });
}

Tensor mean_all(const Tensor& a) {
    return scale(sum_all(a), 1.0 / static_cast<double>(a.size()));
}

Tensor mse(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "mse");
    return mean_all(mul(sub(a, b), sub(a, b)));
}

Tensor leaky_relu(const Tensor& x, double slope) {
    std::vector<double> v(x.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
        double a = x.value()[i];
        v[i] = a >= 0 ? a : slope * a;
    }
    auto px = x.node();
    return make_op(x.shape(), std::move(v), "leaky_relu", {px}, [px, slope](Node& n) {
        px->ensure_grad();
        for (std::size_t i = 0; i < n.size(); ++i)
            px->grad[i] += n.grad[i] * (px->value[i] >= 0 ? 1.0 : slope);
    });
}

Tensor sigmoid(const Tensor& x) {
    std::vector<double> v(x.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = 1.0 / (1.0 + std::exp(-x.value()[i]));
    auto px = x.node();
    return make_op(x.shape(), std::move(v), "sigmoid", {px}, [px](Node& n) {
        px->ensure_grad();
        for (std::size_t i = 0; i < n.size(); ++i)
            px->grad[i] += n.grad[i] * n.value[i] * (1.0 - n.value[i]);
    });
}

Tensor nearest_upsample(const Tensor& x, int factor) {
    if (x.shape().size() != 3) throw ParameterError("nearest_upsample: (C,H,W) required");
    if (factor < 1) throw ParameterError("nearest_upsample: factor must be >= 1");
    int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    int oh = h * factor, ow = w * factor;
    std::vector<double> v(static_cast<std::size_t>(c) * oh * ow);
    for (int ch = 0; ch < c; ++ch)
        for (int r = 0; r < oh; ++r)
            for (int q = 0; q < ow; ++q)
                v[(static_cast<std::size_t>(ch) * oh + r) * ow + q] =
                    x.value()[(static_cast<std::size_t>(ch) * h + r / factor) * w + q / factor];
    auto px = x.node();
    return make_op({c, oh, ow}, std::move(v), "nearest_upsample", {px},
                   [px, c, h, w, factor, oh, ow](Node& n) {
                       px->ensure_grad();
                       for (int ch = 0; ch < c; ++ch)
                           for (int r = 0; r < oh; ++r)
                               for (int q = 0; q < ow; ++q)
                                   px->grad[(static_cast<std::size_t>(ch) * h + r / factor) * w +
                                            q / factor] +=
                                       n.grad[(static_cast<std::size_t>(ch) * oh + r) * ow + q];
                   });
}

Tensor concat_channels(const std::vector<Tensor>& xs) {
    if (xs.empty()) throw ParameterError("concat_channels: empty input list");
    int h = xs[0].dim(1), w = xs[0].dim(2);
    int ctot = 0;
    for (const auto& x : xs) {
        if (x.shape().size() != 3 || x.dim(1) != h || x.dim(2) != w)
            throw ParameterError("concat_channels: spatial dims mismatch");
        ctot += x.dim(0);
    }
    std::vector<double> v;
    v.reserve(static_cast<std::size_t>(ctot) * h * w);
    std::vector<NodePtr> parents;
    for (const auto& x : xs) {
        v.insert(v.end(), x.value().begin(), x.value().end());
        parents.push_back(x.node());
    }
    auto ps = parents;
    return make_op({ctot, h, w}, std::move(v), "concat_channels", std::move(parents),
                   [ps](Node& n) {
                       std::size_t off = 0;
                       for (auto& p : ps) {
                           if (p->requires_grad) {
                               p->ensure_grad();
                               for (std::size_t i = 0; i < p->size(); ++i)
                                   p->grad[i] += n.grad[off + i];
                           }
                           off += p->size();
                       }
                   });
}

Tensor spatial_mean(const Tensor& x) {
    if (x.shape().size() != 3) throw ParameterError("spatial_mean: (C,H,W) required");
    int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    std::size_t hw = static_cast<std::size_t>(h) * w;
    std::vector<double> v(c, 0.0);
    for (int ch = 0; ch < c; ++ch) {
        double s = 0;
        for (std::size_t i = 0; i < hw; ++i) s += x.value()[ch * hw + i];
        v[ch] = s / static_cast<double>(hw);
    }
    auto px = x.node();
    return make_op({c}, std::move(v), "spatial_mean", {px}, [px, c, hw](Node& n) {
        px->ensure_grad();
        double inv = 1.0 / static_cast<double>(hw);
        for (int ch = 0; ch < c; ++ch)
            for (std::size_t i = 0; i < hw; ++i) px->grad[ch * hw + i] += n.grad[ch] * inv;
    });
}

Tensor replicate_spatial(const Tensor& v, int h, int w) {
    if (v.shape().size() != 1) throw ParameterError("replicate_spatial: (C) required");
    int c = v.dim(0);
    std::size_t hw = static_cast<std::size_t>(h) * w;
    std::vector<double> out(static_cast<std::size_t>(c) * hw);
    for (int ch = 0; ch < c; ++ch)
        for (std::size_t i = 0; i < hw; ++i) out[ch * hw + i] = v.value()[ch];
    auto pv = v.node();
    return make_op({c, h, w}, std::move(out), "replicate_spatial", {pv}, [pv, c, hw](Node& n) {
        pv->ensure_grad();
        for (int ch = 0; ch < c; ++ch) {
            double s = 0;
            for (std::size_t i = 0; i < hw; ++i) s += n.grad[ch * hw + i];
            pv->grad[ch] += s;
        }
    });
}

}  // namespace perx::ad
