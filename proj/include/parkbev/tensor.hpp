#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "parkbev/errors.hpp"

namespace parkbev {

using Shape = std::vector<int>;

inline size_t shapeSize(const Shape& s) {
    size_t n = 1;
    for (int d : s) n *= static_cast<size_t>(d);
    return n;
}

inline std::string shapeStr(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << "]";
    return os.str();
}

template <class S>
struct TensorNode {
    Shape shape;
    std::vector<S> value;
    std::vector<S> grad;  // allocated lazily, same length as value
    bool requires_grad = false;
    std::vector<std::shared_ptr<TensorNode>> parents;
    std::function<void()> backward_fn;

    void ensureGrad() {
        if (grad.size() != value.size()) grad.assign(value.size(), S(0));
    }
};

// Dense n-dimensional tensor with reverse-mode gradient tracking. Copying a
// Tensor copies a handle to the same node.
template <class S>
class Tensor {
  public:
    using Node = TensorNode<S>;

    Tensor() = default;
    explicit Tensor(Shape shape, bool requires_grad = false)
        : node_(std::make_shared<Node>()) {
        node_->shape = std::move(shape);
        node_->value.assign(shapeSize(node_->shape), S(0));
        node_->requires_grad = requires_grad;
    }

    static Tensor fromData(Shape shape, std::vector<S> values, bool requires_grad = false) {
        if (shapeSize(shape) != values.size())
            throw ConfigError("tensor data length " + std::to_string(values.size()) +
                              " does not match shape " + shapeStr(shape));
        Tensor t;
        t.node_ = std::make_shared<Node>();
        t.node_->shape = std::move(shape);
        t.node_->value = std::move(values);
        t.node_->requires_grad = requires_grad;
        return t;
    }
    static Tensor scalar(S v) { return fromData({}, {v}); }
    static Tensor full(Shape shape, S v) {
        Tensor t(shape);
        for (auto& x : t.data()) x = v;
        return t;
    }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    int dim(int i) const { return node_->shape[i]; }
    size_t size() const { return node_->value.size(); }
    std::vector<S>& data() { return node_->value; }
    const std::vector<S>& data() const { return node_->value; }
    std::vector<S>& grad() {
        node_->ensureGrad();
        return node_->grad;
    }
    bool requiresGrad() const { return node_->requires_grad; }
    S item() const {
        if (size() != 1) throw ConfigError("item() on non-scalar tensor " + shapeStr(shape()));
        return node_->value[0];
    }
    void zeroGrad() {
        if (node_->grad.size()) std::fill(node_->grad.begin(), node_->grad.end(), S(0));
    }

    std::shared_ptr<Node> node() const { return node_; }

    // Reverse-mode pass from a scalar root; each node's backward runs exactly
    // once, in reverse topological order.
    void backward() {
        if (size() != 1) throw ConfigError("backward() requires a scalar root");
        std::vector<Node*> order;
        std::unordered_set<Node*> seen;
        std::vector<std::pair<Node*, size_t>> stack{{node_.get(), 0}};
        while (!stack.empty()) {
            auto& [n, next] = stack.back();
            if (next == 0 && !seen.insert(n).second) {
                stack.pop_back();
                continue;
            }
            if (next < n->parents.size()) {
                Node* p = n->parents[next++].get();
                if (p->requires_grad && !seen.count(p)) stack.push_back({p, 0});
            } else {
                order.push_back(n);
                stack.pop_back();
            }
        }
        node_->ensureGrad();
        node_->grad[0] = S(1);
        for (auto it = order.rbegin(); it != order.rend(); ++it)
            if ((*it)->backward_fn) (*it)->backward_fn();
    }

    static Tensor makeOp(Shape shape, std::vector<Tensor> parents) {
        Tensor t(std::move(shape));
        for (auto& p : parents) {
            t.node_->requires_grad = t.node_->requires_grad || p.requiresGrad();
            t.node_->parents.push_back(p.node_);
        }
        return t;
    }
    void setBackward(std::function<void()> fn) {
        if (node_->requires_grad) {
            node_->ensureGrad();
            for (auto& p : node_->parents) p->ensureGrad();
            node_->backward_fn = std::move(fn);
        }
    }

  private:
    std::shared_ptr<Node> node_;
};

namespace detail {

// Broadcast strides of `in` against `out` (numpy rules, right-aligned).
inline std::vector<size_t> broadcastStrides(const Shape& in, const Shape& out) {
    std::vector<size_t> strides(out.size(), 0);
    size_t s = 1;
    int off = static_cast<int>(out.size()) - static_cast<int>(in.size());
    for (int i = static_cast<int>(in.size()) - 1; i >= 0; --i) {
        int od = out[i + off];
        if (in[i] != od && in[i] != 1)
            throw ConfigError("shapes not broadcastable: " + shapeStr(in) + " vs " + shapeStr(out));
        strides[i + off] = (in[i] == 1) ? 0 : s;
        s *= static_cast<size_t>(in[i]);
    }
    return strides;
}

inline Shape broadcastShape(const Shape& a, const Shape& b) {
    size_t n = std::max(a.size(), b.size());
    Shape out(n);
    for (size_t i = 0; i < n; ++i) {
        int da = (i < n - a.size()) ? 1 : a[i - (n - a.size())];
        int db = (i < n - b.size()) ? 1 : b[i - (n - b.size())];
        if (da != db && da != 1 && db != 1)
            throw ConfigError("shapes not broadcastable: " + shapeStr(a) + " vs " + shapeStr(b));
        out[i] = std::max(da, db);
    }
    return out;
}

// Iterates an output shape, producing linear indices into two broadcast inputs.
template <class F>
void forEachBroadcast(const Shape& out, const std::vector<size_t>& sa,
                      const std::vector<size_t>& sb, F&& f) {
    size_t total = shapeSize(out);
    size_t rank = out.size();
    std::vector<int> idx(rank, 0);
    size_t ia = 0, ib = 0;
    for (size_t lin = 0; lin < total; ++lin) {
        f(lin, ia, ib);
        for (int d = static_cast<int>(rank) - 1; d >= 0; --d) {
            ++idx[d];
            ia += sa[d];
            ib += sb[d];
            if (idx[d] < out[d]) break;
            ia -= sa[d] * out[d];
            ib -= sb[d] * out[d];
            idx[d] = 0;
        }
    }
}

}  // namespace detail

// ---- elementwise binary ops with broadcasting ----

template <class S, class FwdF, class BwdA, class BwdB>
Tensor<S> binaryOp(const Tensor<S>& a, const Tensor<S>& b, FwdF fwd, BwdA bwd_a, BwdB bwd_b) {
    Shape out_shape = detail::broadcastShape(a.shape(), b.shape());
    auto sa = detail::broadcastStrides(a.shape(), out_shape);
    auto sb = detail::broadcastStrides(b.shape(), out_shape);
    Tensor<S> out = Tensor<S>::makeOp(out_shape, {a, b});
    const auto& av = a.data();
    const auto& bv = b.data();
    auto& ov = out.data();
    detail::forEachBroadcast(out_shape, sa, sb,
                             [&](size_t o, size_t i, size_t j) { ov[o] = fwd(av[i], bv[j]); });
    auto an = a.node(), bn = b.node();
    auto* on = out.node().get();
    out.setBackward([an, bn, on, sa, sb, out_shape, bwd_a, bwd_b]() {
        detail::forEachBroadcast(out_shape, sa, sb, [&](size_t o, size_t i, size_t j) {
            S g = on->grad[o];
            if (an->requires_grad) an->grad[i] += bwd_a(an->value[i], bn->value[j]) * g;
            if (bn->requires_grad) bn->grad[j] += bwd_b(an->value[i], bn->value[j]) * g;
        });
    });
    return out;
}

template <class S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
    return binaryOp(
        a, b, [](S x, S y) { return x + y; }, [](S, S) { return S(1); },
        [](S, S) { return S(1); });
}
template <class S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
    return binaryOp(
        a, b, [](S x, S y) { return x - y; }, [](S, S) { return S(1); },
        [](S, S) { return S(-1); });
}
template <class S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
    return binaryOp(
        a, b, [](S x, S y) { return x * y; }, [](S, S y) { return y; },
        [](S x, S) { return x; });
}

// ---- elementwise unary ops ----

template <class S, class FwdF, class BwdF>
Tensor<S> unaryOp(const Tensor<S>& a, FwdF fwd, BwdF dydx_from_xy) {
    Tensor<S> out = Tensor<S>::makeOp(a.shape(), {a});
    const auto& av = a.data();
    auto& ov = out.data();
    for (size_t i = 0; i < av.size(); ++i) ov[i] = fwd(av[i]);
    auto an = a.node();
    auto* on = out.node().get();
    out.setBackward([an, on, dydx_from_xy]() {
        for (size_t i = 0; i < on->grad.size(); ++i)
            an->grad[i] += dydx_from_xy(an->value[i], on->value[i]) * on->grad[i];
    });
    return out;
}

template <class S>
Tensor<S> scale(const Tensor<S>& a, S k) {
    return unaryOp(a, [k](S x) { return x * k; }, [k](S, S) { return k; });
}
template <class S>
Tensor<S> addConst(const Tensor<S>& a, S k) {
    return unaryOp(a, [k](S x) { return x + k; }, [](S, S) { return S(1); });
}
template <class S>
Tensor<S> relu(const Tensor<S>& a) {
    return unaryOp(a, [](S x) { return x > S(0) ? x : S(0); },
                   [](S x, S) { return x > S(0) ? S(1) : S(0); });
}
template <class S>
Tensor<S> sigmoid(const Tensor<S>& a) {
    return unaryOp(a, [](S x) { return S(1) / (S(1) + std::exp(-x)); },
                   [](S, S y) { return y * (S(1) - y); });
}
template <class S>
Tensor<S> tanhOp(const Tensor<S>& a) {
    return unaryOp(a, [](S x) { return std::tanh(x); }, [](S, S y) { return S(1) - y * y; });
}
template <class S>
Tensor<S> gelu(const Tensor<S>& a) {
    const S inv_sqrt2 = S(0.7071067811865475244);
    const S inv_sqrt2pi = S(0.3989422804014326779);
    return unaryOp(
        a, [=](S x) { return S(0.5) * x * (S(1) + std::erf(x * inv_sqrt2)); },
        [=](S x, S) {
            return S(0.5) * (S(1) + std::erf(x * inv_sqrt2)) +
                   x * inv_sqrt2pi * std::exp(S(-0.5) * x * x);
        });
}
template <class S>
Tensor<S> absOp(const Tensor<S>& a) {
    return unaryOp(a, [](S x) { return std::abs(x); },
                   [](S x, S) { return x > S(0) ? S(1) : (x < S(0) ? S(-1) : S(0)); });
}

// ---- reductions ----

template <class S>
Tensor<S> sumAll(const Tensor<S>& a) {
    Tensor<S> out = Tensor<S>::makeOp({}, {a});
    S s = S(0);
    for (S x : a.data()) s += x;
    out.data()[0] = s;
    auto an = a.node();
    auto* on = out.node().get();
    out.setBackward([an, on]() {
        S g = on->grad[0];
        for (auto& x : an->grad) x += g;
    });
    return out;
}

template <class S>
Tensor<S> meanAll(const Tensor<S>& a) {
    return scale(sumAll(a), S(1) / S(a.size()));
}

// ---- shape ops ----

template <class S>
Tensor<S> reshape(const Tensor<S>& a, Shape shape) {
    if (shapeSize(shape) != a.size())
        throw ConfigError("reshape " + shapeStr(a.shape()) + " -> " + shapeStr(shape) +
                          " changes element count");
    Tensor<S> out = Tensor<S>::makeOp(std::move(shape), {a});
    out.data() = a.data();
    auto an = a.node();
    auto* on = out.node().get();
    out.setBackward([an, on]() {
        for (size_t i = 0; i < on->grad.size(); ++i) an->grad[i] += on->grad[i];
    });
    return out;
}

// General axis permutation; permute(t, {1,0}) is the 2-D transpose.
template <class S>
Tensor<S> permute(const Tensor<S>& a, const std::vector<int>& axes) {
    const Shape& in = a.shape();
    size_t rank = in.size();
    if (axes.size() != rank) throw ConfigError("permute: axes rank mismatch");
    Shape out_shape(rank);
    for (size_t i = 0; i < rank; ++i) out_shape[i] = in[axes[i]];

    std::vector<size_t> in_strides(rank, 1);
    for (int i = static_cast<int>(rank) - 2; i >= 0; --i)
        in_strides[i] = in_strides[i + 1] * in[i + 1];
    std::vector<size_t> map_strides(rank);
    for (size_t i = 0; i < rank; ++i) map_strides[i] = in_strides[axes[i]];

    Tensor<S> out = Tensor<S>::makeOp(out_shape, {a});
    size_t total = a.size();
    std::vector<size_t> src_index(total);
    {
        std::vector<int> idx(rank, 0);
        size_t src = 0;
        for (size_t lin = 0; lin < total; ++lin) {
            src_index[lin] = src;
            for (int d = static_cast<int>(rank) - 1; d >= 0; --d) {
                ++idx[d];
                src += map_strides[d];
                if (idx[d] < out_shape[d]) break;
                src -= map_strides[d] * out_shape[d];
                idx[d] = 0;
            }
        }
    }
    auto& ov = out.data();
    const auto& av = a.data();
    for (size_t i = 0; i < total; ++i) ov[i] = av[src_index[i]];
    auto an = a.node();
    auto* on = out.node().get();
    out.setBackward([an, on, src_index]() {
        for (size_t i = 0; i < src_index.size(); ++i) an->grad[src_index[i]] += on->grad[i];
    });
    return out;
}

template <class S>
Tensor<S> transpose2d(const Tensor<S>& a) {
    if (a.shape().size() != 2) throw ConfigError("transpose2d requires a rank-2 tensor");
    return permute(a, {1, 0});
}

template <class S>
Tensor<S> concat(const std::vector<Tensor<S>>& parts, int axis) {
    if (parts.empty()) throw ConfigError("concat of zero tensors");
    Shape out_shape = parts[0].shape();
    size_t rank = out_shape.size();
    if (axis < 0 || axis >= static_cast<int>(rank)) throw ConfigError("concat: bad axis");
    int total_axis = 0;
    for (const auto& p : parts) {
        if (p.shape().size() != rank) throw ConfigError("concat: rank mismatch");
        for (size_t d = 0; d < rank; ++d)
            if (static_cast<int>(d) != axis && p.shape()[d] != out_shape[d])
                throw ConfigError("concat: shape mismatch " + shapeStr(p.shape()) + " vs " +
                                  shapeStr(out_shape));
        total_axis += p.shape()[axis];
    }
    out_shape[axis] = total_axis;

    size_t outer = 1, inner = 1;
    for (int d = 0; d < axis; ++d) outer *= out_shape[d];
    for (size_t d = axis + 1; d < rank; ++d) inner *= out_shape[d];

    Tensor<S> out = Tensor<S>::makeOp(out_shape, parts);
    auto& ov = out.data();
    size_t row = inner * total_axis;
    size_t offset = 0;
    std::vector<size_t> offsets;
    for (const auto& p : parts) {
        offsets.push_back(offset);
        size_t chunk = inner * p.shape()[axis];
        const auto& pv = p.data();
        for (size_t o = 0; o < outer; ++o)
            std::copy(pv.begin() + o * chunk, pv.begin() + (o + 1) * chunk,
                      ov.begin() + o * row + offset);
        offset += chunk;
    }
    std::vector<std::shared_ptr<TensorNode<S>>> pnodes;
    std::vector<size_t> chunks;
    for (const auto& p : parts) {
        pnodes.push_back(p.node());
        chunks.push_back(inner * p.shape()[axis]);
    }
    auto* on = out.node().get();
    out.setBackward([on, pnodes, offsets, chunks, outer, row]() {
        for (size_t pi = 0; pi < pnodes.size(); ++pi) {
            if (!pnodes[pi]->requires_grad) continue;
            for (size_t o = 0; o < outer; ++o)
                for (size_t i = 0; i < chunks[pi]; ++i)
                    pnodes[pi]->grad[o * chunks[pi] + i] += on->grad[o * row + offsets[pi] + i];
        }
    });
    return out;
}

template <class S>
Tensor<S> slice(const Tensor<S>& a, int axis, int start, int len) {
    const Shape& in = a.shape();
    size_t rank = in.size();
    if (axis < 0 || axis >= static_cast<int>(rank)) throw ConfigError("slice: bad axis");
    if (start < 0 || len <= 0 || start + len > in[axis]) throw ConfigError("slice: bad range");
    Shape out_shape = in;
    out_shape[axis] = len;
    size_t outer = 1, inner = 1;
    for (int d = 0; d < axis; ++d) outer *= in[d];
    for (size_t d = axis + 1; d < rank; ++d) inner *= in[d];

    Tensor<S> out = Tensor<S>::makeOp(out_shape, {a});
    auto& ov = out.data();
    const auto& av = a.data();
    size_t in_row = inner * in[axis], out_row = inner * len, off = inner * start;
    for (size_t o = 0; o < outer; ++o)
        std::copy(av.begin() + o * in_row + off, av.begin() + o * in_row + off + out_row,
                  ov.begin() + o * out_row);
    auto an = a.node();
    auto* on = out.node().get();
    out.setBackward([an, on, outer, in_row, out_row, off]() {
        for (size_t o = 0; o < outer; ++o)
            for (size_t i = 0; i < out_row; ++i)
                an->grad[o * in_row + off + i] += on->grad[o * out_row + i];
    });
    return out;
}

// ---- normalization / softmax ----

// Softmax over the last axis. An additive mask (e.g. -1e30 on masked keys)
// should be applied to the logits beforehand.
template <class S>
Tensor<S> softmaxLastAxis(const Tensor<S>& a) {
    const Shape& shp = a.shape();
    if (shp.empty()) throw ConfigError("softmax requires rank >= 1");
    size_t n = shp.back();
    size_t rows = a.size() / n;
    Tensor<S> out = Tensor<S>::makeOp(shp, {a});
    const auto& av = a.data();
    auto& ov = out.data();
    for (size_t r = 0; r < rows; ++r) {
        const S* x = av.data() + r * n;
        S* y = ov.data() + r * n;
        S mx = x[0];
        for (size_t i = 1; i < n; ++i) mx = std::max(mx, x[i]);
        S sum = S(0);
        for (size_t i = 0; i < n; ++i) {
            y[i] = std::exp(x[i] - mx);
            sum += y[i];
        }
        for (size_t i = 0; i < n; ++i) y[i] /= sum;
    }
    auto an = a.node();
    auto* on = out.node().get();
    out.setBackward([an, on, rows, n]() {
        for (size_t r = 0; r < rows; ++r) {
            const S* y = on->value.data() + r * n;
            const S* gy = on->grad.data() + r * n;
            S dot = S(0);
            for (size_t i = 0; i < n; ++i) dot += y[i] * gy[i];
            S* gx = an->grad.data() + r * n;
            for (size_t i = 0; i < n; ++i) gx[i] += y[i] * (gy[i] - dot);
        }
    });
    return out;
}

// Layer normalization over the last axis with learnable gain and bias.
template <class S>
Tensor<S> layerNorm(const Tensor<S>& a, const Tensor<S>& gain, const Tensor<S>& bias,
                    S eps = S(1e-5)) {
    const Shape& shp = a.shape();
    size_t n = shp.back();
    if (gain.size() != n || bias.size() != n)
        throw ConfigError("layerNorm: gain/bias length must equal last axis " + shapeStr(shp));
    size_t rows = a.size() / n;
    Tensor<S> out = Tensor<S>::makeOp(shp, {a, gain, bias});
    const auto& av = a.data();
    const auto& gv = gain.data();
    const auto& bv = bias.data();
    auto& ov = out.data();
    std::vector<S> means(rows), inv_stds(rows);
    for (size_t r = 0; r < rows; ++r) {
        const S* x = av.data() + r * n;
        S mean = S(0);
        for (size_t i = 0; i < n; ++i) mean += x[i];
        mean /= S(n);
        S var = S(0);
        for (size_t i = 0; i < n; ++i) var += (x[i] - mean) * (x[i] - mean);
        var /= S(n);
        S inv_std = S(1) / std::sqrt(var + eps);
        means[r] = mean;
        inv_stds[r] = inv_std;
        S* y = ov.data() + r * n;
        for (size_t i = 0; i < n; ++i) y[i] = (x[i] - mean) * inv_std * gv[i] + bv[i];
    }
    auto an = a.node(), gn = gain.node(), bn = bias.node();
    auto* on = out.node().get();
    out.setBackward([an, gn, bn, on, rows, n, means, inv_stds]() {
        for (size_t r = 0; r < rows; ++r) {
            const S* x = an->value.data() + r * n;
            const S* gy = on->grad.data() + r * n;
            S mean = means[r], inv_std = inv_stds[r];
            // xhat_i = (x_i - mean) * inv_std
            S sum_g = S(0), sum_gx = S(0);
            for (size_t i = 0; i < n; ++i) {
                S xhat = (x[i] - mean) * inv_std;
                S g = gy[i] * gn->value[i];
                sum_g += g;
                sum_gx += g * xhat;
                if (gn->requires_grad) gn->grad[i] += gy[i] * xhat;
                if (bn->requires_grad) bn->grad[i] += gy[i];
            }
            if (an->requires_grad) {
                for (size_t i = 0; i < n; ++i) {
                    S xhat = (x[i] - mean) * inv_std;
                    S g = gy[i] * gn->value[i];
                    an->grad[r * n + i] +=
                        inv_std * (g - sum_g / S(n) - xhat * sum_gx / S(n));
                }
            }
        }
    });
    return out;
}

}  // namespace parkbev
