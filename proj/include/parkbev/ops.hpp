#pragma once

#include <random>

#include "parkbev/blas.hpp"
#include "parkbev/tensor.hpp"

namespace parkbev {

using Rng = std::mt19937_64;

// ---- matmul ----

template <class S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
    if (a.shape().size() != 2 || b.shape().size() != 2)
        throw ConfigError("matmul requires rank-2 tensors, got " + shapeStr(a.shape()) + " and " +
                          shapeStr(b.shape()));
    int m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
    if (k != k2)
        throw ConfigError("matmul inner dimension mismatch: " + shapeStr(a.shape()) + " x " +
                          shapeStr(b.shape()));
    Tensor<S> out = Tensor<S>::makeOp({m, n}, {a, b});
    detail::gemm(false, false, m, n, k, S(1), a.data().data(), k, b.data().data(), n, S(0),
                 out.data().data(), n);
    auto an = a.node(), bn = b.node();
    auto* on = out.node().get();
    out.setBackward([an, bn, on, m, n, k]() {
        if (an->requires_grad)
            detail::gemm(false, true, m, k, n, S(1), on->grad.data(), n, bn->value.data(), n, S(1),
                         an->grad.data(), k);
        if (bn->requires_grad)
            detail::gemm(true, false, k, n, m, S(1), an->value.data(), k, on->grad.data(), n, S(1),
                         bn->grad.data(), n);
    });
    return out;
}

// ---- conv2d (im2col + gemm) ----

namespace detail {

template <class S>
void im2col(const S* img, int ch, int h, int w, int kh, int kw, int stride, int pad, int oh, int ow,
            S* cols) {
    // cols: [ch*kh*kw, oh*ow]
    for (int c = 0; c < ch; ++c)
        for (int ky = 0; ky < kh; ++ky)
            for (int kx = 0; kx < kw; ++kx) {
                S* row = cols + ((static_cast<size_t>(c) * kh + ky) * kw + kx) * oh * ow;
                for (int y = 0; y < oh; ++y) {
                    int iy = y * stride + ky - pad;
                    for (int x = 0; x < ow; ++x) {
                        int ix = x * stride + kx - pad;
                        row[y * ow + x] = (iy >= 0 && iy < h && ix >= 0 && ix < w)
                                              ? img[(static_cast<size_t>(c) * h + iy) * w + ix]
                                              : S(0);
                    }
                }
            }
}

template <class S>
void col2imAdd(const S* cols, int ch, int h, int w, int kh, int kw, int stride, int pad, int oh,
               int ow, S* img) {
    for (int c = 0; c < ch; ++c)
        for (int ky = 0; ky < kh; ++ky)
            for (int kx = 0; kx < kw; ++kx) {
                const S* row = cols + ((static_cast<size_t>(c) * kh + ky) * kw + kx) * oh * ow;
                for (int y = 0; y < oh; ++y) {
                    int iy = y * stride + ky - pad;
                    if (iy < 0 || iy >= h) continue;
                    for (int x = 0; x < ow; ++x) {
                        int ix = x * stride + kx - pad;
                        if (ix >= 0 && ix < w)
                            img[(static_cast<size_t>(c) * h + iy) * w + ix] += row[y * ow + x];
                    }
                }
            }
}

}  // namespace detail

// input [Cin,H,W], weight [Cout,Cin,kh,kw], bias [Cout] (may be undefined).
template <class S>
Tensor<S> conv2d(const Tensor<S>& input, const Tensor<S>& weight, const Tensor<S>& bias,
                 int stride = 1, int pad = 0) {
    if (input.shape().size() != 3 || weight.shape().size() != 4)
        throw ConfigError("conv2d: input must be [C,H,W] and weight [Cout,Cin,kh,kw], got " +
                          shapeStr(input.shape()) + " and " + shapeStr(weight.shape()));
    int cin = input.dim(0), h = input.dim(1), w = input.dim(2);
    int cout = weight.dim(0), kh = weight.dim(2), kw = weight.dim(3);
    if (weight.dim(1) != cin)
        throw ConfigError("conv2d: channel mismatch, input " + shapeStr(input.shape()) +
                          " weight " + shapeStr(weight.shape()));
    int oh = (h + 2 * pad - kh) / stride + 1;
    int ow = (w + 2 * pad - kw) / stride + 1;
    if (oh <= 0 || ow <= 0) throw ConfigError("conv2d: empty output");

    int krows = cin * kh * kw, onum = oh * ow;
    auto cols = std::make_shared<std::vector<S>>(static_cast<size_t>(krows) * onum);
    detail::im2col(input.data().data(), cin, h, w, kh, kw, stride, pad, oh, ow, cols->data());

    std::vector<Tensor<S>> parents{input, weight};
    bool has_bias = bias.defined();
    if (has_bias) {
        if (static_cast<int>(bias.size()) != cout) throw ConfigError("conv2d: bias size mismatch");
        parents.push_back(bias);
    }
    Tensor<S> out = Tensor<S>::makeOp({cout, oh, ow}, parents);
    detail::gemm(false, false, cout, onum, krows, S(1), weight.data().data(), krows, cols->data(),
                 onum, S(0), out.data().data(), onum);
    if (has_bias) {
        auto& ov = out.data();
        const auto& bv = bias.data();
        for (int c = 0; c < cout; ++c)
            for (int i = 0; i < onum; ++i) ov[static_cast<size_t>(c) * onum + i] += bv[c];
    }
    auto in_n = input.node(), w_n = weight.node();
    auto* on = out.node().get();
    auto b_n = has_bias ? bias.node() : nullptr;
    out.setBackward([in_n, w_n, b_n, on, cols, cin, h, w, kh, kw, stride, pad, oh, ow, cout, krows,
                     onum]() {
        if (w_n->requires_grad)
            detail::gemm(false, true, cout, krows, onum, S(1), on->grad.data(), onum, cols->data(),
                         onum, S(1), w_n->grad.data(), krows);
        if (b_n && b_n->requires_grad) {
            for (int c = 0; c < cout; ++c) {
                S s = S(0);
                for (int i = 0; i < onum; ++i) s += on->grad[static_cast<size_t>(c) * onum + i];
                b_n->grad[c] += s;
            }
        }
        if (in_n->requires_grad) {
            std::vector<S> dcols(static_cast<size_t>(krows) * onum);
            detail::gemm(true, false, krows, onum, cout, S(1), w_n->value.data(), krows,
                         on->grad.data(), onum, S(0), dcols.data(), onum);
            detail::col2imAdd(dcols.data(), cin, h, w, kh, kw, stride, pad, oh, ow,
                              in_n->grad.data());
        }
    });
    return out;
}

// 2x2 average pooling with floor semantics (trailing odd row/column dropped).
template <class S>
Tensor<S> avgPool2x(const Tensor<S>& input) {
    if (input.shape().size() != 3) throw ConfigError("avgPool2x: input must be [C,H,W]");
    int c = input.dim(0), h = input.dim(1), w = input.dim(2);
    int oh = h / 2, ow = w / 2;
    if (oh == 0 || ow == 0) throw ConfigError("avgPool2x: input too small");
    Tensor<S> out = Tensor<S>::makeOp({c, oh, ow}, {input});
    const auto& iv = input.data();
    auto& ov = out.data();
    for (int ci = 0; ci < c; ++ci)
        for (int y = 0; y < oh; ++y)
            for (int x = 0; x < ow; ++x) {
                const S* base = iv.data() + (static_cast<size_t>(ci) * h + 2 * y) * w + 2 * x;
                ov[(static_cast<size_t>(ci) * oh + y) * ow + x] =
                    S(0.25) * (base[0] + base[1] + base[w] + base[w + 1]);
            }
    auto in_n = input.node();
    auto* on = out.node().get();
    out.setBackward([in_n, on, c, h, w, oh, ow]() {
        for (int ci = 0; ci < c; ++ci)
            for (int y = 0; y < oh; ++y)
                for (int x = 0; x < ow; ++x) {
                    S g = S(0.25) * on->grad[(static_cast<size_t>(ci) * oh + y) * ow + x];
                    S* base = in_n->grad.data() + (static_cast<size_t>(ci) * h + 2 * y) * w + 2 * x;
                    base[0] += g;
                    base[1] += g;
                    base[w] += g;
                    base[w + 1] += g;
                }
    });
    return out;
}

// Bilinear 2x upsampling with half-pixel alignment.
template <class S>
Tensor<S> bilinearUpsample2x(const Tensor<S>& input) {
    if (input.shape().size() != 3) throw ConfigError("bilinearUpsample2x: input must be [C,H,W]");
    int c = input.dim(0), h = input.dim(1), w = input.dim(2);
    int oh = 2 * h, ow = 2 * w;
    // Each output pixel blends at most 4 input pixels; precompute taps once.
    struct Tap {
        int i0, i1;
        S w0, w1;
    };
    std::vector<Tap> ys(oh), xs(ow);
    auto makeTaps = [](int n, int out_n, std::vector<Tap>& taps) {
        for (int o = 0; o < out_n; ++o) {
            double src = (o + 0.5) / 2.0 - 0.5;
            int i0 = static_cast<int>(std::floor(src));
            double f = src - i0;
            int a = std::clamp(i0, 0, n - 1), b = std::clamp(i0 + 1, 0, n - 1);
            taps[o] = {a, b, static_cast<S>(1.0 - f), static_cast<S>(f)};
        }
    };
    makeTaps(h, oh, ys);
    makeTaps(w, ow, xs);

    Tensor<S> out = Tensor<S>::makeOp({c, oh, ow}, {input});
    const auto& iv = input.data();
    auto& ov = out.data();
    for (int ci = 0; ci < c; ++ci) {
        const S* plane = iv.data() + static_cast<size_t>(ci) * h * w;
        S* oplane = ov.data() + static_cast<size_t>(ci) * oh * ow;
        for (int y = 0; y < oh; ++y)
            for (int x = 0; x < ow; ++x) {
                const Tap& ty = ys[y];
                const Tap& tx = xs[x];
                oplane[y * ow + x] = ty.w0 * (tx.w0 * plane[ty.i0 * w + tx.i0] +
                                              tx.w1 * plane[ty.i0 * w + tx.i1]) +
                                     ty.w1 * (tx.w0 * plane[ty.i1 * w + tx.i0] +
                                              tx.w1 * plane[ty.i1 * w + tx.i1]);
            }
    }
    auto in_n = input.node();
    auto* on = out.node().get();
    out.setBackward([in_n, on, c, h, w, oh, ow, ys, xs]() {
        for (int ci = 0; ci < c; ++ci) {
            S* gplane = in_n->grad.data() + static_cast<size_t>(ci) * h * w;
            const S* goplane = on->grad.data() + static_cast<size_t>(ci) * oh * ow;
            for (int y = 0; y < oh; ++y)
                for (int x = 0; x < ow; ++x) {
                    const Tap& ty = ys[y];
                    const Tap& tx = xs[x];
                    S g = goplane[y * ow + x];
                    gplane[ty.i0 * w + tx.i0] += ty.w0 * tx.w0 * g;
                    gplane[ty.i0 * w + tx.i1] += ty.w0 * tx.w1 * g;
                    gplane[ty.i1 * w + tx.i0] += ty.w1 * tx.w0 * g;
                    gplane[ty.i1 * w + tx.i1] += ty.w1 * tx.w1 * g;
                }
        }
    });
    return out;
}

// Row gather from a [n, c] table.
template <class S>
Tensor<S> embeddingLookup(const Tensor<S>& table, const std::vector<int>& indices) {
    if (table.shape().size() != 2) throw ConfigError("embeddingLookup: table must be [n, c]");
    int n = table.dim(0), c = table.dim(1);
    for (int idx : indices)
        if (idx < 0 || idx >= n) throw ConfigError("embeddingLookup: index out of range");
    Tensor<S> out = Tensor<S>::makeOp({static_cast<int>(indices.size()), c}, {table});
    const auto& tv = table.data();
    auto& ov = out.data();
    for (size_t r = 0; r < indices.size(); ++r)
        std::copy(tv.begin() + static_cast<size_t>(indices[r]) * c,
                  tv.begin() + static_cast<size_t>(indices[r] + 1) * c, ov.begin() + r * c);
    auto tn = table.node();
    auto* on = out.node().get();
    out.setBackward([tn, on, indices, c]() {
        for (size_t r = 0; r < indices.size(); ++r)
            for (int j = 0; j < c; ++j)
                tn->grad[static_cast<size_t>(indices[r]) * c + j] += on->grad[r * c + j];
    });
    return out;
}

// Elementwise dropout; identity when train is false.
template <class S>
Tensor<S> dropout(const Tensor<S>& input, double p, bool train, Rng& rng) {
    if (p < 0.0 || p >= 1.0) throw ConfigError("dropout: p must be in [0, 1)");
    if (!train || p == 0.0) return scale(input, S(1));
    std::bernoulli_distribution drop(p);
    auto mask = std::make_shared<std::vector<S>>(input.size());
    S keep_scale = S(1.0 / (1.0 - p));
    for (auto& m : *mask) m = drop(rng) ? S(0) : keep_scale;
    Tensor<S> out = Tensor<S>::makeOp(input.shape(), {input});
    const auto& iv = input.data();
    auto& ov = out.data();
    for (size_t i = 0; i < iv.size(); ++i) ov[i] = iv[i] * (*mask)[i];
    auto in_n = input.node();
    auto* on = out.node().get();
    out.setBackward([in_n, on, mask]() {
        for (size_t i = 0; i < mask->size(); ++i) in_n->grad[i] += on->grad[i] * (*mask)[i];
    });
    return out;
}

// Channel-wise dropout for a [C,H,W] tensor: zeroes a Bernoulli(p) subset of
// channels and rescales survivors by 1/(1-p).
template <class S>
Tensor<S> channelDropout(const Tensor<S>& input, double p, Rng& rng) {
    if (input.shape().size() != 3) throw ConfigError("channelDropout: input must be [C,H,W]");
    if (p < 0.0 || p >= 1.0) throw ConfigError("channelDropout: p must be in [0, 1)");
    int c = input.dim(0);
    size_t plane = input.size() / c;
    std::bernoulli_distribution drop(p);
    auto mask = std::make_shared<std::vector<S>>(c);
    S keep_scale = S(1.0 / (1.0 - p));
    for (auto& m : *mask) m = drop(rng) ? S(0) : keep_scale;
    Tensor<S> out = Tensor<S>::makeOp(input.shape(), {input});
    const auto& iv = input.data();
    auto& ov = out.data();
    for (int ci = 0; ci < c; ++ci)
        for (size_t i = 0; i < plane; ++i) ov[ci * plane + i] = iv[ci * plane + i] * (*mask)[ci];
    auto in_n = input.node();
    auto* on = out.node().get();
    out.setBackward([in_n, on, mask, c, plane]() {
        for (int ci = 0; ci < c; ++ci)
            for (size_t i = 0; i < plane; ++i)
                in_n->grad[ci * plane + i] += on->grad[ci * plane + i] * (*mask)[ci];
    });
    return out;
}

// Bilinear resample of a [C,H,W] grid under an affine map from output cell
// coordinates (col, row) to input cell coordinates; zero outside the grid.
// affine = {a, b, tx, c, d, ty}: in_x = a*x + b*y + tx, in_y = c*x + d*y + ty.
template <class S>
Tensor<S> gridResample(const Tensor<S>& input, const std::array<double, 6>& affine) {
    if (input.shape().size() != 3) throw ConfigError("gridResample: input must be [C,H,W]");
    int c = input.dim(0), h = input.dim(1), w = input.dim(2);
    struct Tap {
        int idx[4];
        S wgt[4];
        int count = 0;
    };
    auto taps = std::make_shared<std::vector<Tap>>(static_cast<size_t>(h) * w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double sx = affine[0] * x + affine[1] * y + affine[2];
            double sy = affine[3] * x + affine[4] * y + affine[5];
            Tap& t = (*taps)[static_cast<size_t>(y) * w + x];
            int x0 = static_cast<int>(std::floor(sx)), y0 = static_cast<int>(std::floor(sy));
            double fx = sx - x0, fy = sy - y0;
            const double wts[4] = {(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy};
            const int xs[4] = {x0, x0 + 1, x0, x0 + 1};
            const int ys[4] = {y0, y0, y0 + 1, y0 + 1};
            for (int k = 0; k < 4; ++k) {
                if (xs[k] < 0 || xs[k] >= w || ys[k] < 0 || ys[k] >= h || wts[k] == 0.0) continue;
                t.idx[t.count] = ys[k] * w + xs[k];
                t.wgt[t.count] = static_cast<S>(wts[k]);
                ++t.count;
            }
        }
    Tensor<S> out = Tensor<S>::makeOp(input.shape(), {input});
    const auto& iv = input.data();
    auto& ov = out.data();
    size_t plane = static_cast<size_t>(h) * w;
    for (int ci = 0; ci < c; ++ci)
        for (size_t i = 0; i < plane; ++i) {
            const Tap& t = (*taps)[i];
            S v = S(0);
            for (int k = 0; k < t.count; ++k) v += t.wgt[k] * iv[ci * plane + t.idx[k]];
            ov[ci * plane + i] = v;
        }
    auto in_n = input.node();
    auto* on = out.node().get();
    out.setBackward([in_n, on, taps, c, plane]() {
        for (int ci = 0; ci < c; ++ci)
            for (size_t i = 0; i < plane; ++i) {
                const Tap& t = (*taps)[i];
                S g = on->grad[ci * plane + i];
                for (int k = 0; k < t.count; ++k) in_n->grad[ci * plane + t.idx[k]] += t.wgt[k] * g;
            }
    });
    return out;
}

// ---- loss primitives ----

// Elementwise binary cross-entropy with logits; targets and mask are constants.
template <class S>
Tensor<S> bceWithLogits(const Tensor<S>& logits, const std::vector<S>& targets,
                        const std::vector<S>* mask = nullptr) {
    if (targets.size() != logits.size())
        throw ConfigError("bceWithLogits: target length mismatch for " + shapeStr(logits.shape()));
    if (mask && mask->size() != logits.size())
        throw ConfigError("bceWithLogits: mask length mismatch");
    Tensor<S> out = Tensor<S>::makeOp(logits.shape(), {logits});
    const auto& xv = logits.data();
    auto& ov = out.data();
    for (size_t i = 0; i < xv.size(); ++i) {
        S x = xv[i], t = targets[i];
        S loss = std::max(x, S(0)) - x * t + std::log1p(std::exp(-std::abs(x)));
        ov[i] = mask ? loss * (*mask)[i] : loss;
    }
    auto xn = logits.node();
    auto* on = out.node().get();
    auto targets_c = std::make_shared<std::vector<S>>(targets);
    auto mask_c = mask ? std::make_shared<std::vector<S>>(*mask) : nullptr;
    out.setBackward([xn, on, targets_c, mask_c]() {
        for (size_t i = 0; i < xn->value.size(); ++i) {
            S x = xn->value[i];
            S d = S(1) / (S(1) + std::exp(-x)) - (*targets_c)[i];
            if (mask_c) d *= (*mask_c)[i];
            xn->grad[i] += d * on->grad[i];
        }
    });
    return out;
}

// Elementwise sigmoid focal loss: alpha_t * (1 - p_t)^gamma * bce, with
// p_t = p*t + (1-p)*(1-t) and alpha_t = alpha*t + (1-alpha)*(1-t).
template <class S>
Tensor<S> focalBceWithLogits(const Tensor<S>& logits, const std::vector<S>& targets, double gamma,
                             double alpha) {
    if (targets.size() != logits.size())
        throw ConfigError("focalBceWithLogits: target length mismatch for " +
                          shapeStr(logits.shape()));
    Tensor<S> out = Tensor<S>::makeOp(logits.shape(), {logits});
    const auto& xv = logits.data();
    auto& ov = out.data();
    S g = static_cast<S>(gamma), al = static_cast<S>(alpha);
    for (size_t i = 0; i < xv.size(); ++i) {
        S x = xv[i], t = targets[i];
        S p = S(1) / (S(1) + std::exp(-x));
        S ce = std::max(x, S(0)) - x * t + std::log1p(std::exp(-std::abs(x)));
        S pt = p * t + (S(1) - p) * (S(1) - t);
        S at = al * t + (S(1) - al) * (S(1) - t);
        ov[i] = at * std::pow(S(1) - pt, g) * ce;
    }
    auto xn = logits.node();
    auto* on = out.node().get();
    auto targets_c = std::make_shared<std::vector<S>>(targets);
    out.setBackward([xn, on, targets_c, g, al]() {
        for (size_t i = 0; i < xn->value.size(); ++i) {
            S x = xn->value[i], t = (*targets_c)[i];
            S p = S(1) / (S(1) + std::exp(-x));
            S ce = std::max(x, S(0)) - x * t + std::log1p(std::exp(-std::abs(x)));
            S pt = p * t + (S(1) - p) * (S(1) - t);
            S at = al * t + (S(1) - al) * (S(1) - t);
            S one_m_pt = S(1) - pt;
            S dce = p - t;
            S dpt = (S(2) * t - S(1)) * p * (S(1) - p);
            S mod = std::pow(one_m_pt, g);
            S dmod = (g > S(0)) ? -g * std::pow(one_m_pt, g - S(1)) * dpt : S(0);
            xn->grad[i] += at * (dmod * ce + mod * dce) * on->grad[i];
        }
    });
    return out;
}

}  // namespace parkbev
