#pragma once

#include <map>

#include "parkbev/heads.hpp"
#include "parkbev/ops.hpp"

namespace parkbev {

// Multi-task objective weights. Defaults are load-bearing for the pinned
// total-arithmetic contract (unit terms -> 1.95925).
struct LossWeights {
    double seg_binary = 1.0;
    double seg_center = 1e-1;
    double polygon_giou = 5e-2;
    double objectness = 7.5e-1;
    double cls = 6.25e-3;
    double corner_distance = 5e-2;
    double corner_visibility = 3e-3;

    std::vector<std::pair<std::string, double>> named() const {
        return {{"seg_binary", seg_binary},
                {"seg_center", seg_center},
                {"polygon_giou", polygon_giou},
                {"objectness", objectness},
                {"class", cls},
                {"corner_distance", corner_distance},
                {"corner_visibility", corner_visibility}};
    }
};

struct LossReport {
    std::map<std::string, double> unweighted;
    std::map<std::string, double> weighted;
    double total = 0.0;
};

struct FocalConfig {
    double gamma = 2.0;
    double alpha = 0.25;
};

namespace detail {

template <class S>
Tensor<S> maskedMean(const Tensor<S>& elementwise, const std::vector<S>& mask) {
    S denom = S(0);
    for (S m : mask) denom += m;
    if (!(denom > S(0))) return Tensor<S>::scalar(S(0));
    Tensor<S> m = Tensor<S>::fromData(elementwise.shape(), std::vector<S>(mask));
    return scale(sumAll(mul(elementwise, m)), S(1) / denom);
}

}  // namespace detail

// Per-channel mean focal loss summed over channels. `logits` is [C,N,N];
// `targets` supplies C*N*N values. An optional validity mask (N*N, shared by
// all channels) excludes padded cells introduced by BEV augmentation.
template <class S>
Tensor<S> focalChannelLoss(const Tensor<S>& logits, const std::vector<S>& targets,
                           const FocalConfig& fc, const std::vector<S>* valid_mask = nullptr) {
    if (logits.shape().size() != 3)
        throw ConfigError("focalChannelLoss: logits must be [C,N,N], got " +
                          shapeStr(logits.shape()));
    if (targets.size() != logits.size())
        throw ConfigError("focalChannelLoss: target size mismatch");
    int ch = logits.dim(0);
    size_t plane = logits.size() / ch;
    if (valid_mask && valid_mask->size() != plane)
        throw ConfigError("focalChannelLoss: validity mask must cover one channel plane");
    Tensor<S> total = Tensor<S>::scalar(S(0));
    for (int c = 0; c < ch; ++c) {
        Tensor<S> lc = slice(logits, 0, c, 1);
        std::vector<S> tc(targets.begin() + c * plane, targets.begin() + (c + 1) * plane);
        Tensor<S> elem = focalBceWithLogits(lc, tc, fc.gamma, fc.alpha);
        Tensor<S> term =
            valid_mask ? detail::maskedMean(elem, *valid_mask) : meanAll(elem);
        total = add(total, term);
    }
    return total;
}

// Decoded corner positions as a differentiable [8,cells,cells] tensor:
// corner = cell_center + max_offset * tanh(raw offset).
template <class S>
Tensor<S> decodeCornerTensor(const Tensor<S>& det_logits, const BevGridSpec& spec,
                             double max_offset) {
    int n = spec.cells * spec.cells;
    std::vector<S> centers(8 * static_cast<size_t>(n));
    for (int cell = 0; cell < n; ++cell) {
        Pt2<double> ctr = spec.cellCenter(cell / spec.cells, cell % spec.cells);
        for (int k = 0; k < 4; ++k) {
            centers[(2 * k) * static_cast<size_t>(n) + cell] = static_cast<S>(ctr.x);
            centers[(2 * k + 1) * static_cast<size_t>(n) + cell] = static_cast<S>(ctr.y);
        }
    }
    Tensor<S> ctr = Tensor<S>::fromData({8, spec.cells, spec.cells}, std::move(centers));
    return add(scale(tanhOp(slice(det_logits, 0, kDetOffset, 8)), S(max_offset)), ctr);
}

// Mean (1 - GIoU(hull(pred), gt)) over positive cells, as a custom graph node
// over the decoded corner tensor. Gradients come from the analytic
// construction in giouLossWithGrad.
template <class S>
Tensor<S> giouLossNode(const Tensor<S>& corners, const DetectionTargets& targets,
                       const BevGridSpec& spec) {
    int n = spec.cells * spec.cells;
    std::vector<int> positives;
    for (int cell = 0; cell < n; ++cell)
        if (targets.positive(cell)) positives.push_back(cell);
    if (positives.empty()) return Tensor<S>::scalar(S(0));

    Tensor<S> out = Tensor<S>::makeOp({}, {corners});
    auto grads = std::make_shared<std::vector<std::array<double, 8>>>();
    double sum = 0.0;
    const auto& cv = corners.data();
    for (int cell : positives) {
        std::array<Pt2<double>, 4> pred;
        for (int k = 0; k < 4; ++k)
            pred[k] = {static_cast<double>(cv[(2 * k) * static_cast<size_t>(n) + cell]),
                       static_cast<double>(cv[(2 * k + 1) * static_cast<size_t>(n) + cell])};
        const PolygonLabel& gt = targets.labels[targets.label_of_cell[cell]];
        GiouLossResult r = giouLossWithGrad(pred, gt.quad());
        sum += r.value;
        grads->push_back(r.grad);
    }
    double inv_p = 1.0 / positives.size();
    out.data()[0] = static_cast<S>(sum * inv_p);
    auto cn = corners.node();
    auto* on = out.node().get();
    out.setBackward([cn, on, grads, positives, n, inv_p]() {
        S g = on->grad[0];
        for (size_t i = 0; i < positives.size(); ++i) {
            int cell = positives[i];
            for (int k = 0; k < 8; ++k)
                cn->grad[static_cast<size_t>(k) * n + cell] +=
                    g * static_cast<S>((*grads)[i][k] * inv_p);
        }
    });
    return out;
}

template <class S>
struct DetLossTerms {
    Tensor<S> giou, objectness, cls, corner_distance, visibility;
};

// All detection-head terms from the raw [15,cells,cells] grid. GIoU and
// corner distance act on tanh-decoded metric corners; objectness trains every
// cell; class and visibility only the responsible cells (visibility only for
// parking-class targets).
template <class S>
DetLossTerms<S> detectionLoss(const Tensor<S>& det_logits, const DetectionTargets& targets,
                              const BevGridSpec& spec, double max_offset) {
    if (det_logits.shape() != Shape{kDetChannels, spec.cells, spec.cells})
        throw ConfigError("detectionLoss: logits must be " +
                          shapeStr({kDetChannels, spec.cells, spec.cells}) + ", got " +
                          shapeStr(det_logits.shape()));
    int n = spec.cells * spec.cells;
    DetLossTerms<S> out;

    Tensor<S> corners = decodeCornerTensor(det_logits, spec, max_offset);
    out.giou = giouLossNode(corners, targets, spec);

    std::vector<S> obj_target(n, S(0));
    std::vector<S> cls_target(2 * static_cast<size_t>(n), S(0)), cls_mask(2 * static_cast<size_t>(n), S(0));
    std::vector<S> corner_target(8 * static_cast<size_t>(n), S(0)), corner_mask(8 * static_cast<size_t>(n), S(0));
    std::vector<S> vis_target(4 * static_cast<size_t>(n), S(0)), vis_mask(4 * static_cast<size_t>(n), S(0));
    int num_pos = 0, num_park = 0;
    for (int cell = 0; cell < n; ++cell) {
        if (!targets.positive(cell)) continue;
        const PolygonLabel& gt = targets.labels[targets.label_of_cell[cell]];
        ++num_pos;
        obj_target[cell] = S(1);
        cls_target[static_cast<size_t>(static_cast<int>(gt.cls)) * n + cell] = S(1);
        cls_mask[cell] = cls_mask[static_cast<size_t>(n) + cell] = S(1);
        for (int k = 0; k < 4; ++k) {
            corner_target[(2 * k) * static_cast<size_t>(n) + cell] = static_cast<S>(gt.corners[k].x);
            corner_target[(2 * k + 1) * static_cast<size_t>(n) + cell] =
                static_cast<S>(gt.corners[k].y);
            corner_mask[(2 * k) * static_cast<size_t>(n) + cell] = S(1);
            corner_mask[(2 * k + 1) * static_cast<size_t>(n) + cell] = S(1);
        }
        if (gt.cls == ObjectClass::Parking) {
            ++num_park;
            for (int k = 0; k < 4; ++k) {
                vis_target[static_cast<size_t>(k) * n + cell] = gt.visibility[k] ? S(1) : S(0);
                vis_mask[static_cast<size_t>(k) * n + cell] = S(1);
            }
        }
    }

    out.objectness = meanAll(bceWithLogits(slice(det_logits, 0, kDetObjectness, 1), obj_target));

    if (num_pos > 0) {
        out.cls = detail::maskedMean(bceWithLogits(slice(det_logits, 0, kDetClass, 2), cls_target),
                                     cls_mask);
        // L1 per corner = |dx| + |dy|; mean over the 4*P corners is the
        // masked coordinate sum divided by 4P, i.e. masked mean * 2.
        Tensor<S> diff = absOp(sub(corners, Tensor<S>::fromData(corners.shape(), corner_target)));
        out.corner_distance = scale(detail::maskedMean(diff, corner_mask), S(2));
    } else {
        out.cls = Tensor<S>::scalar(S(0));
        out.corner_distance = Tensor<S>::scalar(S(0));
    }
    out.visibility =
        num_park > 0
            ? detail::maskedMean(bceWithLogits(slice(det_logits, 0, kDetVisibility, 4), vis_target),
                                 vis_mask)
            : Tensor<S>::scalar(S(0));
    return out;
}

template <class S>
struct TotalLossResult {
    Tensor<S> total;
    LossReport report;
};

// Weighted multi-task total. seg_logits is the [4,8N,8N] map head output,
// det_logits the [15,N,N] detection grid. NaN in any term aborts with the
// term's name.
template <class S>
TotalLossResult<S> totalLoss(const Tensor<S>& seg_logits, const Tensor<S>& det_logits,
                             const std::vector<PolygonLabel>& labels, const BevGridSpec& spec,
                             double max_offset, const LossWeights& w, const FocalConfig& fc = {},
                             const SegTargets* seg_targets = nullptr,
                             const std::vector<S>* seg_valid_mask = nullptr) {
    SegTargets local;
    if (!seg_targets) {
        local = buildSegTargets(labels, spec);
        seg_targets = &local;
    }
    size_t plane = static_cast<size_t>(seg_targets->size) * seg_targets->size;
    std::vector<S> seg_t(seg_targets->maps.begin(), seg_targets->maps.begin() + 2 * plane);
    std::vector<S> ctr_t(seg_targets->maps.begin() + 2 * plane, seg_targets->maps.end());

    DetectionTargets det_targets = encodeDetectionTargets(labels, spec);

    std::map<std::string, Tensor<S>> terms;
    terms["seg_binary"] =
        focalChannelLoss(slice(seg_logits, 0, 0, 2), seg_t, fc, seg_valid_mask);
    terms["seg_center"] =
        focalChannelLoss(slice(seg_logits, 0, 2, 2), ctr_t, fc, seg_valid_mask);
    DetLossTerms<S> det = detectionLoss(det_logits, det_targets, spec, max_offset);
    terms["polygon_giou"] = det.giou;
    terms["objectness"] = det.objectness;
    terms["class"] = det.cls;
    terms["corner_distance"] = det.corner_distance;
    terms["corner_visibility"] = det.visibility;

    TotalLossResult<S> out;
    Tensor<S> total = Tensor<S>::scalar(S(0));
    for (const auto& [name, weight] : w.named()) {
        Tensor<S> term = terms.at(name);
        double v = static_cast<double>(term.item());
        if (std::isnan(v)) throw NumericError("NaN in loss term '" + name + "'");
        out.report.unweighted[name] = v;
        out.report.weighted[name] = weight * v;
        total = add(total, scale(term, static_cast<S>(weight)));
    }
    out.total = total;
    out.report.total = static_cast<double>(total.item());
    if (std::isnan(out.report.total)) throw NumericError("NaN in total loss");
    return out;
}

}  // namespace parkbev
