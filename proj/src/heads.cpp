#include "parkbev/heads.hpp"

#include <algorithm>
#include <cmath>

#include "parkbev/errors.hpp"

namespace parkbev {

DetectionTargets encodeDetectionTargets(const std::vector<PolygonLabel>& labels,
                                        const BevGridSpec& spec) {
    DetectionTargets t;
    t.cells = spec.cells;
    t.labels = labels;
    int n = spec.cells * spec.cells;
    t.label_of_cell.assign(n, -1);
    std::vector<double> dist(n, 0.0);
    for (size_t li = 0; li < labels.size(); ++li) {
        Pt2<double> c = labels[li].centroid();
        auto cell = spec.cellOf(c);
        if (!cell) continue;
        auto [r, col] = *cell;
        Pt2<double> ctr = spec.cellCenter(r, col);
        double d = std::hypot(c.x - ctr.x, c.y - ctr.y);
        int idx = r * spec.cells + col;
        if (t.label_of_cell[idx] < 0 || d < dist[idx]) {
            t.label_of_cell[idx] = static_cast<int>(li);
            dist[idx] = d;
        }
    }
    return t;
}

std::array<double, kDetChannels> encodeDetectionLogits(const PolygonLabel& label, int row, int col,
                                                       const BevGridSpec& spec, double max_offset) {
    std::array<double, kDetChannels> out{};
    Pt2<double> ctr = spec.cellCenter(row, col);
    constexpr double kClamp = 1.0 - 1e-12;
    for (int k = 0; k < 4; ++k) {
        double dx = (label.corners[k].x - ctr.x) / max_offset;
        double dy = (label.corners[k].y - ctr.y) / max_offset;
        if (std::abs(dx) >= 1.0 || std::abs(dy) >= 1.0)
            throw ConfigError("corner offset exceeds the representable range");
        out[kDetOffset + 2 * k] = std::atanh(std::clamp(dx, -kClamp, kClamp));
        out[kDetOffset + 2 * k + 1] = std::atanh(std::clamp(dy, -kClamp, kClamp));
    }
    constexpr double kSat = 12.0;  // sigmoid(12) = 0.9999939
    out[kDetObjectness] = kSat;
    out[kDetClass + 0] = (label.cls == ObjectClass::Parking) ? kSat : -kSat;
    out[kDetClass + 1] = (label.cls == ObjectClass::Vehicle) ? kSat : -kSat;
    for (int k = 0; k < 4; ++k) out[kDetVisibility + k] = label.visibility[k] ? kSat : -kSat;
    return out;
}

static double sigmoidd(double x) { return 1.0 / (1.0 + std::exp(-x)); }

std::vector<PolygonDetection> decodeDetections(const std::vector<double>& raw,
                                               const BevGridSpec& spec, double max_offset,
                                               double conf_threshold, double nms_giou_threshold) {
    int n = spec.cells * spec.cells;
    if (raw.size() != static_cast<size_t>(kDetChannels) * n)
        throw ConfigError("detection grid size mismatch: expected " +
                          std::to_string(kDetChannels * n) + " values, got " +
                          std::to_string(raw.size()));
    auto at = [&](int ch, int cell) { return raw[static_cast<size_t>(ch) * n + cell]; };

    std::vector<PolygonDetection> cands;
    double half = spec.extent / 2.0;
    for (int cell = 0; cell < n; ++cell) {
        double obj = sigmoidd(at(kDetObjectness, cell));
        double l0 = at(kDetClass, cell), l1 = at(kDetClass + 1, cell);
        double m = std::max(l0, l1);
        double e0 = std::exp(l0 - m), e1 = std::exp(l1 - m);
        double cls_prob = std::max(e0, e1) / (e0 + e1);
        double conf = obj * cls_prob;
        if (conf < conf_threshold) continue;

        PolygonDetection det;
        det.cls = (l1 > l0) ? ObjectClass::Vehicle : ObjectClass::Parking;
        det.confidence = conf;
        det.cell_index = cell;
        Pt2<double> ctr = spec.cellCenter(cell / spec.cells, cell % spec.cells);
        for (int k = 0; k < 4; ++k) {
            double x = ctr.x + max_offset * std::tanh(at(kDetOffset + 2 * k, cell));
            double y = ctr.y + max_offset * std::tanh(at(kDetOffset + 2 * k + 1, cell));
            det.corners[k] = {std::clamp(x, -half, half), std::clamp(y, -half, half)};
            det.visibility[k] = sigmoidd(at(kDetVisibility + k, cell));
        }
        cands.push_back(det);
    }

    // Deterministic order -> NMS result independent of candidate order.
    std::sort(cands.begin(), cands.end(), [](const PolygonDetection& a, const PolygonDetection& b) {
        if (a.confidence != b.confidence) return a.confidence > b.confidence;
        return a.cell_index < b.cell_index;
    });
    std::vector<PolygonDetection> kept;
    for (const auto& c : cands) {
        ConvexQuad cq = ConvexQuad::canonical(c.corners);
        bool suppressed = false;
        for (const auto& k : kept) {
            if (k.cls != c.cls) continue;
            if (quadGiou(ConvexQuad::canonical(k.corners), cq) > nms_giou_threshold) {
                suppressed = true;
                break;
            }
        }
        if (!suppressed) kept.push_back(c);
    }
    return kept;
}

static bool insideQuad(const ConvexQuad& q, Pt2<double> p) {
    for (int i = 0; i < 4; ++i)
        if (cross2(q.v[i], q.v[(i + 1) % 4], p) < 0.0) return false;
    return true;
}

SegTargets buildSegTargets(const std::vector<PolygonLabel>& labels, const BevGridSpec& spec,
                           double center_sigma_px) {
    SegTargets t;
    t.size = 8 * spec.cells;
    size_t plane = static_cast<size_t>(t.size) * t.size;
    t.maps.assign(4 * plane, 0.0);
    double px = spec.extent / t.size;  // meters per map pixel

    for (const auto& label : labels) {
        int ch = static_cast<int>(label.cls);
        ConvexQuad q = label.quad();
        // bounding box in map pixels
        double xmin = 1e30, xmax = -1e30, ymin = 1e30, ymax = -1e30;
        for (const auto& v : q.v) {
            xmin = std::min(xmin, v.x), xmax = std::max(xmax, v.x);
            ymin = std::min(ymin, v.y), ymax = std::max(ymax, v.y);
        }
        double half = spec.extent / 2.0;
        int r0 = std::max(0, static_cast<int>(std::floor((half - xmax) / px)));
        int r1 = std::min(t.size - 1, static_cast<int>(std::ceil((half - xmin) / px)));
        int c0 = std::max(0, static_cast<int>(std::floor((half - ymax) / px)));
        int c1 = std::min(t.size - 1, static_cast<int>(std::ceil((half - ymin) / px)));
        for (int r = r0; r <= r1; ++r)
            for (int c = c0; c <= c1; ++c)
                if (insideQuad(q, mapPixelCenter(r, c, t.size, spec.extent)))
                    t.maps[ch * plane + static_cast<size_t>(r) * t.size + c] = 1.0;

        // Gaussian centroid heatmap, max-combined across objects.
        Pt2<double> ctr = label.centroid();
        double cr = (half - ctr.x) / px - 0.5;  // fractional pixel row/col
        double cc = (half - ctr.y) / px - 0.5;
        int rad = static_cast<int>(std::ceil(4.0 * center_sigma_px));
        int hr0 = std::max(0, static_cast<int>(std::floor(cr)) - rad);
        int hr1 = std::min(t.size - 1, static_cast<int>(std::ceil(cr)) + rad);
        int hc0 = std::max(0, static_cast<int>(std::floor(cc)) - rad);
        int hc1 = std::min(t.size - 1, static_cast<int>(std::ceil(cc)) + rad);
        for (int r = hr0; r <= hr1; ++r)
            for (int c = hc0; c <= hc1; ++c) {
                double d2 = (r - cr) * (r - cr) + (c - cc) * (c - cc);
                double g = std::exp(-d2 / (2.0 * center_sigma_px * center_sigma_px));
                double& cell = t.maps[(2 + ch) * plane + static_cast<size_t>(r) * t.size + c];
                cell = std::max(cell, g);
            }
    }
    return t;
}

}  // namespace parkbev
