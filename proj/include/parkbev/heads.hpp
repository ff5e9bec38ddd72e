#pragma once

#include <vector>

#include "parkbev/labels.hpp"

namespace parkbev {

// Detection-grid channel layout, per cell:
//   [0..7]  corner offsets (x,y pairs, tanh-bounded, meters)
//   [8]     objectness logit
//   [9..10] class logits (parking, vehicle)
//   [11..14] corner-visibility logits
constexpr int kDetChannels = 15;
constexpr int kDetOffset = 0;
constexpr int kDetObjectness = 8;
constexpr int kDetClass = 9;
constexpr int kDetVisibility = 11;

// Anchor-free target assignment: each label is owned by the cell containing
// its centroid; when two centroids land in the same cell the one closer to
// the cell center wins.
struct DetectionTargets {
    int cells = 0;
    std::vector<int> label_of_cell;  // -1 for background, else index into labels
    std::vector<PolygonLabel> labels;

    bool positive(int cell) const { return label_of_cell[cell] >= 0; }
};

DetectionTargets encodeDetectionTargets(const std::vector<PolygonLabel>& labels,
                                        const BevGridSpec& spec);

// Raw logits that decode exactly back to the label (saturated confidence).
// Used by fixtures and the encode->decode round-trip contract.
std::array<double, kDetChannels> encodeDetectionLogits(const PolygonLabel& label, int row, int col,
                                                       const BevGridSpec& spec, double max_offset);

// Decodes the raw [15, cells, cells] grid: corners = cell center +
// max_offset*tanh(raw), confidence = sigmoid(objectness)*max(softmax(class)),
// then greedy per-class NMS suppressing GIoU > nms_giou_threshold.
std::vector<PolygonDetection> decodeDetections(const std::vector<double>& raw,
                                               const BevGridSpec& spec, double max_offset,
                                               double conf_threshold, double nms_giou_threshold);

// Segmentation / center-point target maps at 8x BEV resolution.
// Channels: [0..1] binary fill per class, [2..3] Gaussian centroid heatmaps
// per class (sigma in map pixels).
struct SegTargets {
    int size = 0;                // square map side, 8 * spec.cells
    std::vector<double> maps;    // [4, size, size]
};

SegTargets buildSegTargets(const std::vector<PolygonLabel>& labels, const BevGridSpec& spec,
                           double center_sigma_px = 2.0);

// Vehicle-frame position of a map pixel center (same orientation as the BEV
// grid: row 0 forward, column 0 left).
inline Pt2<double> mapPixelCenter(int row, int col, int size, double extent) {
    double half = extent / 2.0, s = extent / size;
    return {half - (row + 0.5) * s, half - (col + 0.5) * s};
}

}  // namespace parkbev
