#pragma once

#include <optional>
#include <string>
#include <vector>

#include "parkbev/labels.hpp"

namespace parkbev {

// Matching rule: greedy by descending confidence, one-to-one within each
// class. A pair counts only when the convex-quad IoU reaches the threshold
// and the orientation agrees: the predicted heading-edge midpoint must lie
// nearer the ground-truth heading edge than its rear edge.
struct MatchConfig {
    double confidence_threshold = 0.10;
    double iou_threshold = 0.5;

    void validate() const;
};

struct Match {
    int prediction = -1;  // index into the prediction list
    int label = -1;       // index into the label list
    double iou = 0.0;
};

struct MatchResult {
    std::vector<Match> matches;
    std::vector<int> unmatched_predictions;  // above threshold but no partner
    std::vector<int> unmatched_labels;
};

MatchResult matchDetections(const std::vector<PolygonDetection>& predictions,
                            const std::vector<PolygonLabel>& labels, const MatchConfig& cfg);

struct ClassMetrics {
    long tp = 0, fp = 0, fn = 0;
    double precision = 0.0, recall = 0.0, f1 = 0.0;
};

struct MetricsReport {
    ClassMetrics parking, vehicle;
    ClassMetrics overall;  // joint counts over both classes
    double macro_f1 = 0.0;  // plain mean of the per-class F1 scores
    // Mean over matches of the mean distance of the two heading-edge corner
    // pairs, in centimeters. Absent with no matches at all.
    std::optional<double> distance_error_cm;
    // Fraction of correct corner-visibility flags (threshold 0.5) over
    // matched parking slots. Absent with no matched slots.
    std::optional<double> visibility_accuracy;
};

// Streaming reduction over frames; the result is independent of frame order.
class MetricsAccumulator {
public:
    explicit MetricsAccumulator(MatchConfig cfg = {});
    void add(const std::vector<PolygonDetection>& predictions,
             const std::vector<PolygonLabel>& labels);
    MetricsReport report() const;

private:
    MatchConfig cfg_;
    long tp_[2] = {0, 0}, fp_[2] = {0, 0}, fn_[2] = {0, 0};
    double distance_sum_m_ = 0.0;
    long distance_count_ = 0;
    long vis_correct_ = 0, vis_total_ = 0;
};

std::string metricsToJson(const MetricsReport& report);

// Per-frame detection dump, one JSON object per line.
std::string detectionsToJsonLine(int frame_id, const std::vector<PolygonDetection>& dets);
std::pair<int, std::vector<PolygonDetection>> detectionsFromJsonLine(const std::string& line);

// Top-down debug raster (binary PPM): ground truth in green, predictions in
// red, entry/heading edges drawn brighter, ego box at the origin.
void writeOverlayPpm(const std::string& path, const std::vector<PolygonLabel>& labels,
                     const std::vector<PolygonDetection>& detections, const BevGridSpec& spec,
                     int image_size = 500);

}  // namespace parkbev
