#include "parkbev/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "json.hpp"
#include "parkbev/errors.hpp"

namespace parkbev {

using nlohmann::json;

void MatchConfig::validate() const {
    if (confidence_threshold < 0.0 || confidence_threshold > 1.0)
        throw ConfigError("confidence threshold must lie in [0, 1]");
    if (iou_threshold <= 0.0 || iou_threshold > 1.0)
        throw ConfigError("IoU threshold must lie in (0, 1]");
}

namespace {

Pt2<double> midpoint(Pt2<double> a, Pt2<double> b) {
    return {(a.x + b.x) / 2.0, (a.y + b.y) / 2.0};
}

double dist(Pt2<double> a, Pt2<double> b) { return std::hypot(a.x - b.x, a.y - b.y); }

// Orientation test: the predicted heading-edge midpoint must be closer to the
// GT heading edge (corners 0-1) than to the GT rear edge (corners 2-3).
bool orientationAgrees(const PolygonDetection& pred, const PolygonLabel& gt) {
    Pt2<double> p = midpoint(pred.corners[0], pred.corners[1]);
    Pt2<double> head = midpoint(gt.corners[0], gt.corners[1]);
    Pt2<double> rear = midpoint(gt.corners[2], gt.corners[3]);
    return dist(p, head) < dist(p, rear);
}

}  // namespace

MatchResult matchDetections(const std::vector<PolygonDetection>& predictions,
                            const std::vector<PolygonLabel>& labels, const MatchConfig& cfg) {
    cfg.validate();
    std::vector<int> order;
    for (int i = 0; i < static_cast<int>(predictions.size()); ++i)
        if (predictions[i].confidence >= cfg.confidence_threshold) order.push_back(i);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        if (predictions[a].confidence != predictions[b].confidence)
            return predictions[a].confidence > predictions[b].confidence;
        return predictions[a].cell_index < predictions[b].cell_index;
    });

    std::vector<ConvexQuad> label_quads;
    label_quads.reserve(labels.size());
    for (const auto& lab : labels) label_quads.push_back(lab.quad());

    MatchResult result;
    std::vector<bool> taken(labels.size(), false);
    for (int pi : order) {
        ConvexQuad pq = ConvexQuad::canonical(predictions[pi].corners);
        int best = -1;
        double best_iou = 0.0;
        for (int li = 0; li < static_cast<int>(labels.size()); ++li) {
            if (taken[li] || labels[li].cls != predictions[pi].cls) continue;
            double iou = quadIou(pq, label_quads[li]);
            if (iou < cfg.iou_threshold || iou <= best_iou) continue;
            if (!orientationAgrees(predictions[pi], labels[li])) continue;
            best = li;
            best_iou = iou;
        }
        if (best >= 0) {
            taken[best] = true;
            result.matches.push_back({pi, best, best_iou});
        } else {
            result.unmatched_predictions.push_back(pi);
        }
    }
    for (int li = 0; li < static_cast<int>(labels.size()); ++li)
        if (!taken[li]) result.unmatched_labels.push_back(li);
    return result;
}

MetricsAccumulator::MetricsAccumulator(MatchConfig cfg) : cfg_(cfg) { cfg_.validate(); }

void MetricsAccumulator::add(const std::vector<PolygonDetection>& predictions,
                             const std::vector<PolygonLabel>& labels) {
    MatchResult r = matchDetections(predictions, labels, cfg_);
    for (const Match& m : r.matches) {
        const auto& pred = predictions[m.prediction];
        const auto& gt = labels[m.label];
        ++tp_[static_cast<int>(gt.cls)];
        distance_sum_m_ += 0.5 * (dist(pred.corners[0], gt.corners[0]) +
                                  dist(pred.corners[1], gt.corners[1]));
        ++distance_count_;
        if (gt.cls == ObjectClass::Parking) {
            for (int k = 0; k < 4; ++k) {
                vis_correct_ += ((pred.visibility[k] > 0.5) == gt.visibility[k]) ? 1 : 0;
                ++vis_total_;
            }
        }
    }
    for (int pi : r.unmatched_predictions) ++fp_[static_cast<int>(predictions[pi].cls)];
    for (int li : r.unmatched_labels) ++fn_[static_cast<int>(labels[li].cls)];
}

namespace {

ClassMetrics finish(long tp, long fp, long fn) {
    ClassMetrics m;
    m.tp = tp;
    m.fp = fp;
    m.fn = fn;
    m.precision = (tp + fp > 0) ? double(tp) / double(tp + fp) : 0.0;
    m.recall = (tp + fn > 0) ? double(tp) / double(tp + fn) : 0.0;
    double pr = m.precision + m.recall;
    m.f1 = pr > 0.0 ? 2.0 * m.precision * m.recall / pr : 0.0;
    return m;
}

}  // namespace

MetricsReport MetricsAccumulator::report() const {
    MetricsReport rep;
    rep.parking = finish(tp_[0], fp_[0], fn_[0]);
    rep.vehicle = finish(tp_[1], fp_[1], fn_[1]);
    rep.overall = finish(tp_[0] + tp_[1], fp_[0] + fp_[1], fn_[0] + fn_[1]);
    rep.macro_f1 = 0.5 * (rep.parking.f1 + rep.vehicle.f1);
    if (distance_count_ > 0)
        rep.distance_error_cm = 100.0 * distance_sum_m_ / double(distance_count_);
    if (vis_total_ > 0) rep.visibility_accuracy = double(vis_correct_) / double(vis_total_);
    return rep;
}

namespace {

json classJson(const ClassMetrics& m) {
    return {{"tp", m.tp},        {"fp", m.fp},         {"fn", m.fn},
            {"precision", m.precision}, {"recall", m.recall}, {"f1", m.f1}};
}

}  // namespace

std::string metricsToJson(const MetricsReport& rep) {
    json j{{"parking", classJson(rep.parking)},
           {"vehicle", classJson(rep.vehicle)},
           {"overall", classJson(rep.overall)},
           {"macro_f1", rep.macro_f1}};
    j["distance_error_cm"] =
        rep.distance_error_cm ? json(*rep.distance_error_cm) : json(nullptr);
    j["visibility_accuracy"] =
        rep.visibility_accuracy ? json(*rep.visibility_accuracy) : json(nullptr);
    return j.dump(2);
}

std::string detectionsToJsonLine(int frame_id, const std::vector<PolygonDetection>& dets) {
    json arr = json::array();
    for (const auto& d : dets) {
        json corners = json::array();
        for (const auto& c : d.corners) corners.push_back({c.x, c.y});
        arr.push_back({{"class", className(d.cls)},
                       {"corners", corners},
                       {"confidence", d.confidence},
                       {"visibility", d.visibility},
                       {"cell_index", d.cell_index}});
    }
    return json{{"frame_id", frame_id}, {"detections", arr}}.dump();
}

std::pair<int, std::vector<PolygonDetection>> detectionsFromJsonLine(const std::string& line) {
    json j;
    try {
        j = json::parse(line);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("detection dump parse failure: ") + e.what());
    }
    std::vector<PolygonDetection> dets;
    for (const auto& e : j.at("detections")) {
        PolygonDetection d;
        std::string cls = e.at("class").get<std::string>();
        if (cls == "parking")
            d.cls = ObjectClass::Parking;
        else if (cls == "vehicle")
            d.cls = ObjectClass::Vehicle;
        else
            throw ConfigError("unknown detection class '" + cls + "'");
        const auto& corners = e.at("corners");
        if (corners.size() != 4) throw ConfigError("detection must have 4 corners");
        for (int k = 0; k < 4; ++k)
            d.corners[k] = {corners[k].at(0).get<double>(), corners[k].at(1).get<double>()};
        d.confidence = e.at("confidence").get<double>();
        const auto& vis = e.at("visibility");
        if (vis.size() != 4) throw ConfigError("detection must have 4 visibility scores");
        for (int k = 0; k < 4; ++k) d.visibility[k] = vis[k].get<double>();
        d.cell_index = e.at("cell_index").get<int>();
        dets.push_back(d);
    }
    return {j.at("frame_id").get<int>(), dets};
}

namespace {

struct Rgb {
    unsigned char r, g, b;
};

class Raster {
public:
    Raster(int size, double extent) : size_(size), extent_(extent), px_(size * size, {20, 20, 24}) {}

    // vehicle frame -> pixel: forward (+x) up, left (+y) to the left
    std::pair<double, double> toPixel(Pt2<double> p) const {
        double scale = size_ / extent_;
        return {(extent_ / 2.0 - p.y) * scale, (extent_ / 2.0 - p.x) * scale};
    }

    void set(int x, int y, Rgb c) {
        if (x >= 0 && x < size_ && y >= 0 && y < size_) px_[y * size_ + x] = c;
    }

    void line(Pt2<double> a, Pt2<double> b, Rgb c) {
        auto [x0, y0] = toPixel(a);
        auto [x1, y1] = toPixel(b);
        int n = static_cast<int>(std::ceil(std::max(std::abs(x1 - x0), std::abs(y1 - y0)))) + 1;
        for (int i = 0; i <= n; ++i) {
            double t = double(i) / n;
            set(static_cast<int>(std::lround(x0 + t * (x1 - x0))),
                static_cast<int>(std::lround(y0 + t * (y1 - y0))), c);
        }
    }

    void quad(const std::array<Pt2<double>, 4>& corners, Rgb edge, Rgb entry) {
        for (int e = 0; e < 4; ++e)
            line(corners[e], corners[(e + 1) % 4], e == 0 ? entry : edge);
    }

    void write(const std::string& path) const {
        std::ofstream f(path, std::ios::binary);
        if (!f) throw ConfigError("cannot write " + path);
        f << "P6\n" << size_ << " " << size_ << "\n255\n";
        f.write(reinterpret_cast<const char*>(px_.data()),
                static_cast<std::streamsize>(px_.size() * sizeof(Rgb)));
    }

private:
    int size_;
    double extent_;
    std::vector<Rgb> px_;
};

}  // namespace

void writeOverlayPpm(const std::string& path, const std::vector<PolygonLabel>& labels,
                     const std::vector<PolygonDetection>& detections, const BevGridSpec& spec,
                     int image_size) {
    Raster img(image_size, spec.extent);
    for (const auto& lab : labels) img.quad(lab.corners, {0, 140, 0}, {120, 255, 120});
    for (const auto& det : detections) img.quad(det.corners, {160, 0, 0}, {255, 120, 120});
    // ego box: roughly a car footprint ahead of the rear axle
    std::array<Pt2<double>, 4> ego{{{3.8, 0.95}, {3.8, -0.95}, {-0.9, -0.95}, {-0.9, 0.95}}};
    img.quad(ego, {200, 200, 40}, {255, 255, 80});
    img.write(path);
}

}  // namespace parkbev
