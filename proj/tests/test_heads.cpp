#include "doctest.h"

#include <random>

#include "parkbev/heads.hpp"

using namespace parkbev;

namespace {

PolygonLabel makeSlot(double cx, double cy, double yaw, double w = 2.5, double l = 5.0,
                      ObjectClass cls = ObjectClass::Parking) {
    // Entry edge (corners 0-1) on the +x side of the local box, clockwise in BEV.
    std::array<Pt2<double>, 4> local{{{l / 2, w / 2}, {l / 2, -w / 2}, {-l / 2, -w / 2},
                                      {-l / 2, w / 2}}};
    PolygonLabel lab;
    lab.cls = cls;
    for (int i = 0; i < 4; ++i) {
        double c = std::cos(yaw), s = std::sin(yaw);
        lab.corners[i] = {cx + c * local[i].x - s * local[i].y,
                          cy + s * local[i].x + c * local[i].y};
    }
    return canonicalizeLabel(lab);
}

std::vector<double> emptyGrid(const BevGridSpec& spec, double objectness_logit = -50.0) {
    int n = spec.cells * spec.cells;
    std::vector<double> raw(static_cast<size_t>(kDetChannels) * n, 0.0);
    for (int c = 0; c < n; ++c) raw[static_cast<size_t>(kDetObjectness) * n + c] = objectness_logit;
    return raw;
}

void placeLabel(std::vector<double>& raw, const PolygonLabel& lab, const BevGridSpec& spec,
                double max_offset) {
    int n = spec.cells * spec.cells;
    auto cell = spec.cellOf(lab.centroid());
    REQUIRE(cell.has_value());
    auto logits = encodeDetectionLogits(lab, cell->first, cell->second, spec, max_offset);
    int idx = cell->first * spec.cells + cell->second;
    for (int ch = 0; ch < kDetChannels; ++ch) raw[static_cast<size_t>(ch) * n + idx] = logits[ch];
}

}  // namespace

TEST_CASE("target assignment follows the centroid rule") {
    BevGridSpec spec;
    auto lab = makeSlot(5.2, -3.1, 0.4);
    auto t = encodeDetectionTargets({lab}, spec);
    auto cell = spec.cellOf(lab.centroid());
    REQUIRE(cell.has_value());
    int idx = cell->first * spec.cells + cell->second;
    CHECK(t.label_of_cell[idx] == 0);
    int positives = 0;
    for (int c = 0; c < spec.cells * spec.cells; ++c) positives += t.positive(c);
    CHECK(positives == 1);
}

TEST_CASE("same-cell collision keeps the centroid closest to the cell center") {
    BevGridSpec spec;
    Pt2<double> ctr = spec.cellCenter(7, 9);
    auto near = makeSlot(ctr.x + 0.05, ctr.y - 0.05, 0.0, 0.8, 0.8);
    auto far = makeSlot(ctr.x + 0.4, ctr.y + 0.4, 0.0, 0.8, 0.8);
    auto t = encodeDetectionTargets({far, near}, spec);
    CHECK(t.label_of_cell[7 * spec.cells + 9] == 1);
}

TEST_CASE("out-of-extent centroids are not assigned") {
    BevGridSpec spec;
    auto t = encodeDetectionTargets({makeSlot(40.0, 0.0, 0.0)}, spec);
    for (int c = 0; c < spec.cells * spec.cells; ++c) CHECK_FALSE(t.positive(c));
}

TEST_CASE("encode -> decode round trip recovers labels") {
    BevGridSpec spec;
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> pos(-9.0, 9.0), ang(0.0, 6.283);
    double max_offset = 6.0;
    for (int it = 0; it < 50; ++it) {
        auto lab = makeSlot(pos(rng), pos(rng), ang(rng), 2.2, 4.8,
                            (it % 2) ? ObjectClass::Vehicle : ObjectClass::Parking);
        lab.visibility = {it % 2 == 0, true, it % 3 == 0, true};
        auto raw = emptyGrid(spec);
        placeLabel(raw, lab, spec, max_offset);
        auto dets = decodeDetections(raw, spec, max_offset, 0.5, 0.3);
        REQUIRE(dets.size() == 1);
        CHECK(dets[0].cls == lab.cls);
        CHECK(dets[0].confidence > 0.999);
        for (int k = 0; k < 4; ++k) {
            CHECK(std::abs(dets[0].corners[k].x - lab.corners[k].x) < 1e-6);
            CHECK(std::abs(dets[0].corners[k].y - lab.corners[k].y) < 1e-6);
            CHECK((dets[0].visibility[k] > 0.5) == lab.visibility[k]);
        }
    }
}

TEST_CASE("saturated-negative objectness yields no detections") {
    BevGridSpec spec;
    auto dets = decodeDetections(emptyGrid(spec), spec, 6.0, 0.1, 0.3);
    CHECK(dets.empty());
}

TEST_CASE("decode formula matches the analytic expression") {
    BevGridSpec spec;
    int n = spec.cells * spec.cells;
    auto raw = emptyGrid(spec);
    int cell = 12 * spec.cells + 12;  // center cell
    raw[static_cast<size_t>(kDetObjectness) * n + cell] = 3.0;
    raw[static_cast<size_t>(kDetClass) * n + cell] = 2.0;
    raw[static_cast<size_t>(kDetClass + 1) * n + cell] = -2.0;
    for (int k = 0; k < 8; ++k) raw[static_cast<size_t>(k) * n + cell] = 0.1 * (k + 1);
    auto dets = decodeDetections(raw, spec, 6.0, 0.1, 0.3);
    REQUIRE(dets.size() == 1);
    Pt2<double> ctr = spec.cellCenter(12, 12);
    for (int k = 0; k < 4; ++k) {
        CHECK(dets[0].corners[k].x ==
              doctest::Approx(ctr.x + 6.0 * std::tanh(0.1 * (2 * k + 1))).epsilon(1e-12));
        CHECK(dets[0].corners[k].y ==
              doctest::Approx(ctr.y + 6.0 * std::tanh(0.1 * (2 * k + 2))).epsilon(1e-12));
    }
    double conf = 1.0 / (1.0 + std::exp(-3.0));
    conf *= std::exp(2.0) / (std::exp(2.0) + std::exp(-2.0));
    CHECK(dets[0].confidence == doctest::Approx(conf).epsilon(1e-12));
}

TEST_CASE("NMS keeps the highest-confidence overlapping candidate") {
    BevGridSpec spec;
    int n = spec.cells * spec.cells;
    auto lab = makeSlot(0.3, 0.3, 0.2);
    auto raw = emptyGrid(spec);
    // Same polygon written to two adjacent cells with different objectness.
    auto cell = spec.cellOf(lab.centroid());
    REQUIRE(cell.has_value());
    for (int pair = 0; pair < 2; ++pair) {
        int r = cell->first, c = cell->second + pair;
        auto logits = encodeDetectionLogits(lab, r, c, spec, 6.0);
        logits[kDetObjectness] = pair == 0 ? 4.0 : 2.0;
        int idx = r * spec.cells + c;
        for (int ch = 0; ch < kDetChannels; ++ch)
            raw[static_cast<size_t>(ch) * n + idx] = logits[ch];
    }
    auto dets = decodeDetections(raw, spec, 6.0, 0.1, 0.3);
    REQUIRE(dets.size() == 1);
    CHECK(dets[0].confidence == doctest::Approx(1.0 / (1.0 + std::exp(-4.0))).epsilon(1e-9));
}

TEST_CASE("NMS does not suppress across classes") {
    BevGridSpec spec;
    auto park = makeSlot(1.0, 1.0, 0.0, 2.5, 5.0, ObjectClass::Parking);
    auto veh = makeSlot(1.1, 1.0, 0.0, 2.4, 4.8, ObjectClass::Vehicle);
    auto raw = emptyGrid(spec);
    placeLabel(raw, park, spec, 6.0);
    // heavily overlapping vehicle candidate written to a neighboring cell
    int n = spec.cells * spec.cells;
    auto cell = spec.cellOf(park.centroid());
    REQUIRE(cell.has_value());
    int r = cell->first + 1, c = cell->second;
    auto logits = encodeDetectionLogits(veh, r, c, spec, 6.0);
    int idx = r * spec.cells + c;
    for (int ch = 0; ch < kDetChannels; ++ch)
        raw[static_cast<size_t>(ch) * n + idx] = logits[ch];
    auto dets = decodeDetections(raw, spec, 6.0, 0.1, 0.3);
    CHECK(dets.size() == 2);
}

TEST_CASE("NMS survivors are independent of candidate placement order") {
    BevGridSpec spec;
    int n = spec.cells * spec.cells;
    auto a = makeSlot(0.6, 0.6, 0.1);
    auto b = makeSlot(1.6, 0.7, 0.1);  // overlaps a, lands in a different cell
    auto cellA = spec.cellOf(a.centroid());
    auto cellB = spec.cellOf(b.centroid());
    REQUIRE(cellA.has_value());
    REQUIRE(cellB.has_value());
    // identical confidences: the tie must break on the cell index both times
    for (bool swap_cells : {false, true}) {
        auto raw = emptyGrid(spec);
        auto place = [&](const PolygonLabel& lab, std::pair<int, int> cell) {
            auto logits = encodeDetectionLogits(lab, cell.first, cell.second, spec, 6.0);
            logits[kDetObjectness] = 2.0;
            int idx = cell.first * spec.cells + cell.second;
            for (int ch = 0; ch < kDetChannels; ++ch)
                raw[static_cast<size_t>(ch) * n + idx] = logits[ch];
        };
        // same two polygons, written to opposite grid cells on the second pass
        place(a, swap_cells ? *cellB : *cellA);
        place(b, swap_cells ? *cellA : *cellB);
        auto dets = decodeDetections(raw, spec, 6.0, 0.1, 0.3);
        REQUIRE(dets.size() == 1);
        // the survivor is the candidate in the lower cell index either way
        int low = std::min(cellA->first * spec.cells + cellA->second,
                           cellB->first * spec.cells + cellB->second);
        CHECK(dets[0].cell_index == low);
    }
}

TEST_CASE("segmentation targets fill the polygon and peak at the centroid") {
    BevGridSpec spec;
    auto lab = makeSlot(4.0, -2.0, 0.0, 3.0, 5.0, ObjectClass::Vehicle);
    auto t = buildSegTargets({lab}, spec);
    REQUIRE(t.size == 200);
    size_t plane = static_cast<size_t>(t.size) * t.size;
    double fill = 0.0, park_fill = 0.0;
    for (size_t i = 0; i < plane; ++i) {
        park_fill += t.maps[i];
        fill += t.maps[plane + i];
    }
    double px_area = (spec.extent / t.size) * (spec.extent / t.size);
    CHECK(fill * px_area == doctest::Approx(15.0).epsilon(0.02));  // 3m x 5m box
    CHECK(park_fill == 0.0);

    // centroid heatmap peaks near 1 at the centroid pixel, on the vehicle channel
    Pt2<double> c = lab.centroid();
    double half = spec.extent / 2.0, pxs = spec.extent / t.size;
    int r = static_cast<int>((half - c.x) / pxs), cc = static_cast<int>((half - c.y) / pxs);
    double peak = t.maps[3 * plane + static_cast<size_t>(r) * t.size + cc];
    CHECK(peak > 0.9);
    double park_peak = t.maps[2 * plane + static_cast<size_t>(r) * t.size + cc];
    CHECK(park_peak == 0.0);
}

TEST_CASE("map pixel centers agree with the BEV cell convention") {
    BevGridSpec spec;
    // pixel (0,0) of the 200-map sits in cell (0,0)
    Pt2<double> p = mapPixelCenter(0, 0, 8 * spec.cells, spec.extent);
    auto cell = spec.cellOf(p);
    REQUIRE(cell.has_value());
    CHECK(cell->first == 0);
    CHECK(cell->second == 0);
    // center of cell (r,c) equals the mean of its 8x8 pixel centers
    Pt2<double> ctr = spec.cellCenter(13, 4);
    double sx = 0, sy = 0;
    for (int dr = 0; dr < 8; ++dr)
        for (int dc = 0; dc < 8; ++dc) {
            Pt2<double> q = mapPixelCenter(13 * 8 + dr, 4 * 8 + dc, 8 * spec.cells, spec.extent);
            sx += q.x / 64.0;
            sy += q.y / 64.0;
        }
    CHECK(sx == doctest::Approx(ctr.x).epsilon(1e-12));
    CHECK(sy == doctest::Approx(ctr.y).epsilon(1e-12));
}
