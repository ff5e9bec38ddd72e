#pragma once

#include <array>
#include <optional>
#include <vector>

#include "parkbev/polygon.hpp"

namespace parkbev {

enum class ObjectClass { Parking = 0, Vehicle = 1 };
constexpr int kNumClasses = 2;

inline const char* className(ObjectClass c) {
    return c == ObjectClass::Parking ? "parking" : "vehicle";
}

// Metric BEV grid centered on the rear-axle origin. Row 0 sits at the +x
// (forward) edge, column 0 at the +y (left) edge, so the raster reads like a
// top-down map with forward up and left on the left.
struct BevGridSpec {
    int cells = 25;
    double extent = 25.0;  // meters, square
    int channels = 128;

    double cellSize() const { return extent / cells; }
    Pt2<double> cellCenter(int row, int col) const {
        double half = extent / 2.0, s = cellSize();
        return {half - (row + 0.5) * s, half - (col + 0.5) * s};
    }
    std::optional<std::pair<int, int>> cellOf(Pt2<double> p) const {
        double half = extent / 2.0, s = cellSize();
        int r = static_cast<int>(std::floor((half - p.x) / s));
        int c = static_cast<int>(std::floor((half - p.y) / s));
        if (r < 0 || r >= cells || c < 0 || c >= cells) return std::nullopt;
        return std::make_pair(r, c);
    }
    bool contains(Pt2<double> p) const { return cellOf(p).has_value(); }
};

// Ground-truth polygon object. Corners 0-1 form the entry line (parking) or
// heading edge (vehicle); the sequence winds clockwise in the BEV raster
// (positive shoelace in vehicle-frame x,y).
struct PolygonLabel {
    ObjectClass cls = ObjectClass::Parking;
    std::array<Pt2<double>, 4> corners{};
    std::array<bool, 4> visibility{true, true, true, true};

    Pt2<double> centroid() const {
        Pt2<double> c{0, 0};
        for (const auto& p : corners) {
            c.x += 0.25 * p.x;
            c.y += 0.25 * p.y;
        }
        return c;
    }
    ConvexQuad quad() const { return ConvexQuad::canonical(corners); }
};

// Reorders so the entry/heading pair stays first while the winding becomes
// canonical (positive shoelace). Input must already have the entry pair at
// positions 0-1.
PolygonLabel canonicalizeLabel(PolygonLabel label);

// Rigid/reflective label transform about the vehicle origin, preserving the
// entry-first clockwise convention.
PolygonLabel transformLabel(const PolygonLabel& label, double yaw, bool flip,
                            Pt2<double> translation);

struct PolygonDetection {
    ObjectClass cls = ObjectClass::Parking;
    std::array<Pt2<double>, 4> corners{};
    double confidence = 0.0;
    std::array<double, 4> visibility{};
    int cell_index = 0;  // frame-stable id (grid cell of origin)
};

}  // namespace parkbev
