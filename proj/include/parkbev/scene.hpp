#pragma once

#include <cstdint>

#include "parkbev/calibration_io.hpp"
#include "parkbev/heads.hpp"

namespace parkbev {

// Procedural parking-lot description. All geometry lives in the vehicle
// frame (ego at the origin, x forward).
struct SceneSpec {
    enum class Layout { Perpendicular, Parallel, Mixed };
    Layout layout = Layout::Mixed;

    double slot_width = 2.6, slot_length = 5.2;          // perpendicular slots
    double parallel_width = 2.2, parallel_length = 6.2;  // parallel slots
    int min_slots_per_row = 3, max_slots_per_row = 6;
    double occupancy = 0.5;                 // probability a slot holds a vehicle
    double aisle_min = 3.0, aisle_max = 5.5;  // lateral distance to the row
    double row_yaw_range = 0.35;            // radians, random row orientation
    double row_shift_range = 3.0;           // meters, random slot phase along the row
    double world_radius = 20.0;             // no geometry beyond this
    std::uint64_t seed = 0;
};

// Axis box in its local frame: length along x (heading), width along y,
// standing on the ground plane.
struct VehicleBox {
    Pt2<double> center;  // meters
    double yaw = 0.0;
    double length = 4.4, width = 1.8, height = 1.5;
    int color_id = 0;

    std::array<Pt2<double>, 4> footprint() const;  // heading edge first, label winding
};

struct SlotMarking {
    std::array<Pt2<double>, 4> corners;  // entry line first, label winding
    bool occupied = false;
};

struct SceneWorld {
    std::vector<SlotMarking> slots;
    std::vector<VehicleBox> vehicles;
};

// Deterministic scene synthesis; throws ConfigError when the layout cannot
// fit inside world_radius.
SceneWorld generateScene(const SceneSpec& spec);

// Per-pixel fisheye ray casting: vehicle boxes with flat per-face shading
// (heading face brightest), ground shaded by proximity to slot markings
// (entry lines double weight), black outside the valid circle.
// Returns a planar [3, height, width] float image in [0, 1].
std::vector<float> renderFisheye(const SceneWorld& world, const CameraCalibration& calib);

// BEV labels: vacant slots as parking class, vehicles by footprint. Objects
// with more than `max_outside` of their area beyond the grid extent are
// dropped. Parking-corner visibility is an unoccluded line of sight to at
// least one camera (segment vs vehicle-box test at marking height).
std::vector<PolygonLabel> deriveLabels(const SceneWorld& world, const Rig& rig,
                                       const BevGridSpec& spec, double max_outside = 0.7);

// Exposed for the renderer oracle tests.
double distanceToSegment(Pt2<double> p, Pt2<double> a, Pt2<double> b);
bool segmentHitsBox(const Vec3& a, const Vec3& b, const VehicleBox& box);

}  // namespace parkbev
