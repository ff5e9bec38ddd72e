#include "parkbev/scene.hpp"

#include <cmath>
#include <random>

#include "parkbev/errors.hpp"
#include "parkbev/ops.hpp"

namespace parkbev {

namespace {

Pt2<double> rot(Pt2<double> p, double yaw) {
    double c = std::cos(yaw), s = std::sin(yaw);
    return {c * p.x - s * p.y, s * p.x + c * p.y};
}

std::uint32_t hash2(int x, int y) {
    std::uint32_t h = static_cast<std::uint32_t>(x) * 0x9E3779B1u ^
                      static_cast<std::uint32_t>(y) * 0x85EBCA77u;
    h ^= h >> 13;
    h *= 0xC2B2AE3Du;
    h ^= h >> 16;
    return h;
}

}  // namespace

std::array<Pt2<double>, 4> VehicleBox::footprint() const {
    std::array<Pt2<double>, 4> local{{{length / 2, width / 2},
                                      {length / 2, -width / 2},
                                      {-length / 2, -width / 2},
                                      {-length / 2, width / 2}}};
    std::array<Pt2<double>, 4> out;
    for (int i = 0; i < 4; ++i) {
        Pt2<double> r = rot(local[i], yaw);
        out[i] = {center.x + r.x, center.y + r.y};
    }
    return out;
}

double distanceToSegment(Pt2<double> p, Pt2<double> a, Pt2<double> b) {
    double vx = b.x - a.x, vy = b.y - a.y;
    double len2 = vx * vx + vy * vy;
    double t = len2 > 0.0 ? ((p.x - a.x) * vx + (p.y - a.y) * vy) / len2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    double dx = p.x - (a.x + t * vx), dy = p.y - (a.y + t * vy);
    return std::hypot(dx, dy);
}

SceneWorld generateScene(const SceneSpec& spec) {
    Rng rng(spec.seed);
    SceneWorld world;

    struct RowKind {
        bool parallel;
        int side;  // +1 = left (+y), -1 = right (-y)
    };
    std::vector<RowKind> rows;
    std::bernoulli_distribution coin(0.5);
    int first_side = coin(rng) ? 1 : -1;
    switch (spec.layout) {
        case SceneSpec::Layout::Perpendicular:
            rows = {{false, first_side}, {false, -first_side}};
            break;
        case SceneSpec::Layout::Parallel:
            rows = {{true, first_side}, {true, -first_side}};
            break;
        case SceneSpec::Layout::Mixed:
            rows = {{false, first_side}, {true, -first_side}};
            break;
    }

    std::uniform_real_distribution<double> aisle(spec.aisle_min, spec.aisle_max);
    std::uniform_real_distribution<double> row_yaw(-spec.row_yaw_range, spec.row_yaw_range);
    std::uniform_real_distribution<double> row_shift(-spec.row_shift_range,
                                                     spec.row_shift_range);
    std::uniform_int_distribution<int> slot_count(spec.min_slots_per_row, spec.max_slots_per_row);
    std::bernoulli_distribution occupied(spec.occupancy);
    std::uniform_real_distribution<double> jitter(-0.15, 0.15);
    std::uniform_real_distribution<double> veh_len(4.1, 4.7), veh_wid(1.7, 1.9),
        veh_hgt(1.4, 1.65), yaw_jit(-0.06, 0.06);

    int color = 0;
    for (const RowKind& row : rows) {
        double theta = row_yaw(rng);
        Pt2<double> axis{std::cos(theta), std::sin(theta)};
        Pt2<double> lateral{-std::sin(theta) * row.side, std::cos(theta) * row.side};
        double d = aisle(rng);
        int n = slot_count(rng);
        double pitch = row.parallel ? spec.parallel_length : spec.slot_width;
        double depth = row.parallel ? spec.parallel_width : spec.slot_length;
        double t0 = row_shift(rng) - n * pitch / 2.0;

        for (int i = 0; i < n; ++i) {
            double ta = t0 + i * pitch, tb = t0 + (i + 1) * pitch;
            SlotMarking slot;
            slot.corners = {{{ta * axis.x + d * lateral.x, ta * axis.y + d * lateral.y},
                             {tb * axis.x + d * lateral.x, tb * axis.y + d * lateral.y},
                             {tb * axis.x + (d + depth) * lateral.x,
                              tb * axis.y + (d + depth) * lateral.y},
                             {ta * axis.x + (d + depth) * lateral.x,
                              ta * axis.y + (d + depth) * lateral.y}}};
            // rows are trimmed at the world edge rather than rejected wholesale
            bool fits = true;
            for (const auto& c : slot.corners)
                if (std::hypot(c.x, c.y) > spec.world_radius) fits = false;
            if (!fits) continue;
            slot.occupied = occupied(rng);
            if (slot.occupied) {
                VehicleBox veh;
                double tc = (ta + tb) / 2.0, dc = d + depth / 2.0;
                veh.center = {tc * axis.x + dc * lateral.x + jitter(rng),
                              tc * axis.y + dc * lateral.y + jitter(rng)};
                // heading along the slot depth (perpendicular) or the row axis
                // (parallel), random forward/backward
                double base = row.parallel ? std::atan2(axis.y, axis.x)
                                           : std::atan2(lateral.y, lateral.x);
                veh.yaw = base + (coin(rng) ? 0.0 : M_PI) + yaw_jit(rng);
                veh.length = row.parallel ? std::min(veh_len(rng), spec.parallel_length - 1.0)
                                          : std::min(veh_len(rng), spec.slot_length - 0.5);
                veh.width = veh_wid(rng);
                veh.height = veh_hgt(rng);
                veh.color_id = color++;
                world.vehicles.push_back(veh);
            }
            world.slots.push_back(slot);
        }
    }
    if (world.slots.empty()) throw ConfigError("no slot of the requested layout fits the world radius");
    return world;
}

namespace {

// Ray vs upright box in world coordinates; returns hit distance and the local
// face axis (0=x heading, 1=y, 2=z top) or nullopt.
struct BoxHit {
    double t;
    int axis;
    double sign;
};

std::optional<BoxHit> rayBox(const Vec3& origin, const Vec3& dir, const VehicleBox& box) {
    double c = std::cos(-box.yaw), s = std::sin(-box.yaw);
    auto toLocal = [&](double x, double y) {
        return Pt2<double>{c * x - s * y, s * x + c * y};
    };
    Pt2<double> o2 = toLocal(origin.x - box.center.x, origin.y - box.center.y);
    Pt2<double> d2 = toLocal(dir.x, dir.y);
    double lo[3] = {-box.length / 2, -box.width / 2, 0.0};
    double hi[3] = {box.length / 2, box.width / 2, box.height};
    double o[3] = {o2.x, o2.y, origin.z};
    double d[3] = {d2.x, d2.y, dir.z};
    double tmin = 1e-4, tmax = 1e18;
    int axis = -1;
    double sign = 0.0;
    for (int k = 0; k < 3; ++k) {
        if (std::abs(d[k]) < 1e-12) {
            if (o[k] < lo[k] || o[k] > hi[k]) return std::nullopt;
            continue;
        }
        double t1 = (lo[k] - o[k]) / d[k], t2 = (hi[k] - o[k]) / d[k];
        double near_sign = d[k] > 0 ? -1.0 : 1.0;
        if (t1 > t2) std::swap(t1, t2);
        if (t1 > tmin) {
            tmin = t1;
            axis = k;
            sign = near_sign;
        }
        tmax = std::min(tmax, t2);
        if (tmin > tmax) return std::nullopt;
    }
    if (axis < 0) return std::nullopt;  // origin inside the box
    return BoxHit{tmin, axis, sign};
}

}  // namespace

bool segmentHitsBox(const Vec3& a, const Vec3& b, const VehicleBox& box) {
    Vec3 d = b - a;
    double len = d.norm();
    if (len < 1e-12) return false;
    auto hit = rayBox(a, d * (1.0 / len), box);
    return hit.has_value() && hit->t < len;
}

std::vector<float> renderFisheye(const SceneWorld& world, const CameraCalibration& calib) {
    const CameraIntrinsics& intr = calib.intrinsics;
    int w = intr.width, h = intr.height;
    size_t plane = static_cast<size_t>(h) * w;
    std::vector<float> img(3 * plane, 0.0f);
    Vec3 origin = calib.extrinsics.cameraCenterInVehicle();
    double max_r = intr.maxRadius();

    for (int v = 0; v < h; ++v)
        for (int u = 0; u < w; ++u) {
            double du = u - intr.u0, dv = v - intr.v0;
            double r = std::hypot(du, dv);
            if (r > max_r) continue;  // outside the fisheye circle: black
            double alpha = intr.incidenceAngle(r);
            double phi = (r > 0.0) ? std::atan2(dv, du) : 0.0;
            Vec3 d_cam{std::sin(alpha) * std::cos(phi), std::sin(alpha) * std::sin(phi),
                       std::cos(alpha)};
            Vec3 dir = calib.extrinsics.directionToVehicle(d_cam);

            double rgb[3];
            double best_t = 1e18;
            const VehicleBox* best_box = nullptr;
            BoxHit best_hit{};
            for (const auto& box : world.vehicles) {
                auto hit = rayBox(origin, dir, box);
                if (hit && hit->t < best_t) {
                    best_t = hit->t;
                    best_box = &box;
                    best_hit = *hit;
                }
            }
            double ground_t = dir.z < -1e-9 ? -origin.z / dir.z : 1e18;
            if (best_box && best_t < ground_t) {
                std::uint32_t hcol = hash2(best_box->color_id, 77);
                double face = best_hit.axis == 2   ? 1.35
                              : best_hit.axis == 0 ? (best_hit.sign > 0 ? 1.6 : 0.7)
                                                   : 1.0;
                for (int ch = 0; ch < 3; ++ch) {
                    double base = 0.18 + 0.12 * ((hcol >> (5 * ch)) & 3) / 3.0;
                    rgb[ch] = base * face;
                }
            } else if (ground_t < 1e17) {
                Pt2<double> p{origin.x + ground_t * dir.x, origin.y + ground_t * dir.y};
                if (std::hypot(p.x, p.y) > 25.0) {
                    rgb[0] = rgb[1] = rgb[2] = 0.12;
                } else {
                    double dmin = 1e18;
                    for (const auto& slot : world.slots)
                        for (int e = 0; e < 4; ++e) {
                            double de = distanceToSegment(p, slot.corners[e],
                                                          slot.corners[(e + 1) % 4]);
                            if (e == 0) de /= 1.6;  // entry line drawn wider and brighter
                            dmin = std::min(dmin, de);
                        }
                    double mark = std::exp(-(dmin * dmin) / (0.30 * 0.30));
                    double tex = 0.04 * ((hash2(static_cast<int>(std::floor(p.x * 2)),
                                                static_cast<int>(std::floor(p.y * 2))) &
                                          255) /
                                         255.0);
                    double shade = 0.28 + 0.58 * mark + tex;
                    rgb[0] = rgb[1] = rgb[2] = shade;
                }
            } else {
                rgb[0] = 0.62;
                rgb[1] = 0.68;
                rgb[2] = 0.78;
            }
            for (int ch = 0; ch < 3; ++ch)
                img[ch * plane + static_cast<size_t>(v) * w + u] =
                    static_cast<float>(std::clamp(rgb[ch], 0.0, 1.0));
        }
    return img;
}

std::vector<PolygonLabel> deriveLabels(const SceneWorld& world, const Rig& rig,
                                       const BevGridSpec& spec, double max_outside) {
    double half = spec.extent / 2.0;
    ConvexQuad extent = ConvexQuad::canonical(
        {{{half, half}, {half, -half}, {-half, -half}, {-half, half}}});

    std::vector<Vec3> cameras;
    for (const auto& cam : rig.cameras) cameras.push_back(cam.extrinsics.cameraCenterInVehicle());

    auto insideFraction = [&](const PolygonLabel& lab) {
        ConvexQuad q = lab.quad();
        double a = quadArea(q);
        if (a <= ConvexQuad::kDegenerateArea) return 0.0;
        return quadIntersectionArea(q, extent) / a;
    };

    std::vector<PolygonLabel> labels;
    for (const auto& slot : world.slots) {
        if (slot.occupied) continue;
        PolygonLabel lab;
        lab.cls = ObjectClass::Parking;
        lab.corners = slot.corners;
        lab = canonicalizeLabel(lab);
        if (insideFraction(lab) < 1.0 - max_outside) continue;
        for (int k = 0; k < 4; ++k) {
            Vec3 corner{lab.corners[k].x, lab.corners[k].y, 0.02};
            bool visible = false;
            for (const auto& cam : cameras) {
                bool blocked = false;
                for (const auto& box : world.vehicles)
                    if (segmentHitsBox(corner, cam, box)) {
                        blocked = true;
                        break;
                    }
                if (!blocked) {
                    visible = true;
                    break;
                }
            }
            lab.visibility[k] = visible;
        }
        labels.push_back(lab);
    }
    for (const auto& veh : world.vehicles) {
        PolygonLabel lab;
        lab.cls = ObjectClass::Vehicle;
        lab.corners = veh.footprint();
        lab = canonicalizeLabel(lab);
        if (insideFraction(lab) < 1.0 - max_outside) continue;
        labels.push_back(lab);
    }
    return labels;
}

}  // namespace parkbev
