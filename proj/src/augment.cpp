#include "parkbev/augment.hpp"

#include <cmath>

namespace parkbev {

AugmentationConfig AugmentationConfig::preset(const std::string& name) {
    AugmentationConfig cfg;
    if (name == "none") return cfg;
    if (name == "default") {
        cfg.flip_p = 0.5;
        cfg.yaw_p = 0.9;
        return cfg;
    }
    if (name == "rot90") {
        cfg.flip_p = 0.5;
        cfg.yaw_p = 0.9;
        cfg.quarter_turns = true;
        return cfg;
    }
    if (name == "full") {
        cfg.flip_p = 0.5;
        cfg.yaw_p = 0.9;
        cfg.feature_dropout_p = 0.5;
        cfg.roll_p = 0.9;
        cfg.color_noise_p = 0.5;
        return cfg;
    }
    throw ConfigError("unknown augmentation preset '" + name + "'");
}

BevTransform sampleBevTransform(const AugmentationConfig& cfg, Rng& rng) {
    BevTransform t;
    if (cfg.flip_p > 0.0 && std::bernoulli_distribution(cfg.flip_p)(rng)) t.flip = true;
    if (cfg.yaw_p > 0.0 && std::bernoulli_distribution(cfg.yaw_p)(rng)) {
        if (cfg.quarter_turns) {
            int k = std::uniform_int_distribution<int>(1, 3)(rng);
            t.yaw = k * M_PI / 2.0;
        } else {
            t.yaw = std::uniform_real_distribution<double>(-cfg.yaw_range, cfg.yaw_range)(rng);
        }
    }
    return t;
}

std::array<double, 6> bevResampleAffine(int size, const BevTransform& t) {
    // Output cell (row, col) -> metric -> inverse transform -> input cell.
    double co = std::cos(t.yaw), si = std::sin(t.yaw);
    double sgn = t.flip ? -1.0 : 1.0;
    double k = size / 2.0 - 0.5;
    // gridResample convention: in_x = a*col + b*row + tx, in_y = c*col + d*row + ty
    return {sgn * co, -sgn * si, k * (1.0 - sgn * (co - si)),
            si,       co,        k * (1.0 - co - si)};
}

std::vector<PolygonLabel> transformLabels(const std::vector<PolygonLabel>& labels,
                                          const BevTransform& t) {
    std::vector<PolygonLabel> out;
    out.reserve(labels.size());
    for (const auto& l : labels) out.push_back(transformLabel(l, t.yaw, t.flip, {0.0, 0.0}));
    return out;
}

void resampleTargetMaps(SegTargets& maps, const BevTransform& t, std::vector<double>* valid_mask) {
    int size = maps.size;
    size_t plane = static_cast<size_t>(size) * size;
    if (valid_mask) valid_mask->assign(plane, 1.0);
    if (t.identity()) return;
    auto a = bevResampleAffine(size, t);
    std::vector<double> out(maps.maps.size(), 0.0);
    for (int r = 0; r < size; ++r)
        for (int c = 0; c < size; ++c) {
            double in_c = a[0] * c + a[1] * r + a[2];
            double in_r = a[3] * c + a[4] * r + a[5];
            size_t o = static_cast<size_t>(r) * size + c;
            bool inside = in_r >= 0.0 && in_r <= size - 1.0 && in_c >= 0.0 && in_c <= size - 1.0;
            if (valid_mask) (*valid_mask)[o] = inside ? 1.0 : 0.0;
            // binary fill channels: nearest neighbour
            int nr = static_cast<int>(std::lround(in_r)), nc = static_cast<int>(std::lround(in_c));
            if (nr >= 0 && nr < size && nc >= 0 && nc < size)
                for (int ch = 0; ch < 2; ++ch)
                    out[ch * plane + o] = maps.maps[ch * plane + static_cast<size_t>(nr) * size + nc];
            // center heatmaps: bilinear
            if (inside) {
                int r0 = static_cast<int>(std::floor(in_r)), c0 = static_cast<int>(std::floor(in_c));
                int r1 = std::min(r0 + 1, size - 1), c1 = std::min(c0 + 1, size - 1);
                double fr = in_r - r0, fc = in_c - c0;
                for (int ch = 2; ch < 4; ++ch) {
                    const double* p = maps.maps.data() + ch * plane;
                    out[ch * plane + o] =
                        (1 - fr) * ((1 - fc) * p[static_cast<size_t>(r0) * size + c0] +
                                    fc * p[static_cast<size_t>(r0) * size + c1]) +
                        fr * ((1 - fc) * p[static_cast<size_t>(r1) * size + c0] +
                              fc * p[static_cast<size_t>(r1) * size + c1]);
                }
            }
        }
    maps.maps = std::move(out);
}

CameraCalibration rollCalibration(const CameraCalibration& calib, double angle) {
    CameraCalibration out = calib;
    Mat3 rz = Mat3::axisRotation(2, angle);
    out.extrinsics = CameraExtrinsics::make(rz * calib.extrinsics.rotation,
                                            rz * calib.extrinsics.translation);
    return out;
}

std::vector<float> rollImage(const std::vector<float>& img, int channels, int h, int w,
                             const CameraIntrinsics& intr, double angle) {
    if (img.size() != static_cast<size_t>(channels) * h * w)
        throw ConfigError("rollImage: buffer size mismatch");
    std::vector<float> out(img.size(), 0.0f);
    double co = std::cos(angle), si = std::sin(angle);
    size_t plane = static_cast<size_t>(h) * w;
    for (int v = 0; v < h; ++v)
        for (int u = 0; u < w; ++u) {
            // source pixel = principal point + R(-angle) * offset
            double du = u - intr.u0, dv = v - intr.v0;
            double su = intr.u0 + co * du + si * dv;
            double sv = intr.v0 - si * du + co * dv;
            if (su < 0.0 || su > w - 1.0 || sv < 0.0 || sv > h - 1.0) continue;
            int u0 = static_cast<int>(std::floor(su)), v0 = static_cast<int>(std::floor(sv));
            int u1 = std::min(u0 + 1, w - 1), v1 = std::min(v0 + 1, h - 1);
            double fu = su - u0, fv = sv - v0;
            for (int ch = 0; ch < channels; ++ch) {
                const float* p = img.data() + ch * plane;
                out[ch * plane + static_cast<size_t>(v) * w + u] = static_cast<float>(
                    (1 - fv) * ((1 - fu) * p[static_cast<size_t>(v0) * w + u0] +
                                fu * p[static_cast<size_t>(v0) * w + u1]) +
                    fv * ((1 - fu) * p[static_cast<size_t>(v1) * w + u0] +
                          fu * p[static_cast<size_t>(v1) * w + u1]));
            }
        }
    return out;
}

void colorJitter(std::vector<float>& img, int channels, double gain_range, double noise_std,
                 Rng& rng) {
    size_t plane = img.size() / channels;
    std::uniform_real_distribution<double> gain(1.0 - gain_range, 1.0 + gain_range);
    std::normal_distribution<double> noise(0.0, noise_std);
    for (int ch = 0; ch < channels; ++ch) {
        double g = gain(rng);
        for (size_t i = 0; i < plane; ++i) {
            double v = img[ch * plane + i] * g + (noise_std > 0.0 ? noise(rng) : 0.0);
            img[ch * plane + i] = static_cast<float>(std::clamp(v, 0.0, 1.0));
        }
    }
}

}  // namespace parkbev
