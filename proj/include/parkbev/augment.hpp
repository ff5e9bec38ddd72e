#pragma once

#include <string>

#include "parkbev/calibration_io.hpp"
#include "parkbev/heads.hpp"
#include "parkbev/ops.hpp"

namespace parkbev {

// Training-time augmentation switches. Probabilities of 0 disable a branch;
// with everything at 0 the stream is bit-identical to the unaugmented one.
struct AugmentationConfig {
    double flip_p = 0.0;            // BEV left-right flip
    double yaw_p = 0.0;             // BEV yaw rotation about the grid center
    double yaw_range = 22.5 * M_PI / 180.0;
    bool quarter_turns = false;     // sample yaw from {90, 180, 270} deg instead
    double feature_dropout_p = 0.0; // per-channel BEV feature dropout
    double roll_p = 0.0;            // per-camera roll about the principal point
    double roll_range = 10.0 * M_PI / 180.0;
    double color_noise_p = 0.0;     // per-camera color jitter
    double color_gain = 0.1;        // multiplicative gain range (1 +- g)
    double color_noise_std = 0.02;  // additive pixel noise

    // Presets: "none", "default" (flip + yaw, the best ablation row),
    // "rot90" (flip + quarter turns), "full" (everything on).
    static AugmentationConfig preset(const std::string& name);
};

// One sampled BEV transform: metric map p -> R(yaw) * F(flip) * p.
struct BevTransform {
    bool flip = false;  // y -> -y before the rotation
    double yaw = 0.0;   // radians, about the vehicle origin
    bool identity() const { return !flip && yaw == 0.0; }
};

BevTransform sampleBevTransform(const AugmentationConfig& cfg, Rng& rng);

// Affine map from output raster cell coordinates (col, row) of a size x size
// BEV-aligned grid to input cell coordinates, for gridResample.
std::array<double, 6> bevResampleAffine(int size, const BevTransform& t);

// Exact label-side counterpart of the raster transform.
std::vector<PolygonLabel> transformLabels(const std::vector<PolygonLabel>& labels,
                                          const BevTransform& t);

// Resamples the 4-channel target maps under the transform: nearest neighbour
// for the binary fill channels, bilinear for the center heatmaps. valid_mask
// (one plane) gets 0 where the source falls outside the grid.
void resampleTargetMaps(SegTargets& maps, const BevTransform& t, std::vector<double>* valid_mask);

// Bilinear BEV feature resampling with zero padding, on the autodiff graph.
template <class S>
Tensor<S> resampleBevFeatures(const Tensor<S>& feat, const BevTransform& t) {
    if (t.identity()) return feat;
    if (feat.shape().size() != 3 || feat.dim(1) != feat.dim(2))
        throw ConfigError("resampleBevFeatures: expected [C,N,N], got " + shapeStr(feat.shape()));
    return gridResample(feat, bevResampleAffine(feat.dim(1), t));
}

// Camera roll: extrinsics composed with a rotation about the optical axis so
// the rolled image stays geometrically consistent.
CameraCalibration rollCalibration(const CameraCalibration& calib, double angle);

// Rotates a planar [C,H,W] image by `angle` about the principal point
// (bilinear, zero padding). Matches rollCalibration: unprojecting a rotated
// pixel under the rolled calibration reproduces the original ray.
std::vector<float> rollImage(const std::vector<float>& img, int channels, int h, int w,
                             const CameraIntrinsics& intr, double angle);

// Per-channel gain plus additive Gaussian pixel noise, clamped to [0, 1].
void colorJitter(std::vector<float>& img, int channels, double gain_range, double noise_std,
                 Rng& rng);

}  // namespace parkbev
