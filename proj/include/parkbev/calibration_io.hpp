#pragma once

#include <string>
#include <vector>

#include "parkbev/geometry.hpp"

namespace parkbev {

// The four-camera rig. Camera names must be distinct.
struct Rig {
    std::vector<CameraCalibration> cameras;

    const CameraCalibration& byName(const std::string& name) const;
};

// Calibration JSON:
// {"cameras":[{"name":..., "c":[c1..c4], "principal_point":[u0,v0],
//   "image_size":[w,h], "alpha_max":..., "rotation":[9 row-major],
//   "translation":[3]}]}
Rig loadRig(const std::string& path);
Rig parseRig(const std::string& json_text);
void saveRig(const Rig& rig, const std::string& path);

// Synthetic four-camera surround rig (190 deg lenses) used by the scene
// generator and the desk-scale presets.
Rig defaultSyntheticRig(int image_width = 128, int image_height = 109);

}  // namespace parkbev
