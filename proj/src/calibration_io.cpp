#include "parkbev/calibration_io.hpp"

#include <fstream>
#include <set>

#include "json.hpp"
#include "parkbev/errors.hpp"

namespace parkbev {

using nlohmann::json;

const CameraCalibration& Rig::byName(const std::string& name) const {
    for (const auto& cam : cameras)
        if (cam.name == name) return cam;
    throw ConfigError("rig has no camera named '" + name + "'");
}

static CameraCalibration parseCamera(const json& j) {
    for (const char* key : {"name", "c", "principal_point", "image_size", "alpha_max", "rotation", "translation"})
        if (!j.contains(key)) throw ConfigError(std::string("calibration: missing field '") + key + "'");

    auto c = j.at("c").get<std::vector<double>>();
    auto pp = j.at("principal_point").get<std::vector<double>>();
    auto sz = j.at("image_size").get<std::vector<int>>();
    auto rot = j.at("rotation").get<std::vector<double>>();
    auto tr = j.at("translation").get<std::vector<double>>();
    if (c.size() != 4 || pp.size() != 2 || sz.size() != 2 || rot.size() != 9 || tr.size() != 3)
        throw ConfigError("calibration: bad field lengths for camera '" + j.at("name").get<std::string>() + "'");

    CameraCalibration calib;
    calib.name = j.at("name").get<std::string>();
    calib.intrinsics = CameraIntrinsics::make({c[0], c[1], c[2], c[3]}, pp[0], pp[1], sz[0], sz[1],
                                              j.at("alpha_max").get<double>());
    Mat3 r;
    std::copy(rot.begin(), rot.end(), r.m.begin());
    calib.extrinsics = CameraExtrinsics::make(r, {tr[0], tr[1], tr[2]});
    return calib;
}

Rig parseRig(const std::string& json_text) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("calibration: invalid JSON: ") + e.what());
    }
    if (!j.contains("cameras") || !j["cameras"].is_array())
        throw ConfigError("calibration: missing 'cameras' array");
    Rig rig;
    std::set<std::string> names;
    for (const auto& cam : j["cameras"]) {
        rig.cameras.push_back(parseCamera(cam));
        if (!names.insert(rig.cameras.back().name).second)
            throw ConfigError("calibration: duplicate camera name '" + rig.cameras.back().name + "'");
    }
    return rig;
}

Rig loadRig(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open calibration file: " + path);
    std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return parseRig(text);
}

void saveRig(const Rig& rig, const std::string& path) {
    json j;
    j["cameras"] = json::array();
    for (const auto& cam : rig.cameras) {
        json c;
        c["name"] = cam.name;
        c["c"] = cam.intrinsics.c;
        c["principal_point"] = {cam.intrinsics.u0, cam.intrinsics.v0};
        c["image_size"] = {cam.intrinsics.width, cam.intrinsics.height};
        c["alpha_max"] = cam.intrinsics.alpha_max;
        c["rotation"] = cam.extrinsics.rotation.m;
        c["translation"] = {cam.extrinsics.translation.x, cam.extrinsics.translation.y,
                            cam.extrinsics.translation.z};
        j["cameras"].push_back(c);
    }
    std::ofstream f(path);
    if (!f) throw ConfigError("cannot write calibration file: " + path);
    f << j.dump(2) << "\n";
}

// Camera basis from an optical-axis direction: image-right is horizontal,
// image-down points toward the ground.
static Mat3 lookRotation(const Vec3& optical_axis) {
    Vec3 z = optical_axis.normalized();
    Vec3 x = z.cross({0, 0, 1}).normalized();  // image right
    Vec3 y = z.cross(x);                       // image down
    // Rows are the camera axes in vehicle coordinates (p_cam = R * p_veh).
    return Mat3::fromRows(x, y, z);
}

Rig defaultSyntheticRig(int image_width, int image_height) {
    double s = image_width / 128.0;  // intrinsics defined at the 128-wide reference
    std::array<double, 4> coeffs{50.0 * s, 0.8 * s, -2.0 * s, -0.12 * s};
    double alpha_max = 95.0 * M_PI / 180.0;  // 190 deg lens
    auto intr = CameraIntrinsics::make(coeffs, image_width / 2.0, image_height / 2.0, image_width,
                                       image_height, alpha_max);

    struct Mount {
        const char* name;
        Vec3 pos;
        Vec3 axis;
    };
    double p35 = 35.0 * M_PI / 180.0, p45 = 45.0 * M_PI / 180.0;
    std::vector<Mount> mounts = {
        {"front", {3.6, 0.0, 0.65}, {std::cos(p35), 0.0, -std::sin(p35)}},
        {"left", {1.9, 1.0, 1.0}, {0.0, std::cos(p45), -std::sin(p45)}},
        {"rear", {-1.0, 0.0, 0.95}, {-std::cos(p35), 0.0, -std::sin(p35)}},
        {"right", {1.9, -1.0, 1.0}, {0.0, -std::cos(p45), -std::sin(p45)}},
    };

    Rig rig;
    for (const auto& m : mounts) {
        CameraCalibration calib;
        calib.name = m.name;
        calib.intrinsics = intr;
        Mat3 r = lookRotation(m.axis);
        calib.extrinsics = CameraExtrinsics::make(r, (r * m.pos) * -1.0);
        rig.cameras.push_back(calib);
    }
    return rig;
}

}  // namespace parkbev
