#include "parkbev/dataset.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "json.hpp"
#include "parkbev/errors.hpp"

namespace parkbev {

namespace fs = std::filesystem;
using nlohmann::json;

std::string sampleDirName(int frame_id) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "sample_%06d", frame_id);
    return buf;
}

std::string labelsToJson(const std::vector<PolygonLabel>& labels) {
    json arr = json::array();
    for (const auto& lab : labels) {
        json corners = json::array();
        for (const auto& c : lab.corners) corners.push_back({c.x, c.y});
        arr.push_back({{"class", className(lab.cls)},
                       {"corners", corners},
                       {"visibility", lab.visibility}});
    }
    return json{{"labels", arr}}.dump(2);
}

std::vector<PolygonLabel> labelsFromJson(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("labels JSON parse failure: ") + e.what());
    }
    if (!j.contains("labels") || !j["labels"].is_array())
        throw ConfigError("labels JSON missing 'labels' array");
    std::vector<PolygonLabel> out;
    for (const auto& e : j["labels"]) {
        PolygonLabel lab;
        std::string cls = e.at("class").get<std::string>();
        if (cls == "parking")
            lab.cls = ObjectClass::Parking;
        else if (cls == "vehicle")
            lab.cls = ObjectClass::Vehicle;
        else
            throw ConfigError("unknown label class '" + cls + "'");
        const auto& corners = e.at("corners");
        if (corners.size() != 4) throw ConfigError("label must have 4 corners");
        for (int k = 0; k < 4; ++k)
            lab.corners[k] = {corners[k].at(0).get<double>(), corners[k].at(1).get<double>()};
        const auto& vis = e.at("visibility");
        if (vis.size() != 4) throw ConfigError("label must have 4 visibility flags");
        for (int k = 0; k < 4; ++k) lab.visibility[k] = vis[k].get<bool>();
        out.push_back(lab);
    }
    return out;
}

static void writeRawImage(const fs::path& path, const std::vector<float>& img) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw ConfigError("cannot write " + path.string());
    f.write(reinterpret_cast<const char*>(img.data()),
            static_cast<std::streamsize>(img.size() * sizeof(float)));
}

static std::vector<float> readRawImage(const fs::path& path, size_t expected) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ConfigError("cannot read " + path.string());
    std::vector<float> img(expected);
    f.read(reinterpret_cast<char*>(img.data()),
           static_cast<std::streamsize>(expected * sizeof(float)));
    if (static_cast<size_t>(f.gcount()) != expected * sizeof(float))
        throw ConfigError("truncated image file " + path.string());
    return img;
}

void writeSample(const std::string& dataset_root, const SceneSample& sample, const Rig& rig) {
    if (sample.images.size() != rig.cameras.size())
        throw ConfigError("sample image count does not match the rig");
    fs::path dir = fs::path(dataset_root) / sampleDirName(sample.frame_id);
    fs::create_directories(dir);
    for (size_t i = 0; i < rig.cameras.size(); ++i) {
        const auto& cam = rig.cameras[i];
        int w = cam.intrinsics.width, h = cam.intrinsics.height;
        if (sample.images[i].size() != static_cast<size_t>(3) * h * w)
            throw ConfigError("image buffer size mismatch for camera " + cam.name);
        writeRawImage(dir / (cam.name + ".raw"), sample.images[i]);
        json side{{"camera", cam.name}, {"shape", {3, h, w}}, {"dtype", "float32-le"}};
        std::ofstream f(dir / (cam.name + ".json"));
        f << side.dump(2) << "\n";
    }
    std::ofstream f(dir / "labels.json");
    f << labelsToJson(sample.labels) << "\n";
}

SceneSample readSample(const std::string& dataset_root, int frame_id, const Rig& rig) {
    fs::path dir = fs::path(dataset_root) / sampleDirName(frame_id);
    SceneSample sample;
    sample.frame_id = frame_id;
    for (const auto& cam : rig.cameras) {
        size_t n = static_cast<size_t>(3) * cam.intrinsics.height * cam.intrinsics.width;
        sample.images.push_back(readRawImage(dir / (cam.name + ".raw"), n));
    }
    std::ifstream f(dir / "labels.json");
    if (!f) throw ConfigError("missing labels.json in " + dir.string());
    std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    sample.labels = labelsFromJson(text);
    return sample;
}

void writeManifest(const std::string& dataset_root, const DatasetManifest& m) {
    json j{{"image_size", {m.image_width, m.image_height}},
           {"seed", m.seed},
           {"splits", {{"train", m.train_ids}, {"val", m.val_ids}}},
           {"counts", {{"train", m.train_ids.size()}, {"val", m.val_ids.size()}}}};
    std::ofstream f(fs::path(dataset_root) / "manifest.json");
    if (!f) throw ConfigError("cannot write manifest in " + dataset_root);
    f << j.dump(2) << "\n";
}

DatasetManifest readManifest(const std::string& dataset_root) {
    std::ifstream f(fs::path(dataset_root) / "manifest.json");
    if (!f)
        throw ConfigError("no manifest.json in " + dataset_root +
                          " (dataset missing or incomplete)");
    json j;
    try {
        f >> j;
    } catch (const json::exception& e) {
        throw ConfigError(std::string("manifest parse failure: ") + e.what());
    }
    DatasetManifest m;
    m.image_width = j.at("image_size").at(0).get<int>();
    m.image_height = j.at("image_size").at(1).get<int>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.train_ids = j.at("splits").at("train").get<std::vector<int>>();
    m.val_ids = j.at("splits").at("val").get<std::vector<int>>();
    return m;
}

SceneWorld sceneForFrame(const GenerateConfig& cfg, int frame_id) {
    SceneSpec spec = cfg.base;
    spec.seed = cfg.seed * 1000003ull + static_cast<std::uint64_t>(frame_id);
    if (cfg.cycle_layout) {
        switch (frame_id % 3) {
            case 0: spec.layout = SceneSpec::Layout::Perpendicular; break;
            case 1: spec.layout = SceneSpec::Layout::Parallel; break;
            default: spec.layout = SceneSpec::Layout::Mixed; break;
        }
    }
    return generateScene(spec);
}

void generateDataset(const std::string& dataset_root, const Rig& rig, const GenerateConfig& cfg) {
    fs::create_directories(dataset_root);
    DatasetManifest m;
    m.image_width = rig.cameras.at(0).intrinsics.width;
    m.image_height = rig.cameras.at(0).intrinsics.height;
    m.seed = cfg.seed;
    int total = cfg.train_count + cfg.val_count;
    for (int id = 0; id < total; ++id) {
        SceneWorld world = sceneForFrame(cfg, id);
        SceneSample sample;
        sample.frame_id = id;
        for (const auto& cam : rig.cameras) sample.images.push_back(renderFisheye(world, cam));
        sample.labels = deriveLabels(world, rig, cfg.bev);
        writeSample(dataset_root, sample, rig);
        (id < cfg.train_count ? m.train_ids : m.val_ids).push_back(id);
    }
    writeManifest(dataset_root, m);  // completion marker, written last
}

}  // namespace parkbev
