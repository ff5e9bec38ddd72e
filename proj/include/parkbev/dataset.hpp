#pragma once

#include <cstdint>

#include "parkbev/scene.hpp"

namespace parkbev {

// One stored frame: four planar [3,h,w] float images in rig camera order
// plus the BEV ground-truth polygons.
struct SceneSample {
    int frame_id = 0;
    std::vector<std::vector<float>> images;
    std::vector<PolygonLabel> labels;
};

struct DatasetManifest {
    int image_width = 0, image_height = 0;
    std::uint64_t seed = 0;
    std::vector<int> train_ids, val_ids;
};

std::string sampleDirName(int frame_id);

// Images as raw little-endian float32 with a JSON sidecar per camera;
// labels.json per the polygon schema.
void writeSample(const std::string& dataset_root, const SceneSample& sample, const Rig& rig);
SceneSample readSample(const std::string& dataset_root, int frame_id, const Rig& rig);

// The manifest is written last and acts as the completion marker: a dataset
// without one is treated as partial and refused.
void writeManifest(const std::string& dataset_root, const DatasetManifest& m);
DatasetManifest readManifest(const std::string& dataset_root);

std::string labelsToJson(const std::vector<PolygonLabel>& labels);
std::vector<PolygonLabel> labelsFromJson(const std::string& text);

struct GenerateConfig {
    int train_count = 32;
    int val_count = 64;
    std::uint64_t seed = 0;
    SceneSpec base;           // per-scene seed is derived per frame
    bool cycle_layout = true; // rotate layouts per frame instead of base.layout
    BevGridSpec bev;
};

// Renders and writes the full dataset (train ids first, then val ids).
void generateDataset(const std::string& dataset_root, const Rig& rig, const GenerateConfig& cfg);

// World model for frame `id` of a dataset generated with `cfg` (deterministic).
SceneWorld sceneForFrame(const GenerateConfig& cfg, int frame_id);

}  // namespace parkbev
