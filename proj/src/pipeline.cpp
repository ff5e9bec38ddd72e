#include "parkbev/pipeline.hpp"

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "parkbev/checkpoint.hpp"
#include "parkbev/errors.hpp"

namespace parkbev {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr double kNmsGiouThreshold = 0.3;

void checkKeys(const json& j, const std::string& where,
               std::initializer_list<const char*> allowed) {
    if (!j.is_object()) throw ConfigError("config: '" + where + "' must be an object");
    for (const auto& [key, _] : j.items()) {
        bool ok = false;
        for (const char* a : allowed)
            if (key == a) ok = true;
        if (!ok) throw ConfigError("config: unknown key '" + where + "." + key + "'");
    }
}

template <class T>
void get(const json& j, const std::string& where, const char* key, T& out) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError("config: bad type for '" + where + "." + std::string(key) + "'");
    }
}

}  // namespace

void RunConfig::validate() const {
    model.validate();
    if (precision != "float32" && precision != "float64")
        throw ConfigError("config: precision must be float32 or float64");
    if (optimizer.batch_size <= 0) throw ConfigError("config: batch_size must be positive");
    if (optimizer.steps < 0) throw ConfigError("config: steps must be non-negative");
    if (optimizer.checkpoint_every <= 0)
        throw ConfigError("config: checkpoint_every must be positive");
    if (optimizer.lr_start <= 0 || optimizer.lr_max <= 0 || optimizer.lr_end <= 0)
        throw ConfigError("config: learning rates must be positive");
    if (data.train_count < 0 || data.val_count < 0)
        throw ConfigError("config: dataset counts must be non-negative");
    if (data.occupancy < 0.0 || data.occupancy > 1.0)
        throw ConfigError("config: occupancy must lie in [0, 1]");
    if (data.layout != "cycle" && data.layout != "perpendicular" && data.layout != "parallel" &&
        data.layout != "mixed")
        throw ConfigError("config: layout must be cycle, perpendicular, parallel or mixed");
    if (data.row_yaw_range < 0.0 || data.row_yaw_range > 1.0)
        throw ConfigError("config: row_yaw_range must lie in [0, 1] radians");
    if (data.aisle != 0.0 && (data.aisle < 2.0 || data.aisle > 10.0))
        throw ConfigError("config: aisle must be 0 (random) or lie in [2, 10] meters");
    if (data.slots_per_row < 0 || data.slots_per_row > 8)
        throw ConfigError("config: slots_per_row must be 0 (random) or lie in [1, 8]");
    if (data.row_shift_range < 0.0 || data.row_shift_range > 5.0)
        throw ConfigError("config: row_shift_range must lie in [0, 5] meters");
    eval.match.validate();
    AugmentationConfig::preset(augmentation);  // throws on unknown names
}

Rig RunConfig::rig() const {
    return defaultSyntheticRig(model.input_width, model.input_height + model.crop_top);
}

RunConfig parseRunConfig(const std::string& json_text) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config parse failure: ") + e.what());
    }
    checkKeys(j, "", {"paths", "seed", "precision", "model", "loss", "augmentation", "optimizer",
                      "dataset", "eval"});
    RunConfig cfg;
    if (j.contains("paths")) {
        const json& p = j["paths"];
        checkKeys(p, "paths", {"dataset", "checkpoints", "reports"});
        get(p, "paths", "dataset", cfg.dataset_dir);
        get(p, "paths", "checkpoints", cfg.checkpoint_dir);
        get(p, "paths", "reports", cfg.report_dir);
    }
    get(j, "", "seed", cfg.seed);
    get(j, "", "precision", cfg.precision);
    get(j, "", "augmentation", cfg.augmentation);
    if (j.contains("model")) {
        const json& m = j["model"];
        checkKeys(m, "model",
                  {"input_width", "input_height", "crop_top", "backbone_channels", "attn_heads",
                   "head_channels", "embed_hidden", "bev_cells", "bev_extent", "seg_channels",
                   "det_channels", "max_corner_offset"});
        get(m, "model", "input_width", cfg.model.input_width);
        get(m, "model", "input_height", cfg.model.input_height);
        get(m, "model", "crop_top", cfg.model.crop_top);
        get(m, "model", "backbone_channels", cfg.model.backbone_channels);
        get(m, "model", "attn_heads", cfg.model.attn_heads);
        get(m, "model", "head_channels", cfg.model.head_channels);
        get(m, "model", "embed_hidden", cfg.model.embed_hidden);
        get(m, "model", "bev_cells", cfg.model.bev.cells);
        get(m, "model", "bev_extent", cfg.model.bev.extent);
        get(m, "model", "seg_channels", cfg.model.seg_channels);
        get(m, "model", "det_channels", cfg.model.det_channels);
        get(m, "model", "max_corner_offset", cfg.model.max_corner_offset);
    }
    cfg.model.bev.channels = cfg.model.bevChannels();
    if (j.contains("loss")) {
        const json& l = j["loss"];
        checkKeys(l, "loss",
                  {"seg_binary", "seg_center", "polygon_giou", "objectness", "class",
                   "corner_distance", "corner_visibility"});
        get(l, "loss", "seg_binary", cfg.loss.seg_binary);
        get(l, "loss", "seg_center", cfg.loss.seg_center);
        get(l, "loss", "polygon_giou", cfg.loss.polygon_giou);
        get(l, "loss", "objectness", cfg.loss.objectness);
        get(l, "loss", "class", cfg.loss.cls);
        get(l, "loss", "corner_distance", cfg.loss.corner_distance);
        get(l, "loss", "corner_visibility", cfg.loss.corner_visibility);
    }
    if (j.contains("optimizer")) {
        const json& o = j["optimizer"];
        checkKeys(o, "optimizer",
                  {"lr_start", "lr_max", "lr_end", "weight_decay", "batch_size", "steps",
                   "checkpoint_every"});
        get(o, "optimizer", "lr_start", cfg.optimizer.lr_start);
        get(o, "optimizer", "lr_max", cfg.optimizer.lr_max);
        get(o, "optimizer", "lr_end", cfg.optimizer.lr_end);
        get(o, "optimizer", "weight_decay", cfg.optimizer.weight_decay);
        get(o, "optimizer", "batch_size", cfg.optimizer.batch_size);
        get(o, "optimizer", "steps", cfg.optimizer.steps);
        get(o, "optimizer", "checkpoint_every", cfg.optimizer.checkpoint_every);
    }
    if (j.contains("dataset")) {
        const json& d = j["dataset"];
        checkKeys(d, "dataset", {"train_count", "val_count", "occupancy", "layout",
                                 "row_yaw_range", "aisle", "slots_per_row", "row_shift_range"});
        get(d, "dataset", "train_count", cfg.data.train_count);
        get(d, "dataset", "val_count", cfg.data.val_count);
        get(d, "dataset", "occupancy", cfg.data.occupancy);
        get(d, "dataset", "layout", cfg.data.layout);
        get(d, "dataset", "row_yaw_range", cfg.data.row_yaw_range);
        get(d, "dataset", "aisle", cfg.data.aisle);
        get(d, "dataset", "slots_per_row", cfg.data.slots_per_row);
        get(d, "dataset", "row_shift_range", cfg.data.row_shift_range);
    }
    if (j.contains("eval")) {
        const json& e = j["eval"];
        checkKeys(e, "eval",
                  {"confidence_threshold", "iou_threshold", "min_f1", "max_distance_cm",
                   "min_visibility", "overlays"});
        get(e, "eval", "confidence_threshold", cfg.eval.match.confidence_threshold);
        get(e, "eval", "iou_threshold", cfg.eval.match.iou_threshold);
        get(e, "eval", "min_f1", cfg.eval.min_f1);
        get(e, "eval", "max_distance_cm", cfg.eval.max_distance_cm);
        get(e, "eval", "min_visibility", cfg.eval.min_visibility);
        get(e, "eval", "overlays", cfg.eval.overlays);
    }
    cfg.validate();
    return cfg;
}

RunConfig loadRunConfig(const std::string& path, const std::vector<std::string>& overrides) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open config file " + path);
    std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config parse failure: ") + e.what());
    }
    for (const std::string& ov : overrides) {
        auto eq = ov.find('=');
        if (eq == std::string::npos)
            throw ConfigError("override must be key=value, got '" + ov + "'");
        std::string key = ov.substr(0, eq), value = ov.substr(eq + 1);
        // dotted path -> JSON pointer
        std::string p = "/";
        for (char c : key) p += (c == '.') ? '/' : c;
        json parsed;
        try {
            parsed = json::parse(value);
        } catch (const json::exception&) {
            parsed = value;  // bare strings stay strings
        }
        try {
            j[json::json_pointer(p)] = parsed;
        } catch (const json::exception& e) {
            throw ConfigError("bad override '" + ov + "': " + e.what());
        }
    }
    RunConfig cfg = parseRunConfig(j.dump());
    if (const char* env = std::getenv("PARKBEV_REPORT_DIR"); env && *env)
        cfg.report_dir = env;
    return cfg;
}

std::string runConfigToJson(const RunConfig& c) {
    json j;
    j["paths"] = {{"dataset", c.dataset_dir},
                  {"checkpoints", c.checkpoint_dir},
                  {"reports", c.report_dir}};
    j["seed"] = c.seed;
    j["precision"] = c.precision;
    j["augmentation"] = c.augmentation;
    j["model"] = {{"input_width", c.model.input_width},
                  {"input_height", c.model.input_height},
                  {"crop_top", c.model.crop_top},
                  {"backbone_channels", c.model.backbone_channels},
                  {"attn_heads", c.model.attn_heads},
                  {"head_channels", c.model.head_channels},
                  {"embed_hidden", c.model.embed_hidden},
                  {"bev_cells", c.model.bev.cells},
                  {"bev_extent", c.model.bev.extent},
                  {"seg_channels", c.model.seg_channels},
                  {"det_channels", c.model.det_channels},
                  {"max_corner_offset", c.model.max_corner_offset}};
    json l;
    for (const auto& [name, w] : c.loss.named()) l[name] = w;
    j["loss"] = l;
    j["optimizer"] = {{"lr_start", c.optimizer.lr_start},
                      {"lr_max", c.optimizer.lr_max},
                      {"lr_end", c.optimizer.lr_end},
                      {"weight_decay", c.optimizer.weight_decay},
                      {"batch_size", c.optimizer.batch_size},
                      {"steps", c.optimizer.steps},
                      {"checkpoint_every", c.optimizer.checkpoint_every}};
    j["dataset"] = {{"train_count", c.data.train_count},
                    {"val_count", c.data.val_count},
                    {"occupancy", c.data.occupancy},
                    {"layout", c.data.layout},
                    {"row_yaw_range", c.data.row_yaw_range},
                    {"aisle", c.data.aisle},
                    {"slots_per_row", c.data.slots_per_row},
                    {"row_shift_range", c.data.row_shift_range}};
    j["eval"] = {{"confidence_threshold", c.eval.match.confidence_threshold},
                 {"iou_threshold", c.eval.match.iou_threshold},
                 {"min_f1", c.eval.min_f1},
                 {"max_distance_cm", c.eval.max_distance_cm},
                 {"min_visibility", c.eval.min_visibility},
                 {"overlays", c.eval.overlays}};
    return j.dump(2);
}

std::string configHash(const RunConfig& cfg) {
    std::uint64_t h = 14695981039346656037ull;
    for (unsigned char c : runConfigToJson(cfg)) {
        h ^= c;
        h *= 1099511628211ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

static GenerateConfig makeGenerateConfig(const RunConfig& cfg) {
    GenerateConfig gen;
    gen.train_count = cfg.data.train_count;
    gen.val_count = cfg.data.val_count;
    gen.seed = cfg.seed;
    gen.base.occupancy = cfg.data.occupancy;
    gen.base.row_yaw_range = cfg.data.row_yaw_range;
    if (cfg.data.aisle > 0.0) gen.base.aisle_min = gen.base.aisle_max = cfg.data.aisle;
    if (cfg.data.slots_per_row > 0)
        gen.base.min_slots_per_row = gen.base.max_slots_per_row = cfg.data.slots_per_row;
    gen.base.row_shift_range = cfg.data.row_shift_range;
    if (cfg.data.layout != "cycle") {
        gen.cycle_layout = false;
        gen.base.layout = cfg.data.layout == "perpendicular" ? SceneSpec::Layout::Perpendicular
                          : cfg.data.layout == "parallel"    ? SceneSpec::Layout::Parallel
                                                             : SceneSpec::Layout::Mixed;
    }
    gen.bev = cfg.model.bev;
    return gen;
}

void cmdGenerate(const RunConfig& cfg) {
    generateDataset(cfg.dataset_dir, cfg.rig(), makeGenerateConfig(cfg));
}

namespace {

// [3, native_h, w] planar floats -> cropped [3, h, w] tensor
template <class S>
Tensor<S> prepareImage(const std::vector<float>& img, int native_h, int w, int crop_top, int h) {
    if (img.size() != static_cast<size_t>(3) * native_h * w)
        throw ConfigError("image buffer does not match the native camera resolution");
    std::vector<S> data(static_cast<size_t>(3) * h * w);
    for (int c = 0; c < 3; ++c)
        for (int row = 0; row < h; ++row)
            for (int col = 0; col < w; ++col)
                data[(static_cast<size_t>(c) * h + row) * w + col] = static_cast<S>(
                    img[(static_cast<size_t>(c) * native_h + row + crop_top) * w + col]);
    return Tensor<S>::fromData({3, h, w}, std::move(data));
}

template <class S>
struct ForwardOutput {
    Tensor<S> bev, seg, det;
};

template <class S>
ForwardOutput<S> forwardSample(PerceptionModel<S>& model, const std::vector<CameraEncodings>& encs,
                               const std::vector<std::vector<float>>& images, const Rig& rig) {
    std::vector<typename PerceptionModel<S>::CameraInput> cams;
    int native_h = model.cfg.input_height + model.cfg.crop_top;
    for (size_t i = 0; i < images.size(); ++i) {
        typename PerceptionModel<S>::CameraInput in;
        in.image = prepareImage<S>(images[i], native_h, model.cfg.input_width,
                                   model.cfg.crop_top, model.cfg.input_height);
        in.enc = &encs[i];
        cams.push_back(std::move(in));
    }
    (void)rig;
    ForwardOutput<S> out;
    out.bev = model.bevFeatures(cams);
    out.seg = model.segLogits(out.bev);
    out.det = model.detLogits(out.bev);
    return out;
}

Rng stepRng(std::uint64_t seed, long step) {
    return Rng(seed * 0x9E3779B97F4A7C15ull + static_cast<std::uint64_t>(step) + 1);
}

std::string checkpointName(long step) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "step_%06ld.ckpt", step);
    return buf;
}

struct TrainingState {
    long step = 0;
    std::string checkpoint, optimizer_state;
};

void writeTrainingState(const std::string& dir, const TrainingState& st) {
    json j{{"step", st.step}, {"checkpoint", st.checkpoint}, {"optimizer", st.optimizer_state}};
    fs::path tmp = fs::path(dir) / "training_state.json.tmp";
    {
        std::ofstream f(tmp);
        if (!f) throw ConfigError("cannot write training state in " + dir);
        f << j.dump(2) << "\n";
    }
    fs::rename(tmp, fs::path(dir) / "training_state.json");
}

std::optional<TrainingState> readTrainingState(const std::string& dir) {
    std::ifstream f(fs::path(dir) / "training_state.json");
    if (!f) return std::nullopt;
    json j;
    try {
        f >> j;
    } catch (const json::exception& e) {
        throw ConfigError(std::string("training state parse failure: ") + e.what());
    }
    TrainingState st;
    st.step = j.at("step").get<long>();
    st.checkpoint = j.at("checkpoint").get<std::string>();
    st.optimizer_state = j.at("optimizer").get<std::string>();
    return st;
}

template <class S>
TrainResult trainImpl(const RunConfig& cfg, long stop_after) {
    Rig rig = cfg.rig();
    DatasetManifest manifest = readManifest(cfg.dataset_dir);
    if (manifest.image_width != cfg.model.input_width ||
        manifest.image_height != cfg.model.input_height + cfg.model.crop_top)
        throw ConfigError("dataset resolution does not match the model input");
    if (manifest.train_ids.empty()) throw ConfigError("dataset has no training frames");

    std::vector<SceneSample> train;
    for (int id : manifest.train_ids) train.push_back(readSample(cfg.dataset_dir, id, rig));

    fs::create_directories(cfg.checkpoint_dir);
    fs::create_directories(cfg.report_dir);

    Rng init_rng(cfg.seed);
    PerceptionModel<S> model(cfg.model, init_rng);
    std::vector<CameraEncodings> encs = buildRigEncodings(rig, model.cfg);
    AdamW<S> adam({0.9, 0.999, 1e-8, cfg.optimizer.weight_decay});
    AugmentationConfig aug = AugmentationConfig::preset(cfg.augmentation);
    bool camera_aug = aug.roll_p > 0.0 || aug.color_noise_p > 0.0;

    long start_step = 0;
    auto state = readTrainingState(cfg.checkpoint_dir);
    if (state) {
        loadCheckpoint(model.params, state->checkpoint);
        std::ifstream f(state->optimizer_state, std::ios::binary);
        if (!f) throw ConfigError("missing optimizer state " + state->optimizer_state);
        adam.loadState(f);
        start_step = state->step;
    } else {
        TrainingState st;
        st.step = 0;
        st.checkpoint = (fs::path(cfg.checkpoint_dir) / checkpointName(0)).string();
        st.optimizer_state = st.checkpoint + ".opt";
        saveCheckpoint(model.params, st.checkpoint);
        std::ofstream f(st.optimizer_state, std::ios::binary);
        adam.saveState(f);
        writeTrainingState(cfg.checkpoint_dir, st);
    }

    std::ofstream log(fs::path(cfg.report_dir) / "train_log.jsonl", std::ios::app);
    if (!log) throw ConfigError("cannot open training log in " + cfg.report_dir);

    TrainResult result;
    result.last_checkpoint = (fs::path(cfg.checkpoint_dir) / checkpointName(start_step)).string();
    std::uniform_int_distribution<size_t> pick(0, train.size() - 1);

    long end_step = (stop_after > 0) ? std::min(stop_after, cfg.optimizer.steps)
                                     : cfg.optimizer.steps;
    for (long step = start_step + 1; step <= end_step; ++step) {
        Rng rng = stepRng(cfg.seed, step);
        double lr = oneCycleLr(step, cfg.optimizer.steps, cfg.optimizer.lr_start,
                               cfg.optimizer.lr_max, cfg.optimizer.lr_end);
        model.params.zeroGrad();

        Tensor<S> batch_total = Tensor<S>::scalar(S(0));
        std::map<std::string, double> term_sums;
        double total_sum = 0.0;
        int b = cfg.optimizer.batch_size;
        for (int k = 0; k < b; ++k) {
            const SceneSample& sample = train[pick(rng)];

            const std::vector<CameraEncodings>* enc_ptr = &encs;
            std::vector<CameraEncodings> rolled_encs;
            std::vector<std::vector<float>> images = sample.images;
            if (camera_aug) {
                Rig rolled = rig;
                bool any_roll = false;
                std::uniform_real_distribution<double> roll_angle(-aug.roll_range, aug.roll_range);
                std::bernoulli_distribution roll_coin(aug.roll_p), color_coin(aug.color_noise_p);
                for (size_t ci = 0; ci < images.size(); ++ci) {
                    const auto& cam = rig.cameras[ci];
                    if (aug.roll_p > 0.0 && roll_coin(rng)) {
                        double angle = roll_angle(rng);
                        images[ci] = rollImage(images[ci], 3, cam.intrinsics.height,
                                               cam.intrinsics.width, cam.intrinsics, angle);
                        rolled.cameras[ci] = rollCalibration(cam, angle);
                        any_roll = true;
                    }
                    if (aug.color_noise_p > 0.0 && color_coin(rng))
                        colorJitter(images[ci], 3, aug.color_gain, aug.color_noise_std, rng);
                }
                if (any_roll) {
                    rolled_encs = buildRigEncodings(rolled, model.cfg);
                    enc_ptr = &rolled_encs;
                }
            }

            BevTransform t = sampleBevTransform(aug, rng);

            ForwardOutput<S> fw = forwardSample(model, *enc_ptr, images, rig);
            Tensor<S> bev = fw.bev;
            if (aug.feature_dropout_p > 0.0) bev = channelDropout(bev, aug.feature_dropout_p, rng);

            std::vector<PolygonLabel> labels = sample.labels;
            TotalLossResult<S> res;
            if (t.identity()) {
                Tensor<S> seg = model.segLogits(bev);
                Tensor<S> det = model.detLogits(bev);
                res = totalLoss<S>(seg, det, labels, model.cfg.bev, model.cfg.max_corner_offset,
                                   cfg.loss);
            } else {
                bev = resampleBevFeatures(bev, t);
                Tensor<S> seg = model.segLogits(bev);
                Tensor<S> det = model.detLogits(bev);
                labels = transformLabels(labels, t);
                SegTargets st = buildSegTargets(sample.labels, model.cfg.bev);
                std::vector<double> valid;
                resampleTargetMaps(st, t, &valid);
                std::vector<S> mask(valid.begin(), valid.end());
                res = totalLoss<S>(seg, det, labels, model.cfg.bev, model.cfg.max_corner_offset,
                                   cfg.loss, {}, &st, &mask);
            }
            batch_total = add(batch_total, res.total);
            total_sum += res.report.total;
            for (const auto& [name, v] : res.report.unweighted) term_sums[name] += v;
        }
        Tensor<S> loss = scale(batch_total, S(1.0 / b));
        loss.backward();
        adam.step(model.params, lr);

        double avg_total = total_sum / b;
        json terms;
        for (auto& [name, v] : term_sums) terms[name] = v / b;
        log << json{{"step", step}, {"lr", lr}, {"total", avg_total}, {"terms", terms}}.dump()
            << "\n";
        log.flush();

        if (result.steps_run == 0 && step == start_step + 1) result.first_loss = avg_total;
        result.last_loss = avg_total;
        ++result.steps_run;

        if (step % cfg.optimizer.checkpoint_every == 0 || step == end_step) {
            TrainingState st;
            st.step = step;
            st.checkpoint = (fs::path(cfg.checkpoint_dir) / checkpointName(step)).string();
            st.optimizer_state = st.checkpoint + ".opt";
            saveCheckpoint(model.params, st.checkpoint);
            std::ofstream f(st.optimizer_state, std::ios::binary);
            adam.saveState(f);
            writeTrainingState(cfg.checkpoint_dir, st);
            result.last_checkpoint = st.checkpoint;
        }
    }
    return result;
}

template <class S>
std::vector<PolygonDetection> decodeFromTensor(const Tensor<S>& det, const BevGridSpec& spec,
                                               double max_offset, const MatchConfig& match) {
    std::vector<double> raw(det.data().begin(), det.data().end());
    return decodeDetections(raw, spec, max_offset, match.confidence_threshold,
                            kNmsGiouThreshold);
}

template <class S>
EvalResult evalImpl(const RunConfig& cfg, std::string checkpoint_path, const std::string& split) {
    if (split != "train" && split != "val")
        throw ConfigError("eval split must be 'train' or 'val', got '" + split + "'");
    Rig rig = cfg.rig();
    DatasetManifest manifest = readManifest(cfg.dataset_dir);
    const std::vector<int>& ids = (split == "train") ? manifest.train_ids : manifest.val_ids;
    if (checkpoint_path.empty()) checkpoint_path = latestCheckpoint(cfg.checkpoint_dir);

    Rng init_rng(cfg.seed);
    PerceptionModel<S> model(cfg.model, init_rng);
    loadCheckpoint(model.params, checkpoint_path);
    std::vector<CameraEncodings> encs = buildRigEncodings(rig, model.cfg);

    fs::create_directories(cfg.report_dir);
    std::ofstream dump(fs::path(cfg.report_dir) / ("detections_" + split + ".jsonl"));

    MetricsAccumulator acc(cfg.eval.match);
    int overlays_left = cfg.eval.overlays;
    for (int id : ids) {
        SceneSample sample = readSample(cfg.dataset_dir, id, rig);
        ForwardOutput<S> fw = forwardSample(model, encs, sample.images, rig);
        std::vector<PolygonDetection> dets =
            decodeFromTensor(fw.det, model.cfg.bev, model.cfg.max_corner_offset, cfg.eval.match);
        acc.add(dets, sample.labels);
        dump << detectionsToJsonLine(id, dets) << "\n";
        if (overlays_left > 0) {
            writeOverlayPpm((fs::path(cfg.report_dir) /
                             ("overlay_" + split + "_" + sampleDirName(id) + ".ppm"))
                                .string(),
                            sample.labels, dets, model.cfg.bev);
            --overlays_left;
        }
    }

    EvalResult result;
    result.metrics = acc.report();
    result.passed = result.metrics.overall.f1 >= cfg.eval.min_f1;
    if (cfg.eval.max_distance_cm < 1e9) {
        result.passed = result.passed && result.metrics.distance_error_cm.has_value() &&
                        *result.metrics.distance_error_cm <= cfg.eval.max_distance_cm;
    }
    if (cfg.eval.min_visibility > 0.0) {
        result.passed = result.passed && result.metrics.visibility_accuracy.has_value() &&
                        *result.metrics.visibility_accuracy >= cfg.eval.min_visibility;
    }

    json j = json::parse(metricsToJson(result.metrics));
    j["config_hash"] = configHash(cfg);
    j["checkpoint"] = checkpoint_path;
    j["split"] = split;
    j["frames"] = ids.size();
    j["passed"] = result.passed;
    result.metrics_path = (fs::path(cfg.report_dir) / ("metrics_" + split + ".json")).string();
    std::ofstream out(result.metrics_path);
    if (!out) throw ConfigError("cannot write metrics to " + result.metrics_path);
    out << j.dump(2) << "\n";
    return result;
}

template <class S>
BenchReport benchImpl(const RunConfig& cfg, std::string checkpoint_path, int iterations,
                      int warmup) {
    if (iterations <= 0) throw ConfigError("bench requires at least one measured iteration");
    Rig rig = cfg.rig();
    Rng init_rng(cfg.seed);
    PerceptionModel<S> model(cfg.model, init_rng);
    if (!checkpoint_path.empty()) loadCheckpoint(model.params, checkpoint_path);
    std::vector<CameraEncodings> encs = buildRigEncodings(rig, model.cfg);

    // one synthetic frame as workload
    SceneWorld world = sceneForFrame(makeGenerateConfig(cfg), 0);
    std::vector<std::vector<float>> images;
    for (const auto& cam : rig.cameras) images.push_back(renderFisheye(world, cam));

    using clock = std::chrono::steady_clock;
    auto ms = [](clock::time_point a, clock::time_point b) {
        return std::chrono::duration<double, std::milli>(b - a).count();
    };

    std::vector<double> backbone_t, attn_t, heads_t, decode_t, total_t;
    for (int it = 0; it < warmup + iterations; ++it) {
        auto t0 = clock::now();
        std::vector<typename PerceptionModel<S>::CameraInput> cams;
        int native_h = model.cfg.input_height + model.cfg.crop_top;
        for (size_t i = 0; i < images.size(); ++i) {
            typename PerceptionModel<S>::CameraInput in;
            in.image = prepareImage<S>(images[i], native_h, model.cfg.input_width,
                                       model.cfg.crop_top, model.cfg.input_height);
            in.enc = &encs[i];
            cams.push_back(std::move(in));
        }
        std::vector<std::pair<Tensor<S>, Tensor<S>>> feats;
        for (const auto& cam : cams) feats.push_back(model.endpoints(cam.image));
        auto t1 = clock::now();
        Tensor<S> bev = model.fuseBev(cams, feats);
        auto t2 = clock::now();
        Tensor<S> seg = model.segLogits(bev);
        Tensor<S> det = model.detLogits(bev);
        auto t3 = clock::now();
        std::vector<PolygonDetection> dets =
            decodeFromTensor(det, model.cfg.bev, model.cfg.max_corner_offset, cfg.eval.match);
        auto t4 = clock::now();
        if (it < warmup) continue;
        backbone_t.push_back(ms(t0, t1));
        attn_t.push_back(ms(t1, t2));
        heads_t.push_back(ms(t2, t3));
        decode_t.push_back(ms(t3, t4));
        total_t.push_back(ms(t0, t4));
    }

    auto summarize = [](const std::string& name, std::vector<double> v) {
        StageTiming st;
        st.name = name;
        double sum = 0.0;
        for (double x : v) sum += x;
        st.mean_ms = sum / v.size();
        std::sort(v.begin(), v.end());
        st.p95_ms = v[static_cast<size_t>(std::min<double>(v.size() - 1.0, 0.95 * v.size()))];
        return st;
    };

    BenchReport rep;
    rep.iterations = iterations;
    rep.stages = {summarize("backbone", backbone_t), summarize("attention", attn_t),
                  summarize("heads", heads_t), summarize("decode", decode_t)};
    for (const auto& st : rep.stages) rep.stage_sum_mean_ms += st.mean_ms;
    rep.total_mean_ms = summarize("total", total_t).mean_ms;
    rep.fps = 1000.0 / rep.total_mean_ms;
    return rep;
}

}  // namespace

TrainResult cmdTrain(const RunConfig& cfg, long stop_after) {
    cfg.validate();
    return cfg.precision == "float64" ? trainImpl<double>(cfg, stop_after)
                                      : trainImpl<float>(cfg, stop_after);
}

EvalResult cmdEval(const RunConfig& cfg, std::string checkpoint_path, const std::string& split) {
    cfg.validate();
    return cfg.precision == "float64" ? evalImpl<double>(cfg, std::move(checkpoint_path), split)
                                      : evalImpl<float>(cfg, std::move(checkpoint_path), split);
}

BenchReport cmdBench(const RunConfig& cfg, std::string checkpoint_path, int iterations,
                     int warmup) {
    cfg.validate();
    return cfg.precision == "float64"
               ? benchImpl<double>(cfg, std::move(checkpoint_path), iterations, warmup)
               : benchImpl<float>(cfg, std::move(checkpoint_path), iterations, warmup);
}

std::string benchToJson(const BenchReport& rep, const std::string& config_hash) {
    json stages = json::array();
    for (const auto& st : rep.stages)
        stages.push_back({{"name", st.name}, {"mean_ms", st.mean_ms}, {"p95_ms", st.p95_ms}});
    return json{{"config_hash", config_hash},
                {"iterations", rep.iterations},
                {"fps", rep.fps},
                {"total_mean_ms", rep.total_mean_ms},
                {"stage_sum_mean_ms", rep.stage_sum_mean_ms},
                {"stages", stages}}
        .dump(2);
}

std::string latestCheckpoint(const std::string& checkpoint_dir) {
    auto state = readTrainingState(checkpoint_dir);
    if (!state) throw ConfigError("no training state found in " + checkpoint_dir);
    return state->checkpoint;
}

std::string cmdInspect(const RunConfig& cfg) {
    json j;
    j["config_hash"] = configHash(cfg);
    j["config"] = json::parse(runConfigToJson(cfg));
    try {
        DatasetManifest m = readManifest(cfg.dataset_dir);
        j["dataset"] = {{"train_frames", m.train_ids.size()},
                        {"val_frames", m.val_ids.size()},
                        {"image_size", {m.image_width, m.image_height}},
                        {"seed", m.seed}};
    } catch (const ConfigError&) {
        j["dataset"] = nullptr;
    }
    try {
        auto state = readTrainingState(cfg.checkpoint_dir);
        if (state)
            j["training"] = {{"step", state->step}, {"checkpoint", state->checkpoint}};
        else
            j["training"] = nullptr;
    } catch (const ConfigError&) {
        j["training"] = nullptr;
    }
    return j.dump(2);
}

}  // namespace parkbev
