#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "json.hpp"
#include "parkbev/errors.hpp"
#include "parkbev/pipeline.hpp"

using namespace parkbev;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// smallest legal model: 32x32 input, stride-32 endpoint is a single cell
RunConfig tinyConfig(const fs::path& root) {
    RunConfig cfg;
    cfg.dataset_dir = (root / "data").string();
    cfg.checkpoint_dir = (root / "ckpt").string();
    cfg.report_dir = (root / "reports").string();
    cfg.seed = 11;
    cfg.precision = "float32";
    cfg.model.input_width = 32;
    cfg.model.input_height = 32;
    cfg.model.crop_top = 3;
    cfg.model.backbone_channels = {4, 6, 8, 10, 12};
    cfg.model.attn_heads = 2;
    cfg.model.head_channels = 4;
    cfg.model.embed_hidden = 8;
    cfg.model.bev.channels = 8;
    cfg.model.seg_channels = 4;
    cfg.model.det_channels = 8;
    cfg.optimizer.batch_size = 2;
    cfg.optimizer.steps = 3;
    cfg.optimizer.checkpoint_every = 2;
    cfg.data.train_count = 3;
    cfg.data.val_count = 2;
    return cfg;
}

fs::path freshDir(const std::string& name) {
    fs::path root = fs::temp_directory_path() / name;
    fs::remove_all(root);
    fs::create_directories(root);
    return root;
}

std::vector<std::string> readLines(const fs::path& p) {
    std::ifstream f(p);
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(f, line))
        if (!line.empty()) lines.push_back(line);
    return lines;
}

}  // namespace

TEST_CASE("config parsing: defaults, unknown keys, bad types and values") {
    RunConfig def = parseRunConfig("{}");
    CHECK(def.model.input_width == 128);
    CHECK(def.optimizer.batch_size == 8);
    CHECK(def.model.bev.channels == def.model.bevChannels());

    CHECK_THROWS_AS(parseRunConfig("{\"bogus\": 1}"), ConfigError);
    CHECK_THROWS_AS(parseRunConfig("{\"model\": {\"bogus\": 1}}"), ConfigError);
    CHECK_THROWS_AS(parseRunConfig("{\"seed\": \"nope\"}"), ConfigError);
    CHECK_THROWS_AS(parseRunConfig("{\"precision\": \"float16\"}"), ConfigError);
    CHECK_THROWS_AS(parseRunConfig("{\"augmentation\": \"mystery\"}"), ConfigError);
    CHECK_THROWS_AS(parseRunConfig("{\"optimizer\": {\"batch_size\": 0}}"), ConfigError);
    CHECK_THROWS_AS(parseRunConfig("{\"model\": {\"input_width\": 60}}"), ConfigError);
    CHECK_THROWS_AS(parseRunConfig("{\"dataset\": {\"layout\": \"diagonal\"}}"), ConfigError);
    CHECK_THROWS_AS(parseRunConfig("{\"dataset\": {\"row_yaw_range\": -0.1}}"), ConfigError);
    CHECK(parseRunConfig("{\"dataset\": {\"layout\": \"perpendicular\"}}").data.layout ==
          "perpendicular");
    CHECK_THROWS_AS(parseRunConfig("not json"), ConfigError);
}

TEST_CASE("published schema stays in sync with the accepted keys") {
    std::ifstream f(fs::path(PARKBEV_SOURCE_DIR) / "docs" / "run_config.schema.json");
    REQUIRE(f.good());
    json schema;
    f >> schema;
    CHECK(schema.at("additionalProperties") == false);
    // every schema property round-trips through the parser
    json probe = json::object();
    for (const auto& [key, _] : schema.at("properties").items()) probe[key] = json::object();
    probe["seed"] = 0;
    probe["precision"] = "float32";
    probe["augmentation"] = "none";
    CHECK_NOTHROW(parseRunConfig(probe.dump()));
    // and the emitted config validates structurally against the property list
    json emitted = json::parse(runConfigToJson(RunConfig{}));
    for (const auto& [key, _] : emitted.items())
        CHECK(schema.at("properties").contains(key));
}

TEST_CASE("overrides, seed and report-dir environment variable") {
    fs::path root = freshDir("parkbev_cfg_test");
    {
        std::ofstream f(root / "run.json");
        f << "{\"seed\": 3, \"model\": {\"attn_heads\": 2, \"head_channels\": 4}}\n";
    }
    RunConfig cfg = loadRunConfig((root / "run.json").string(),
                                  {"optimizer.batch_size=4", "precision=float64",
                                   "model.bev_extent=20.0"});
    CHECK(cfg.seed == 3);
    CHECK(cfg.optimizer.batch_size == 4);
    CHECK(cfg.precision == "float64");
    CHECK(cfg.model.bev.extent == 20.0);
    CHECK(cfg.model.bev.channels == 8);
    CHECK_THROWS_AS(loadRunConfig((root / "run.json").string(), {"no_equals_sign"}), ConfigError);
    CHECK_THROWS_AS(loadRunConfig((root / "run.json").string(), {"bogus_key=1"}), ConfigError);

    setenv("PARKBEV_REPORT_DIR", "/tmp/parkbev_env_reports", 1);
    RunConfig env_cfg = loadRunConfig((root / "run.json").string());
    CHECK(env_cfg.report_dir == "/tmp/parkbev_env_reports");
    unsetenv("PARKBEV_REPORT_DIR");
}

TEST_CASE("config hash is stable and sensitive") {
    RunConfig a, b;
    CHECK(configHash(a) == configHash(b));
    b.seed = 99;
    CHECK(configHash(a) != configHash(b));
    CHECK(configHash(a).size() == 16);
    // round trip through JSON preserves the hash
    RunConfig c = parseRunConfig(runConfigToJson(a));
    c.dataset_dir = a.dataset_dir;
    CHECK(configHash(parseRunConfig(runConfigToJson(a))) == configHash(a));
}

TEST_CASE("generate: zero-frame dataset is valid and generation is idempotent") {
    fs::path root = freshDir("parkbev_gen_test");
    RunConfig cfg = tinyConfig(root);
    cfg.data.train_count = 0;
    cfg.data.val_count = 0;
    cmdGenerate(cfg);
    DatasetManifest m = readManifest(cfg.dataset_dir);
    CHECK(m.train_ids.empty());
    CHECK(m.val_ids.empty());

    cfg.data.train_count = 2;
    cfg.data.val_count = 1;
    cfg.dataset_dir = (root / "data_a").string();
    cmdGenerate(cfg);
    std::string dir_a = cfg.dataset_dir;
    cfg.dataset_dir = (root / "data_b").string();
    cmdGenerate(cfg);
    std::ifstream fa(fs::path(dir_a) / "manifest.json"), fb(fs::path(cfg.dataset_dir) / "manifest.json");
    std::string ma((std::istreambuf_iterator<char>(fa)), std::istreambuf_iterator<char>());
    std::string mb((std::istreambuf_iterator<char>(fb)), std::istreambuf_iterator<char>());
    CHECK(ma == mb);
    DatasetManifest m2 = readManifest(cfg.dataset_dir);
    CHECK(m2.train_ids.size() == 2);
    CHECK(m2.val_ids.size() == 1);
    fs::remove_all(root);
}

TEST_CASE("training without a dataset manifest is refused") {
    fs::path root = freshDir("parkbev_nodata_test");
    RunConfig cfg = tinyConfig(root);
    CHECK_THROWS_AS(cmdTrain(cfg), ConfigError);
    fs::remove_all(root);
}

TEST_CASE("zero steps leaves only the initial checkpoint") {
    fs::path root = freshDir("parkbev_zerostep_test");
    RunConfig cfg = tinyConfig(root);
    cfg.optimizer.steps = 0;
    cmdGenerate(cfg);
    TrainResult r = cmdTrain(cfg);
    CHECK(r.steps_run == 0);
    CHECK(fs::exists(fs::path(cfg.checkpoint_dir) / "step_000000.ckpt"));
    CHECK(latestCheckpoint(cfg.checkpoint_dir) ==
          (fs::path(cfg.checkpoint_dir) / "step_000000.ckpt").string());
    fs::remove_all(root);
}

TEST_CASE("training logs parse, follow the lr schedule and are deterministic") {
    fs::path root = freshDir("parkbev_train_test");
    RunConfig cfg = tinyConfig(root);
    cmdGenerate(cfg);
    TrainResult r = cmdTrain(cfg);
    CHECK(r.steps_run == 3);
    CHECK(fs::exists(fs::path(cfg.checkpoint_dir) / "step_000002.ckpt"));
    CHECK(fs::exists(fs::path(cfg.checkpoint_dir) / "step_000003.ckpt"));

    auto lines = readLines(fs::path(cfg.report_dir) / "train_log.jsonl");
    REQUIRE(lines.size() == 3);
    for (size_t i = 0; i < lines.size(); ++i) {
        json j = json::parse(lines[i]);
        CHECK(j.at("step").get<long>() == static_cast<long>(i + 1));
        double expect = oneCycleLr(static_cast<long>(i + 1), cfg.optimizer.steps,
                                   cfg.optimizer.lr_start, cfg.optimizer.lr_max,
                                   cfg.optimizer.lr_end);
        CHECK(j.at("lr").get<double>() == doctest::Approx(expect));
        CHECK(j.at("terms").contains("polygon_giou"));
        CHECK(std::isfinite(j.at("total").get<double>()));
    }

    // fresh run with the same seed reproduces the log exactly
    RunConfig cfg2 = tinyConfig(root);
    cfg2.dataset_dir = cfg.dataset_dir;
    cfg2.checkpoint_dir = (root / "ckpt2").string();
    cfg2.report_dir = (root / "reports2").string();
    cmdTrain(cfg2);
    CHECK(readLines(fs::path(cfg2.report_dir) / "train_log.jsonl") == lines);
    fs::remove_all(root);
}

TEST_CASE("resuming reproduces the uninterrupted run") {
    fs::path root = freshDir("parkbev_resume_test");
    RunConfig cfg = tinyConfig(root);
    cfg.optimizer.steps = 4;
    cfg.optimizer.checkpoint_every = 2;
    cmdGenerate(cfg);
    cmdTrain(cfg);
    auto full = readLines(fs::path(cfg.report_dir) / "train_log.jsonl");
    REQUIRE(full.size() == 4);

    RunConfig split = cfg;
    split.checkpoint_dir = (root / "ckpt_split").string();
    split.report_dir = (root / "reports_split").string();
    cmdTrain(split, 2);               // interrupted at the step-2 checkpoint
    TrainResult r = cmdTrain(split);  // picks up from there
    CHECK(r.steps_run == 2);
    CHECK(readLines(fs::path(split.report_dir) / "train_log.jsonl") == full);
    fs::remove_all(root);
}

TEST_CASE("eval writes gated metrics with the config hash") {
    fs::path root = freshDir("parkbev_eval_test");
    RunConfig cfg = tinyConfig(root);
    cfg.optimizer.steps = 1;
    cfg.eval.overlays = 1;
    cmdGenerate(cfg);
    cmdTrain(cfg);
    EvalResult r = cmdEval(cfg, "", "val");
    CHECK(r.passed);  // thresholds default to trivially satisfiable
    json j;
    {
        std::ifstream f(r.metrics_path);
        REQUIRE(f.good());
        f >> j;
    }
    CHECK(j.at("config_hash").get<std::string>() == configHash(cfg));
    CHECK(j.at("split") == "val");
    CHECK(j.contains("overall"));
    CHECK(fs::exists(fs::path(cfg.report_dir) / "detections_val.jsonl"));
    CHECK(fs::exists(fs::path(cfg.report_dir) / "overlay_val_sample_000003.ppm"));

    // an untrained net cannot clear a real F1 gate
    cfg.eval.min_f1 = 0.9;
    EvalResult gated = cmdEval(cfg, "", "val");
    CHECK(!gated.passed);

    CHECK_THROWS_AS(cmdEval(cfg, "", "test"), ConfigError);
    fs::remove_all(root);
}

TEST_CASE("checkpoint/config shape mismatch names the offending parameters") {
    fs::path root = freshDir("parkbev_mismatch_test");
    RunConfig cfg = tinyConfig(root);
    cfg.optimizer.steps = 0;
    cmdGenerate(cfg);
    cmdTrain(cfg);
    RunConfig other = cfg;
    other.model.det_channels = 12;  // different detector width
    bool threw = false;
    try {
        cmdEval(other, latestCheckpoint(cfg.checkpoint_dir), "val");
    } catch (const ConfigError& e) {
        threw = true;
        CHECK(std::string(e.what()).find("det.") != std::string::npos);
    }
    CHECK(threw);
    fs::remove_all(root);
}

TEST_CASE("bench accounts its stages and rejects empty runs") {
    fs::path root = freshDir("parkbev_bench_test");
    RunConfig cfg = tinyConfig(root);
    CHECK_THROWS_AS(cmdBench(cfg, "", 0, 0), ConfigError);
    BenchReport rep = cmdBench(cfg, "", 5, 1);
    CHECK(rep.iterations == 5);
    CHECK(rep.fps > 0.0);
    REQUIRE(rep.stages.size() == 4);
    CHECK(rep.stages[0].name == "backbone");
    CHECK(rep.stage_sum_mean_ms <= rep.total_mean_ms * 1.05);
    CHECK(rep.stage_sum_mean_ms >= rep.total_mean_ms * 0.5);
    std::string j = benchToJson(rep, configHash(cfg));
    CHECK(j.find("\"fps\"") != std::string::npos);
    fs::remove_all(root);
}

TEST_CASE("inspect reports dataset and checkpoint state") {
    fs::path root = freshDir("parkbev_inspect_test");
    RunConfig cfg = tinyConfig(root);
    json empty = json::parse(cmdInspect(cfg));
    CHECK(empty.at("dataset").is_null());
    CHECK(empty.at("training").is_null());
    cmdGenerate(cfg);
    cfg.optimizer.steps = 0;
    cmdTrain(cfg);
    json j = json::parse(cmdInspect(cfg));
    CHECK(j.at("dataset").at("train_frames").get<int>() == 3);
    CHECK(j.at("training").at("step").get<long>() == 0);
    CHECK(j.at("config_hash").get<std::string>() == configHash(cfg));
    fs::remove_all(root);
}
