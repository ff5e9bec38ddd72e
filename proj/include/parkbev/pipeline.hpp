#pragma once

#include <string>
#include <vector>

#include "parkbev/augment.hpp"
#include "parkbev/dataset.hpp"
#include "parkbev/evaluation.hpp"
#include "parkbev/losses.hpp"
#include "parkbev/model.hpp"

namespace parkbev {

struct OptimizerConfig {
    double lr_start = 1.5e-4;
    double lr_max = 3e-4;
    double lr_end = 1.5e-5;
    double weight_decay = 0.01;
    int batch_size = 8;
    long steps = 10000;
    long checkpoint_every = 500;
};

struct EvalConfig {
    MatchConfig match;
    // gate thresholds; a report below any of them makes `eval` exit nonzero
    double min_f1 = 0.0;
    double max_distance_cm = 1e9;
    double min_visibility = 0.0;
    int overlays = 0;  // per-frame BEV overlay rasters to write
};

struct DataConfig {
    int train_count = 32;
    int val_count = 64;
    double occupancy = 0.5;
    // "cycle" rotates perpendicular/parallel/mixed per frame; the named
    // layouts fix it for every scene.
    std::string layout = "cycle";
    double row_yaw_range = 0.35;  // radians of random row orientation
    double aisle = 0.0;           // fixed row distance in meters; 0 keeps it random
    int slots_per_row = 0;        // fixed slot count per row; 0 keeps it random
    double row_shift_range = 3.0; // meters of random slot phase along the row
};

// Full run description. The JSON layout is published as
// docs/run_config.schema.json; parsing is strict: unknown keys and
// wrongly-typed values are rejected before any work starts.
struct RunConfig {
    std::string dataset_dir = "data";
    std::string checkpoint_dir = "checkpoints";
    std::string report_dir = "reports";
    std::uint64_t seed = 0;
    std::string precision = "float32";  // or "float64"
    ModelConfig model;
    LossWeights loss;
    std::string augmentation = "none";
    OptimizerConfig optimizer;
    DataConfig data;
    EvalConfig eval;

    void validate() const;
    Rig rig() const;  // synthetic rig at the native (pre-crop) resolution
};

RunConfig parseRunConfig(const std::string& json_text);
RunConfig loadRunConfig(const std::string& path,
                        const std::vector<std::string>& overrides = {});
std::string runConfigToJson(const RunConfig& cfg);
// FNV-1a hash of the resolved config JSON, echoed into every report.
std::string configHash(const RunConfig& cfg);

void cmdGenerate(const RunConfig& cfg);

struct TrainResult {
    long steps_run = 0;
    double first_loss = 0.0;
    double last_loss = 0.0;
    std::string last_checkpoint;
};

// Runs (or resumes) the training loop; checkpoints land in checkpoint_dir,
// one JSONL loss line per step in report_dir/train_log.jsonl. stop_after > 0
// interrupts the run at that step (the schedule still spans optimizer.steps).
TrainResult cmdTrain(const RunConfig& cfg, long stop_after = -1);

struct EvalResult {
    MetricsReport metrics;
    bool passed = true;  // against the configured gate thresholds
    std::string metrics_path;
};

// split: "train" or "val". Empty checkpoint path means the newest one.
EvalResult cmdEval(const RunConfig& cfg, std::string checkpoint_path, const std::string& split);

struct StageTiming {
    std::string name;
    double mean_ms = 0.0;
    double p95_ms = 0.0;
};

struct BenchReport {
    int iterations = 0;
    double fps = 0.0;
    double total_mean_ms = 0.0;       // measured end-to-end
    double stage_sum_mean_ms = 0.0;   // accounting check target
    std::vector<StageTiming> stages;  // backbone, attention, heads, decode
};

BenchReport cmdBench(const RunConfig& cfg, std::string checkpoint_path, int iterations,
                     int warmup);
std::string benchToJson(const BenchReport& report, const std::string& config_hash);

// Human-readable JSON summary of the dataset, checkpoints and config.
std::string cmdInspect(const RunConfig& cfg);

// Newest checkpoint in the directory per the training-state marker; throws
// ConfigError when none exists.
std::string latestCheckpoint(const std::string& checkpoint_dir);

}  // namespace parkbev
