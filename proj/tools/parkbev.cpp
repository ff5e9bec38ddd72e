#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "parkbev/errors.hpp"
#include "parkbev/pipeline.hpp"

namespace {

int run(int argc, char** argv) {
    CLI::App app{"Surround-view fisheye BEV perception pipeline"};
    app.require_subcommand(1);
    app.fallthrough(true);  // parent options may follow the subcommand name

    std::string config_path;
    std::uint64_t seed = 0;
    bool seed_set = false;
    std::vector<std::string> overrides;
    app.add_option("--config", config_path, "Run configuration JSON")->required();
    app.add_option("--seed", seed, "Override the config seed")
        ->each([&](const std::string&) { seed_set = true; });
    app.add_option("--override", overrides, "Config override as dotted.key=value");

    auto* generate = app.add_subcommand("generate", "Render the synthetic dataset");
    auto* train = app.add_subcommand("train", "Run or resume the training loop");
    auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint and write metrics");
    auto* bench = app.add_subcommand("bench", "Measure forward-pass throughput");
    auto* inspect = app.add_subcommand("inspect", "Summarize config, dataset and checkpoints");

    std::string checkpoint, split = "val";
    eval->add_option("--checkpoint", checkpoint, "Checkpoint path (default: newest)");
    eval->add_option("--split", split, "Dataset split: train or val");
    int iterations = 20, warmup = 3;
    bench->add_option("--checkpoint", checkpoint, "Checkpoint path (optional)");
    bench->add_option("--iterations", iterations, "Measured iterations");
    bench->add_option("--warmup", warmup, "Warmup iterations");

    CLI11_PARSE(app, argc, argv);

    parkbev::RunConfig cfg = parkbev::loadRunConfig(config_path, overrides);
    if (seed_set) cfg.seed = seed;
    std::string hash = parkbev::configHash(cfg);

    if (generate->parsed()) {
        parkbev::cmdGenerate(cfg);
        std::cout << "dataset written to " << cfg.dataset_dir << " (config " << hash << ")\n";
        return 0;
    }
    if (train->parsed()) {
        parkbev::TrainResult r = parkbev::cmdTrain(cfg);
        std::cout << "trained " << r.steps_run << " steps (config " << hash << ")\n";
        if (r.steps_run > 0)
            std::cout << "loss " << r.first_loss << " -> " << r.last_loss << "\n";
        std::cout << "checkpoint: " << r.last_checkpoint << "\n";
        return 0;
    }
    if (eval->parsed()) {
        parkbev::EvalResult r = parkbev::cmdEval(cfg, checkpoint, split);
        std::cout << "metrics written to " << r.metrics_path << " (config " << hash << ")\n";
        std::cout << "overall F1 " << r.metrics.overall.f1;
        if (r.metrics.distance_error_cm)
            std::cout << ", distance " << *r.metrics.distance_error_cm << " cm";
        if (r.metrics.visibility_accuracy)
            std::cout << ", visibility " << *r.metrics.visibility_accuracy;
        std::cout << "\n";
        return r.passed ? 0 : 4;
    }
    if (bench->parsed()) {
        parkbev::BenchReport r = parkbev::cmdBench(cfg, checkpoint, iterations, warmup);
        std::string report = parkbev::benchToJson(r, hash);
        std::filesystem::create_directories(cfg.report_dir);
        std::ofstream out(std::filesystem::path(cfg.report_dir) / "bench.json");
        out << report << "\n";
        std::cout << report << "\n";
        return 0;
    }
    if (inspect->parsed()) {
        std::cout << parkbev::cmdInspect(cfg) << "\n";
        return 0;
    }
    return 2;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const parkbev::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const parkbev::NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
