// Release gate: one pass/fail line per criterion, exit 0 only when all hold.
// Criteria 6-8 run real trainings and dominate the runtime (roughly an hour
// on a desktop CPU).
#include <chrono>
#include <cstdarg>
#include <cstdio>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "parkbev/augment.hpp"
#include "parkbev/evaluation.hpp"
#include "parkbev/model.hpp"
#include "parkbev/pipeline.hpp"

using namespace parkbev;
namespace fs = std::filesystem;

namespace {

int g_failures = 0;

void report(int n, const std::string& name, bool ok, const std::string& detail) {
    std::printf("[%s] criterion %d: %s (%s)\n", ok ? "PASS" : "FAIL", n, name.c_str(),
                detail.c_str());
    std::fflush(stdout);
    if (!ok) ++g_failures;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, ...) {
    char buf[256];
    va_list ap;
    va_start(ap, f);
    std::vsnprintf(buf, sizeof buf, f, ap);
    va_end(ap);
    return buf;
}

CameraIntrinsics randomIntrinsics(std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (;;) {
        std::array<double, 4> c{200.0 + 200.0 * u(rng), 20.0 * (u(rng) - 0.5),
                                8.0 * (u(rng) - 0.5), 2.0 * (u(rng) - 0.5)};
        try {
            return CameraIntrinsics::make(c, 300 + 40 * u(rng), 220 + 40 * u(rng), 640, 480,
                                          0.8 + 0.8 * u(rng));
        } catch (const ConfigError&) {
            // non-monotone draw, resample
        }
    }
}

PolygonLabel makeSlot(double cx, double cy, double yaw, double w = 2.5, double l = 5.0,
                      ObjectClass cls = ObjectClass::Parking) {
    std::array<Pt2<double>, 4> local{
        {{l / 2, w / 2}, {l / 2, -w / 2}, {-l / 2, -w / 2}, {-l / 2, w / 2}}};
    PolygonLabel lab;
    lab.cls = cls;
    double c = std::cos(yaw), s = std::sin(yaw);
    for (int i = 0; i < 4; ++i)
        lab.corners[i] = {cx + c * local[i].x - s * local[i].y,
                          cy + s * local[i].x + c * local[i].y};
    return canonicalizeLabel(lab);
}

PolygonDetection asDetection(const PolygonLabel& lab, double conf, int cell = 0) {
    PolygonDetection d;
    d.cls = lab.cls;
    d.corners = lab.corners;
    d.confidence = conf;
    for (int k = 0; k < 4; ++k) d.visibility[k] = lab.visibility[k] ? 0.9 : 0.1;
    d.cell_index = cell;
    return d;
}

// ---- criterion 1: fisheye geometry round trip ----

void criterion1() {
    auto t0 = std::chrono::steady_clock::now();
    std::mt19937_64 rng(101);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    double worst_px = 0.0, worst_res = 0.0;
    long checked = 0;
    for (int cam = 0; cam < 20; ++cam) {
        CameraIntrinsics intr = randomIntrinsics(rng);
        Mat3 rot = Mat3::axisRotation(2, 6.28 * u(rng)) * Mat3::axisRotation(1, 2.0 * u(rng) - 1.0) *
                   Mat3::axisRotation(0, 2.0 * u(rng) - 1.0);
        CameraCalibration calib;
        calib.intrinsics = intr;
        calib.extrinsics =
            CameraExtrinsics::make(rot, {4.0 * u(rng) - 2.0, 4.0 * u(rng) - 2.0, u(rng)});
        calib.name = "front";
        double rmax = intr.maxRadius();
        int done = 0;
        while (done < 10000) {
            double r = 0.999 * rmax * std::sqrt(u(rng));
            double th = 2.0 * M_PI * u(rng);
            Pixel p{intr.u0 + r * std::cos(th), intr.v0 + r * std::sin(th)};
            if (p.u < 0 || p.u >= intr.width || p.v < 0 || p.v >= intr.height) continue;
            Vec3 ray = unprojectPixel(p, calib);
            auto back = projectRay(ray, calib);
            if (!back) {
                worst_px = 1e9;
                break;
            }
            worst_px = std::max({worst_px, std::abs(back->u - p.u), std::abs(back->v - p.v)});
            ++done;
            ++checked;
        }
        for (int i = 0; i < 1000; ++i) {
            double rd = rmax * u(rng);
            double alpha = intr.incidenceAngle(rd);
            worst_res = std::max(worst_res, std::abs(intr.radialDistance(alpha) - rd));
        }
    }
    double dt = seconds_since(t0);
    bool ok = worst_px <= 1e-6 && worst_res <= 1e-9 && dt < 10.0 && checked >= 200000;
    report(1, "fisheye projection round trip",
           ok, fmt("max %.3g px over %ld pixels, inverse residual %.3g, %.1f s", worst_px,
                   checked, worst_res, dt));
}

// ---- criterion 2: full-loss gradients vs finite differences ----

void criterion2() {
    auto t0 = std::chrono::steady_clock::now();
    ModelConfig cfg;
    cfg.input_width = 64;
    cfg.input_height = 48;
    cfg.crop_top = 4;  // native 64x52 frames
    cfg.backbone_channels = {4, 6, 8, 10, 12};
    cfg.attn_heads = 2;
    cfg.head_channels = 4;
    cfg.embed_hidden = 8;
    cfg.bev.cells = 25;
    cfg.bev.extent = 25.0;
    cfg.bev.channels = 8;
    cfg.seg_channels = 4;
    cfg.det_channels = 8;

    Rig rig = defaultSyntheticRig(cfg.input_width, cfg.input_height + cfg.crop_top);
    auto encs = buildRigEncodings(rig, cfg);
    Rng rng(202);
    PerceptionModel<double> model(cfg, rng);

    std::vector<Tensor<double>> images;
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int i = 0; i < 4; ++i) {
        Tensor<double> img({3, cfg.input_height, cfg.input_width});
        for (auto& x : img.data()) x = u(rng);
        images.push_back(img);
    }
    std::vector<PolygonLabel> labels{makeSlot(4.0, 2.0, 0.3),
                                     makeSlot(-3.0, -5.0, 1.2, 2.0, 4.5, ObjectClass::Vehicle),
                                     makeSlot(6.0, -4.0, 2.1)};
    labels[0].visibility = {true, false, true, true};
    SegTargets seg_t = buildSegTargets(labels, cfg.bev);

    auto forward = [&](bool with_giou) {
        std::vector<PerceptionModel<double>::CameraInput> inputs;
        for (int i = 0; i < 4; ++i) inputs.push_back({images[i], &encs[i]});
        Tensor<double> bev = model.bevFeatures(inputs);
        LossWeights w;
        if (!with_giou) w.polygon_giou = 0.0;
        return totalLoss(model.segLogits(bev), model.detLogits(bev), labels, cfg.bev,
                         cfg.max_corner_offset, w, FocalConfig{}, &seg_t)
            .total;
    };

    // 200 (parameter, element) probes shared by both variants
    Rng pick(203);
    std::vector<std::pair<size_t, size_t>> probes;
    std::uniform_int_distribution<size_t> pidx(0, model.params.all().size() - 1);
    for (int i = 0; i < 200; ++i) {
        size_t pi = pidx(pick);
        size_t n = model.params.all()[pi].tensor.size();
        probes.push_back({pi, std::uniform_int_distribution<size_t>(0, n - 1)(pick)});
    }

    double worst_plain = 0.0, worst_giou = 0.0;
    for (bool with_giou : {false, true}) {
        model.params.zeroGrad();
        forward(with_giou).backward();
        std::vector<std::vector<double>> grads;
        for (auto& p : model.params.all()) grads.push_back(p.tensor.grad());
        double eps = 1e-6;
        for (auto [pi, j] : probes) {
            auto& t = model.params.all()[pi].tensor;
            double saved = t.data()[j];
            t.data()[j] = saved + eps;
            double up = forward(with_giou).item();
            t.data()[j] = saved - eps;
            double dn = forward(with_giou).item();
            t.data()[j] = saved;
            double fd = (up - dn) / (2 * eps);
            double an = grads[pi][j];
            if (std::abs(fd) < 1e-10 && std::abs(an) < 1e-10) continue;
            double rel = std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-6});
            (with_giou ? worst_giou : worst_plain) = std::max(with_giou ? worst_giou : worst_plain, rel);
        }
    }
    double dt = seconds_since(t0);
    bool ok = worst_plain <= 1e-5 && worst_giou <= 1e-3 && dt < 300.0;
    report(2, "loss gradients match finite differences", ok,
           fmt("rel err %.3g plain / %.3g with giou over 200 params, %.0f s", worst_plain,
               worst_giou, dt));
}

// ---- criterion 3: GIoU vs rasterization oracle ----

void criterion3() {
    std::mt19937_64 rng(303);
    double worst = 0.0;
    for (int i = 0; i < 100; ++i) {
        ConvexQuad a = oracles::randomConvexQuad(rng);
        ConvexQuad b = oracles::randomConvexQuad(rng);
        worst = std::max(worst, std::abs(quadGiou(a, b) - oracles::rasterizeGiou(a, b).giou));
    }
    ConvexQuad sq = ConvexQuad::canonical({{{0, 0}, {1, 0}, {1, 1}, {0, 1}}});
    ConvexQuad sq_off = ConvexQuad::canonical({{{0.5, 0}, {1.5, 0}, {1.5, 1}, {0.5, 1}}});
    double self_err = std::abs(quadGiou(sq, sq) - 1.0);
    double off_err = std::abs(quadGiou(sq, sq_off) - 1.0 / 3.0);
    bool ok = worst <= 2e-3 && self_err <= 1e-12 && off_err <= 1e-12;
    report(3, "polygon GIoU matches the rasterization oracle", ok,
           fmt("max |diff| %.3g over 100 pairs, identity err %.3g, half-offset err %.3g", worst,
               self_err, off_err));
}

// ---- criterion 4: loss weight arithmetic ----

void criterion4() {
    LossWeights w;
    double unit_total = 0.0;
    for (const auto& [name, weight] : w.named()) unit_total += weight;
    double pin_err = std::abs(unit_total - 1.95925);

    BevGridSpec spec;
    std::vector<PolygonLabel> labels{makeSlot(3.0, 1.0, 0.2)};
    Rng rng(404);
    std::normal_distribution<double> dist(0.0, 0.5);
    std::vector<double> seg_raw(4 * 200 * 200), det_raw(kDetChannels * spec.cells * spec.cells);
    for (auto& v : seg_raw) v = dist(rng);
    for (auto& v : det_raw) v = dist(rng);
    auto res = totalLoss(Tensor<double>::fromData({4, 200, 200}, std::move(seg_raw)),
                         Tensor<double>::fromData({kDetChannels, spec.cells, spec.cells},
                                                  std::move(det_raw)),
                         labels, spec, 6.0, w);
    double sum = 0.0;
    for (const auto& [name, v] : res.report.weighted) sum += v;
    double decomp_err = std::abs(sum - res.report.total);
    bool ok = pin_err < 1e-12 && decomp_err <= 1e-9;
    report(4, "loss weighting arithmetic", ok,
           fmt("unit-term total %.6f (err %.3g), decomposition err %.3g", unit_total, pin_err,
               decomp_err));
}

// ---- criterion 5: augmentation soundness ----

void criterion5() {
    // double flip restores labels exactly
    BevTransform flip{true, 0.0};
    bool flip_exact = true;
    for (int i = 0; i < 8; ++i) {
        PolygonLabel lab = makeSlot(4.2 - i, -1.3 + 0.7 * i, 0.9 * i,
                                    2.0 + 0.1 * i, 4.0, i % 2 ? ObjectClass::Vehicle
                                                             : ObjectClass::Parking);
        lab.visibility = {i % 2 == 0, true, i % 3 == 0, true};
        auto twice = transformLabels(transformLabels({lab}, flip), flip);
        for (int k = 0; k < 4; ++k)
            flip_exact = flip_exact && twice[0].corners[k].x == lab.corners[k].x &&
                         twice[0].corners[k].y == lab.corners[k].y &&
                         twice[0].visibility[k] == lab.visibility[k];
    }

    // metrics invariant under a shared rigid transform
    std::mt19937_64 rng(505);
    std::normal_distribution<double> noise(0.0, 0.25);
    std::vector<PolygonLabel> labels;
    std::vector<PolygonDetection> preds;
    for (int i = 0; i < 12; ++i) {
        PolygonLabel lab = makeSlot(double(i % 4) * 5.0 - 7.5, double(i / 4) * 5.0 - 5.0, 0.2 * i,
                                    2.6, 5.2,
                                    i % 2 ? ObjectClass::Vehicle : ObjectClass::Parking);
        PolygonDetection pred = asDetection(lab, 0.3 + 0.05 * i, i);
        for (auto& c : pred.corners) {
            c.x += noise(rng);
            c.y += noise(rng);
        }
        labels.push_back(lab);
        preds.push_back(pred);
    }
    MetricsAccumulator base;
    base.add(preds, labels);
    MetricsReport a = base.report();
    double yaw = 0.83;
    auto move = [&](Pt2<double>& p) {
        double c = std::cos(yaw), s = std::sin(yaw);
        p = {c * p.x - s * p.y + 1.7, s * p.x + c * p.y - 2.3};
    };
    for (auto& lab : labels)
        for (auto& c : lab.corners) move(c);
    for (auto& pred : preds)
        for (auto& c : pred.corners) move(c);
    MetricsAccumulator moved;
    moved.add(preds, labels);
    MetricsReport b = moved.report();
    double inv_err = std::abs(a.overall.f1 - b.overall.f1) +
                     std::abs(*a.distance_error_cm - *b.distance_error_cm);
    bool counts_equal = a.overall.tp == b.overall.tp && a.overall.fp == b.overall.fp &&
                        a.overall.fn == b.overall.fn;

    // channel dropout preserves expected magnitude
    Rng drng(506);
    Tensor<float> feat = Tensor<float>::full({128, 2, 2}, 1.0f);
    double mean = 0.0;
    int draws = 10000;
    for (int i = 0; i < draws; ++i) {
        Tensor<float> d = channelDropout(feat, 0.5, drng);
        double s = 0.0;
        for (float v : d.data()) s += v;
        mean += s / d.size();
    }
    mean /= draws;

    bool ok = flip_exact && counts_equal && inv_err < 1e-9 && std::abs(mean - 1.0) < 0.01;
    report(5, "augmentation soundness", ok,
           fmt("double-flip exact %d, rigid invariance err %.3g, dropout mean %.4f", flip_exact,
               inv_err, mean));
}

// ---- criteria 6-9: training runs, visibility, ablation, bench ----

// Small preset used by the overfit and ablation runs; step counts frozen
// after the first successful calibration.
constexpr long kOverfitSteps = 2000;
constexpr long kAblationSteps = 1200;

RunConfig smallPreset(const std::string& root, long steps) {
    RunConfig cfg;
    cfg.dataset_dir = root + "/data";
    cfg.checkpoint_dir = root + "/ckpt";
    cfg.report_dir = root + "/rep";
    cfg.seed = 7;
    cfg.precision = "float32";
    cfg.model.input_width = 64;
    cfg.model.input_height = 48;
    cfg.model.crop_top = 3;
    cfg.model.backbone_channels = {8, 12, 16, 24, 32};
    cfg.model.attn_heads = 4;
    cfg.model.head_channels = 8;
    cfg.model.embed_hidden = 32;
    cfg.model.bev.channels = 32;
    cfg.model.seg_channels = 8;
    cfg.model.det_channels = 32;
    cfg.optimizer.batch_size = 4;
    cfg.optimizer.steps = steps;
    cfg.optimizer.checkpoint_every = steps;
    cfg.optimizer.lr_start = 3e-4;
    cfg.optimizer.lr_max = 1e-3;
    cfg.optimizer.lr_end = 1e-4;
    cfg.data.train_count = 32;
    cfg.data.val_count = 64;
    cfg.data.layout = "perpendicular";
    cfg.augmentation = "none";
    return cfg;
}

void criteria6to9(const fs::path& work) {
    auto t0 = std::chrono::steady_clock::now();
    RunConfig cfg = smallPreset((work / "overfit").string(), kOverfitSteps);
    MetricsReport train_rep, val_rep;
    bool ran = false;
    try {
        cmdGenerate(cfg);
        cmdTrain(cfg);
        train_rep = cmdEval(cfg, "", "train").metrics;
        val_rep = cmdEval(cfg, "", "val").metrics;
        ran = true;
    } catch (const std::exception& e) {
        report(6, "overfit on 32 synthetic scenes", false, std::string("exception: ") + e.what());
        report(7, "corner-visibility accuracy", false, "overfit run failed");
    }
    double dt = seconds_since(t0);
    if (ran) {
        double dist = train_rep.distance_error_cm.value_or(1e9);
        bool ok6 = train_rep.overall.f1 >= 0.9 && dist <= 25.0 && val_rep.overall.f1 >= 0.6 &&
                   dt <= 7200.0;
        report(6, "overfit on 32 synthetic scenes", ok6,
               fmt("train F1 %.3f, dist %.1f cm, held-out F1 %.3f, %.0f s", train_rep.overall.f1,
                   dist, val_rep.overall.f1, dt));
        double vis = train_rep.visibility_accuracy.value_or(0.0);
        report(7, "corner-visibility accuracy", vis >= 0.9, fmt("accuracy %.3f on the overfit set", vis));
    }

    // criterion 8: flip+yaw augmentation must not hurt held-out F1 by > 0.02
    try {
        RunConfig base = smallPreset((work / "ablation").string(), kAblationSteps);
        base.seed = 21;
        base.data.train_count = 256;
        cmdGenerate(base);
        RunConfig no_aug = base;
        no_aug.checkpoint_dir = (work / "ablation/ckpt_none").string();
        no_aug.report_dir = (work / "ablation/rep_none").string();
        RunConfig aug = base;
        aug.augmentation = "default";
        aug.checkpoint_dir = (work / "ablation/ckpt_aug").string();
        aug.report_dir = (work / "ablation/rep_aug").string();
        cmdTrain(no_aug);
        cmdTrain(aug);
        double f1_none = cmdEval(no_aug, "", "val").metrics.overall.f1;
        double f1_aug = cmdEval(aug, "", "val").metrics.overall.f1;
        bool ok8 = f1_aug >= f1_none - 0.02;
        report(8, "flip+yaw augmentation does not hurt held-out F1", ok8,
               fmt("F1 %.3f with augmentation vs %.3f without on the 256-scene preset", f1_aug,
                   f1_none));
    } catch (const std::exception& e) {
        report(8, "flip+yaw augmentation does not hurt held-out F1", false,
               std::string("exception: ") + e.what());
    }

    // criterion 9: throughput harness stage accounting
    try {
        BenchReport bench = ran ? cmdBench(cfg, "", 20, 3) : BenchReport{};
        double rel = std::abs(bench.stage_sum_mean_ms - bench.total_mean_ms) /
                     std::max(bench.total_mean_ms, 1e-9);
        bool ok9 = ran && rel <= 0.05 && bench.iterations == 20;
        report(9, "bench stage accounting sums within 5%", ok9,
               fmt("stages %.2f ms vs total %.2f ms (%.1f%%), %.2f fps", bench.stage_sum_mean_ms,
                   bench.total_mean_ms, 100.0 * rel, bench.fps));
    } catch (const std::exception& e) {
        report(9, "bench stage accounting sums within 5%", false,
               std::string("exception: ") + e.what());
    }
}

}  // namespace

int main() {
    fs::path work = fs::current_path() / "acceptance_work";
    fs::remove_all(work);
    fs::create_directories(work);

    criterion1();
    criterion2();
    criterion3();
    criterion4();
    criterion5();
    criteria6to9(work);

    if (g_failures == 0) {
        std::printf("all 9 acceptance criteria passed\n");
        return 0;
    }
    std::printf("%d acceptance criteria failed\n", g_failures);
    return 4;
}
