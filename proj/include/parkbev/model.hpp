#pragma once

#include <string>

#include "parkbev/calibration_io.hpp"
#include "parkbev/geometry.hpp"
#include "parkbev/labels.hpp"
#include "parkbev/optim.hpp"

namespace parkbev {

struct ModelConfig {
    int input_width = 128;
    int input_height = 104;
    int crop_top = 5;  // native pixels removed before resize

    // Backbone stub: five stride-2 stages; endpoints tap stages 3 and 5
    // (stride 8 and stride 32).
    std::array<int, 5> backbone_channels{16, 24, 32, 48, 64};

    int attn_heads = 4;
    int head_channels = 32;
    int embed_hidden = 32;

    BevGridSpec bev;  // channels derived from the attention config

    int seg_channels = 16;
    int det_channels = 64;
    double max_corner_offset = 6.0;  // meters, tanh bound of the detection head

    int bevChannels() const { return attn_heads * head_channels; }
    int endpoint1Channels() const { return backbone_channels[2]; }
    int endpoint2Channels() const { return backbone_channels[4]; }
    int endpoint1Rows() const { return input_height / 8; }
    int endpoint1Cols() const { return input_width / 8; }
    int endpoint2Rows() const { return input_height / 32; }
    int endpoint2Cols() const { return input_width / 32; }

    void validate() const {
        if (input_width < 32 || input_height < 32)
            throw ConfigError("model: input must be at least 32x32 for the stride-32 endpoint");
        if (input_width % 8 != 0 || input_height % 8 != 0)
            throw ConfigError("model: input size must be divisible by the first endpoint stride 8");
        if (attn_heads <= 0 || head_channels <= 0) throw ConfigError("model: bad attention config");
        if (bev.cells <= 0 || bev.extent <= 0) throw ConfigError("model: bad BEV grid");
        if (bev.channels != bevChannels())
            throw ConfigError("model: bev.channels must equal heads*head_channels, got " +
                              std::to_string(bev.channels) + " vs " + std::to_string(bevChannels()));
    }
};

// Per-camera projection encodings at both endpoint resolutions.
struct CameraEncodings {
    ProjectionEncoding ep1, ep2;
};

inline std::vector<CameraEncodings> buildRigEncodings(const Rig& rig, const ModelConfig& cfg) {
    std::vector<CameraEncodings> out;
    for (size_t i = 0; i < rig.cameras.size(); ++i) {
        CameraEncodings e;
        e.ep1 = buildProjectionEncoding(rig.cameras[i], static_cast<int>(i), cfg.endpoint1Rows(),
                                        cfg.endpoint1Cols(), cfg.crop_top, cfg.input_width,
                                        cfg.input_height);
        e.ep2 = buildProjectionEncoding(rig.cameras[i], static_cast<int>(i), cfg.endpoint2Rows(),
                                        cfg.endpoint2Cols(), cfg.crop_top, cfg.input_width,
                                        cfg.input_height);
        out.push_back(std::move(e));
    }
    return out;
}

// Cross-view transformer: shared backbone stub over the camera images,
// fisheye-ray positional embeddings as attention keys, a learned map
// embedding as queries, sequential coarse-to-fine attention levels and a
// convolutional bottleneck producing the shared BEV feature map.
template <class S>
class PerceptionModel {
  public:
    ModelConfig cfg;
    ParamSet<S> params;

    PerceptionModel(const ModelConfig& config, Rng& rng) : cfg(config) {
        cfg.validate();
        int d = cfg.bevChannels();
        // backbone
        int in_ch = 3;
        for (int s = 0; s < 5; ++s) {
            int out_ch = cfg.backbone_channels[s];
            std::string base = "backbone.stage" + std::to_string(s + 1) + ".conv";
            params.addKaiming(base + ".w", {out_ch, in_ch, 3, 3}, in_ch * 9, rng);
            params.addConst(base + ".b", {out_ch}, S(0));
            in_ch = out_ch;
        }
        // attention levels: 0 = coarse (endpoint 2), 1 = fine (endpoint 1)
        int level_ch[2] = {cfg.endpoint2Channels(), cfg.endpoint1Channels()};
        for (int l = 0; l < 2; ++l) {
            std::string base = "level" + std::to_string(l) + ".";
            params.addKaiming(base + "ray_mlp.w1", {3, cfg.embed_hidden}, 3, rng);
            params.addConst(base + "ray_mlp.b1", {cfg.embed_hidden}, S(0));
            params.addKaiming(base + "ray_mlp.w2", {cfg.embed_hidden, d}, cfg.embed_hidden, rng);
            params.addConst(base + "ray_mlp.b2", {d}, S(0));
            params.addRandn(base + "cam_embed", {4, d}, 0.02, rng);
            params.addKaiming(base + "key_proj.w", {level_ch[l], d}, level_ch[l], rng);
            params.addConst(base + "key_proj.b", {d}, S(0));
            params.addKaiming(base + "val_proj.w", {level_ch[l], d}, level_ch[l], rng);
            params.addConst(base + "val_proj.b", {d}, S(0));
            params.addKaiming(base + "q_proj.w", {d, d}, d, rng);
            params.addConst(base + "q_proj.b", {d}, S(0));
            params.addKaiming(base + "out_proj.w", {d, d}, d, rng);
            params.addConst(base + "out_proj.b", {d}, S(0));
            params.addConst(base + "ln_q.gain", {d}, S(1));
            params.addConst(base + "ln_q.bias", {d}, S(0));
            params.addConst(base + "ln_out.gain", {d}, S(1));
            params.addConst(base + "ln_out.bias", {d}, S(0));
        }
        // position-aware map embedding, initialized through a fixed random MLP
        // on the metric cell centers.
        {
            int n = cfg.bev.cells * cfg.bev.cells;
            Tensor<S> q = params.add("map_embed", {n, d});
            int h = 16;
            std::normal_distribution<double> dist(0.0, 1.0);
            std::vector<double> w1(2 * h), b1(h), w2(h * d);
            for (auto& x : w1) x = dist(rng);
            for (auto& x : b1) x = 0.1 * dist(rng);
            for (auto& x : w2) x = dist(rng) / std::sqrt(h);
            for (int r = 0; r < cfg.bev.cells; ++r)
                for (int c = 0; c < cfg.bev.cells; ++c) {
                    auto ctr = cfg.bev.cellCenter(r, c);
                    double in[2] = {2.0 * ctr.x / cfg.bev.extent, 2.0 * ctr.y / cfg.bev.extent};
                    int cell = r * cfg.bev.cells + c;
                    for (int j = 0; j < d; ++j) {
                        double acc = 0.0;
                        for (int k = 0; k < h; ++k) {
                            double hk = std::tanh(in[0] * w1[k] + in[1] * w1[h + k] + b1[k]);
                            acc += hk * w2[static_cast<size_t>(k) * d + j];
                        }
                        q.data()[static_cast<size_t>(cell) * d + j] = static_cast<S>(0.1 * acc);
                    }
                }
        }
        // bottleneck residual blocks on the BEV grid
        for (int b = 1; b <= 2; ++b)
            for (int c = 1; c <= 2; ++c) {
                std::string base =
                    "bottleneck.block" + std::to_string(b) + ".conv" + std::to_string(c);
                params.addKaiming(base + ".w", {d, d, 3, 3}, d * 9, rng);
                params.addConst(base + ".b", {d}, S(0));
            }
        // segmentation decoder
        params.addKaiming("seg.reduce.w", {cfg.seg_channels, d, 1, 1}, d, rng);
        params.addConst("seg.reduce.b", {cfg.seg_channels}, S(0));
        for (int u = 1; u <= 3; ++u) {
            std::string base = "seg.up" + std::to_string(u) + ".conv";
            params.addKaiming(base + ".w", {cfg.seg_channels, cfg.seg_channels, 3, 3},
                              cfg.seg_channels * 9, rng);
            params.addConst(base + ".b", {cfg.seg_channels}, S(0));
        }
        params.addRandn("seg.final.w", {4, cfg.seg_channels, 1, 1}, 0.01, rng);
        params.addConst("seg.final.b", {4}, S(0));
        // detection decoder
        params.addKaiming("det.reduce.w", {cfg.det_channels, d, 1, 1}, d, rng);
        params.addConst("det.reduce.b", {cfg.det_channels}, S(0));
        for (int b = 1; b <= 3; ++b)
            for (int c = 1; c <= 2; ++c) {
                std::string base = "det.block" + std::to_string(b) + ".conv" + std::to_string(c);
                params.addKaiming(base + ".w", {cfg.det_channels, cfg.det_channels, 3, 3},
                                  cfg.det_channels * 9, rng);
                params.addConst(base + ".b", {cfg.det_channels}, S(0));
            }
        params.addRandn("det.final.w", {15, cfg.det_channels, 1, 1}, 0.01, rng);
        params.addConst("det.final.b", {15}, S(0));
    }

    Tensor<S> p(const std::string& name) {
        auto* param = params.find(name);
        if (!param) throw ConfigError("unknown parameter: " + name);
        return param->tensor;
    }

    // Backbone stub over one camera image [3,H,W]; returns the stride-8 and
    // stride-32 endpoint feature maps.
    std::pair<Tensor<S>, Tensor<S>> endpoints(const Tensor<S>& image) {
        if (image.shape() != Shape{3, cfg.input_height, cfg.input_width})
            throw ConfigError("backbone: image shape " + shapeStr(image.shape()) +
                              " does not match configured input " +
                              shapeStr({3, cfg.input_height, cfg.input_width}));
        Tensor<S> x = image;
        Tensor<S> ep1;
        for (int s = 0; s < 5; ++s) {
            std::string base = "backbone.stage" + std::to_string(s + 1) + ".conv";
            x = avgPool2x(relu(conv2d(x, p(base + ".w"), p(base + ".b"), 1, 1)));
            if (s == 2) ep1 = x;
        }
        return {ep1, x};
    }

    struct CameraInput {
        Tensor<S> image;  // [3,H,W], cropped+resized
        const CameraEncodings* enc = nullptr;
    };

    Tensor<S> bevFeatures(const std::vector<CameraInput>& cams) {
        if (cams.empty()) throw ConfigError("bevFeatures: no cameras");
        std::vector<std::pair<Tensor<S>, Tensor<S>>> feats;
        for (const auto& cam : cams) feats.push_back(endpoints(cam.image));
        return fuseBev(cams, feats);
    }

    // Attention + bottleneck over precomputed endpoint features; split out so
    // the throughput harness can time the backbone and fusion separately.
    Tensor<S> fuseBev(const std::vector<CameraInput>& cams,
                      const std::vector<std::pair<Tensor<S>, Tensor<S>>>& feats) {
        if (cams.size() != feats.size()) throw ConfigError("fuseBev: camera/feature count mismatch");
        int n = cfg.bev.cells * cfg.bev.cells;
        int d = cfg.bevChannels();
        Tensor<S> q = p("map_embed");
        for (int l = 0; l < 2; ++l) {
            std::vector<Tensor<S>> keys, values;
            std::vector<S> mask_row;
            for (size_t ci = 0; ci < cams.size(); ++ci) {
                const ProjectionEncoding& enc = (l == 0) ? cams[ci].enc->ep2 : cams[ci].enc->ep1;
                Tensor<S> feat = (l == 0) ? feats[ci].second : feats[ci].first;
                if (feat.dim(1) != enc.rows || feat.dim(2) != enc.cols)
                    throw ConfigError("projection encoding shape does not match endpoint " +
                                      shapeStr(feat.shape()));
                int cells = enc.rows * enc.cols;
                // [C,h,w] -> [cells, C]
                Tensor<S> cells_feat =
                    permute(reshape(feat, {feat.dim(0), cells}), {1, 0});
                std::string base = "level" + std::to_string(l) + ".";
                // positional embedding from the unit rays
                std::vector<S> ray_data(static_cast<size_t>(cells) * 3);
                for (int i = 0; i < cells; ++i) {
                    ray_data[i * 3 + 0] = static_cast<S>(enc.rays[i].x);
                    ray_data[i * 3 + 1] = static_cast<S>(enc.rays[i].y);
                    ray_data[i * 3 + 2] = static_cast<S>(enc.rays[i].z);
                }
                Tensor<S> rays = Tensor<S>::fromData({cells, 3}, std::move(ray_data));
                Tensor<S> pos = gelu(add(matmul(rays, p(base + "ray_mlp.w1")), p(base + "ray_mlp.b1")));
                pos = add(matmul(pos, p(base + "ray_mlp.w2")), p(base + "ray_mlp.b2"));
                pos = add(pos, embeddingLookup(p(base + "cam_embed"),
                                               std::vector<int>(cells, enc.camera_index)));
                keys.push_back(add(pos, add(matmul(cells_feat, p(base + "key_proj.w")),
                                            p(base + "key_proj.b"))));
                values.push_back(add(matmul(cells_feat, p(base + "val_proj.w")),
                                     p(base + "val_proj.b")));
                for (int i = 0; i < cells; ++i)
                    mask_row.push_back(enc.valid[i] ? S(0) : S(-1e30));
            }
            Tensor<S> key_all = concat(keys, 0);    // [total, d]
            Tensor<S> val_all = concat(values, 0);  // [total, d]
            int total = key_all.dim(0);
            Tensor<S> mask = Tensor<S>::fromData({1, total}, std::move(mask_row));

            std::string base = "level" + std::to_string(l) + ".";
            Tensor<S> qn = layerNorm(q, p(base + "ln_q.gain"), p(base + "ln_q.bias"));
            Tensor<S> qp = add(matmul(qn, p(base + "q_proj.w")), p(base + "q_proj.b"));

            int dh = cfg.head_channels;
            S scl = S(1.0 / std::sqrt(static_cast<double>(dh)));
            std::vector<Tensor<S>> head_outs;
            for (int h = 0; h < cfg.attn_heads; ++h) {
                Tensor<S> qh = slice(qp, 1, h * dh, dh);
                Tensor<S> kh = slice(key_all, 1, h * dh, dh);
                Tensor<S> vh = slice(val_all, 1, h * dh, dh);
                Tensor<S> logits = add(scale(matmul(qh, transpose2d(kh)), scl), mask);
                head_outs.push_back(matmul(softmaxLastAxis(logits), vh));
            }
            Tensor<S> attn = concat(head_outs, 1);  // [n, d]
            Tensor<S> out = add(matmul(attn, p(base + "out_proj.w")), p(base + "out_proj.b"));
            q = layerNorm(add(q, out), p(base + "ln_out.gain"), p(base + "ln_out.bias"));
        }

        // [n, d] -> [d, cells, cells], then two residual conv blocks.
        Tensor<S> bev = permute(reshape(q, {cfg.bev.cells, cfg.bev.cells, d}), {2, 0, 1});
        for (int b = 1; b <= 2; ++b) {
            std::string base = "bottleneck.block" + std::to_string(b);
            Tensor<S> y = relu(conv2d(bev, p(base + ".conv1.w"), p(base + ".conv1.b"), 1, 1));
            y = conv2d(y, p(base + ".conv2.w"), p(base + ".conv2.b"), 1, 1);
            bev = relu(add(bev, y));
        }
        return bev;
    }

    // Segmentation + center-point logits [4, 8*cells, 8*cells]
    // (channels: parking seg, vehicle seg, parking centers, vehicle centers).
    Tensor<S> segLogits(const Tensor<S>& bev) {
        Tensor<S> x = relu(conv2d(bev, p("seg.reduce.w"), p("seg.reduce.b")));
        for (int u = 1; u <= 3; ++u) {
            std::string base = "seg.up" + std::to_string(u) + ".conv";
            x = relu(conv2d(bilinearUpsample2x(x), p(base + ".w"), p(base + ".b"), 1, 1));
        }
        return conv2d(x, p("seg.final.w"), p("seg.final.b"));
    }

    // Detection grid logits [15, cells, cells]: 8 corner offsets, objectness,
    // 2 class logits, 4 corner-visibility logits.
    Tensor<S> detLogits(const Tensor<S>& bev) {
        Tensor<S> x = relu(conv2d(bev, p("det.reduce.w"), p("det.reduce.b")));
        for (int b = 1; b <= 3; ++b) {
            std::string base = "det.block" + std::to_string(b);
            Tensor<S> y = relu(conv2d(x, p(base + ".conv1.w"), p(base + ".conv1.b"), 1, 1));
            y = conv2d(y, p(base + ".conv2.w"), p(base + ".conv2.b"), 1, 1);
            x = relu(add(x, y));
        }
        return conv2d(x, p("det.final.w"), p("det.final.b"));
    }
};

}  // namespace parkbev
