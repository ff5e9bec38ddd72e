#include <cstdlib>
#include <fstream>
#include <random>

#include "doctest.h"
#include "parkbev/checkpoint.hpp"
#include "parkbev/ops.hpp"
#include "parkbev/optim.hpp"
#include "parkbev/tensor.hpp"

using namespace parkbev;

namespace {

using T = Tensor<double>;

T randTensor(Shape shape, Rng& rng, double scl = 1.0, bool rg = true) {
    T t(shape, rg);
    std::normal_distribution<double> d(0.0, scl);
    for (auto& x : t.data()) x = d(rng);
    return t;
}

// Central finite differences against the analytic gradient for every element
// of every leaf. build() must construct the scalar loss from current leaf
// values.
template <class F>
double maxGradRelError(std::vector<T> leaves, F build, double eps = 1e-5) {
    T loss = build();
    for (auto& l : leaves) l.zeroGrad();
    loss.backward();
    std::vector<std::vector<double>> analytic;
    for (auto& l : leaves) analytic.push_back(l.grad());

    double worst = 0.0;
    for (size_t li = 0; li < leaves.size(); ++li) {
        auto& data = leaves[li].data();
        for (size_t i = 0; i < data.size(); ++i) {
            double keep = data[i];
            data[i] = keep + eps;
            double hi = build().item();
            data[i] = keep - eps;
            double lo = build().item();
            data[i] = keep;
            double fd = (hi - lo) / (2 * eps);
            double denom = std::max({std::abs(fd), std::abs(analytic[li][i]), 1e-4});
            worst = std::max(worst, std::abs(fd - analytic[li][i]) / denom);
        }
    }
    return worst;
}

}  // namespace

TEST_CASE("softmax of a constant vector is uniform") {
    auto t = T::full({5}, 3.2);
    auto s = softmaxLastAxis(t);
    for (double v : s.data()) CHECK(v == doctest::Approx(0.2).epsilon(1e-12));
}

TEST_CASE("d/dx sigmoid(0) = 0.25") {
    T x = T::fromData({1}, {0.0}, true);
    auto y = sumAll(sigmoid(x));
    y.backward();
    CHECK(x.grad()[0] == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("shape mismatch reports both shapes") {
    T a({2, 3});
    T b({4, 5});
    CHECK_THROWS_WITH_AS(add(a, b), doctest::Contains("[2,3]"), ConfigError);
    CHECK_THROWS_WITH_AS(matmul(a, b), doctest::Contains("[4,5]"), ConfigError);
}

TEST_CASE("gradient check: elementwise and broadcast ops") {
    Rng rng(5);
    auto a = randTensor({3, 4}, rng);
    auto b = randTensor({4}, rng);  // broadcast over rows
    CHECK(maxGradRelError({a, b}, [&] {
              return meanAll(mul(sigmoid(add(a, b)), sub(a, gelu(b))));
          }) < 1e-6);
}

TEST_CASE("gradient check: matmul / transpose / concat / slice") {
    Rng rng(6);
    auto a = randTensor({3, 4}, rng);
    auto b = randTensor({4, 5}, rng);
    auto c = randTensor({3, 5}, rng);
    CHECK(maxGradRelError({a, b, c}, [&] {
              auto prod = matmul(a, b);
              auto cat = concat<double>({prod, c}, 1);
              auto s = slice(cat, 1, 2, 6);
              return meanAll(mul(s, s));
          }) < 1e-6);
}

TEST_CASE("gradient check: softmax, layer norm, permute") {
    Rng rng(7);
    auto x = randTensor({4, 6}, rng);
    auto gain = randTensor({4}, rng, 0.5);
    auto bias = randTensor({4}, rng, 0.5);
    CHECK(maxGradRelError({x, gain, bias}, [&] {
              auto p = permute(x, {1, 0});  // [6,4]
              auto n = layerNorm(p, gain, bias);
              auto sm = softmaxLastAxis(n);
              return sumAll(mul(sm, p));
          }) < 1e-6);
}

TEST_CASE("gradient check: conv2d with stride and padding") {
    Rng rng(8);
    auto img = randTensor({2, 5, 6}, rng);
    auto w = randTensor({3, 2, 3, 3}, rng, 0.5);
    auto b = randTensor({3}, rng, 0.5);
    CHECK(maxGradRelError({img, w, b}, [&] {
              auto y = conv2d(img, w, b, 2, 1);
              return meanAll(mul(y, y));
          }) < 1e-6);
}

TEST_CASE("gradient check: pooling, upsampling, relu, abs") {
    Rng rng(9);
    auto img = randTensor({2, 5, 7}, rng);  // odd extents exercise floor pooling
    CHECK(maxGradRelError({img}, [&] {
              auto p = avgPool2x(img);
              auto u = bilinearUpsample2x(p);
              return meanAll(absOp(relu(u)));
          }) < 1e-6);
}

TEST_CASE("gradient check: embedding lookup and grid resample") {
    Rng rng(10);
    auto table = randTensor({5, 3}, rng);
    auto grid = randTensor({2, 6, 6}, rng);
    std::array<double, 6> affine{0.8, -0.2, 1.0, 0.2, 0.8, -0.5};
    CHECK(maxGradRelError({table, grid}, [&] {
              auto e = embeddingLookup(table, {0, 3, 3, 1});
              auto g = gridResample(grid, affine);
              return add(meanAll(mul(e, e)), meanAll(mul(g, g)));
          }) < 1e-6);
}

TEST_CASE("gradient check: loss primitives") {
    Rng rng(11);
    auto logits = randTensor({3, 4}, rng, 2.0);
    std::vector<double> targets(12);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (auto& t : targets) t = u(rng);
    std::vector<double> mask(12, 1.0);
    mask[3] = 0.0;
    CHECK(maxGradRelError({logits}, [&] {
              auto bce = bceWithLogits(logits, targets, &mask);
              auto focal = focalBceWithLogits(logits, targets, 2.0, 0.25);
              return add(meanAll(bce), meanAll(focal));
          }) < 1e-6);
}

TEST_CASE("focal loss with gamma=0, alpha=0.5 halves plain BCE") {
    Rng rng(12);
    auto logits = randTensor({20}, rng, 2.0);
    std::vector<double> targets(20);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (auto& t : targets) t = u(rng) < 0.5 ? 0.0 : 1.0;
    auto bce = bceWithLogits(logits, targets);
    auto focal = focalBceWithLogits(logits, targets, 0.0, 0.5);
    for (size_t i = 0; i < 20; ++i)
        CHECK(focal.data()[i] == doctest::Approx(0.5 * bce.data()[i]).epsilon(1e-12));
}

TEST_CASE("focal loss on a saturated correct prediction is near zero") {
    auto logits = T::fromData({1}, {50.0});
    auto loss = focalBceWithLogits(logits, std::vector<double>{1.0}, 2.0, 0.25);
    CHECK(loss.data()[0] < 1e-9);
}

TEST_CASE("focal loss matches the direct formula") {
    Rng rng(13);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int i = 0; i < 200; ++i) {
        double x = 8.0 * (u(rng) - 0.5), t = u(rng), gamma = 3.0 * u(rng), alpha = u(rng);
        auto loss = focalBceWithLogits(T::fromData({1}, {x}), std::vector<double>{t}, gamma, alpha);
        double p = 1.0 / (1.0 + std::exp(-x));
        double ce = -(t * std::log(p) + (1 - t) * std::log(1 - p));
        double pt = p * t + (1 - p) * (1 - t);
        double at = alpha * t + (1 - alpha) * (1 - t);
        double expect = at * std::pow(1 - pt, gamma) * ce;
        CHECK(loss.data()[0] == doctest::Approx(expect).epsilon(1e-9));
    }
}

TEST_CASE("random 4-layer graph passes the finite-difference oracle") {
    Rng rng(14);
    auto x = randTensor({6, 5}, rng);
    auto w1 = randTensor({5, 8}, rng, 0.5);
    auto w2 = randTensor({8, 8}, rng, 0.5);
    auto w3 = randTensor({8, 4}, rng, 0.5);
    auto gain = T::full({4}, 1.0);
    gain.node()->requires_grad = true;
    auto bias = randTensor({4}, rng, 0.1);
    CHECK(maxGradRelError({x, w1, w2, w3, gain, bias}, [&] {
              auto h1 = gelu(matmul(x, w1));
              auto h2 = relu(matmul(h1, w2));
              auto h3 = layerNorm(matmul(h2, w3), gain, bias);
              return meanAll(mul(softmaxLastAxis(h3), h3));
          }) < 1e-6);
}

TEST_CASE("backward of a sum of losses equals the sum of backwards") {
    Rng rng(15);
    auto x = randTensor({4, 4}, rng);
    auto lossA = [&] { return meanAll(mul(x, x)); };
    auto lossB = [&] { return sumAll(sigmoid(x)); };

    x.zeroGrad();
    add(lossA(), lossB()).backward();
    auto combined = x.grad();
    x.zeroGrad();
    lossA().backward();
    auto ga = x.grad();
    x.zeroGrad();
    lossB().backward();
    for (size_t i = 0; i < combined.size(); ++i)
        CHECK(combined[i] == doctest::Approx(ga[i] + x.grad()[i]).epsilon(1e-12));
}

TEST_CASE("dropout with train=false is the identity; train mask scales") {
    Rng rng(16);
    auto x = randTensor({100}, rng);
    auto y = dropout(x, 0.4, false, rng);
    for (size_t i = 0; i < x.size(); ++i) CHECK(y.data()[i] == x.data()[i]);
    auto z = dropout(x, 0.4, true, rng);
    for (size_t i = 0; i < x.size(); ++i) {
        bool zeroed = z.data()[i] == 0.0;
        bool scaled = std::abs(z.data()[i] - x.data()[i] / 0.6) < 1e-12;
        CHECK((zeroed || scaled));
    }
}

TEST_CASE("one-cycle learning rate endpoints and midpoint") {
    CHECK(oneCycleLr(0, 1000, 1.5e-4, 3e-4, 1.5e-5) == doctest::Approx(1.5e-4));
    CHECK(oneCycleLr(500, 1000, 1.5e-4, 3e-4, 1.5e-5) == doctest::Approx(3e-4));
    CHECK(oneCycleLr(1000, 1000, 1.5e-4, 3e-4, 1.5e-5) == doctest::Approx(1.5e-5));
    CHECK(oneCycleLr(250, 1000, 1.5e-4, 3e-4, 1.5e-5) == doctest::Approx(2.25e-4));
    CHECK_THROWS_AS(oneCycleLr(1001, 1000, 1, 1, 1), ConfigError);
}

TEST_CASE("AdamW: zero gradient leaves parameters unchanged (no decay)") {
    ParamSet<double> params;
    Rng rng(17);
    auto w = params.addRandn("w", {4}, 1.0, rng);
    auto before = w.data();
    AdamW<double> opt({0.9, 0.999, 1e-8, 0.0});
    params.zeroGrad();
    opt.step(params, 1e-3);
    for (size_t i = 0; i < 4; ++i) CHECK(w.data()[i] == before[i]);
}

TEST_CASE("AdamW: decoupled decay shrinks by (1 - lr*wd) on zero gradient") {
    ParamSet<double> params;
    Rng rng(18);
    auto w = params.addRandn("w", {4}, 1.0, rng);
    auto before = w.data();
    AdamW<double> opt({0.9, 0.999, 1e-8, 0.1});
    params.zeroGrad();
    opt.step(params, 0.5);
    for (size_t i = 0; i < 4; ++i)
        CHECK(w.data()[i] == doctest::Approx(before[i] * (1.0 - 0.5 * 0.1)).epsilon(1e-12));
}

TEST_CASE("AdamW converges on a scalar quadratic") {
    ParamSet<double> params;
    auto w = params.add("w", {1});
    w.data()[0] = 5.0;
    AdamW<double> opt({0.9, 0.999, 1e-8, 0.0});
    const double target = -1.3;
    for (int i = 0; i < 5000; ++i) {
        params.zeroGrad();
        auto diff = addConst(w, -target);
        auto loss = sumAll(mul(diff, diff));
        loss.backward();
        opt.step(params, 0.01);
        if (std::abs(w.data()[0] - target) < 1e-7) break;
    }
    CHECK(std::abs(w.data()[0] - target) < 1e-6);
}

TEST_CASE("AdamW surfaces NaN gradients with the parameter name") {
    ParamSet<double> params;
    auto w = params.add("encoder.w", {2});
    w.grad()[0] = std::nan("");
    AdamW<double> opt;
    CHECK_THROWS_WITH_AS(opt.step(params, 1e-3), doctest::Contains("encoder.w"), NumericError);
}

TEST_CASE("duplicate parameter names are rejected") {
    ParamSet<double> params;
    params.add("w", {2});
    CHECK_THROWS_AS(params.add("w", {3}), ConfigError);
}

TEST_CASE("checkpoint round trip and mismatch reporting") {
    Rng rng(19);
    ParamSet<double> params;
    params.addRandn("b.bias", {3}, 1.0, rng);
    params.addRandn("a.weight", {2, 3}, 1.0, rng);
    saveCheckpoint(params, "test_ckpt.bin");

    ParamSet<double> loaded;
    loaded.addConst("b.bias", {3}, 0.0);
    loaded.addConst("a.weight", {2, 3}, 0.0);
    loadCheckpoint(loaded, "test_ckpt.bin");
    for (const auto& p : params.all()) {
        auto* q = loaded.find(p.name);
        REQUIRE(q != nullptr);
        CHECK(q->tensor.data() == p.tensor.data());
    }

    ParamSet<double> wrong;
    wrong.addConst("b.bias", {4}, 0.0);
    wrong.addConst("a.weight", {2, 3}, 0.0);
    CHECK_THROWS_WITH_AS(loadCheckpoint(wrong, "test_ckpt.bin"), doctest::Contains("b.bias"),
                         ConfigError);

    ParamSet<float> wrong_dtype;
    wrong_dtype.addConst("b.bias", {3}, 0.0f);
    CHECK_THROWS_AS(loadCheckpoint(wrong_dtype, "test_ckpt.bin"), ConfigError);
}

TEST_CASE("repeated graph construction does not leak the graph") {
    auto rss_kb = []() -> long {
        std::ifstream f("/proc/self/status");
        std::string line;
        while (std::getline(f, line))
            if (line.rfind("VmRSS:", 0) == 0) return std::atol(line.c_str() + 6);
        return -1;
    };
    Rng rng(3);
    ParamSet<float> params;
    Tensor<float> w = params.addRandn("w", {32, 32, 3, 3}, 0.05, rng);
    Tensor<float> b = params.addConst("b", {32}, 0.0f);
    auto round = [&]() {
        Tensor<float> x = Tensor<float>::full({32, 40, 40}, 0.5f);
        Tensor<float> y = relu(conv2d(x, w, b, 1, 1));
        Tensor<float> loss = meanAll(mul(y, y));
        loss.backward();
        params.zeroGrad();
    };
    for (int i = 0; i < 10; ++i) round();  // warm up the allocator
    long before = rss_kb();
    REQUIRE(before > 0);
    for (int i = 0; i < 60; ++i) round();
    long grown = rss_kb() - before;
    // each round allocates ~25 MB of graph buffers; a per-round leak would
    // grow the footprint by hundreds of MB here, while allocator arena
    // caching plateaus after warm-up
    CHECK(grown < 50 * 1024);
}
