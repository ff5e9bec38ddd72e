#pragma once

#include <cstdint>
#include <istream>
#include <map>
#include <ostream>
#include <random>

#include "parkbev/ops.hpp"
#include "parkbev/tensor.hpp"

namespace parkbev {

template <class S>
struct Parameter {
    std::string name;
    Tensor<S> tensor;
    bool trainable = true;
};

// Named, uniquely registered model parameters.
template <class S>
class ParamSet {
  public:
    Tensor<S> add(const std::string& name, Shape shape, bool trainable = true) {
        if (index_.count(name)) throw ConfigError("duplicate parameter name: " + name);
        Tensor<S> t(std::move(shape), trainable);
        index_[name] = params_.size();
        params_.push_back({name, t, trainable});
        return t;
    }
    Tensor<S> addRandn(const std::string& name, Shape shape, double stddev, Rng& rng,
                       bool trainable = true) {
        Tensor<S> t = add(name, std::move(shape), trainable);
        std::normal_distribution<double> dist(0.0, stddev);
        for (auto& x : t.data()) x = static_cast<S>(dist(rng));
        return t;
    }
    // Kaiming-style init for a linear/conv weight with the given fan-in.
    Tensor<S> addKaiming(const std::string& name, Shape shape, int fan_in, Rng& rng) {
        return addRandn(name, std::move(shape), std::sqrt(2.0 / fan_in), rng);
    }
    Tensor<S> addConst(const std::string& name, Shape shape, S value, bool trainable = true) {
        Tensor<S> t = add(name, std::move(shape), trainable);
        std::fill(t.data().begin(), t.data().end(), value);
        return t;
    }

    std::vector<Parameter<S>>& all() { return params_; }
    const std::vector<Parameter<S>>& all() const { return params_; }
    Parameter<S>* find(const std::string& name) {
        auto it = index_.find(name);
        return it == index_.end() ? nullptr : &params_[it->second];
    }
    void zeroGrad() {
        for (auto& p : params_) p.tensor.zeroGrad();
    }
    size_t totalElements() const {
        size_t n = 0;
        for (const auto& p : params_) n += p.tensor.size();
        return n;
    }

  private:
    std::vector<Parameter<S>> params_;
    std::map<std::string, size_t> index_;
};

// Piecewise-linear one-cycle schedule: start -> max over the first half of
// training, max -> end over the second half.
inline double oneCycleLr(long step, long total_steps, double start, double max, double end) {
    if (step < 0 || step > total_steps) throw ConfigError("oneCycleLr: step outside [0, total]");
    if (total_steps == 0) return start;
    double half = total_steps / 2.0;
    if (step <= half) return start + (max - start) * (step / half);
    return max + (end - max) * ((step - half) / half);
}

struct AdamWConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
};

// Decoupled weight decay Adam. One state slot per parameter, keyed by the
// registration order.
template <class S>
class AdamW {
  public:
    explicit AdamW(AdamWConfig cfg = {}) : cfg_(cfg) {}

    void step(ParamSet<S>& params, double lr) {
        auto& ps = params.all();
        if (m_.empty()) {
            m_.resize(ps.size());
            v_.resize(ps.size());
            for (size_t i = 0; i < ps.size(); ++i) {
                m_[i].assign(ps[i].tensor.size(), 0.0);
                v_[i].assign(ps[i].tensor.size(), 0.0);
            }
        }
        if (m_.size() != ps.size()) throw ConfigError("AdamW: parameter set changed size");
        ++t_;
        double bc1 = 1.0 - std::pow(cfg_.beta1, t_);
        double bc2 = 1.0 - std::pow(cfg_.beta2, t_);
        for (size_t i = 0; i < ps.size(); ++i) {
            if (!ps[i].trainable) continue;
            auto& val = ps[i].tensor.data();
            auto& grad = ps[i].tensor.grad();
            for (size_t j = 0; j < val.size(); ++j) {
                double g = static_cast<double>(grad[j]);
                if (std::isnan(g))
                    throw NumericError("NaN gradient in parameter '" + ps[i].name + "'");
                m_[i][j] = cfg_.beta1 * m_[i][j] + (1.0 - cfg_.beta1) * g;
                v_[i][j] = cfg_.beta2 * v_[i][j] + (1.0 - cfg_.beta2) * g * g;
                double mhat = m_[i][j] / bc1;
                double vhat = v_[i][j] / bc2;
                double x = static_cast<double>(val[j]);
                x -= lr * (mhat / (std::sqrt(vhat) + cfg_.eps) + cfg_.weight_decay * x);
                val[j] = static_cast<S>(x);
            }
        }
    }

    long stepCount() const { return t_; }

    // Raw little-endian dump of the moment buffers, so an interrupted run can
    // resume bit-identically.
    void saveState(std::ostream& out) const {
        out.write("PBADAM1\n", 8);
        auto put = [&](std::uint64_t v) { out.write(reinterpret_cast<const char*>(&v), 8); };
        put(static_cast<std::uint64_t>(t_));
        put(m_.size());
        for (size_t i = 0; i < m_.size(); ++i) {
            put(m_[i].size());
            out.write(reinterpret_cast<const char*>(m_[i].data()),
                      static_cast<std::streamsize>(m_[i].size() * sizeof(double)));
            out.write(reinterpret_cast<const char*>(v_[i].data()),
                      static_cast<std::streamsize>(v_[i].size() * sizeof(double)));
        }
        if (!out) throw ConfigError("failed to write optimizer state");
    }

    void loadState(std::istream& in) {
        char magic[8];
        in.read(magic, 8);
        if (!in || std::string(magic, 8) != "PBADAM1\n")
            throw ConfigError("optimizer state: bad magic");
        auto get = [&]() {
            std::uint64_t v = 0;
            in.read(reinterpret_cast<char*>(&v), 8);
            return v;
        };
        t_ = static_cast<long>(get());
        size_t slots = get();
        m_.assign(slots, {});
        v_.assign(slots, {});
        for (size_t i = 0; i < slots; ++i) {
            size_t n = get();
            m_[i].resize(n);
            v_[i].resize(n);
            in.read(reinterpret_cast<char*>(m_[i].data()),
                    static_cast<std::streamsize>(n * sizeof(double)));
            in.read(reinterpret_cast<char*>(v_[i].data()),
                    static_cast<std::streamsize>(n * sizeof(double)));
        }
        if (!in) throw ConfigError("optimizer state: truncated file");
    }

  private:
    AdamWConfig cfg_;
    long t_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

}  // namespace parkbev
