#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "minde/graph.hpp"
#include "minde/rng.hpp"
#include "minde/tensor.hpp"

namespace minde {

// Named parameter registry shared by the score networks and the baseline
// critics. A model leases its parameters into a Graph per forward pass and
// reads the gradients back out after backward().
class ParamSet {
public:
    int add(std::string name, Tensor value) {
        names_.push_back(std::move(name));
        values_.push_back(std::move(value));
        return static_cast<int>(values_.size()) - 1;
    }

    std::size_t count() const { return values_.size(); }
    const std::string& name(std::size_t i) const { return names_[i]; }
    Tensor& value(std::size_t i) { return values_[i]; }
    const Tensor& value(std::size_t i) const { return values_[i]; }

    std::size_t scalar_count() const {
        std::size_t n = 0;
        for (const Tensor& t : values_) n += t.size();
        return n;
    }

    // Lease every parameter into the graph; returns node id per parameter.
    std::vector<int> bind(Graph& g) const {
        std::vector<int> ids(values_.size());
        for (std::size_t i = 0; i < values_.size(); ++i) ids[i] = g.leaf(values_[i]);
        return ids;
    }

    std::vector<Tensor> collect_grads(const Graph& g, const std::vector<int>& ids) const {
        std::vector<Tensor> grads;
        grads.reserve(ids.size());
        for (int id : ids) grads.push_back(g.grad(id));
        return grads;
    }

private:
    std::vector<std::string> names_;
    std::vector<Tensor> values_;
};

// Fan-in scaled uniform init, U(-sqrt(6/fan_in), +sqrt(6/fan_in)).
inline Tensor he_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
    Tensor w(fan_in, fan_out);
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = rng.uniform(-limit, limit);
    return w;
}

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

class Adam {
public:
    Adam(const ParamSet& params, AdamConfig cfg = {}) : cfg_(cfg) {
        m_.reserve(params.count());
        v_.reserve(params.count());
        for (std::size_t i = 0; i < params.count(); ++i) {
            m_.emplace_back(params.value(i).rows(), params.value(i).cols());
            v_.emplace_back(params.value(i).rows(), params.value(i).cols());
        }
    }

    long step_count() const { return step_; }
    const AdamConfig& config() const { return cfg_; }
    void set_lr(double lr) { cfg_.lr = lr; }

    void step(ParamSet& params, const std::vector<Tensor>& grads) {
        if (grads.size() != m_.size()) throw std::invalid_argument("adam: gradient count mismatch");
        for (const Tensor& g : grads) g.require_finite("adam gradient");
        ++step_;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
        for (std::size_t p = 0; p < m_.size(); ++p) {
            Tensor& w = params.value(p);
            const Tensor& g = grads[p];
            if (!w.same_shape(g)) throw std::invalid_argument("adam: gradient shape mismatch");
            Tensor& m = m_[p];
            Tensor& v = v_[p];
            for (std::size_t i = 0; i < w.size(); ++i) {
                m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
                v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
                const double mhat = m[i] / bc1;
                const double vhat = v[i] / bc2;
                w[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
            }
        }
    }

private:
    AdamConfig cfg_;
    std::vector<Tensor> m_;
    std::vector<Tensor> v_;
    long step_ = 0;
};

// shadow <- m * shadow + (1 - m) * live
class EmaShadow {
public:
    EmaShadow(const ParamSet& params, double momentum) : momentum_(momentum) {
        shadow_.reserve(params.count());
        for (std::size_t i = 0; i < params.count(); ++i) shadow_.push_back(params.value(i));
    }

    double momentum() const { return momentum_; }
    const std::vector<Tensor>& shadow() const { return shadow_; }

    void update(const ParamSet& params) {
        for (std::size_t p = 0; p < shadow_.size(); ++p) {
            Tensor& s = shadow_[p];
            const Tensor& w = params.value(p);
            if (!s.same_shape(w)) throw std::invalid_argument("ema: shape mismatch");
            for (std::size_t i = 0; i < s.size(); ++i)
                s[i] = momentum_ * s[i] + (1.0 - momentum_) * w[i];
        }
    }

    void write_to(ParamSet& params) const {
        for (std::size_t p = 0; p < shadow_.size(); ++p) params.value(p) = shadow_[p];
    }

private:
    double momentum_;
    std::vector<Tensor> shadow_;
};

}  // namespace minde
