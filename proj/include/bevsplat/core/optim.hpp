// Copyright Contributors to the bevsplat Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "bevsplat/core/random.hpp"
#include "bevsplat/core/tensor.hpp"

#include <map>
#include <numbers>

namespace bevsplat {

// Parameter initializers, consumed from the store's RNG in registration order.
template <class S>
struct Init {
    enum Kind { Zeros, Const, Uniform, Normal, FanIn } kind = Zeros;
    double a = 0.0, b = 0.0;  // Const: value=a; Uniform: [a,b]; Normal: mu=a, sigma=b
    std::int64_t fan_in = 0;

    static Init zeros() { return {Zeros, 0, 0, 0}; }
    static Init constant(double v) { return {Const, v, 0, 0}; }
    static Init uniform(double lo, double hi) { return {Uniform, lo, hi, 0}; }
    static Init normal(double mu, double sigma) { return {Normal, mu, sigma, 0}; }
    // torch-style U(-1/sqrt(fan_in), 1/sqrt(fan_in))
    static Init fan_in_uniform(std::int64_t fi) { return {FanIn, 0, 0, fi}; }
};

// Named parameters (trainable) and buffers (fixed), plus AdamW moments and
// the step counter. Exclusively owned by the caller during an optimizer step.
template <class S>
class ParameterStore {
  public:
    explicit ParameterStore(std::uint64_t seed) : seed_(seed), rng_(seed) {}

    Tensor<S> param(const std::string& path, Shape shape, Init<S> init) {
        return insert(params_, path, std::move(shape), init);
    }
    Tensor<S> buffer(const std::string& path, Shape shape, Init<S> init) {
        return insert(buffers_, path, std::move(shape), init);
    }
    Tensor<S> buffer(const std::string& path, Shape shape, VecX<S> vals) {
        if (buffers_.count(path) || params_.count(path))
            throw std::runtime_error("duplicate parameter path: " + path);
        auto t = Tensor<S>::from(std::move(shape), std::move(vals));
        buffers_.emplace(path, t);
        return t;
    }

    bool has(const std::string& path) const {
        return params_.count(path) || buffers_.count(path);
    }
    Tensor<S> get(const std::string& path) const {
        if (auto it = params_.find(path); it != params_.end()) return it->second;
        if (auto it = buffers_.find(path); it != buffers_.end()) return it->second;
        throw std::runtime_error("unknown parameter path: " + path);
    }

    const std::map<std::string, Tensor<S>>& params() const { return params_; }
    const std::map<std::string, Tensor<S>>& buffers() const { return buffers_; }

    void zero_grad() {
        for (auto& [k, t] : params_) t.zero_grad();
    }

    std::int64_t num_scalars() const {
        std::int64_t n = 0;
        for (auto& [k, t] : params_) n += t.size();
        return n;
    }

    std::uint64_t seed() const { return seed_; }
    std::int64_t& step() { return step_; }
    std::int64_t step() const { return step_; }
    Rng& rng() { return rng_; }

    // moment buffers, created on first optimizer touch
    std::pair<VecX<S>&, VecX<S>&> moments(const std::string& path, std::int64_t n) {
        auto& mv = moments_[path];
        if (mv.first.size() == 0) {
            mv.first = VecX<S>::Zero(n);
            mv.second = VecX<S>::Zero(n);
        }
        return {mv.first, mv.second};
    }
    std::map<std::string, std::pair<VecX<S>, VecX<S>>>& raw_moments() { return moments_; }

  private:
    Tensor<S> insert(std::map<std::string, Tensor<S>>& dst, const std::string& path, Shape shape,
                     Init<S> init) {
        if (params_.count(path) || buffers_.count(path))
            throw std::runtime_error("duplicate parameter path: " + path);
        std::int64_t n = numel(shape);
        VecX<S> v;
        switch (init.kind) {
            case Init<S>::Zeros: v = VecX<S>::Zero(n); break;
            case Init<S>::Const: v = VecX<S>::Constant(n, static_cast<S>(init.a)); break;
            case Init<S>::Uniform: v = rng_.template uniform_vec<S>(n, init.a, init.b); break;
            case Init<S>::Normal: v = rng_.template normal_vec<S>(n, init.a, init.b); break;
            case Init<S>::FanIn: {
                double bound = 1.0 / std::sqrt(static_cast<double>(std::max<std::int64_t>(1, init.fan_in)));
                v = rng_.template uniform_vec<S>(n, -bound, bound);
                break;
            }
        }
        auto t = Tensor<S>::from(std::move(shape), std::move(v));
        if (&dst == &params_) t.set_requires_grad(true);
        dst.emplace(path, t);
        return t;
    }

    std::map<std::string, Tensor<S>> params_;
    std::map<std::string, Tensor<S>> buffers_;
    std::map<std::string, std::pair<VecX<S>, VecX<S>>> moments_;
    std::uint64_t seed_;
    std::int64_t step_ = 0;
    Rng rng_;
};

struct AdamWConfig {
    double lr = 6e-4;
    double weight_decay = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Collect gradients accumulated by backward() into an explicit map; every
// trainable parameter must have received a gradient.
template <class S>
std::map<std::string, VecX<S>> collect_grads(const ParameterStore<S>& store) {
    std::map<std::string, VecX<S>> g;
    for (auto& [path, t] : store.params()) {
        if (t.grad().size() != t.size())
            throw std::runtime_error("missing gradient for parameter: " + path);
        g.emplace(path, t.grad());
    }
    return g;
}

// One decoupled-weight-decay Adam step. The grads map must match the store's
// trainable parameters exactly; moments persist inside the store.
template <class S>
void adamw_step(ParameterStore<S>& store, const std::map<std::string, VecX<S>>& grads,
                const AdamWConfig& cfg) {
    for (auto& [path, g] : grads)
        if (!store.params().count(path))
            throw std::runtime_error("gradient for unknown parameter: " + path);
    std::int64_t t = ++store.step();
    S b1 = static_cast<S>(cfg.beta1), b2 = static_cast<S>(cfg.beta2);
    S bc1 = S(1) - static_cast<S>(std::pow(cfg.beta1, static_cast<double>(t)));
    S bc2 = S(1) - static_cast<S>(std::pow(cfg.beta2, static_cast<double>(t)));
    for (auto& [path, param] : store.params()) {
        auto it = grads.find(path);
        if (it == grads.end()) throw std::runtime_error("missing gradient for parameter: " + path);
        const VecX<S>& g = it->second;
        if (g.size() != param.size())
            throw std::runtime_error("gradient shape mismatch for parameter: " + path);
        auto [m, v] = store.moments(path, param.size());
        m = b1 * m + (S(1) - b1) * g;
        v = b2 * v + (S(1) - b2) * g.square();
        VecX<S> mhat = m / bc1;
        VecX<S> vhat = v / bc2;
        VecX<S>& w = const_cast<Tensor<S>&>(param).vals_mut();
        w -= static_cast<S>(cfg.lr) *
             (mhat / (vhat.sqrt() + static_cast<S>(cfg.eps)) + static_cast<S>(cfg.weight_decay) * w);
    }
}

// Cosine annealing from lr_max at step 0 down to lr_floor at max_steps;
// monotone nonincreasing.
inline double cosine_lr(std::int64_t step, std::int64_t max_steps, double lr_max,
                        double lr_floor = 0.0) {
    if (max_steps <= 0 || step >= max_steps) return lr_floor;
    if (step < 0) step = 0;
    double t = static_cast<double>(step) / static_cast<double>(max_steps);
    return lr_floor + (lr_max - lr_floor) * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
}

}  // namespace bevsplat
