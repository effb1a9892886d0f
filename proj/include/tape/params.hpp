#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "tape/errors.hpp"
#include "tape/rng.hpp"
#include "tape/tensor.hpp"

namespace tape {

// Ordered collection of named trainable tensors. Insertion order is the
// canonical order for optimizer state and serialization.
class ParameterStore {
public:
    Tensor& add(const std::string& name, Tensor t) {
        if (has(name)) throw usage_error("ParameterStore: duplicate name " + name);
        t.set_requires_grad(true);
        items_.emplace_back(name, std::move(t));
        return items_.back().second;
    }

    bool has(const std::string& name) const {
        for (const auto& [n, t] : items_)
            if (n == name) return true;
        return false;
    }

    Tensor& get(const std::string& name) {
        for (auto& [n, t] : items_)
            if (n == name) return t;
        throw usage_error("ParameterStore: unknown parameter " + name);
    }
    const Tensor& get(const std::string& name) const {
        return const_cast<ParameterStore*>(this)->get(name);
    }

    std::vector<std::pair<std::string, Tensor>>& items() { return items_; }
    const std::vector<std::pair<std::string, Tensor>>& items() const { return items_; }
    std::size_t size() const { return items_.size(); }

    void zero_grad() {
        for (auto& [n, t] : items_) t.zero_grad();
    }

    // Deep copy; the copy owns fresh tensors.
    ParameterStore clone() const {
        ParameterStore out;
        for (const auto& [n, t] : items_) out.add(n, Tensor(t.shape(), t.data()));
        return out;
    }

private:
    std::vector<std::pair<std::string, Tensor>> items_;
};

struct AdamState {
    double lr = 2e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    long long t = 0;
    std::vector<std::vector<double>> m, v;  // aligned with store order

    static AdamState for_store(const ParameterStore& store, double lr = 2e-4) {
        AdamState s;
        s.lr = lr;
        for (const auto& [n, t] : store.items()) {
            s.m.emplace_back(t.numel(), 0.0);
            s.v.emplace_back(t.numel(), 0.0);
        }
        return s;
    }
};

// One bias-corrected Adam update over all parameters in the store.
// Grads must have been populated by backward(); they are zeroed afterward.
inline void adam_step(ParameterStore& store, AdamState& state, double lr_override = -1.0) {
    if (state.m.size() != store.size() || state.v.size() != store.size())
        throw usage_error("adam_step: state does not match store");
    double lr = lr_override > 0.0 ? lr_override : state.lr;
    state.t += 1;
    double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
    double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
    for (std::size_t i = 0; i < store.size(); ++i) {
        Tensor& p = store.items()[i].second;
        if (!p.has_grad())
            throw usage_error("adam_step: missing grad for parameter " + store.items()[i].first);
        const auto& g = p.grad();
        auto& m = state.m[i];
        auto& v = state.v[i];
        auto& w = p.data();
        for (std::size_t j = 0; j < w.size(); ++j) {
            m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * g[j];
            v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * g[j] * g[j];
            double mh = m[j] / bc1;
            double vh = v[j] / bc2;
            w[j] -= lr * mh / (std::sqrt(vh) + state.eps);
        }
    }
    store.zero_grad();
}

// Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) weight init.
inline Tensor init_uniform(std::vector<int> shape, int fan_in, Rng& rng) {
    double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::size_t n = detail::shape_numel(shape);
    std::vector<double> data(n);
    for (auto& x : data) x = rng.uniform(-bound, bound);
    return Tensor(std::move(shape), std::move(data));
}

inline Tensor init_normal(std::vector<int> shape, double stddev, Rng& rng) {
    std::size_t n = detail::shape_numel(shape);
    std::vector<double> data(n);
    for (auto& x : data) x = rng.normal(0.0, stddev);
    return Tensor(std::move(shape), std::move(data));
}

}  // namespace tape
