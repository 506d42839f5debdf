// SPDX-License-Identifier: Apache-2.0
#include "akt/optim.hpp"

#include <algorithm>
#include <cmath>

namespace akt::num {

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed) {
    std::uint64_t h = seed;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t base, std::string_view name) {
    return splitmix64(base ^ fnv1a64(name));
}

double glorot_bound(std::size_t n_in, std::size_t n_out) {
    return std::sqrt(6.0 / static_cast<double>(n_in + n_out));
}

Tensor glorot_uniform(std::size_t n_in, std::size_t n_out, std::uint64_t seed) {
    if (n_in == 0 || n_out == 0) {
        throw ShapeError("glorot_uniform: dimensions must be >= 1, got n_in=" + std::to_string(n_in) +
                         " n_out=" + std::to_string(n_out));
    }
    const double bound = glorot_bound(n_in, n_out);
    std::mt19937_64 rng(seed);
    Tensor t(n_out, n_in);
    for (double& v : t.values()) v = (2.0 * uniform01(rng) - 1.0) * bound;
    return t;
}

bool AdamState::all_finite() const {
    for (const auto& [_, t] : m)
        if (!t.all_finite()) return false;
    for (const auto& [_, t] : v)
        if (!t.all_finite()) return false;
    return true;
}

void adam_step(std::span<Parameter* const> params, const GradientMap& grads, AdamState& state, double lr) {
    if (!(lr > 0.0)) throw std::invalid_argument("adam_step: learning rate must be > 0");
    for (const Parameter* p : params) {
        const Tensor* g = grads.find(p);
        if (!g) continue;
        if (!g->same_shape(p->value)) {
            throw ShapeError("adam_step: gradient " + shape_str(*g) + " does not match parameter '" + p->name +
                             "' " + shape_str(p->value));
        }
        if (!g->all_finite()) throw NumericError("adam_step: non-finite gradient for '" + p->name + "'");
    }
    state.step += 1;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    for (Parameter* p : params) {
        auto [mit, _m] = state.m.try_emplace(p->name, p->value.rows(), p->value.cols());
        auto [vit, _v] = state.v.try_emplace(p->name, p->value.rows(), p->value.cols());
        Tensor& m = mit->second;
        Tensor& v = vit->second;
        if (!m.same_shape(p->value)) {
            m = Tensor(p->value.rows(), p->value.cols());
            v = Tensor(p->value.rows(), p->value.cols());
        }
        const Tensor* g = grads.find(p);
        for (std::size_t i = 0; i < p->value.size(); ++i) {
            const double gi = g ? (*g)[i] : 0.0;
            m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * gi;
            v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * gi * gi;
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            p->value[i] -= lr * mhat / (std::sqrt(vhat) + state.eps);
        }
    }
}

double eval_loss(const LossBuilder& build) {
    Graph g;
    const double v = build(g).value().item();
    if (!std::isfinite(v)) throw NumericError("loss is not finite");
    return v;
}

GradientMap analytic_gradients(const LossBuilder& build) {
    Graph g;
    Var loss = build(g);
    if (!std::isfinite(loss.value().item())) throw NumericError("loss is not finite");
    return g.gradients(loss);
}

std::vector<Tensor> numeric_gradients(const LossBuilder& build, std::span<Parameter* const> params, double eps) {
    if (!(eps > 0.0)) throw std::invalid_argument("numeric_gradients: eps must be > 0");
    std::vector<Tensor> out;
    out.reserve(params.size());
    for (Parameter* p : params) {
        Tensor g(p->value.rows(), p->value.cols());
        for (std::size_t i = 0; i < p->value.size(); ++i) {
            const double orig = p->value[i];
            auto at = [&](double offset) {
                p->value[i] = orig + offset;
                return eval_loss(build);
            };
            const double f2p = at(2 * eps), f1p = at(eps), f1m = at(-eps), f2m = at(-2 * eps);
            p->value[i] = orig;
            // Differences first so an unused parameter gives exactly zero.
            g[i] = (8.0 * (f1p - f1m) - (f2p - f2m)) / (12.0 * eps);
        }
        out.push_back(std::move(g));
    }
    return out;
}

double max_relative_error(std::span<const Tensor> analytic, std::span<const Tensor> numeric) {
    if (analytic.size() != numeric.size()) throw ShapeError("max_relative_error: parameter count mismatch");
    double worst = 0.0;
    for (std::size_t k = 0; k < analytic.size(); ++k) {
        const Tensor& a = analytic[k];
        const Tensor& n = numeric[k];
        if (!a.same_shape(n)) throw ShapeError("max_relative_error: " + shape_str(a) + " vs " + shape_str(n));
        for (std::size_t i = 0; i < a.size(); ++i) {
            const double denom = std::max({std::abs(a[i]), std::abs(n[i]), 1e-8});
            worst = std::max(worst, std::abs(a[i] - n[i]) / denom);
        }
    }
    return worst;
}

double finite_diff_check(const LossBuilder& build, std::span<Parameter* const> params, double eps) {
    const GradientMap grads = analytic_gradients(build);
    std::vector<Tensor> analytic;
    analytic.reserve(params.size());
    for (const Parameter* p : params) analytic.push_back(grads.get(p));
    const std::vector<Tensor> numeric = numeric_gradients(build, params, eps);
    return max_relative_error(analytic, numeric);
}

}  // namespace akt::num
