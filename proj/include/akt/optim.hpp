// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "akt/graph.hpp"

namespace akt::num {

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::uint64_t splitmix64(std::uint64_t x);
// Stable per-name seed so initialisation does not depend on creation order.
std::uint64_t derive_seed(std::uint64_t base, std::string_view name);

// Uniform double in [0, 1) built from the top 53 bits; identical on every platform.
inline double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

// Weight of shape n_out x n_in with entries uniform on +-sqrt(6 / (n_in + n_out)).
Tensor glorot_uniform(std::size_t n_in, std::size_t n_out, std::uint64_t seed);
double glorot_bound(std::size_t n_in, std::size_t n_out);

struct AdamState {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::uint64_t step = 0;
    std::map<std::string, Tensor> m;
    std::map<std::string, Tensor> v;

    bool all_finite() const;
};

// One bias-corrected Adam update. Parameters absent from `grads` see a zero
// gradient. Throws NumericError (before touching anything) on a non-finite
// gradient.
void adam_step(std::span<Parameter* const> params, const GradientMap& grads, AdamState& state, double lr);

using LossBuilder = std::function<Var(Graph&)>;

double eval_loss(const LossBuilder& build);
GradientMap analytic_gradients(const LossBuilder& build);

// Central-difference estimate of d loss / d p for every entry of every
// parameter, using the fourth-order stencil
// (-f(x+2h) + 8 f(x+h) - 8 f(x-h) + f(x-2h)) / 12h.
std::vector<Tensor> numeric_gradients(const LossBuilder& build, std::span<Parameter* const> params, double eps);

// max over entries of |a - n| / max(|a|, |n|, 1e-8).
double max_relative_error(std::span<const Tensor> analytic, std::span<const Tensor> numeric);

double finite_diff_check(const LossBuilder& build, std::span<Parameter* const> params, double eps);

}  // namespace akt::num
