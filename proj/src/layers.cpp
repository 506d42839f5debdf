// SPDX-License-Identifier: Apache-2.0
#include "akt/layers.hpp"

#include "akt/optim.hpp"

namespace akt::layers {

LstmParams LstmParams::init(const std::string& prefix, std::size_t input, std::size_t hidden, std::uint64_t seed) {
    LstmParams p;
    p.w_x = {prefix + ".w_x", num::glorot_uniform(input, 4 * hidden, num::derive_seed(seed, prefix + ".w_x"))};
    p.w_h = {prefix + ".w_h", num::glorot_uniform(hidden, 4 * hidden, num::derive_seed(seed, prefix + ".w_h"))};
    p.b = {prefix + ".b", num::Tensor(1, 4 * hidden)};
    return p;
}

LstmState lstm_cell(num::Graph& g, num::Var x_proj, num::Var w_h, num::Var b, const LstmState& prev) {
    const std::size_t h = g.value(w_h).cols();
    num::Var z = g.add_row(g.add(x_proj, g.matmul_nt(prev.h, w_h)), b);
    num::Var i = g.sigmoid(g.slice_cols(z, 0, h));
    num::Var f = g.sigmoid(g.slice_cols(z, h, 2 * h));
    num::Var o = g.sigmoid(g.slice_cols(z, 2 * h, 3 * h));
    num::Var cand = g.tanh(g.slice_cols(z, 3 * h, 4 * h));
    num::Var c = g.add(g.mul(f, prev.c), g.mul(i, cand));
    return {g.mul(o, g.tanh(c)), c};
}

Dense Dense::init(const std::string& prefix, std::size_t input, std::size_t output, std::uint64_t seed) {
    return {{prefix + ".w", num::glorot_uniform(input, output, num::derive_seed(seed, prefix + ".w"))},
            {prefix + ".b", num::Tensor(1, output)}};
}

num::Var dense(num::Graph& g, num::Var x, num::Parameter& w, num::Parameter& b) {
    return g.add_row(g.matmul_nt(x, g.param(w)), g.param(b));
}

}  // namespace akt::layers
