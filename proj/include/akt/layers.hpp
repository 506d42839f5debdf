// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "akt/graph.hpp"

namespace akt::layers {

// Standard LSTM with gates stacked in (input, forget, output, candidate) order.
// w_x: 4h x in, w_h: 4h x h, b: 1 x 4h.
struct LstmParams {
    num::Parameter w_x;
    num::Parameter w_h;
    num::Parameter b;

    static LstmParams init(const std::string& prefix, std::size_t input, std::size_t hidden, std::uint64_t seed);
    std::size_t hidden() const { return w_h.value.cols(); }
    std::vector<num::Parameter*> parameters() { return {&w_x, &w_h, &b}; }
};

struct LstmState {
    num::Var h;
    num::Var c;
};

// One step given precomputed input pre-activations x_proj = x * W_x^T (B x 4h).
// w_h and b are graph handles of the recurrent weight and the bias.
LstmState lstm_cell(num::Graph& g, num::Var x_proj, num::Var w_h, num::Var b, const LstmState& prev);

// Affine layer y = x * W^T + b with W: out x in, b: 1 x out.
struct Dense {
    num::Parameter w;
    num::Parameter b;

    static Dense init(const std::string& prefix, std::size_t input, std::size_t output, std::uint64_t seed);
    std::vector<num::Parameter*> parameters() { return {&w, &b}; }
};

num::Var dense(num::Graph& g, num::Var x, num::Parameter& w, num::Parameter& b);

}  // namespace akt::layers
