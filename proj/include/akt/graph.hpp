// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "akt/tensor.hpp"

namespace akt::num {

// A named trainable tensor. Graph leaves point at parameters, so a
// Parameter must outlive every graph that references it.
struct Parameter {
    std::string name;
    Tensor value;
};

class GradientMap {
public:
    void accumulate(const Parameter* p, const Tensor& g);
    bool contains(const Parameter* p) const { return grads_.count(p) != 0; }
    // Zero tensor shaped like the parameter when it was not reached by the loss.
    Tensor get(const Parameter* p) const;
    const Tensor* find(const Parameter* p) const;
    std::size_t size() const { return grads_.size(); }

private:
    std::unordered_map<const Parameter*, Tensor> grads_;
};

class Graph;

// Handle to a node recorded on a Graph.
class Var {
public:
    Var() = default;
    std::size_t id() const { return id_; }
    bool valid() const { return graph_ != nullptr; }
    const Tensor& value() const;
    std::size_t rows() const { return value().rows(); }
    std::size_t cols() const { return value().cols(); }

private:
    friend class Graph;
    Var(Graph* g, std::size_t id) : graph_(g), id_(id) {}
    Graph* graph_ = nullptr;
    std::size_t id_ = 0;
};

// Tape of primitive operations with reverse-mode differentiation. Nodes are
// appended in evaluation order, so every node's inputs precede it. Not
// thread-safe; build and differentiate on one thread.
class Graph {
public:
    Graph() = default;
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    Var constant(Tensor t);
    Var param(Parameter& p);

    const Tensor& value(Var v) const { return nodes_[v.id()].value; }
    std::size_t node_count() const { return nodes_.size(); }

    Var matmul(Var a, Var b);     // a * b
    Var matmul_nt(Var a, Var b);  // a * b^T
    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var mul(Var a, Var b);
    Var add_row(Var a, Var row);  // adds a 1 x n row to every row of a
    Var mul_col(Var a, Var col);  // scales row i of a by col(i, 0)
    Var scale(Var a, double c);
    Var add_scalar(Var a, double c);
    Var negate(Var a);
    Var one_minus(Var a) { return add_scalar(negate(a), 1.0); }
    Var concat_cols(std::span<const Var> parts);
    Var concat_rows(std::span<const Var> parts);
    Var slice_cols(Var a, std::size_t begin, std::size_t end);
    Var gather_rows(Var a, std::span<const std::size_t> index);
    Var sigmoid(Var a);
    Var tanh(Var a);
    Var exp(Var a);
    // Element-wise maximum across same-shaped tensors (pooling over a stacked
    // axis). Ties route the gradient to the first maximiser.
    Var max_over(std::span<const Var> parts);
    Var sum(Var a);        // 1 x 1
    Var mean(Var a);       // 1 x 1
    Var sum_cols(Var a);   // rows x 1, sums across each row
    Var mean_rows(Var a);  // 1 x cols, averages over rows
    Var sq_diff(Var a, Var b);
    // Sum over entries of weight * BCE(sigmoid(logit), label).
    Var bce_logits(Var logits, const Tensor& labels, const Tensor& weights);
    // n x m matrix of squared euclidean distances between rows of x and y.
    Var pairwise_sq_dist(Var x, Var y);

    // Reverse sweep from a 1 x 1 loss; returns d loss / d p for every
    // parameter leaf recorded on this graph.
    GradientMap gradients(Var loss);

private:
    struct Node {
        Tensor value;
        Tensor grad;
        bool has_grad = false;
        bool requires_grad = false;
        Parameter* param = nullptr;
        std::function<void(Graph&, std::size_t)> backward;
    };

    Var push(Tensor value, bool requires_grad, std::function<void(Graph&, std::size_t)> backward);
    Tensor& grad_buf(std::size_t id);
    const Tensor& grad(std::size_t id) const { return nodes_[id].grad; }
    bool needs(Var v) const { return nodes_[v.id()].requires_grad; }
    void check_owner(Var v, const char* op) const;

    std::vector<Node> nodes_;
    std::unordered_map<const Parameter*, std::size_t> param_nodes_;
};

}  // namespace akt::num
