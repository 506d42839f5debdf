// SPDX-License-Identifier: Apache-2.0
#include "akt/graph.hpp"

#include <algorithm>
#include <cmath>

namespace akt::num {

namespace {

[[noreturn]] void shape_fail(const char* op, const Tensor& a, const Tensor& b) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

double stable_sigmoid(double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

}  // namespace

void GradientMap::accumulate(const Parameter* p, const Tensor& g) {
    auto it = grads_.find(p);
    if (it == grads_.end()) {
        grads_.emplace(p, g);
        return;
    }
    for (std::size_t i = 0; i < g.size(); ++i) it->second[i] += g[i];
}

Tensor GradientMap::get(const Parameter* p) const {
    if (const Tensor* t = find(p)) return *t;
    return Tensor(p->value.rows(), p->value.cols());
}

const Tensor* GradientMap::find(const Parameter* p) const {
    auto it = grads_.find(p);
    return it == grads_.end() ? nullptr : &it->second;
}

const Tensor& Var::value() const { return graph_->value(*this); }

Var Graph::push(Tensor value, bool requires_grad, std::function<void(Graph&, std::size_t)> backward) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    if (requires_grad) n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
}

Tensor& Graph::grad_buf(std::size_t id) {
    Node& n = nodes_[id];
    if (!n.has_grad) {
        n.grad = Tensor(n.value.rows(), n.value.cols());
        n.has_grad = true;
    }
    return n.grad;
}

void Graph::check_owner(Var v, const char* op) const {
    if (v.graph_ != this || v.id_ >= nodes_.size()) {
        throw std::invalid_argument(std::string(op) + ": variable does not belong to this graph");
    }
}

Var Graph::constant(Tensor t) { return push(std::move(t), false, {}); }

Var Graph::param(Parameter& p) {
    if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return Var(this, it->second);
    Var v = push(p.value, true, {});
    nodes_[v.id()].param = &p;
    param_nodes_.emplace(&p, v.id());
    return v;
}

Var Graph::matmul(Var a, Var b) {
    check_owner(a, "matmul");
    check_owner(b, "matmul");
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    if (A.cols() != B.rows()) shape_fail("matmul", A, B);
    Tensor out;
    gemm(A, B, out);
    const std::size_t ia = a.id(), ib = b.id();
    return push(std::move(out), needs(a) || needs(b), [ia, ib](Graph& g, std::size_t self) {
        const Tensor& G = g.grad(self);
        if (g.nodes_[ia].requires_grad) gemm_nt(G, g.nodes_[ib].value, g.grad_buf(ia), true);
        if (g.nodes_[ib].requires_grad) gemm_tn(g.nodes_[ia].value, G, g.grad_buf(ib), true);
    });
}

Var Graph::matmul_nt(Var a, Var b) {
    check_owner(a, "matmul_nt");
    check_owner(b, "matmul_nt");
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    if (A.cols() != B.cols()) shape_fail("matmul_nt", A, B);
    Tensor out;
    gemm_nt(A, B, out);
    const std::size_t ia = a.id(), ib = b.id();
    return push(std::move(out), needs(a) || needs(b), [ia, ib](Graph& g, std::size_t self) {
        const Tensor& G = g.grad(self);  // m x n
        if (g.nodes_[ia].requires_grad) gemm(G, g.nodes_[ib].value, g.grad_buf(ia), true);
        if (g.nodes_[ib].requires_grad) gemm_tn(G, g.nodes_[ia].value, g.grad_buf(ib), true);
    });
}

Var Graph::add(Var a, Var b) {
    check_owner(a, "add");
    check_owner(b, "add");
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    if (!A.same_shape(B)) shape_fail("add", A, B);
    Tensor out = A;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += B[i];
    const std::size_t ia = a.id(), ib = b.id();
    return push(std::move(out), needs(a) || needs(b), [ia, ib](Graph& g, std::size_t self) {
        const Tensor& G = g.grad(self);
        for (std::size_t id : {ia, ib}) {
            if (!g.nodes_[id].requires_grad) continue;
            Tensor& d = g.grad_buf(id);
            for (std::size_t i = 0; i < G.size(); ++i) d[i] += G[i];
        }
    });
}

Var Graph::sub(Var a, Var b) {
    check_owner(a, "sub");
    check_owner(b, "sub");
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    if (!A.same_shape(B)) shape_fail("sub", A, B);
    Tensor out = A;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= B[i];
    const std::size_t ia = a.id(), ib = b.id();
    return push(std::move(out), needs(a) || needs(b), [ia, ib](Graph& g, std::size_t self) {
        const Tensor& G = g.grad(self);
        if (g.nodes_[ia].requires_grad) {
            Tensor& d = g.grad_buf(ia);
            for (std::size_t i = 0; i < G.size(); ++i) d[i] += G[i];
        }
        if (g.nodes_[ib].requires_grad) {
            Tensor& d = g.grad_buf(ib);
            for (std::size_t i = 0; i < G.size(); ++i) d[i] -= G[i];
        }
    });
}

Var Graph::mul(Var a, Var b) {
    check_owner(a, "mul");
    check_owner(b, "mul");
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    if (!A.same_shape(B)) shape_fail("mul", A, B);
    Tensor out = A;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= B[i];
    const std::size_t ia = a.id(), ib = b.id();
    return push(std::move(out), needs(a) || needs(b), [ia, ib](Graph& g, std::size_t self) {
        const Tensor& G = g.grad(self);
        if (g.nodes_[ia].requires_grad) {
            const Tensor& Bv = g.nodes_[ib].value;
            Tensor& d = g.grad_buf(ia);
            for (std::size_t i = 0; i < G.size(); ++i) d[i] += G[i] * Bv[i];
        }
        if (g.nodes_[ib].requires_grad) {
            const Tensor& Av = g.nodes_[ia].value;
            Tensor& d = g.grad_buf(ib);
            for (std::size_t i = 0; i < G.size(); ++i) d[i] += G[i] * Av[i];
        }
    });
}

Var Graph::add_row(Var a, Var row) {
    check_owner(a, "add_row");
    check_owner(row, "add_row");
    const Tensor& A = value(a);
    const Tensor& R = value(row);
    if (R.rows() != 1 || R.cols() != A.cols()) shape_fail("add_row", A, R);
    Tensor out = A;
    for (std::size_t i = 0; i < A.rows(); ++i)
        for (std::size_t j = 0; j < A.cols(); ++j) out(i, j) += R[j];
    const std::size_t ia = a.id(), ir = row.id();
    return push(std::move(out), needs(a) || needs(row), [ia, ir](Graph& g, std::size_t self) {
        const Tensor& G = g.grad(self);
        if (g.nodes_[ia].requires_grad) {
            Tensor& d = g.grad_buf(ia);
            for (std::size_t i = 0; i < G.size(); ++i) d[i] += G[i];
        }
        if (g.nodes_[ir].requires_grad) {
            Tensor& d = g.grad_buf(ir);
            for (std::size_t i = 0; i < G.rows(); ++i)
                for (std::size_t j = 0; j < G.cols(); ++j) d[j] += G(i, j);
        }
    });
}

Var Graph::mul_col(Var a, Var col) {
    check_owner(a, "mul_col");
    check_owner(col, "mul_col");
    const Tensor& A = value(a);
    const Tensor& C = value(col);
    if (C.cols() != 1 || C.rows() != A.rows()) shape_fail("mul_col", A, C);
    Tensor out = A;
    for (std::size_t i = 0; i < A.rows(); ++i)
        for (std::size_t j = 0; j < A.cols(); ++j) out(i, j) *= C[i];
    const std::size_t ia = a.id(), ic = col.id();
    return push(std::move(out), needs(a) || needs(col), [ia, ic](Graph& g, std::size_t self) {
        const Tensor& G = g.grad(self);
        if (g.nodes_[ia].requires_grad) {
            const Tensor& Cv = g.nodes_[ic].value;
            Tensor& d = g.grad_buf(ia);
            for (std::size_t i = 0; i < G.rows(); ++i)
                for (std::size_t j = 0; j < G.cols(); ++j) d(i, j) += G(i, j) * Cv[i];
        }
        if (g.nodes_[ic].requires_grad) {
            const Tensor& Av = g.nodes_[ia].value;
            Tensor& d = g.grad_buf(ic);
            for (std::size_t i = 0; i < G.rows(); ++i)
                for (std::size_t j = 0; j < G.cols(); ++j) d[i] += G(i, j) * Av(i, j);
        }
    });
}

Var Graph::scale(Var a, double c) {
    check_owner(a, "scale");
    Tensor out = value(a);
    for (double& v : out.values()) v *= c;
    const std::size_t ia = a.id();
    return push(std::move(out), needs(a), [ia, c](Graph& g, std::size_t self) {
        const Tensor& G = g.grad(self);
        Tensor& d = g.grad_buf(ia);
        for (std::size_t i = 0; i < G.size(); ++i) d[i] += c * G[i];
    });
}

Var Graph::add_scalar(Var a, double c) {
    check_owner(a, "add_scalar");
    Tensor out = value(a);
    for (double& v : out.values()) v += c;
    const std::size_t ia = a.id();
    return push(std::move(out), needs(a), [ia](Graph& g, std::size_t self) {
        const Tensor& G = g.grad(self);
        Tensor& d = g.grad_buf(ia);
        for (std::size_t i = 0; i < G.size(); ++i) d[i] += G[i];
    });
}

Var Graph::negate(Var a) { return scale(a, -1.0); }

Var Graph::concat_cols(std::span<const Var> parts) {
    if (parts.empty()) throw ShapeError("concat_cols: no inputs");
    const std::size_t rows = value(parts[0]).rows();
    std::size_t cols = 0;
    bool req = false;
    for (Var p : parts) {
        check_owner(p, "concat_cols");
        if (value(p).rows() != rows) shape_fail("concat_cols", value(parts[0]), value(p));
        cols += value(p).cols();
        req = req || needs(p);
    }
    Tensor out(rows, cols);
    std::vector<std::size_t> ids, offsets;
    std::size_t off = 0;
    for (Var p : parts) {
        const Tensor& P = value(p);
        for (std::size_t i = 0; i < rows; ++i)
            std::copy_n(P.data() + i * P.cols(), P.cols(), out.data() + i * cols + off);
        ids.push_back(p.id());
        offsets.push_back(off);
        off += P.cols();
    }
    return push(std::move(out), req, [ids, offsets](Graph& g, std::size_t self) {
        const Tensor& G = g.grad(self);
        for (std::size_t k = 0; k < ids.size(); ++k) {
            if (!g.nodes_[ids[k]].requires_grad) continue;
            Tensor& d = g.grad_buf(ids[k]);
            for (std::size_t i = 0; i < d.rows(); ++i)
                for (std::size_t j = 0; j < d.cols(); ++j) d(i, j) += G(i, offsets[k] + j);
        }
    });
}

Var Graph::concat_rows(std::span<const Var> parts) {
    if (parts.empty()) throw ShapeError("concat_rows: no inputs");
    const std::size_t cols = value(parts[0]).cols();
    std::size_t rows = 0;
    bool req = false;
    for (Var p : parts) {
        check_owner(p, "concat_rows");
        if (value(p).cols() != cols) shape_fail("concat_rows", value(parts[0]), value(p));
        rows += value(p).rows();
        req = req || needs(p);
    }
    std::vector<double> data;
    data.reserve(rows * cols);
    std::vector<std::size_t> ids, offsets;
    for (Var p : parts) {
        const Tensor& P = value(p);
        offsets.push_back(data.size());
        data.insert(data.end(), P.data(), P.data() + P.size());
        ids.push_back(p.id());
    }
    return push(Tensor(rows, cols, std::move(data)), req, [ids, offsets](Graph& g, std::size_t self) {
        const Tensor& G = g.grad(self);
        for (std::size_t k = 0; k < ids.size(); ++k) {
            if (!g.nodes_[ids[k]].requires_grad) continue;
            Tensor& d = g.grad_buf(ids[k]);
            for (std::size_t i = 0; i < d.size(); ++i) d[i] += G[offsets[k] + i];
        }
    });
}

Var Graph::slice_cols(Var a, std::size_t begin, std::size_t end) {
    check_owner(a, "slice_cols");
    const Tensor& A = value(a);
    if (begin > end || end > A.cols()) {
        throw ShapeError("slice_cols: range [" + std::to_string(begin) + "," + std::to_string(end) +
                         ") out of bounds for " + shape_str(A));
    }
    const std::size_t w = end - begin;
    Tensor out(A.rows(), w);
    for (std::size_t i = 0; i < A.rows(); ++i) std::copy_n(A.data() + i * A.cols() + begin, w, out.data() + i * w);
    const std::size_t ia = a.id();
    return push(std::move(out), needs(a), [ia, begin, w](Graph& g, std::size_t self) {
        const Tensor& G = g.grad(self);
        Tensor& d = g.grad_buf(ia);
        for (std::size_t i = 0; i < G.rows(); ++i)
            for (std::size_t j = 0; j < w; ++j) d(i, begin + j) += G(i, j);
    });
}

Var Graph::gather_rows(Var a, std::span<const std::size_t> index) {
    check_owner(a, "gather_rows");
    const Tensor& A = value(a);
    const std::size_t c = A.cols();
    Tensor out(index.size(), c);
    for (std::size_t i = 0; i < index.size(); ++i) {
        if (index[i] >= A.rows()) {
            throw ShapeError("gather_rows: index " + std::to_string(index[i]) + " out of bounds for " + shape_str(A));
        }
        std::copy_n(A.data() + index[i] * c, c, out.data() + i * c);
    }
    const std::size_t ia = a.id();
    std::vector<std::size_t> idx(index.begin(), index.end());
    return push(std::move(out), needs(a), [ia, idx = std::move(idx), c](Graph& g, std::size_t self) {
        const Tensor& G = g.grad(self);
        Tensor& d = g.grad_buf(ia);
        for (std::size_t i = 0; i < idx.size(); ++i) {
            double* drow = d.data() + idx[i] * c;
            const double* grow = G.data() + i * c;
            for (std::size_t j = 0; j < c; ++j) drow[j] += grow[j];
        }
    });
}

Var Graph::sigmoid(Var a) {
    check_owner(a, "sigmoid");
    Tensor out = value(a);
    for (double& v : out.values()) v = stable_sigmoid(v);
    const std::size_t ia = a.id();
    return push(std::move(out), needs(a), [ia](Graph& g, std::size_t self) {
        const Tensor& G = g.grad(self);
        const Tensor& Y = g.nodes_[self].value;
        Tensor& d = g.grad_buf(ia);
        for (std::size_t i = 0; i < G.size(); ++i) d[i] += G[i] * Y[i] * (1.0 - Y[i]);
    });
}

Var Graph::tanh(Var a) {
    check_owner(a, "tanh");
    Tensor out = value(a);
    for (double& v : out.values()) v = std::tanh(v);
    const std::size_t ia = a.id();
    return push(std::move(out), needs(a), [ia](Graph& g, std::size_t self) {
        const Tensor& G = g.grad(self);
        const Tensor& Y = g.nodes_[self].value;
        Tensor& d = g.grad_buf(ia);
        for (std::size_t i = 0; i < G.size(); ++i) d[i] += G[i] * (1.0 - Y[i] * Y[i]);
    });
}

Var Graph::exp(Var a) {
    check_owner(a, "exp");
    Tensor out = value(a);
    for (double& v : out.values()) v = std::exp(v);
    const std::size_t ia = a.id();
    return push(std::move(out), needs(a), [ia](Graph& g, std::size_t self) {
        const Tensor& G = g.grad(self);
        const Tensor& Y = g.nodes_[self].value;
        Tensor& d = g.grad_buf(ia);
        for (std::size_t i = 0; i < G.size(); ++i) d[i] += G[i] * Y[i];
    });
}

Var Graph::max_over(std::span<const Var> parts) {
    if (parts.empty()) throw ShapeError("max_over: no inputs");
    const Tensor& first = value(parts[0]);
    bool req = false;
    for (Var p : parts) {
        check_owner(p, "max_over");
        if (!value(p).same_shape(first)) shape_fail("max_over", first, value(p));
        req = req || needs(p);
    }
    Tensor out = first;
    std::vector<std::size_t> arg(first.size(), 0);
    for (std::size_t k = 1; k < parts.size(); ++k) {
        const Tensor& P = value(parts[k]);
        for (std::size_t i = 0; i < P.size(); ++i) {
            if (P[i] > out[i]) {
                out[i] = P[i];
                arg[i] = k;
            }
        }
    }
    std::vector<std::size_t> ids;
    for (Var p : parts) ids.push_back(p.id());
    return push(std::move(out), req, [ids, arg = std::move(arg)](Graph& g, std::size_t self) {
        const Tensor& G = g.grad(self);
        for (std::size_t i = 0; i < G.size(); ++i) {
            const std::size_t src = ids[arg[i]];
            if (g.nodes_[src].requires_grad) g.grad_buf(src)[i] += G[i];
        }
    });
}

Var Graph::sum(Var a) {
    check_owner(a, "sum");
    double s = 0.0;
    for (double v : value(a).values()) s += v;
    const std::size_t ia = a.id();
    return push(Tensor::scalar(s), needs(a), [ia](Graph& g, std::size_t self) {
        const double G = g.grad(self)[0];
        for (double& v : g.grad_buf(ia).values()) v += G;
    });
}

Var Graph::mean(Var a) {
    check_owner(a, "mean");
    const Tensor& A = value(a);
    if (A.size() == 0) throw ShapeError("mean: empty tensor");
    double s = 0.0;
    for (double v : A.values()) s += v;
    const double n = static_cast<double>(A.size());
    const std::size_t ia = a.id();
    return push(Tensor::scalar(s / n), needs(a), [ia, n](Graph& g, std::size_t self) {
        const double G = g.grad(self)[0] / n;
        for (double& v : g.grad_buf(ia).values()) v += G;
    });
}

Var Graph::sum_cols(Var a) {
    check_owner(a, "sum_cols");
    const Tensor& A = value(a);
    Tensor out(A.rows(), 1);
    for (std::size_t i = 0; i < A.rows(); ++i)
        for (std::size_t j = 0; j < A.cols(); ++j) out[i] += A(i, j);
    const std::size_t ia = a.id();
    return push(std::move(out), needs(a), [ia](Graph& g, std::size_t self) {
        const Tensor& G = g.grad(self);
        Tensor& d = g.grad_buf(ia);
        for (std::size_t i = 0; i < d.rows(); ++i)
            for (std::size_t j = 0; j < d.cols(); ++j) d(i, j) += G[i];
    });
}

Var Graph::mean_rows(Var a) {
    check_owner(a, "mean_rows");
    const Tensor& A = value(a);
    if (A.rows() == 0) throw ShapeError("mean_rows: no rows");
    Tensor out(1, A.cols());
    for (std::size_t i = 0; i < A.rows(); ++i)
        for (std::size_t j = 0; j < A.cols(); ++j) out[j] += A(i, j);
    const double n = static_cast<double>(A.rows());
    for (double& v : out.values()) v /= n;
    const std::size_t ia = a.id();
    return push(std::move(out), needs(a), [ia, n](Graph& g, std::size_t self) {
        const Tensor& G = g.grad(self);
        Tensor& d = g.grad_buf(ia);
        for (std::size_t i = 0; i < d.rows(); ++i)
            for (std::size_t j = 0; j < d.cols(); ++j) d(i, j) += G[j] / n;
    });
}

Var Graph::sq_diff(Var a, Var b) {
    check_owner(a, "sq_diff");
    check_owner(b, "sq_diff");
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    if (!A.same_shape(B)) shape_fail("sq_diff", A, B);
    Tensor out(A.rows(), A.cols());
    for (std::size_t i = 0; i < A.size(); ++i) out[i] = (A[i] - B[i]) * (A[i] - B[i]);
    const std::size_t ia = a.id(), ib = b.id();
    return push(std::move(out), needs(a) || needs(b), [ia, ib](Graph& g, std::size_t self) {
        const Tensor& G = g.grad(self);
        const Tensor& Av = g.nodes_[ia].value;
        const Tensor& Bv = g.nodes_[ib].value;
        if (g.nodes_[ia].requires_grad) {
            Tensor& d = g.grad_buf(ia);
            for (std::size_t i = 0; i < G.size(); ++i) d[i] += 2.0 * G[i] * (Av[i] - Bv[i]);
        }
        if (g.nodes_[ib].requires_grad) {
            Tensor& d = g.grad_buf(ib);
            for (std::size_t i = 0; i < G.size(); ++i) d[i] -= 2.0 * G[i] * (Av[i] - Bv[i]);
        }
    });
}

Var Graph::bce_logits(Var logits, const Tensor& labels, const Tensor& weights) {
    check_owner(logits, "bce_logits");
    const Tensor& Z = value(logits);
    if (!Z.same_shape(labels)) shape_fail("bce_logits", Z, labels);
    if (!Z.same_shape(weights)) shape_fail("bce_logits", Z, weights);
    double s = 0.0;
    for (std::size_t i = 0; i < Z.size(); ++i) {
        if (weights[i] == 0.0) continue;
        // -[y log p + (1-y) log(1-p)] with p = sigmoid(z), in log-sum-exp form.
        const double z = Z[i];
        const double softplus = std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z)));
        s += weights[i] * (softplus - labels[i] * z);
    }
    const std::size_t iz = logits.id();
    return push(Tensor::scalar(s), needs(logits), [iz, labels, weights](Graph& g, std::size_t self) {
        const double G = g.grad(self)[0];
        const Tensor& Zv = g.nodes_[iz].value;
        Tensor& d = g.grad_buf(iz);
        for (std::size_t i = 0; i < Zv.size(); ++i) {
            if (weights[i] == 0.0) continue;
            d[i] += G * weights[i] * (stable_sigmoid(Zv[i]) - labels[i]);
        }
    });
}

Var Graph::pairwise_sq_dist(Var x, Var y) {
    check_owner(x, "pairwise_sq_dist");
    check_owner(y, "pairwise_sq_dist");
    const Tensor& X = value(x);
    const Tensor& Y = value(y);
    if (X.cols() != Y.cols()) shape_fail("pairwise_sq_dist", X, Y);
    const std::size_t n = X.rows(), m = Y.rows(), d = X.cols();
    Tensor out(n, m);
    for (std::size_t i = 0; i < n; ++i) {
        const double* xi = X.data() + i * d;
        for (std::size_t j = 0; j < m; ++j) {
            const double* yj = Y.data() + j * d;
            double s = 0.0;
            for (std::size_t k = 0; k < d; ++k) {
                const double diff = xi[k] - yj[k];
                s += diff * diff;
            }
            out(i, j) = s;
        }
    }
    const std::size_t ix = x.id(), iy = y.id();
    return push(std::move(out), needs(x) || needs(y), [ix, iy](Graph& g, std::size_t self) {
        const Tensor& G = g.grad(self);
        const Tensor& Xv = g.nodes_[ix].value;
        const Tensor& Yv = g.nodes_[iy].value;
        const std::size_t n = Xv.rows(), m = Yv.rows(), d = Xv.cols();
        // d/dx_i = 2 sum_j G_ij (x_i - y_j);  d/dy_j = -2 sum_i G_ij (x_i - y_j)
        const bool gx = g.nodes_[ix].requires_grad;
        const bool gy = g.nodes_[iy].requires_grad;
        Tensor* dx = gx ? &g.grad_buf(ix) : nullptr;
        Tensor* dy = gy ? &g.grad_buf(iy) : nullptr;
        for (std::size_t i = 0; i < n; ++i) {
            const double* xi = Xv.data() + i * d;
            for (std::size_t j = 0; j < m; ++j) {
                const double w = 2.0 * G(i, j);
                if (w == 0.0) continue;
                const double* yj = Yv.data() + j * d;
                for (std::size_t k = 0; k < d; ++k) {
                    const double diff = w * (xi[k] - yj[k]);
                    if (gx) (*dx)(i, k) += diff;
                    if (gy) (*dy)(j, k) -= diff;
                }
            }
        }
    });
}

GradientMap Graph::gradients(Var loss) {
    check_owner(loss, "gradients");
    if (value(loss).size() != 1) {
        throw ShapeError("gradients: loss must be 1x1, got " + shape_str(value(loss)));
    }
    for (Node& n : nodes_) {
        n.has_grad = false;
        n.grad = Tensor();
    }
    GradientMap out;
    if (!nodes_[loss.id()].requires_grad) return out;
    grad_buf(loss.id())[0] = 1.0;
    for (std::size_t id = loss.id() + 1; id-- > 0;) {
        Node& n = nodes_[id];
        if (!n.has_grad || !n.requires_grad) continue;
        if (n.backward) n.backward(*this, id);
        if (n.param) out.accumulate(n.param, n.grad);
    }
    return out;
}

}  // namespace akt::num
