// SPDX-License-Identifier: Apache-2.0
#include <catch_amalgamated.hpp>

#include <cmath>

#include "akt/graph.hpp"
#include "akt/optim.hpp"
#include "test_util.hpp"

using namespace akt::num;
using Catch::Matchers::ContainsSubstring;
using Catch::Matchers::WithinAbs;

TEST_CASE("matmul by the identity returns the operand") {
    Graph g;
    const Var eye = g.constant(Tensor::from_rows({{1, 0}, {0, 1}}));
    const Var v = g.constant(Tensor::from_rows({{3.5}, {-2.0}}));
    const Var prod = g.matmul(eye, v);
    CHECK(g.value(prod) == g.value(v));
}

TEST_CASE("sigmoid of zero is one half") {
    Graph g;
    CHECK(g.value(g.sigmoid(g.constant(Tensor::scalar(0.0)))).item() == 0.5);
}

TEST_CASE("max over a single input returns it") {
    Graph g;
    const Var x = g.constant(Tensor::from_rows({{1, -2, 3}}));
    const Var parts[] = {x};
    const Var pooled = g.max_over(parts);
    CHECK(g.value(pooled) == g.value(x));
}

TEST_CASE("shape errors name the op and both shapes") {
    Graph g;
    const Var a = g.constant(Tensor(2, 3));
    const Var b = g.constant(Tensor(2, 3));
    CHECK_THROWS_WITH(g.matmul(a, b), ContainsSubstring("matmul") && ContainsSubstring("2x3"));
    const Var c = g.constant(Tensor(3, 2));
    CHECK_THROWS_AS(g.add(a, c), ShapeError);
    CHECK_THROWS_AS(g.mul(a, c), ShapeError);
}

TEST_CASE("forward values match loop oracles") {
    const Tensor x = testutil::random_tensor(4, 3, 1);
    const Tensor y = testutil::random_tensor(5, 3, 2);
    Graph g;
    const Var vx = g.constant(x), vy = g.constant(y);

    SECTION("matmul_nt") {
        const Tensor out = g.value(g.matmul_nt(vx, vy));
        for (std::size_t i = 0; i < 4; ++i)
            for (std::size_t j = 0; j < 5; ++j) {
                double s = 0;
                for (std::size_t k = 0; k < 3; ++k) s += x(i, k) * y(j, k);
                CHECK_THAT(out(i, j), WithinAbs(s, 1e-14));
            }
    }
    SECTION("pairwise squared distances") {
        const Tensor out = g.value(g.pairwise_sq_dist(vx, vy));
        for (std::size_t i = 0; i < 4; ++i)
            for (std::size_t j = 0; j < 5; ++j) {
                double s = 0;
                for (std::size_t k = 0; k < 3; ++k) s += (x(i, k) - y(j, k)) * (x(i, k) - y(j, k));
                CHECK_THAT(out(i, j), WithinAbs(s, 1e-12));
            }
    }
    SECTION("bce with logits") {
        Tensor labels(4, 1), weights(4, 1);
        Tensor logits(4, 1);
        for (std::size_t i = 0; i < 4; ++i) {
            logits(i, 0) = x(i, 0) * 5;
            labels(i, 0) = i % 2;
            weights(i, 0) = i == 3 ? 0.0 : 1.0;
        }
        double want = 0;
        for (std::size_t i = 0; i < 3; ++i) {
            const double p = 1 / (1 + std::exp(-logits(i, 0)));
            want -= labels(i, 0) * std::log(p) + (1 - labels(i, 0)) * std::log(1 - p);
        }
        CHECK_THAT(g.value(g.bce_logits(g.constant(logits), labels, weights)).item(), WithinAbs(want, 1e-12));
    }
    SECTION("reductions") {
        double total = 0;
        for (double v : x.values()) total += v;
        CHECK_THAT(g.value(g.sum(vx)).item(), WithinAbs(total, 1e-14));
        CHECK_THAT(g.value(g.mean(vx)).item(), WithinAbs(total / 12, 1e-14));
        const Tensor rs = g.value(g.sum_cols(vx));
        const Tensor cm = g.value(g.mean_rows(vx));
        for (std::size_t i = 0; i < 4; ++i) CHECK_THAT(rs(i, 0), WithinAbs(x(i, 0) + x(i, 1) + x(i, 2), 1e-14));
        for (std::size_t j = 0; j < 3; ++j)
            CHECK_THAT(cm(0, j), WithinAbs((x(0, j) + x(1, j) + x(2, j) + x(3, j)) / 4, 1e-14));
    }
    SECTION("gather, slice and concat") {
        const std::size_t idx[] = {3, 0, 3};
        const Tensor gr = g.value(g.gather_rows(vx, idx));
        CHECK(gr.rows() == 3);
        for (std::size_t j = 0; j < 3; ++j) {
            CHECK(gr(0, j) == x(3, j));
            CHECK(gr(1, j) == x(0, j));
        }
        const Tensor sl = g.value(g.slice_cols(vx, 1, 3));
        CHECK(sl(2, 0) == x(2, 1));
        const Var parts[] = {vx, vx};
        CHECK(g.value(g.concat_cols(parts)).cols() == 6);
        CHECK(g.value(g.concat_rows(parts)).rows() == 8);
    }
}

TEST_CASE("gradient of sum is all ones") {
    Parameter p{"p", testutil::random_tensor(3, 4, 9)};
    Graph g;
    const auto grads = g.gradients(g.sum(g.param(p)));
    CHECK(grads.get(&p) == Tensor(3, 4, 1.0));
}

TEST_CASE("gradient of sigmoid(w.x) at zero is x / 4") {
    Parameter w{"w", Tensor::from_rows({{0.0, 0.0, 0.0}})};
    const Tensor x = Tensor::from_rows({{1.0}, {-2.0}, {0.5}});
    Graph g;
    const auto grads = g.gradients(g.sigmoid(g.matmul(g.param(w), g.constant(x))));
    const Tensor gw = grads.get(&w);
    for (std::size_t k = 0; k < 3; ++k) CHECK_THAT(gw(0, k), WithinAbs(0.25 * x(k, 0), 1e-15));
}

TEST_CASE("non-scalar loss is rejected and detached parameters get zeros") {
    Parameter p{"p", testutil::random_tensor(2, 2, 3)};
    Parameter unused{"unused", testutil::random_tensor(2, 3, 4)};
    Graph g;
    const Var vp = g.param(p);
    g.param(unused);
    CHECK_THROWS(g.gradients(vp));
    const auto grads = g.gradients(g.sum(vp));
    CHECK(grads.get(&unused) == Tensor(2, 3));
}

TEST_CASE("random three-layer composite passes the finite-difference check") {
    Parameter w1 = testutil::random_param("w1", 5, 4, 11, 0.8);
    Parameter b1 = testutil::random_param("b1", 1, 5, 12, 0.3);
    Parameter w2 = testutil::random_param("w2", 4, 5, 13, 0.8);
    Parameter w3 = testutil::random_param("w3", 1, 4, 14, 0.8);
    const Tensor x = testutil::random_tensor(3, 4, 15);
    Tensor labels(3, 1);
    labels(1, 0) = 1;
    const Tensor weights(3, 1, 1.0);
    auto build = [&](Graph& g) {
        Var h = g.tanh(g.add_row(g.matmul_nt(g.constant(x), g.param(w1)), g.param(b1)));
        Var h2 = g.sigmoid(g.matmul_nt(h, g.param(w2)));
        Var out = g.matmul_nt(h2, g.param(w3));
        return g.bce_logits(out, labels, weights);
    };
    Parameter* params[] = {&w1, &b1, &w2, &w3};
    CHECK(finite_diff_check(build, params, 1e-4) < 1e-4);
}

TEST_CASE("every primitive passes the finite-difference check") {
    Parameter a = testutil::random_param("a", 3, 4, 21);
    Parameter b = testutil::random_param("b", 3, 4, 22);
    Parameter c = testutil::random_param("c", 2, 4, 23);
    Parameter col = testutil::random_param("col", 3, 1, 24);
    auto build = [&](Graph& g) {
        const Var va = g.param(a), vb = g.param(b), vc = g.param(c);
        const Var pooled_parts[] = {g.scale(va, 1.3), g.sub(vb, va), g.negate(vb)};
        Var pooled = g.max_over(pooled_parts);
        Var prod = g.mul_col(g.mul(pooled, g.exp(g.scale(vb, 0.3))), g.param(col));
        const Var rows[] = {prod, vc};
        Var stacked = g.concat_rows(rows);
        const std::size_t idx[] = {4, 1, 0, 2};
        Var gathered = g.gather_rows(stacked, idx);
        const Var cols[] = {g.slice_cols(gathered, 0, 2), g.slice_cols(gathered, 1, 4)};
        Var wide = g.concat_cols(cols);
        Var d = g.pairwise_sq_dist(wide, g.tanh(wide));
        Var m = g.add(g.mean(g.sum_cols(d)), g.sum(g.mean_rows(g.sq_diff(va, vb))));
        return g.add_scalar(g.add(m, g.sum(g.matmul(g.sigmoid(g.matmul_nt(vc, va)), va))), 0.1);
    };
    Parameter* params[] = {&a, &b, &c, &col};
    CHECK(finite_diff_check(build, params, 1e-4) < 1e-4);
}

TEST_CASE("finite-difference check: exact on a linear loss, flags a corrupted gradient") {
    Parameter w = testutil::random_param("w", 2, 3, 31);
    const Tensor x = testutil::random_tensor(3, 2, 32);
    auto linear = [&](Graph& g) { return g.sum(g.matmul(g.param(w), g.constant(x))); };
    Parameter* params[] = {&w};
    CHECK(finite_diff_check(linear, params, 1e-4) < 1e-8);

    auto nonlinear = [&](Graph& g) { return g.sum(g.tanh(g.matmul(g.param(w), g.constant(x)))); };
    const GradientMap analytic = analytic_gradients(nonlinear);
    Tensor corrupted = analytic.get(&w);
    corrupted[2] *= 1.5;
    const std::vector<Tensor> a{corrupted};
    const auto n = numeric_gradients(nonlinear, params, 1e-4);
    CHECK(max_relative_error(a, n) > 1e-2);
}

TEST_CASE("finite-difference check rejects a non-finite loss") {
    Parameter w{"w", Tensor::scalar(0.0)};
    auto build = [&](Graph& g) { return g.scale(g.param(w), std::nan("")); };
    Parameter* params[] = {&w};
    CHECK_THROWS(finite_diff_check(build, params, 1e-4));
}

TEST_CASE("glorot_uniform is deterministic and within its bound") {
    CHECK(glorot_uniform(3, 3, 7) == glorot_uniform(3, 3, 7));
    CHECK_FALSE(glorot_uniform(3, 3, 7) == glorot_uniform(3, 3, 8));
    const double bound = std::sqrt(6.0 / 200.0);
    CHECK_THAT(glorot_bound(100, 100), WithinAbs(0.17320508, 1e-8));
    const Tensor t = glorot_uniform(100, 100, 3);
    CHECK(t.rows() == 100);
    for (double v : t.values()) CHECK((v >= -bound && v <= bound));
    const Tensor big = glorot_uniform(1000, 100, 5);  // 1e5 draws
    double mean = 0;
    for (double v : big.values()) mean += v;
    mean /= double(big.size());
    CHECK(std::abs(mean) < 0.005);
    CHECK_THROWS(glorot_uniform(0, 3, 1));
    CHECK_THROWS(glorot_uniform(3, 0, 1));
}

TEST_CASE("glorot_uniform is non-square in the stated orientation") {
    const Tensor t = glorot_uniform(4, 7, 1);  // n_in = 4, n_out = 7
    CHECK(t.rows() == 7);
    CHECK(t.cols() == 4);
}

TEST_CASE("Adam: zero gradient leaves parameters, descent on w^2, convergence on (w-3)^2") {
    SECTION("zero gradient") {
        Parameter w{"w", testutil::random_tensor(2, 2, 1)};
        const Tensor before = w.value;
        AdamState st;
        GradientMap grads;
        grads.accumulate(&w, Tensor(2, 2));
        Parameter* ps[] = {&w};
        for (int i = 0; i < 5; ++i) adam_step(ps, grads, st, 0.1);
        CHECK(w.value == before);
    }
    SECTION("one step descends") {
        Parameter w{"w", Tensor::scalar(1.0)};
        AdamState st;
        Parameter* ps[] = {&w};
        auto loss = [&](Graph& g) {
            const Var v = g.param(w);
            return g.mul(v, v);
        };
        adam_step(ps, analytic_gradients(loss), st, 0.1);
        CHECK(w.value.item() < 1.0);
        CHECK(st.step == 1);
    }
    SECTION("500 steps reach the minimum") {
        Parameter w{"w", Tensor::scalar(0.0)};
        AdamState st;
        Parameter* ps[] = {&w};
        auto loss = [&](Graph& g) { return g.sum(g.sq_diff(g.param(w), g.constant(Tensor::scalar(3.0)))); };
        for (int i = 0; i < 500; ++i) adam_step(ps, analytic_gradients(loss), st, 0.1);
        CHECK(std::abs(w.value.item() - 3.0) < 0.05);
        CHECK(st.all_finite());
    }
    SECTION("NaN gradient throws before mutating") {
        Parameter w{"w", Tensor::from_rows({{1.0, 2.0}})};
        Parameter v{"v", Tensor::from_rows({{3.0}})};
        AdamState st;
        GradientMap grads;
        grads.accumulate(&v, Tensor::scalar(1.0));
        grads.accumulate(&w, Tensor::from_rows({{0.5, std::nan("")}}));
        Parameter* ps[] = {&v, &w};
        CHECK_THROWS_AS(adam_step(ps, grads, st, 0.1), NumericError);
        CHECK(w.value == Tensor::from_rows({{1.0, 2.0}}));
        CHECK(v.value == Tensor::from_rows({{3.0}}));
        CHECK(st.step == 0);
        CHECK(st.m.empty());
    }
}

TEST_CASE("Adam matches a hand-coded update") {
    Parameter w{"w", Tensor::from_rows({{0.5, -1.0}})};
    AdamState st;
    Parameter* ps[] = {&w};
    double m[2] = {0, 0}, v[2] = {0, 0}, ref[2] = {0.5, -1.0};
    const double g_seq[3][2] = {{0.2, -0.4}, {0.1, 0.3}, {-0.5, 0.05}};
    for (int t = 0; t < 3; ++t) {
        GradientMap grads;
        grads.accumulate(&w, Tensor::from_rows({{g_seq[t][0], g_seq[t][1]}}));
        adam_step(ps, grads, st, 0.01);
        for (int k = 0; k < 2; ++k) {
            m[k] = 0.9 * m[k] + 0.1 * g_seq[t][k];
            v[k] = 0.999 * v[k] + 0.001 * g_seq[t][k] * g_seq[t][k];
            const double mh = m[k] / (1 - std::pow(0.9, t + 1));
            const double vh = v[k] / (1 - std::pow(0.999, t + 1));
            ref[k] -= 0.01 * mh / (std::sqrt(vh) + 1e-8);
        }
    }
    CHECK_THAT(w.value[0], WithinAbs(ref[0], 1e-14));
    CHECK_THAT(w.value[1], WithinAbs(ref[1], 1e-14));
}

TEST_CASE("identical seeds give bitwise identical training") {
    auto run = [] {
        Parameter w{"w", glorot_uniform(3, 2, 42)};
        const Tensor x = testutil::random_tensor(5, 3, 43);
        AdamState st;
        Parameter* ps[] = {&w};
        auto loss = [&](Graph& g) { return g.sum(g.tanh(g.matmul_nt(g.constant(x), g.param(w)))); };
        for (int i = 0; i < 20; ++i) adam_step(ps, analytic_gradients(loss), st, 0.01);
        return w.value;
    };
    const Tensor a = run();
    CHECK(a == run());
    CHECK(a.all_finite());
}

TEST_CASE("derive_seed separates names and is stable") {
    CHECK(derive_seed(1, "a") == derive_seed(1, "a"));
    CHECK(derive_seed(1, "a") != derive_seed(1, "b"));
    CHECK(derive_seed(1, "a") != derive_seed(2, "a"));
}
