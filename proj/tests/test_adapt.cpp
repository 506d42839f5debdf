// SPDX-License-Identifier: Apache-2.0
#include <catch_amalgamated.hpp>

#include <cmath>
#include <set>

#include "akt/adapt.hpp"
#include "akt/errors.hpp"
#include "akt/synthetic.hpp"
#include "test_util.hpp"

using namespace akt;
using namespace akt::adapt;
using num::Tensor;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

double sq_dist(const Tensor& a, std::size_t i, const Tensor& b, std::size_t j) {
    double s = 0;
    for (std::size_t k = 0; k < a.cols(); ++k) s += (a(i, k) - b(j, k)) * (a(i, k) - b(j, k));
    return s;
}

// Triple-sum V-statistic.
double mmd_oracle(const Tensor& x, const Tensor& y, double bw) {
    auto k = [&](const Tensor& a, std::size_t i, const Tensor& b, std::size_t j) {
        return std::exp(-sq_dist(a, i, b, j) / bw);
    };
    const double n = x.rows(), m = y.rows();
    double xx = 0, yy = 0, xy = 0;
    for (std::size_t i = 0; i < x.rows(); ++i)
        for (std::size_t j = 0; j < x.rows(); ++j) xx += k(x, i, x, j);
    for (std::size_t i = 0; i < y.rows(); ++i)
        for (std::size_t j = 0; j < y.rows(); ++j) yy += k(y, i, y, j);
    for (std::size_t i = 0; i < x.rows(); ++i)
        for (std::size_t j = 0; j < y.rows(); ++j) xy += k(x, i, y, j);
    return xx / (n * n) + yy / (m * m) - 2 * xy / (n * m);
}

KernelSpec rbf(double bw) { return {KernelKind::rbf, bw}; }

struct Domains {
    corpus::SyntheticPair pair;
    corpus::Vocab vocab;
    explicit Domains(double shift = 1.0) {
        corpus::SyntheticSpec spec;
        spec.concepts = 3;
        spec.questions = 12;
        spec.students = 40;
        spec.length = 20;
        spec.shift = shift;
        spec.seed = 9;
        pair = corpus::generate_synthetic(spec);
        corpus::QuestionBank* banks[] = {&pair.source.bank, &pair.target.bank};
        vocab = corpus::prepare_vocab(banks, 1, 100);
    }
    kt::Model model(kt::Variant v, std::uint64_t seed = 2) const {
        kt::ModelConfig cfg = kt::variant_config(v);
        cfg.d_q = 8;
        cfg.d_h = 8;
        cfg.d_a = 6;
        std::optional<autoenc::AutoencoderParams> ae;
        if (cfg.mode == kt::QuestionMode::text) ae = autoenc::AutoencoderParams::init(vocab.size(), 8, seed + 1);
        return kt::Model::create(cfg, pair.source.bank, seed, ae, vocab);
    }
};

autoenc::SelectionMask all_selected(std::size_t n) {
    autoenc::SelectionMask m;
    m.lambda = 1.0;
    m.u.assign(n, 1);
    return m;
}

AdaptConfig small_config() {
    AdaptConfig c;
    c.epochs = 3;
    c.batch = 8;
    c.lr = 1e-2;
    c.mmd_cap = 64;
    c.seed = 4;
    return c;
}

std::vector<Tensor> snapshot(kt::Model& m) {
    std::vector<Tensor> out;
    for (auto* p : m.all_parameters()) out.push_back(p->value);
    return out;
}

}  // namespace

TEST_CASE("rbf MMD matches the triple-sum oracle") {
    const Tensor x = testutil::random_tensor(5, 3, 1);
    const Tensor y = testutil::random_tensor(7, 3, 2, -0.5, 1.5);
    for (double bw : {0.5, 2.0}) CHECK_THAT(mmd2(x, y, rbf(bw)), WithinAbs(mmd_oracle(x, y, bw), 1e-13));
    const double med = median_bandwidth(x, y);
    CHECK_THAT(mmd2(x, y, rbf(0.0)), WithinAbs(mmd_oracle(x, y, med), 1e-13));
}

TEST_CASE("linear MMD is the squared distance between means") {
    const Tensor x = Tensor::from_rows({{0, 0}, {2, 0}});
    const Tensor y = Tensor::from_rows({{1, 1}, {1, 3}, {1, 2}});
    CHECK_THAT(mmd2(x, y, {KernelKind::linear, 0.0}), WithinAbs(0.0 + 4.0, 1e-14));
}

TEST_CASE("MMD basic properties") {
    const Tensor x = testutil::random_tensor(6, 4, 3);
    const Tensor y = testutil::random_tensor(9, 4, 4);
    CHECK_THAT(mmd2(x, x, rbf(1.0)), WithinAbs(0.0, 1e-15));
    CHECK(mmd2(x, y, rbf(0.0)) == mmd2(y, x, rbf(0.0)));
    CHECK(mmd2(x, y, {KernelKind::linear, 0.0}) == mmd2(y, x, {KernelKind::linear, 0.0}));
    CHECK(mmd2(x, y, rbf(1.0)) >= 0.0);
    // Moving y away raises the discrepancy.
    Tensor far = y;
    for (double& v : far.values()) v += 3.0;
    CHECK(mmd2(x, far, rbf(1.0)) > mmd2(x, y, rbf(1.0)));
    CHECK_THROWS_AS(mmd2(x, Tensor(3, 2), rbf(1.0)), ShapeError);
    CHECK_THROWS_AS(mmd2(Tensor(0, 4), y, rbf(1.0)), ShapeError);
    CHECK_THROWS_AS(mmd2(x, y, rbf(-1.0)), UsageError);
}

TEST_CASE("median heuristic over pooled off-diagonal distances") {
    const Tensor x = Tensor::from_rows({{0.0}, {1.0}});
    const Tensor y = Tensor::from_rows({{3.0}});
    // Distances 1, 9, 4 each twice: the median of six values is 4.
    CHECK(median_bandwidth(x, y) == 4.0);
    const Tensor z = Tensor::from_rows({{0.0}, {1.0}, {3.0}});
    CHECK(median_bandwidth(z, Tensor::from_rows({{7.0}})) == 12.5);  // {1,4,9,9,36,49}
}

TEST_CASE("MMD gradient passes the finite-difference check") {
    num::Parameter px = testutil::random_param("x", 4, 3, 5);
    num::Parameter py = testutil::random_param("y", 5, 3, 6);
    num::Parameter* params[] = {&px, &py};
    for (KernelSpec k : {rbf(1.5), KernelSpec{KernelKind::linear, 0.0}}) {
        auto build = [&](num::Graph& g) { return mmd2(g, g.param(px), g.param(py), k); };
        CHECK(num::finite_diff_check(build, params, 1e-4) < 1e-5);
    }
}

TEST_CASE("selection removes unselected steps and short sequences") {
    corpus::DomainDataset d;
    d.bank = testutil::make_bank({"a", "b", "c"});
    d.sequences = {testutil::make_seq("s1", {{0, 1}, {1, 0}, {2, 1}, {0, 0}}),
                   testutil::make_seq("s2", {{1, 1}, {1, 0}, {0, 1}}),
                   testutil::make_seq("s3", {{2, 1}, {1, 1}})};
    autoenc::SelectionMask m;
    m.u = {1, 0, 1};
    const auto out = apply_selection(d, m);
    REQUIRE(out.sequences.size() == 1);
    CHECK(out.sequences[0] == testutil::make_seq("s1", {{0, 1}, {2, 1}, {0, 0}}));
    CHECK(out.bank == d.bank);
    m.u = {0, 0, 0};
    CHECK_THROWS_AS(apply_selection(d, m), DataError);
    m.u = {1, 1};
    CHECK_THROWS_AS(apply_selection(d, m), UsageError);
    m.u = {1, 1, 1};
    CHECK(apply_selection(d, m) == d);
}

TEST_CASE("step sampling") {
    corpus::DomainDataset d;
    d.bank = testutil::make_bank({"a", "b"});
    d.sequences = testutil::random_sequences(10, 9, 2, 3);
    const auto all = sample_steps(d, 1000, 1);
    CHECK(all.size() == 90);
    const auto s = sample_steps(d, 25, 7);
    CHECK(s.size() == 25);
    CHECK(std::set(s.begin(), s.end()).size() == 25);
    CHECK(std::is_sorted(s.begin(), s.end()));
    CHECK(s == sample_steps(d, 25, 7));
    CHECK(s != sample_steps(d, 25, 8));
}

TEST_CASE("alpha states match the sequence forward") {
    Domains dom;
    for (kt::Variant v : {kt::Variant::akt, kt::Variant::akt_tx}) {
        kt::Model m = dom.model(v);
        const std::vector<std::pair<std::size_t, std::size_t>> steps{{0, 0}, {0, 5}, {3, 19}, {7, 2}};
        const Tensor a = alpha_states(m, dom.pair.source, steps);
        REQUIRE(a.rows() == 4);
        for (std::size_t r = 0; r < steps.size(); ++r) {
            const auto tr = kt::forward_sequence(m, dom.pair.source.bank, dom.pair.source.sequences[steps[r].first]);
            for (std::size_t j = 0; j < a.cols(); ++j)
                CHECK_THAT(a(r, j), WithinAbs(tr[steps[r].second].alpha[j], 1e-12));
        }
    }
}

TEST_CASE("MMD gradients scale linearly with gamma") {
    Domains dom;
    kt::Model m = dom.model(kt::Variant::akt_tx);
    const auto ss = sample_steps(dom.pair.source, 30, 1);
    const auto ts = sample_steps(dom.pair.target, 30, 2);
    double v1 = 0, v2 = 0;
    const auto g1 = mmd_gradients(m, dom.pair.source, ss, dom.pair.target, ts, 1.0, rbf(0.0), &v1);
    const auto g2 = mmd_gradients(m, dom.pair.source, ss, dom.pair.target, ts, 0.25, rbf(0.0), &v2);
    CHECK(v1 == v2);
    CHECK(v1 > 0.0);
    bool any = false;
    for (auto* p : m.trainable()) {
        const Tensor a = g1.get(p), b = g2.get(p);
        for (std::size_t i = 0; i < a.size(); ++i) {
            CHECK_THAT(b[i], WithinAbs(0.25 * a[i], 1e-15 + 1e-12 * std::abs(a[i])));
            any = any || a[i] != 0.0;
        }
    }
    CHECK(any);
    // The output layer never sees the MMD term.
    const Tensor out_grad = g1.get(&m.kt.out_w);
    for (double v : out_grad.values()) CHECK(v == 0.0);
}

TEST_CASE("source training lowers the loss and is reproducible") {
    Domains dom;
    auto cfg = small_config();
    cfg.epochs = 6;
    kt::Model a = dom.model(kt::Variant::akt_tx), b = dom.model(kt::Variant::akt_tx);
    const auto mask = all_selected(dom.pair.source.bank.size());
    const auto ha = train_source(a, dom.pair.source, mask, cfg);
    const auto hb = train_source(b, dom.pair.source, mask, cfg);
    REQUIRE(ha.epochs.size() == 6);
    CHECK(ha.epochs.back().kt_loss < ha.epochs.front().kt_loss);
    CHECK(snapshot(a) == snapshot(b));
    for (std::size_t i = 0; i < 6; ++i) CHECK(ha.epochs[i].kt_loss == hb.epochs[i].kt_loss);
}

TEST_CASE("adaptation with gamma = 0 reduces to source training") {
    Domains dom;
    auto cfg = small_config();
    cfg.gamma = 0.0;
    kt::Model a = dom.model(kt::Variant::akt), b = dom.model(kt::Variant::akt);
    const auto mask = all_selected(dom.pair.source.bank.size());
    train_source(a, dom.pair.source, mask, cfg);
    const auto h = adapt::adapt(b, dom.pair.source, mask, dom.pair.target, cfg);
    CHECK(snapshot(a) == snapshot(b));
    REQUIRE(h.epochs.size() == cfg.epochs + 1);
    CHECK(h.epochs[0].epoch == 0);
    CHECK(h.epochs[0].mmd2 > 0.0);
}

TEST_CASE("the MMD step pulls the domains together") {
    Domains dom(1.5);
    auto cfg = small_config();
    cfg.epochs = 8;
    cfg.lr = 3e-3;
    cfg.mmd_lr = 3e-2;
    const auto mask = all_selected(dom.pair.source.bank.size());
    kt::Model plain = dom.model(kt::Variant::akt_tx), aligned = dom.model(kt::Variant::akt_tx);
    cfg.gamma = 0.0;
    const auto h0 = adapt::adapt(plain, dom.pair.source, mask, dom.pair.target, cfg);
    cfg.gamma = 1.0;
    const auto h1 = adapt::adapt(aligned, dom.pair.source, mask, dom.pair.target, cfg);
    CHECK(h0.epochs[0].mmd2 == h1.epochs[0].mmd2);
    CHECK(h1.epochs.back().mmd2 < h0.epochs.back().mmd2);
    CHECK(h1.epochs.back().mmd2 < h1.epochs[0].mmd2);
}

TEST_CASE("loss-only masking keeps unselected steps in the recurrence") {
    Domains dom;
    auto cfg = small_config();
    cfg.epochs = 1;
    autoenc::SelectionMask mask = all_selected(dom.pair.source.bank.size());
    for (std::size_t q = 0; q < mask.size(); q += 2) mask.u[q] = 0;
    kt::Model a = dom.model(kt::Variant::akt_tx), b = dom.model(kt::Variant::akt_tx);
    train_source(a, dom.pair.source, mask, cfg);
    cfg.mask_loss_only = true;
    train_source(b, dom.pair.source, mask, cfg);
    CHECK(snapshot(a) != snapshot(b));
    autoenc::SelectionMask none;
    none.u.assign(mask.size(), 0);
    CHECK_THROWS_AS(train_source(b, dom.pair.source, none, cfg), DataError);
}

TEST_CASE("fine-tuning rebinds the output layer and freezes the rest") {
    Domains dom;
    FinetuneConfig fc;
    fc.epochs = 3;
    fc.lr = 1e-2;
    fc.batch = 8;
    for (kt::Variant v : {kt::Variant::akt, kt::Variant::akt_tx}) {
        INFO(kt::to_string(v));
        kt::Model m = dom.model(v);
        std::map<std::string, Tensor> before;
        for (auto* p : m.all_parameters()) before[p->name] = p->value;
        const auto h = finetune(m, dom.pair.target, fc);
        CHECK(h.epochs.back().kt_loss < h.epochs.front().kt_loss);
        CHECK(m.qids == dom.pair.target.bank.qids());
        CHECK(m.bank_digest == dom.pair.target.bank.order_digest());
        for (auto* p : m.all_parameters()) {
            const bool free = p->name.rfind("kt.out.", 0) == 0 || p->name == "kt.id_embed";
            if (!free) CHECK(p->value == before[p->name]);
        }
    }
    kt::Model m = dom.model(kt::Variant::akt_tx);
    corpus::DomainDataset empty;
    CHECK_THROWS_AS(finetune(m, empty, fc), DataError);
}

TEST_CASE("history CSV") {
    TrainHistory h;
    h.epochs.push_back({0, 0.5, 0.25, 3, 0.01, 0.0});
    h.epochs.push_back({1, 0.4, 0.125, 3, 0.01, 0.0});
    const std::string csv = h.csv();
    CHECK(csv.rfind("epoch,kt_loss,mmd2,selected_count,lr,seconds\n", 0) == 0);
    CHECK(csv.find("\n1,0.4,0.125,3,0.01,0\n") != std::string::npos);
}

TEST_CASE("adapt configuration checks") {
    AdaptConfig c;
    c.gamma = 1.5;
    CHECK_THROWS_AS(c.validate(), UsageError);
    c = {};
    c.mmd_cap = 1;
    CHECK_THROWS_AS(c.validate(), UsageError);
    CHECK(parse_kernel("linear") == KernelKind::linear);
    CHECK_THROWS_AS(parse_kernel("poly"), UsageError);
}
