// SPDX-License-Identifier: Apache-2.0
#include "akt/ktmodel.hpp"

#include <cmath>
#include <unordered_map>

#include "akt/optim.hpp"

namespace akt::kt {

using num::Graph;
using num::Tensor;
using num::Var;

std::string_view to_string(QuestionMode m) { return m == QuestionMode::text ? "text" : "id"; }

QuestionMode parse_mode(std::string_view s) {
    if (s == "text") return QuestionMode::text;
    if (s == "id") return QuestionMode::id;
    throw UsageError("unknown question mode '" + std::string(s) + "' (expected text or id)");
}

void ModelConfig::validate() const {
    if (d_q == 0 || d_h == 0 || (adaptation && d_a == 0)) throw UsageError("model: widths must be >= 1");
    if (questions == 0) throw UsageError("model: question count must be >= 1");
}

std::string_view to_string(Variant v) {
    switch (v) {
        case Variant::akt: return "akt";
        case Variant::akt_tx: return "akt-tx";
        case Variant::akt_tr: return "akt-tr";
        case Variant::akt_tx_tr: return "akt-tx-tr";
        case Variant::dkt: return "dkt";
    }
    return "akt";
}

Variant parse_variant(std::string_view s) {
    for (Variant v : {Variant::akt, Variant::akt_tx, Variant::akt_tr, Variant::akt_tx_tr, Variant::dkt}) {
        if (to_string(v) == s) return v;
    }
    throw UsageError("unknown variant '" + std::string(s) + "' (expected akt, akt-tx, akt-tr, akt-tx-tr or dkt)");
}

ModelConfig variant_config(Variant v) {
    ModelConfig c;
    switch (v) {
        case Variant::akt:
        case Variant::akt_tr:
            break;
        case Variant::akt_tx:
        case Variant::akt_tx_tr:
            c.mode = QuestionMode::id;
            break;
        case Variant::dkt:
            c.mode = QuestionMode::id;
            c.slip_guess = false;
            c.adaptation = false;
            break;
    }
    return c;
}

bool uses_transfer(Variant v) { return v == Variant::akt || v == Variant::akt_tx; }

// ---------------------------------------------------------------- params

KTParams KTParams::init(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    KTParams p;
    for (std::size_t k = 0; k < 4; ++k) {
        const std::string g = kGateNames[k];
        p.w_pos[k] = {"kt.w_pos." + g, num::glorot_uniform(cfg.d_q, cfg.d_h, num::derive_seed(seed, "kt.w_pos." + g))};
        p.w_neg[k] = {"kt.w_neg." + g, num::glorot_uniform(cfg.d_q, cfg.d_h, num::derive_seed(seed, "kt.w_neg." + g))};
        p.w_h[k] = {"kt.w_h." + g, num::glorot_uniform(cfg.d_h, cfg.d_h, num::derive_seed(seed, "kt.w_h." + g))};
        p.b[k] = {"kt.b." + g, Tensor(1, cfg.d_h)};
    }
    p.slip = layers::Dense::init("kt.slip", cfg.d_q, cfg.d_h, seed);
    p.guess = layers::Dense::init("kt.guess", cfg.d_q, cfg.d_h, seed);
    p.adapt = layers::Dense::init("kt.adapt", cfg.d_h, cfg.adaptation ? cfg.d_a : cfg.d_h, seed);
    p.reset_output(cfg, cfg.questions, seed);
    p.id_embed.name = "kt.id_embed";
    if (cfg.mode == QuestionMode::id) p.reset_id_embed(cfg, cfg.questions, seed);
    return p;
}

void KTParams::reset_output(const ModelConfig& cfg, std::size_t questions, std::uint64_t seed) {
    out_w = {"kt.out.w", num::glorot_uniform(cfg.out_dim(), questions, num::derive_seed(seed, "kt.out.w"))};
    out_b = {"kt.out.b", Tensor(questions, 1)};
}

void KTParams::reset_id_embed(const ModelConfig& cfg, std::size_t questions, std::uint64_t seed) {
    id_embed = {"kt.id_embed", num::glorot_uniform(cfg.d_q, questions, num::derive_seed(seed, "kt.id_embed"))};
}

std::vector<num::Parameter*> KTParams::parameters(const ModelConfig& cfg) {
    std::vector<num::Parameter*> out;
    for (auto* group : {&w_pos, &w_neg, &w_h, &b})
        for (auto& p : *group) out.push_back(&p);
    if (cfg.slip_guess) {
        for (auto* p : slip.parameters()) out.push_back(p);
        for (auto* p : guess.parameters()) out.push_back(p);
    }
    if (cfg.adaptation) {
        for (auto* p : adapt.parameters()) out.push_back(p);
    }
    out.push_back(&out_w);
    out.push_back(&out_b);
    if (cfg.mode == QuestionMode::id) out.push_back(&id_embed);
    return out;
}

Model Model::create(const ModelConfig& cfg_in, const corpus::QuestionBank& bank, std::uint64_t seed,
                    std::optional<autoenc::AutoencoderParams> ae, corpus::Vocab vocab) {
    Model m;
    m.cfg = cfg_in;
    m.cfg.questions = bank.size();
    if (m.cfg.mode == QuestionMode::text) {
        if (!ae) throw UsageError("model: text mode needs autoencoder parameters");
        m.cfg.d_q = ae->code_dim();
        m.ae = std::move(ae);
    }
    m.kt = KTParams::init(m.cfg, seed);
    m.vocab = std::move(vocab);
    m.bind_bank(bank);
    return m;
}

void Model::bind_bank(const corpus::QuestionBank& bank) {
    qids = bank.qids();
    bank_digest = bank.order_digest();
    cfg.questions = bank.size();
}

std::vector<num::Parameter*> Model::trainable() {
    std::vector<num::Parameter*> out;
    if (cfg.mode == QuestionMode::text && ae) out = ae->trainable();
    for (auto* p : kt.parameters(cfg)) out.push_back(p);
    return out;
}

std::vector<num::Parameter*> Model::all_parameters() {
    std::vector<num::Parameter*> out;
    if (cfg.mode == QuestionMode::text && ae) out = ae->parameters();
    for (auto* p : kt.parameters(cfg)) out.push_back(p);
    return out;
}

// ---------------------------------------------------------------- batched graph

namespace {

std::size_t column_of(std::span<const std::uint32_t> map, std::uint32_t q) { return map.empty() ? q : map[q]; }

}  // namespace

BatchForward forward_batch(Graph& g, Model& model, const corpus::QuestionBank& bank,
                           std::span<const corpus::InteractionSequence* const> seqs, const ForwardOptions& opt) {
    if (seqs.empty()) throw ShapeError("forward_batch: empty batch");
    const ModelConfig& cfg = model.cfg;
    KTParams& p = model.kt;
    if (!opt.column_map.empty() && opt.column_map.size() != bank.size()) {
        throw ShapeError("forward_batch: column map covers " + std::to_string(opt.column_map.size()) +
                         " questions, bank has " + std::to_string(bank.size()));
    }
    const std::size_t B = seqs.size();
    std::size_t T = 0;
    for (const auto* s : seqs) T = std::max(T, s->steps.size());

    // Unique questions of the batch, in first-appearance order.
    std::unordered_map<std::uint32_t, std::size_t> slot;
    std::vector<std::uint32_t> uniq;
    for (const auto* s : seqs) {
        for (const auto& st : s->steps) {
            if (st.question >= bank.size()) throw DataError("question index outside bank");
            if (st.response > 1) throw DataError("response must be 0 or 1");
            if (slot.emplace(st.question, uniq.size()).second) uniq.push_back(st.question);
        }
    }
    const std::size_t U = uniq.size();
    if (opt.loss || cfg.mode == QuestionMode::id) {
        for (std::uint32_t q : uniq) {
            if (column_of(opt.column_map, q) >= cfg.questions) {
                throw ShapeError("forward_batch: question " + std::to_string(q) + " has no output column");
            }
        }
    }
    if (opt.keep && opt.keep->size() != B) throw ShapeError("forward_batch: keep mask does not match the batch");

    Var qemb;
    if (cfg.mode == QuestionMode::text) {
        std::vector<const std::vector<std::uint32_t>*> texts;
        texts.reserve(U);
        for (std::uint32_t q : uniq) texts.push_back(&bank[q].tokens);
        autoenc::AeBinding ae(g, *model.ae);
        qemb = ae.encode(texts);
    } else {
        std::vector<std::size_t> rows;
        rows.reserve(U);
        for (std::uint32_t q : uniq) rows.push_back(column_of(opt.column_map, q));
        qemb = g.gather_rows(g.param(p.id_embed), rows);
    }

    auto stack_rows = [&](std::array<num::Parameter, 4>& ws) {
        const Var parts[4] = {g.param(ws[0]), g.param(ws[1]), g.param(ws[2]), g.param(ws[3])};
        return g.concat_rows(parts);
    };
    const Var w_pos = stack_rows(p.w_pos);
    const Var w_neg = stack_rows(p.w_neg);
    const Var w_h = stack_rows(p.w_h);
    const Var bias_parts[4] = {g.param(p.b[0]), g.param(p.b[1]), g.param(p.b[2]), g.param(p.b[3])};
    const Var bias = g.concat_cols(bias_parts);
    // Rows [0, U) hold W^+ q, rows [U, 2U) hold W^- q.
    const Var proj_parts[2] = {g.matmul_nt(qemb, w_pos), g.matmul_nt(qemb, w_neg)};
    const Var proj = g.concat_rows(proj_parts);

    Var slip, guess;
    if (cfg.slip_guess) {
        slip = g.sigmoid(layers::dense(g, qemb, p.slip.w, p.slip.b));
        guess = g.sigmoid(layers::dense(g, qemb, p.guess.w, p.guess.b));
    }

    BatchForward out;
    out.labels = Tensor(T > 1 ? (T - 1) * B : 0, 1);
    out.weights = Tensor(out.labels.rows(), 1);

    std::size_t t_end = T;
    std::vector<std::vector<std::uint8_t>> want_alpha;
    if (opt.alpha && !opt.alpha_steps.empty()) {
        want_alpha.assign(B, std::vector<std::uint8_t>(T, 0));
        std::size_t last = 0;
        for (auto [b, t] : opt.alpha_steps) {
            if (b >= B || t >= seqs[b]->steps.size()) throw ShapeError("forward_batch: alpha step out of range");
            want_alpha[b][t] = 1;
            last = std::max(last, t + 1);
        }
        if (!opt.loss) t_end = last;
    } else if (!opt.alpha) {
        t_end = T > 0 ? T - 1 : 0;
    }

    const Var out_w = (opt.loss && T > 1) ? g.param(p.out_w) : Var{};
    const Var out_b = (opt.loss && T > 1) ? g.param(p.out_b) : Var{};
    const Var adapt_w = cfg.adaptation ? g.param(p.adapt.w) : Var{};
    const Var adapt_b = cfg.adaptation ? g.param(p.adapt.b) : Var{};

    const Var zeros = g.constant(Tensor(B, cfg.d_h));
    layers::LstmState state{zeros, zeros};
    std::vector<Var> logits;
    std::vector<Var> alpha_rows;
    std::vector<std::size_t> idx(B), uidx(B), next_col(B);
    for (std::size_t t = 0; t < t_end; ++t) {
        for (std::size_t b = 0; b < B; ++b) {
            const auto& steps = seqs[b]->steps;
            if (t < steps.size()) {
                const std::size_t u = slot[steps[t].question];
                uidx[b] = u;
                idx[b] = steps[t].response ? u : U + u;
            } else {
                uidx[b] = 0;
                idx[b] = 0;
            }
        }
        state = layers::lstm_cell(g, g.gather_rows(proj, idx), w_h, bias, state);
        Var kappa = state.h;
        if (cfg.slip_guess) {
            const Var s = g.gather_rows(slip, uidx);
            const Var gs = g.gather_rows(guess, uidx);
            kappa = g.add(g.mul(g.one_minus(s), state.h), g.mul(gs, g.one_minus(state.h)));
        }
        const Var alpha = cfg.adaptation ? g.tanh(g.add_row(g.matmul_nt(kappa, adapt_w), adapt_b)) : kappa;

        if (opt.alpha) {
            std::vector<std::size_t> keep;
            for (std::size_t b = 0; b < B; ++b) {
                const bool valid = t < seqs[b]->steps.size();
                if (valid && (want_alpha.empty() || want_alpha[b][t])) keep.push_back(b);
            }
            if (!keep.empty()) alpha_rows.push_back(keep.size() == B ? alpha : g.gather_rows(alpha, keep));
        }

        if (opt.loss && t + 1 < T) {
            for (std::size_t b = 0; b < B; ++b) {
                const auto& steps = seqs[b]->steps;
                const std::size_t row = t * B + b;
                if (t + 1 < steps.size() && (!opt.keep || (*opt.keep)[b][t + 1])) {
                    next_col[b] = column_of(opt.column_map, steps[t + 1].question);
                    out.labels[row] = steps[t + 1].response;
                    out.weights[row] = 1.0;
                    ++out.scored;
                } else {
                    next_col[b] = 0;
                }
            }
            const Var wq = g.gather_rows(out_w, next_col);
            logits.push_back(g.add(g.sum_cols(g.mul(wq, alpha)), g.gather_rows(out_b, next_col)));
        }
    }

    if (opt.loss) {
        if (logits.empty()) {
            out.logits = g.constant(Tensor(0, 1));
            out.loss = g.constant(Tensor::scalar(0.0));
        } else {
            out.logits = g.concat_rows(logits);
            out.loss = g.bce_logits(out.logits, out.labels, out.weights);
        }
    }
    if (opt.alpha) {
        if (alpha_rows.empty()) throw ShapeError("forward_batch: no alpha rows requested");
        // Reorder from (step, sequence) to (sequence, step).
        Var stacked = alpha_rows.size() == 1 ? alpha_rows[0] : g.concat_rows(alpha_rows);
        std::vector<std::vector<std::size_t>> rows_of(B);
        std::size_t row = 0;
        for (std::size_t t = 0; t < t_end; ++t) {
            for (std::size_t b = 0; b < B; ++b) {
                const bool valid = t < seqs[b]->steps.size();
                if (valid && (want_alpha.empty() || want_alpha[b][t])) rows_of[b].push_back(row++);
            }
        }
        std::vector<std::size_t> order;
        order.reserve(row);
        for (const auto& r : rows_of) order.insert(order.end(), r.begin(), r.end());
        out.alpha = g.gather_rows(stacked, order);
    }
    return out;
}

// ---------------------------------------------------------------- value level

namespace {

double sigm(double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }

// x * W^T (+ b)
Tensor affine(const Tensor& x, const Tensor& w, const Tensor* b = nullptr) {
    Tensor out;
    num::gemm_nt(x, w, out);
    if (b) {
        for (std::size_t i = 0; i < out.rows(); ++i)
            for (std::size_t j = 0; j < out.cols(); ++j) out(i, j) += (*b)[j];
    }
    return out;
}

Tensor apply(Tensor t, double (*f)(double)) {
    for (double& v : t.values()) v = f(v);
    return t;
}

double tanh_fn(double x) { return std::tanh(x); }

void check_response(int r) {
    if (r != 0 && r != 1) throw DataError("response must be 0 or 1, got " + std::to_string(r));
}

CellState gates_to_state(const std::array<Tensor, 4>& z, const CellState& prev) {
    const Tensor i = apply(z[0], sigm);
    const Tensor f = apply(z[1], sigm);
    const Tensor o = apply(z[2], sigm);
    const Tensor cand = apply(z[3], tanh_fn);
    CellState next{Tensor(prev.h.rows(), prev.h.cols()), Tensor(prev.c.rows(), prev.c.cols())};
    for (std::size_t j = 0; j < next.c.size(); ++j) {
        next.c[j] = f[j] * prev.c[j] + i[j] * cand[j];
        next.h[j] = o[j] * std::tanh(next.c[j]);
    }
    return next;
}

Tensor question_vector(Model& model, const corpus::QuestionBank& bank, std::uint32_t q) {
    if (model.cfg.mode == QuestionMode::text) return autoenc::encode(bank[q], *model.ae);
    const Tensor& table = model.kt.id_embed.value;
    return Tensor::row(table.row_view(q));
}

}  // namespace

Tensor embed_question(Model& model, const corpus::QuestionBank& bank, std::string_view qid) {
    const auto idx = bank.find(qid);
    if (!idx) throw DataError("unknown question id '" + std::string(qid) + "'");
    if (model.cfg.mode == QuestionMode::id && *idx >= model.kt.id_embed.value.rows()) {
        throw DataError("question '" + std::string(qid) + "' has no id-embedding row");
    }
    return question_vector(model, bank, static_cast<std::uint32_t>(*idx));
}

Tensor embed_interaction(const Tensor& q, int r) {
    check_response(r);
    const std::size_t d = q.size();
    Tensor out(1, 2 * d);
    std::copy_n(q.data(), d, out.data() + (r == 1 ? 0 : d));
    return out;
}

std::pair<Tensor, Tensor> slip_guess(const KTParams& p, const Tensor& q) {
    return {apply(affine(q, p.slip.w.value, &p.slip.b.value), sigm),
            apply(affine(q, p.guess.w.value, &p.guess.b.value), sigm)};
}

CellState lstm_step(const KTParams& p, const Tensor& q, int r, const CellState& prev) {
    check_response(r);
    std::array<Tensor, 4> z;
    for (std::size_t k = 0; k < 4; ++k) {
        z[k] = affine(q, (r == 1 ? p.w_pos[k] : p.w_neg[k]).value, &p.b[k].value);
        num::gemm_nt(prev.h, p.w_h[k].value, z[k], true);
    }
    return gates_to_state(z, prev);
}

CellState lstm_step_block(const KTParams& p, const Tensor& interaction, const CellState& prev) {
    std::array<Tensor, 4> z;
    for (std::size_t k = 0; k < 4; ++k) {
        const Tensor& wp = p.w_pos[k].value;
        const Tensor& wn = p.w_neg[k].value;
        Tensor block(wp.rows(), wp.cols() + wn.cols());
        for (std::size_t i = 0; i < wp.rows(); ++i) {
            std::copy_n(wp.data() + i * wp.cols(), wp.cols(), block.data() + i * block.cols());
            std::copy_n(wn.data() + i * wn.cols(), wn.cols(), block.data() + i * block.cols() + wp.cols());
        }
        z[k] = affine(interaction, block, &p.b[k].value);
        num::gemm_nt(prev.h, p.w_h[k].value, z[k], true);
    }
    return gates_to_state(z, prev);
}

Tensor knowledge_state(const Tensor& h, const Tensor& s, const Tensor& g) {
    if (!h.same_shape(s) || !h.same_shape(g)) {
        throw ShapeError("knowledge_state: shapes " + num::shape_str(h) + ", " + num::shape_str(s) + ", " +
                         num::shape_str(g));
    }
    Tensor k(h.rows(), h.cols());
    for (std::size_t j = 0; j < h.size(); ++j) k[j] = (1.0 - s[j]) * h[j] + g[j] * (1.0 - h[j]);
    return k;
}

std::pair<Tensor, Tensor> predict(const KTParams& p, const ModelConfig& cfg, const Tensor& kappa) {
    Tensor alpha = cfg.adaptation ? apply(affine(kappa, p.adapt.w.value, &p.adapt.b.value), tanh_fn) : kappa;
    Tensor y = affine(alpha, p.out_w.value);
    for (std::size_t j = 0; j < y.cols(); ++j) y(0, j) = sigm(y(0, j) + p.out_b.value[j]);
    return {std::move(alpha), std::move(y)};
}

std::vector<StepTrace> forward_sequence(Model& model, const corpus::QuestionBank& bank,
                                        const corpus::InteractionSequence& seq) {
    const ModelConfig& cfg = model.cfg;
    std::unordered_map<std::uint32_t, Tensor> cache;
    CellState st{Tensor(1, cfg.d_h), Tensor(1, cfg.d_h)};
    std::vector<StepTrace> traces;
    traces.reserve(seq.steps.size());
    for (const auto& step : seq.steps) {
        if (step.question >= bank.size()) throw DataError("question index outside bank");
        auto it = cache.find(step.question);
        if (it == cache.end()) it = cache.emplace(step.question, question_vector(model, bank, step.question)).first;
        const Tensor& q = it->second;
        st = lstm_step(model.kt, q, step.response, st);
        StepTrace tr;
        tr.h = st.h;
        tr.c = st.c;
        if (cfg.slip_guess) {
            std::tie(tr.s, tr.g) = slip_guess(model.kt, q);
        } else {
            tr.s = Tensor(1, cfg.d_h);
            tr.g = Tensor(1, cfg.d_h);
        }
        tr.kappa = knowledge_state(tr.h, tr.s, tr.g);
        std::tie(tr.alpha, tr.y) = predict(model.kt, cfg, tr.kappa);
        traces.push_back(std::move(tr));
    }
    return traces;
}

double kt_loss(std::span<const StepTrace> traces, const corpus::InteractionSequence& seq) {
    if (traces.size() != seq.steps.size()) throw ShapeError("kt_loss: trace count differs from sequence length");
    if (seq.steps.size() < 2) throw DataError("kt_loss: sequence needs at least two steps");
    double loss = 0.0;
    for (std::size_t t = 0; t + 1 < seq.steps.size(); ++t) {
        const double p = traces[t].y[seq.steps[t + 1].question];
        loss -= seq.steps[t + 1].response ? std::log(p) : std::log1p(-p);
    }
    return loss;
}

}  // namespace akt::kt
