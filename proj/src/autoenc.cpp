// SPDX-License-Identifier: Apache-2.0
#include "akt/autoenc.hpp"

#include <algorithm>
#include <map>
#include <numeric>
#include <random>

#include "akt/optim.hpp"

namespace akt::autoenc {

using num::Graph;
using num::Tensor;
using num::Var;

AutoencoderParams AutoencoderParams::init(std::size_t vocab_size, std::size_t embed_dim, std::uint64_t seed) {
    if (embed_dim < 2 || embed_dim % 2 != 0) {
        throw UsageError("autoencoder: embedding dim must be even and >= 2, got " + std::to_string(embed_dim));
    }
    if (vocab_size == 0) throw UsageError("autoencoder: empty vocabulary");
    const std::size_t hidden = embed_dim / 2;
    AutoencoderParams p;
    p.embedding = {"ae.embedding", num::glorot_uniform(embed_dim, vocab_size, num::derive_seed(seed, "ae.embedding"))};
    p.enc_fwd = layers::LstmParams::init("ae.enc_fwd", embed_dim, hidden, seed);
    p.enc_bwd = layers::LstmParams::init("ae.enc_bwd", embed_dim, hidden, seed);
    p.dec = layers::LstmParams::init("ae.dec", embed_dim, embed_dim, seed);
    p.proj = layers::Dense::init("ae.proj", embed_dim, embed_dim, seed);
    p.refresh_normalized();
    return p;
}

void AutoencoderParams::refresh_normalized() { normalized = normalized_table(embedding.value); }

std::vector<num::Parameter*> AutoencoderParams::parameters() {
    std::vector<num::Parameter*> out{&embedding};
    for (auto* lstm : {&enc_fwd, &enc_bwd, &dec})
        for (auto* p : lstm->parameters()) out.push_back(p);
    for (auto* p : proj.parameters()) out.push_back(p);
    return out;
}

std::vector<num::Parameter*> AutoencoderParams::encoder_parameters() {
    std::vector<num::Parameter*> out;
    for (auto* lstm : {&enc_fwd, &enc_bwd})
        for (auto* p : lstm->parameters()) out.push_back(p);
    return out;
}

std::vector<num::Parameter*> AutoencoderParams::trainable() {
    auto all = parameters();
    all.erase(all.begin());  // embedding stays frozen
    return all;
}

Tensor normalized_table(const Tensor& embedding) {
    Tensor out(embedding.rows(), embedding.cols());
    for (std::size_t j = 0; j < embedding.cols(); ++j) {
        double lo = embedding(0, j), hi = embedding(0, j);
        for (std::size_t i = 1; i < embedding.rows(); ++i) {
            lo = std::min(lo, embedding(i, j));
            hi = std::max(hi, embedding(i, j));
        }
        const double span = hi - lo;
        for (std::size_t i = 0; i < embedding.rows(); ++i) {
            out(i, j) = span > 0.0 ? (embedding(i, j) - lo) / span : 0.5;
        }
    }
    return out;
}

AeBinding::AeBinding(Graph& g, AutoencoderParams& params) : g_(&g), params_(&params) {
    if (!params.normalized.same_shape(params.embedding.value)) params.refresh_normalized();
    fwd_wx_ = g.param(params.enc_fwd.w_x);
    fwd_wh_ = g.param(params.enc_fwd.w_h);
    fwd_b_ = g.param(params.enc_fwd.b);
    bwd_wx_ = g.param(params.enc_bwd.w_x);
    bwd_wh_ = g.param(params.enc_bwd.w_h);
    bwd_b_ = g.param(params.enc_bwd.b);
}

std::vector<AeBinding::Bucket> AeBinding::bucketize(std::span<const std::vector<std::uint32_t>* const> texts) const {
    std::map<std::size_t, Bucket> by_len;
    for (std::size_t i = 0; i < texts.size(); ++i) {
        const std::size_t len = texts[i]->size();
        if (len == 0) throw DataError("autoencoder: question text has no tokens");
        Bucket& b = by_len[len];
        b.length = len;
        b.members.push_back(i);
    }
    std::vector<Bucket> out;
    for (auto& [_, b] : by_len) out.push_back(std::move(b));
    return out;
}

Var AeBinding::embedded_step(std::span<const std::vector<std::uint32_t>* const> texts,
                             std::span<const std::size_t> members, std::size_t t) {
    const Tensor& table = params_->normalized;
    const std::size_t d = table.cols();
    Tensor x(members.size(), d);
    for (std::size_t r = 0; r < members.size(); ++r) {
        const std::uint32_t tok = (*texts[members[r]])[t];
        if (tok >= table.rows()) throw DataError("autoencoder: token id " + std::to_string(tok) + " outside vocabulary");
        std::copy_n(table.data() + std::size_t(tok) * d, d, x.data() + r * d);
    }
    return g_->constant(std::move(x));
}

std::vector<Var> AeBinding::run_encoder(std::span<const std::vector<std::uint32_t>* const> texts,
                                        const Bucket& bucket) {
    Graph& g = *g_;
    const std::size_t L = bucket.length;
    const std::size_t B = bucket.members.size();
    const std::size_t h = params_->enc_fwd.hidden();
    std::vector<Var> xs(L);
    for (std::size_t t = 0; t < L; ++t) xs[t] = embedded_step(texts, bucket.members, t);

    const Var zeros = g.constant(Tensor(B, h));
    std::vector<Var> fwd(L), bwd(L);
    layers::LstmState st{zeros, zeros};
    for (std::size_t t = 0; t < L; ++t) {
        st = layers::lstm_cell(g, g.matmul_nt(xs[t], fwd_wx_), fwd_wh_, fwd_b_, st);
        fwd[t] = st.h;
    }
    st = {zeros, zeros};
    for (std::size_t t = L; t-- > 0;) {
        st = layers::lstm_cell(g, g.matmul_nt(xs[t], bwd_wx_), bwd_wh_, bwd_b_, st);
        bwd[t] = st.h;
    }
    std::vector<Var> eta(L);
    for (std::size_t t = 0; t < L; ++t) {
        const Var parts[2] = {fwd[t], bwd[t]};
        eta[t] = g.concat_cols(parts);
    }
    return eta;
}

Var AeBinding::encode(std::span<const std::vector<std::uint32_t>* const> texts) {
    if (texts.empty()) throw ShapeError("encode: no texts");
    Graph& g = *g_;
    std::vector<Var> pooled;
    std::vector<std::size_t> row_of(texts.size());
    std::size_t row = 0;
    for (const Bucket& b : bucketize(texts)) {
        const auto eta = run_encoder(texts, b);
        pooled.push_back(g.max_over(eta));
        for (std::size_t m : b.members) row_of[m] = row++;
    }
    Var stacked = pooled.size() == 1 ? pooled[0] : g.concat_rows(pooled);
    bool identity = true;
    for (std::size_t i = 0; i < row_of.size(); ++i) identity = identity && row_of[i] == i;
    return identity ? stacked : g.gather_rows(stacked, row_of);
}

std::vector<Var> AeBinding::encoder_states(const std::vector<std::uint32_t>& tokens) {
    const std::vector<std::uint32_t>* one[1] = {&tokens};
    Bucket b;
    b.length = tokens.size();
    b.members = {0};
    if (b.length == 0) throw DataError("autoencoder: question text has no tokens");
    return run_encoder(one, b);
}

std::vector<Var> AeBinding::decode(Var codes, std::size_t length,
                                   std::span<const std::vector<std::uint32_t>* const> teacher) {
    if (length == 0) throw ShapeError("decode: length must be >= 1");
    Graph& g = *g_;
    if (!dec_wx_.valid()) {
        dec_wx_ = g.param(params_->dec.w_x);
        dec_wh_ = g.param(params_->dec.w_h);
        dec_b_ = g.param(params_->dec.b);
    }
    const std::size_t B = codes.rows();
    const std::size_t d = params_->embed_dim();
    const Tensor& table = params_->normalized;
    Tensor bos(B, d);
    for (std::size_t r = 0; r < B; ++r) std::copy_n(table.data() + std::size_t(corpus::Vocab::kBos) * d, d, bos.data() + r * d);
    std::vector<std::size_t> members(B);
    std::iota(members.begin(), members.end(), 0);

    Var input = g.constant(std::move(bos));
    layers::LstmState st{codes, g.constant(Tensor(B, d))};
    std::vector<Var> out;
    out.reserve(length);
    for (std::size_t t = 0; t < length; ++t) {
        st = layers::lstm_cell(g, g.matmul_nt(input, dec_wx_), dec_wh_, dec_b_, st);
        Var w_hat = g.sigmoid(layers::dense(g, st.h, params_->proj.w, params_->proj.b));
        out.push_back(w_hat);
        input = teacher.empty() ? w_hat : embedded_step(teacher, members, t);
    }
    return out;
}

Var AeBinding::reconstruction_errors(std::span<const std::vector<std::uint32_t>* const> texts, bool teacher_forcing) {
    if (texts.empty()) throw ShapeError("reconstruction_errors: no texts");
    Graph& g = *g_;
    std::vector<Var> per_bucket;
    std::vector<std::size_t> row_of(texts.size());
    std::size_t row = 0;
    for (const Bucket& b : bucketize(texts)) {
        const auto eta = run_encoder(texts, b);
        Var codes = g.max_over(eta);
        std::vector<const std::vector<std::uint32_t>*> rows;
        for (std::size_t m : b.members) rows.push_back(texts[m]);
        const auto recon = decode(codes, b.length, teacher_forcing ? std::span(rows) : std::span<const std::vector<std::uint32_t>* const>{});
        Var total;
        for (std::size_t t = 0; t < b.length; ++t) {
            Var e = g.sum_cols(g.sq_diff(recon[t], embedded_step(texts, b.members, t)));
            total = t == 0 ? e : g.add(total, e);
        }
        per_bucket.push_back(g.scale(total, 1.0 / double(b.length)));
        for (std::size_t m : b.members) row_of[m] = row++;
    }
    Var stacked = per_bucket.size() == 1 ? per_bucket[0] : g.concat_rows(per_bucket);
    bool identity = true;
    for (std::size_t i = 0; i < row_of.size(); ++i) identity = identity && row_of[i] == i;
    return identity ? stacked : g.gather_rows(stacked, row_of);
}

Var weighted_reconstruction(AeBinding& ae, std::span<const std::vector<std::uint32_t>* const> texts,
                            std::span<const double> weights) {
    if (weights.size() != texts.size()) throw ShapeError("weighted_reconstruction: weight count mismatch");
    Graph& g = ae.graph();
    Var errors = ae.reconstruction_errors(texts);
    return g.sum(g.mul(errors, g.constant(Tensor::column(weights))));
}

Tensor encode(const corpus::QuestionText& text, AutoencoderParams& params) {
    Graph g;
    AeBinding ae(g, params);
    const std::vector<std::uint32_t>* one[1] = {&text.tokens};
    return ae.encode(one).value();
}

Tensor encoder_states(const corpus::QuestionText& text, AutoencoderParams& params) {
    Graph g;
    AeBinding ae(g, params);
    const auto eta = ae.encoder_states(text.tokens);
    Tensor out(eta.size(), params.code_dim());
    for (std::size_t t = 0; t < eta.size(); ++t) {
        std::copy_n(eta[t].value().data(), params.code_dim(), out.data() + t * params.code_dim());
    }
    return out;
}

Tensor embed_tokens(std::span<const std::uint32_t> tokens, const AutoencoderParams& params) {
    const std::size_t d = params.embed_dim();
    Tensor out(tokens.size(), d);
    for (std::size_t t = 0; t < tokens.size(); ++t) {
        std::copy_n(params.normalized.data() + std::size_t(tokens[t]) * d, d, out.data() + t * d);
    }
    return out;
}

Tensor decode(const Tensor& code, std::size_t length, AutoencoderParams& params,
              const std::vector<std::uint32_t>* teacher_tokens) {
    if (code.rows() != 1 || code.cols() != params.embed_dim()) {
        throw ShapeError("decode: code must be 1x" + std::to_string(params.embed_dim()) + ", got " + num::shape_str(code));
    }
    if (teacher_tokens && teacher_tokens->size() < length) throw ShapeError("decode: teacher shorter than length");
    Graph g;
    AeBinding ae(g, params);
    std::vector<const std::vector<std::uint32_t>*> teacher;
    if (teacher_tokens) teacher.push_back(teacher_tokens);
    const auto steps = ae.decode(g.constant(code), length, teacher);
    Tensor out(length, params.embed_dim());
    for (std::size_t t = 0; t < length; ++t) {
        std::copy_n(steps[t].value().data(), params.embed_dim(), out.data() + t * params.embed_dim());
    }
    return out;
}

double reconstruction_error(const Tensor& x, const Tensor& xhat) {
    if (!x.same_shape(xhat)) {
        throw ShapeError("reconstruction_error: length mismatch " + num::shape_str(x) + " vs " + num::shape_str(xhat));
    }
    if (x.rows() == 0) throw ShapeError("reconstruction_error: empty sequence");
    double total = 0.0;
    for (std::size_t t = 0; t < x.rows(); ++t) {
        double sq = 0.0;
        for (std::size_t j = 0; j < x.cols(); ++j) {
            const double diff = xhat(t, j) - x(t, j);
            sq += diff * diff;
        }
        total += sq;
    }
    return total / double(x.rows());
}

namespace {

constexpr std::size_t kEvalChunk = 256;

std::vector<const std::vector<std::uint32_t>*> token_ptrs(const corpus::QuestionBank& bank) {
    std::vector<const std::vector<std::uint32_t>*> out;
    out.reserve(bank.size());
    for (const auto& q : bank.questions()) out.push_back(&q.tokens);
    return out;
}

double mean_of(std::span<const double> v) {
    return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / double(v.size());
}

}  // namespace

std::vector<double> bank_errors(const corpus::QuestionBank& bank, AutoencoderParams& params) {
    const auto texts = token_ptrs(bank);
    std::vector<double> out;
    out.reserve(texts.size());
    for (std::size_t begin = 0; begin < texts.size(); begin += kEvalChunk) {
        const std::size_t end = std::min(texts.size(), begin + kEvalChunk);
        Graph g;
        AeBinding ae(g, params);
        const Tensor e = ae.reconstruction_errors(std::span(texts).subspan(begin, end - begin)).value();
        out.insert(out.end(), e.values().begin(), e.values().end());
    }
    return out;
}

Tensor bank_codes(const corpus::QuestionBank& bank, AutoencoderParams& params) {
    const auto texts = token_ptrs(bank);
    const std::size_t d = params.code_dim();
    Tensor out(texts.size(), d);
    for (std::size_t begin = 0; begin < texts.size(); begin += kEvalChunk) {
        const std::size_t end = std::min(texts.size(), begin + kEvalChunk);
        Graph g;
        AeBinding ae(g, params);
        const Tensor c = ae.encode(std::span(texts).subspan(begin, end - begin)).value();
        std::copy(c.values().begin(), c.values().end(), out.data() + begin * d);
    }
    return out;
}

std::size_t SelectionMask::selected() const {
    return static_cast<std::size_t>(std::count(u.begin(), u.end(), std::uint8_t{1}));
}

SelectionMask SelectionMask::all(std::size_t n, double lambda) { return {std::vector<std::uint8_t>(n, 1), lambda}; }

SelectionMask select_instances(std::span<const double> errors, double lambda) {
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw UsageError("select_instances: lambda must lie in [0, 1]");
    SelectionMask m;
    m.lambda = lambda;
    m.u.reserve(errors.size());
    for (double e : errors) m.u.push_back(e < lambda ? 1 : 0);
    return m;
}

double selection_regularizer(const SelectionMask& mask) {
    if (mask.u.empty()) return 0.0;
    return -(mask.lambda / double(mask.u.size())) * double(mask.selected());
}

namespace {

struct WeightedText {
    const std::vector<std::uint32_t>* tokens;
    double weight;
};

void train_epoch(std::vector<WeightedText> items, AutoencoderParams& params, num::AdamState& adam,
                 const AutoencoderConfig& cfg, std::uint64_t epoch_seed) {
    std::mt19937_64 rng(epoch_seed);
    for (std::size_t i = items.size(); i > 1; --i) std::swap(items[i - 1], items[rng() % i]);
    auto trainable = params.trainable();
    const std::size_t batch = std::max<std::size_t>(1, cfg.batch);
    for (std::size_t begin = 0; begin < items.size(); begin += batch) {
        const std::size_t end = std::min(items.size(), begin + batch);
        std::vector<const std::vector<std::uint32_t>*> texts;
        std::vector<double> weights;
        for (std::size_t i = begin; i < end; ++i) {
            texts.push_back(items[i].tokens);
            weights.push_back(items[i].weight);
        }
        Graph g;
        AeBinding ae(g, params);
        Var loss = weighted_reconstruction(ae, texts, weights);
        const auto grads = g.gradients(loss);
        num::adam_step(trainable, grads, adam, cfg.lr);
    }
}

void check_config(const AutoencoderConfig& cfg) {
    if (!(cfg.lambda >= 0.0 && cfg.lambda <= 1.0)) throw UsageError("autoencoder: lambda must lie in [0, 1]");
    if (!(cfg.lr > 0.0)) throw UsageError("autoencoder: learning rate must be > 0");
}

}  // namespace

PretrainResult pretrain_selective(const corpus::QuestionBank& source, const corpus::QuestionBank& target,
                                  AutoencoderParams& params, const AutoencoderConfig& cfg) {
    check_config(cfg);
    if (source.empty() || target.empty()) throw DataError("pretrain_selective: both banks must be non-empty");
    const auto src = token_ptrs(source);
    const auto tgt = token_ptrs(target);
    const double ws = 1.0 / double(src.size());
    const double wt = 1.0 / double(tgt.size());

    PretrainResult result;
    result.mask = SelectionMask::all(src.size(), cfg.lambda);
    num::AdamState adam;
    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        std::vector<WeightedText> items;
        for (std::size_t i = 0; i < src.size(); ++i)
            if (result.mask[i]) items.push_back({src[i], ws});
        for (const auto* t : tgt) items.push_back({t, wt});
        train_epoch(std::move(items), params, adam, cfg, num::derive_seed(cfg.seed, "ae.epoch." + std::to_string(epoch)));

        result.source_errors = bank_errors(source, params);
        const auto target_errors = bank_errors(target, params);
        result.mask = select_instances(result.source_errors, cfg.lambda);

        PretrainEpoch rec;
        rec.epoch = epoch;
        rec.mean_source_error = mean_of(result.source_errors);
        rec.mean_target_error = mean_of(target_errors);
        rec.selected = result.mask.selected();
        double masked = 0.0;
        for (std::size_t i = 0; i < src.size(); ++i)
            if (result.mask[i]) masked += result.source_errors[i];
        rec.objective = masked * ws + rec.mean_target_error + selection_regularizer(result.mask);
        rec.empty_selection = rec.selected == 0;
        result.history.push_back(rec);
    }
    if (cfg.epochs == 0) {
        result.source_errors = bank_errors(source, params);
        result.mask = select_instances(result.source_errors, cfg.lambda);
    }
    return result;
}

std::vector<PretrainEpoch> pretrain(const corpus::QuestionBank& bank, AutoencoderParams& params,
                                    const AutoencoderConfig& cfg) {
    check_config(cfg);
    if (bank.empty()) throw DataError("pretrain: empty bank");
    const auto texts = token_ptrs(bank);
    const double w = 1.0 / double(texts.size());
    num::AdamState adam;
    std::vector<PretrainEpoch> history;
    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        std::vector<WeightedText> items;
        for (const auto* t : texts) items.push_back({t, w});
        train_epoch(std::move(items), params, adam, cfg, num::derive_seed(cfg.seed, "ae.epoch." + std::to_string(epoch)));
        PretrainEpoch rec;
        rec.epoch = epoch;
        const auto errors = bank_errors(bank, params);
        rec.mean_target_error = mean_of(errors);
        rec.objective = rec.mean_target_error;
        history.push_back(rec);
    }
    return history;
}

}  // namespace akt::autoenc
