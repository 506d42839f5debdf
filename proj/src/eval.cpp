// SPDX-License-Identifier: Apache-2.0
#include "akt/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "akt/optim.hpp"

namespace akt::eval {

using num::Tensor;

double auc(std::span<const double> scores, std::span<const std::uint8_t> labels) {
    if (scores.size() != labels.size()) throw ShapeError("auc: score and label counts differ");
    const std::size_t n = scores.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    double rank_sum = 0.0;
    std::size_t pos = 0;
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i;
        while (j < n && scores[order[j]] == scores[order[i]]) ++j;
        const double midrank = 0.5 * double(i + 1 + j);  // average of ranks i+1 .. j
        for (std::size_t k = i; k < j; ++k) {
            if (labels[order[k]]) {
                rank_sum += midrank;
                ++pos;
            }
        }
        i = j;
    }
    const std::size_t neg = n - pos;
    if (pos == 0 || neg == 0) throw DataError("auc: labels contain a single class");
    return (rank_sum - double(pos) * double(pos + 1) / 2.0) / (double(pos) * double(neg));
}

double f1(std::span<const double> scores, std::span<const std::uint8_t> labels, double threshold) {
    if (scores.size() != labels.size()) throw ShapeError("f1: score and label counts differ");
    std::size_t tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        const bool pred = scores[i] >= threshold;
        if (pred && labels[i]) ++tp;
        else if (pred) ++fp;
        else if (labels[i]) ++fn;
    }
    if (tp + fp == 0 || tp == 0) return 0.0;
    const double precision = double(tp) / double(tp + fp);
    const double recall = double(tp) / double(tp + fn);
    return 2.0 * precision * recall / (precision + recall);
}

Predictions predict_pairs(kt::Model& model, const corpus::DomainDataset& data, std::span<const std::uint32_t> column_map,
                          std::size_t batch) {
    Predictions out;
    const auto& seqs = data.sequences;
    for (std::size_t begin = 0; begin < seqs.size(); begin += batch) {
        const std::size_t end = std::min(seqs.size(), begin + batch);
        std::vector<const corpus::InteractionSequence*> members;
        for (std::size_t i = begin; i < end; ++i) members.push_back(&seqs[i]);
        num::Graph g;
        kt::ForwardOptions opt;
        opt.column_map = column_map;
        const auto fw = kt::forward_batch(g, model, data.bank, members, opt);
        const Tensor& z = fw.logits.value();
        // Rows are (step, sequence); emit in (sequence, step) order.
        const std::size_t B = members.size();
        const std::size_t T1 = B ? z.rows() / B : 0;
        for (std::size_t b = 0; b < B; ++b) {
            for (std::size_t t = 0; t < T1; ++t) {
                const std::size_t row = t * B + b;
                if (fw.weights[row] == 0.0) continue;
                const double p = 1.0 / (1.0 + std::exp(-z[row]));
                if (!std::isfinite(p)) throw NumericError("non-finite prediction");
                out.scores.push_back(p);
                out.labels.push_back(static_cast<std::uint8_t>(fw.labels[row]));
            }
        }
    }
    return out;
}

std::string MetricsReport::to_json() const {
    nlohmann::json j;
    j["auc"] = auc;
    j["f1"] = f1;
    j["threshold"] = threshold;
    j["pairs"] = pairs;
    j["auc_std"] = auc_std;
    j["f1_std"] = f1_std;
    j["fingerprint"] = fingerprint;
    j["folds"] = nlohmann::json::array();
    for (const auto& f : folds) {
        j["folds"].push_back({{"fold", f.fold}, {"auc", f.auc}, {"f1", f.f1}, {"pairs", f.pairs}});
    }
    return j.dump(2);
}

MetricsReport evaluate(kt::Model& model, const corpus::DomainDataset& data, std::span<const std::uint32_t> column_map) {
    if (column_map.empty() && data.bank.order_digest() != model.bank_digest) {
        throw DataError("evaluate: dataset question bank does not match the model's output layer");
    }
    const Predictions p = predict_pairs(model, data, column_map);
    if (p.scores.empty()) throw DataError("evaluate: dataset has no scored pairs");
    MetricsReport r;
    r.auc = auc(p.scores, p.labels);
    r.f1 = f1(p.scores, p.labels, r.threshold);
    r.pairs = p.scores.size();
    return r;
}

// ---------------------------------------------------------------- experiments

kt::ModelConfig ExperimentConfig::model_config() const {
    kt::ModelConfig c = kt::variant_config(variant);
    c.d_q = model.d_q;
    c.d_h = model.d_h;
    c.d_a = model.d_a;
    return c;
}

void ExperimentConfig::validate() const {
    if (folds < 2) throw UsageError("experiment: folds must be >= 2");
    if (!(labeled_fraction > 0.0 && unlabeled_fraction > 0.0 && labeled_fraction + unlabeled_fraction < 1.0)) {
        throw UsageError("experiment: labeled and unlabeled fractions must be > 0 and sum below 1");
    }
    train.validate();
    if (!(ae.lambda >= 0.0 && ae.lambda <= 1.0)) throw UsageError("autoencoder: lambda must lie in [0, 1]");
}

std::string fingerprint(const ExperimentConfig& c) {
    std::ostringstream os;
    os.precision(17);
    os << "variant=" << kt::to_string(c.variant) << ";seed=" << c.seed << ";d_q=" << c.model.d_q
       << ";d_h=" << c.model.d_h << ";d_a=" << c.model.d_a << ";embed=" << c.ae.embed_dim
       << ";ae_epochs=" << c.ae.epochs << ";ae_lr=" << c.ae.lr << ";gamma=" << c.train.gamma
       << ";lambda=" << c.train.lambda << ";kernel=" << adapt::to_string(c.train.kernel.kind)
       << ";bandwidth=" << c.train.kernel.bandwidth << ";mmd_cap=" << c.train.mmd_cap
       << ";epochs=" << c.train.epochs << ";lr=" << c.train.lr << ";batch=" << c.train.batch
       << ";ft_epochs=" << c.finetune.epochs << ";ft_lr=" << c.finetune.lr << ";unfreeze=" << c.finetune.unfreeze
       << ";folds=" << c.folds << ";max_len=" << c.max_len << ";labeled=" << c.labeled_fraction
       << ";unlabeled=" << c.unlabeled_fraction << ";mask_loss_only=" << c.train.mask_loss_only << ";mmd_lr=" << c.train.mmd_lr
       << ";ae_batch=" << c.ae.batch << ";ft_batch=" << c.finetune.batch << ";embeddings=" << c.embeddings;
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(num::fnv1a64(os.str())));
    return buf;
}

std::uint64_t seed_for(const ExperimentConfig& cfg, const std::string& part) { return num::derive_seed(cfg.seed, part); }

autoenc::AutoencoderConfig autoencoder_config(const ExperimentConfig& cfg) {
    autoenc::AutoencoderConfig a = cfg.ae;
    a.lambda = cfg.train.lambda;
    a.seed = seed_for(cfg, "ae.train");
    return a;
}

adapt::AdaptConfig stage_config(const ExperimentConfig& cfg, const std::string& tag) {
    adapt::AdaptConfig t = cfg.train;
    t.seed = seed_for(cfg, "train." + tag);
    return t;
}

adapt::FinetuneConfig finetune_config(const ExperimentConfig& cfg) {
    adapt::FinetuneConfig ft = cfg.finetune;
    ft.seed = seed_for(cfg, "finetune");
    return ft;
}

autoenc::AutoencoderParams init_autoencoder(const ExperimentConfig& cfg, const corpus::Vocab& vocab) {
    auto ae = autoenc::AutoencoderParams::init(vocab.size(), cfg.ae.embed_dim, seed_for(cfg, "ae.init"));
    if (!cfg.embeddings.empty()) {
        corpus::apply_embedding_file(cfg.embeddings, vocab, ae.embedding.value);
        ae.refresh_normalized();
    }
    return ae;
}

namespace {

double mean(std::span<const double> v) { return std::accumulate(v.begin(), v.end(), 0.0) / double(v.size()); }

double stddev(std::span<const double> v) {
    if (v.size() < 2) return 0.0;
    const double m = mean(v);
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / double(v.size() - 1));
}

}  // namespace

kt::Model build_model(const ExperimentConfig& cfg, const corpus::QuestionBank& bank, const corpus::Vocab& vocab,
                      const autoenc::AutoencoderParams* pretrained) {
    const kt::ModelConfig mc = cfg.model_config();
    if (mc.mode == kt::QuestionMode::id) return kt::Model::create(mc, bank, seed_for(cfg, "model"));
    autoenc::AutoencoderParams ae;
    if (pretrained) {
        ae = *pretrained;
    } else {
        ae = init_autoencoder(cfg, vocab);
        autoenc::pretrain(bank, ae, autoencoder_config(cfg));
    }
    return kt::Model::create(mc, bank, seed_for(cfg, "model"), std::move(ae), vocab);
}

MetricsReport cross_validate(const corpus::DomainDataset& data, const corpus::Vocab& vocab,
                             const ExperimentConfig& cfg) {
    cfg.validate();
    const auto folds = corpus::kfold_split(data, cfg.folds, seed_for(cfg, "folds"));
    std::optional<autoenc::AutoencoderParams> ae;
    if (cfg.model_config().mode == kt::QuestionMode::text) {
        // Texts carry no responses, so one pretraining serves every fold.
        ae = init_autoencoder(cfg, vocab);
        autoenc::pretrain(data.bank, *ae, autoencoder_config(cfg));
    }
    MetricsReport report;
    report.fingerprint = fingerprint(cfg);
    std::vector<double> aucs, f1s;
    for (std::size_t k = 0; k < folds.size(); ++k) {
        const auto train = corpus::subset(data, folds[k].train, corpus::DomainRole::source);
        const auto test = corpus::subset(data, folds[k].test, corpus::DomainRole::source);
        kt::Model model = build_model(cfg, data.bank, vocab, ae ? &*ae : nullptr);
        adapt::train_source(model, train, autoenc::SelectionMask::all(data.bank.size()),
                            stage_config(cfg, "fold." + std::to_string(k)));
        const MetricsReport r = evaluate(model, test);
        report.folds.push_back({k, r.auc, r.f1, r.pairs});
        aucs.push_back(r.auc);
        f1s.push_back(r.f1);
        report.pairs += r.pairs;
    }
    report.auc = mean(aucs);
    report.f1 = mean(f1s);
    report.auc_std = stddev(aucs);
    report.f1_std = stddev(f1s);
    return report;
}

std::vector<std::uint32_t> transfer_column_map(kt::Model& model, const corpus::QuestionBank& source_bank,
                                               const corpus::QuestionBank& target_bank) {
    std::vector<std::uint32_t> map(target_bank.size());
    if (model.cfg.mode == kt::QuestionMode::id) {
        for (std::size_t q = 0; q < map.size(); ++q) map[q] = static_cast<std::uint32_t>(q % model.cfg.questions);
        return map;
    }
    if (source_bank.size() != model.cfg.questions) throw DataError("transfer map: source bank does not match model");
    const Tensor src = autoenc::bank_codes(source_bank, *model.ae);
    const Tensor tgt = autoenc::bank_codes(target_bank, *model.ae);
    auto norm = [](std::span<const double> v) {
        double s = 0.0;
        for (double x : v) s += x * x;
        return std::sqrt(s);
    };
    std::vector<double> src_norm(src.rows());
    for (std::size_t i = 0; i < src.rows(); ++i) src_norm[i] = norm(src.row_view(i));
    for (std::size_t q = 0; q < tgt.rows(); ++q) {
        const auto t = tgt.row_view(q);
        const double tn = norm(t);
        double best = -2.0;
        std::size_t arg = 0;
        for (std::size_t i = 0; i < src.rows(); ++i) {
            const auto s = src.row_view(i);
            const double dot = std::inner_product(s.begin(), s.end(), t.begin(), 0.0);
            const double cos = dot / std::max(src_norm[i] * tn, 1e-12);
            if (cos > best) {
                best = cos;
                arg = i;
            }
        }
        map[q] = static_cast<std::uint32_t>(arg);
    }
    return map;
}

TargetSplit split_target(const corpus::DomainDataset& target, double labeled_fraction, double unlabeled_fraction,
                         std::uint64_t seed) {
    const double fr[2] = {labeled_fraction, unlabeled_fraction};
    const auto groups = corpus::split_students(target, fr, seed);
    TargetSplit s;
    s.labeled = corpus::subset(target, groups.at(0), corpus::DomainRole::target_labeled);
    s.unlabeled = corpus::subset(target, groups.at(1), corpus::DomainRole::target_unlabeled);
    s.test = corpus::subset(target, groups.at(2), corpus::DomainRole::target_labeled);
    if (s.labeled.sequences.empty() || s.unlabeled.sequences.empty() || s.test.sequences.empty()) {
        throw DataError("target split: every part needs at least one student");
    }
    return s;
}

TransferRun run_transfer(const corpus::DomainDataset& source, const TargetSplit& target, const corpus::Vocab& vocab,
                         const ExperimentConfig& cfg) {
    cfg.validate();
    TransferRun run;
    const kt::ModelConfig mc = cfg.model_config();
    std::optional<autoenc::AutoencoderParams> ae;
    if (mc.mode == kt::QuestionMode::text) {
        ae = init_autoencoder(cfg, vocab);
        auto pr = autoenc::pretrain_selective(source.bank, target.labeled.bank, *ae, autoencoder_config(cfg));
        run.mask = std::move(pr.mask);
        run.pretrain_history = std::move(pr.history);
    } else {
        run.mask = autoenc::SelectionMask::all(source.bank.size(), cfg.train.lambda);
    }
    kt::Model model = build_model(cfg, source.bank, vocab, ae ? &*ae : nullptr);
    try {
        (void)adapt::apply_selection(source, run.mask);
        run.adapted = true;
    } catch (const DataError&) {
        run.adapted = false;
    }
    if (run.adapted) {
        run.adapt_history = adapt::adapt(model, source, run.mask, target.unlabeled, stage_config(cfg, "adapt"));
    }
    adapt::finetune(model, target.labeled, finetune_config(cfg));
    run.report = evaluate(model, target.test);
    run.report.fingerprint = fingerprint(cfg);
    return run;
}

TransferRun run_direct(const corpus::DomainDataset& source, const TargetSplit& target, const corpus::Vocab& vocab,
                       const ExperimentConfig& cfg) {
    cfg.validate();
    TransferRun run;
    run.mask = autoenc::SelectionMask::all(source.bank.size(), cfg.train.lambda);
    kt::Model model = build_model(cfg, source.bank, vocab);
    run.adapt_history = adapt::train_source(model, source, run.mask, stage_config(cfg, "adapt"));
    run.adapted = false;
    const auto map = transfer_column_map(model, source.bank, target.test.bank);
    run.report = evaluate(model, target.test, map);
    run.report.fingerprint = fingerprint(cfg);
    return run;
}

}  // namespace akt::eval
