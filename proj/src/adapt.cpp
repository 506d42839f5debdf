// SPDX-License-Identifier: Apache-2.0
#include "akt/adapt.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

namespace akt::adapt {

using num::Graph;
using num::Tensor;
using num::Var;
using StepList = std::vector<std::pair<std::size_t, std::size_t>>;

void KernelSpec::validate() const {
    if (kind == KernelKind::rbf && (!(bandwidth >= 0.0) || !std::isfinite(bandwidth))) {
        throw UsageError("kernel: bandwidth must be > 0, or 0 for the median heuristic");
    }
}

std::string to_string(KernelKind k) { return k == KernelKind::rbf ? "rbf" : "linear"; }

KernelKind parse_kernel(const std::string& s) {
    if (s == "rbf") return KernelKind::rbf;
    if (s == "linear") return KernelKind::linear;
    throw UsageError("unknown kernel '" + s + "' (expected rbf or linear)");
}

void AdaptConfig::validate() const {
    if (!(gamma >= 0.0 && gamma <= 1.0)) throw UsageError("adapt: gamma must lie in [0, 1]");
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw UsageError("adapt: lambda must lie in [0, 1]");
    if (batch == 0) throw UsageError("adapt: batch must be >= 1");
    if (mmd_cap < 2) throw UsageError("adapt: mmd sample cap must be >= 2");
    if (!(lr > 0.0)) throw UsageError("adapt: learning rate must be > 0");
    if (!(mmd_lr >= 0.0)) throw UsageError("adapt: mmd learning rate must be >= 0");
    kernel.validate();
}

// ---------------------------------------------------------------- MMD

namespace {

// Lexicographic order on (shape, values); decides which operand goes first.
bool canonical_less(const Tensor& a, const Tensor& b) {
    if (a.rows() != b.rows()) return a.rows() < b.rows();
    if (a.cols() != b.cols()) return a.cols() < b.cols();
    return std::lexicographical_compare(a.values().begin(), a.values().end(), b.values().begin(), b.values().end());
}

double median_offdiag(const Tensor& d) {
    std::vector<double> v;
    v.reserve(d.rows() * (d.rows() - 1));
    for (std::size_t i = 0; i < d.rows(); ++i)
        for (std::size_t j = 0; j < d.cols(); ++j)
            if (i != j) v.push_back(d(i, j));
    if (v.empty()) return 1.0;
    const std::size_t mid = v.size() / 2;
    std::nth_element(v.begin(), v.begin() + mid, v.end());
    double med = v[mid];
    if (v.size() % 2 == 0) {
        const double lower = *std::max_element(v.begin(), v.begin() + mid);
        med = 0.5 * (med + lower);
    }
    return med > 0.0 ? med : 1.0;
}

Tensor sq_dist_values(const Tensor& z) {
    Tensor d(z.rows(), z.rows());
    for (std::size_t i = 0; i < z.rows(); ++i) {
        for (std::size_t j = i + 1; j < z.rows(); ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < z.cols(); ++k) {
                const double diff = z(i, k) - z(j, k);
                s += diff * diff;
            }
            d(i, j) = d(j, i) = s;
        }
    }
    return d;
}

}  // namespace

double median_bandwidth(const Tensor& x, const Tensor& y) {
    Tensor z(x.rows() + y.rows(), x.cols());
    std::copy(x.values().begin(), x.values().end(), z.data());
    std::copy(y.values().begin(), y.values().end(), z.data() + x.size());
    return median_offdiag(sq_dist_values(z));
}

Var mmd2(Graph& g, Var x, Var y, const KernelSpec& kernel) {
    kernel.validate();
    const Tensor& X = g.value(x);
    const Tensor& Y = g.value(y);
    if (X.rows() == 0 || Y.rows() == 0) throw ShapeError("mmd2: both samples need at least one row");
    if (X.cols() != Y.cols()) {
        throw ShapeError("mmd2: dimension mismatch " + num::shape_str(X) + " vs " + num::shape_str(Y));
    }
    if (canonical_less(Y, X)) std::swap(x, y);
    if (kernel.kind == KernelKind::linear) return g.sum(g.sq_diff(g.mean_rows(x), g.mean_rows(y)));

    const std::size_t n = g.value(x).rows();
    const std::size_t m = g.value(y).rows();
    const Var parts[2] = {x, y};
    const Var z = g.concat_rows(parts);
    const Var d = g.pairwise_sq_dist(z, z);
    const double bw = kernel.bandwidth > 0.0 ? kernel.bandwidth : median_offdiag(g.value(d));
    const Var k = g.exp(g.scale(d, -1.0 / bw));
    // w^T K w with w = (1/n, ..., 1/n, -1/m, ..., -1/m).
    std::vector<double> w(n + m);
    for (std::size_t i = 0; i < n; ++i) w[i] = 1.0 / double(n);
    for (std::size_t j = 0; j < m; ++j) w[n + j] = -1.0 / double(m);
    Tensor outer(n + m, n + m);
    for (std::size_t i = 0; i < n + m; ++i)
        for (std::size_t j = 0; j < n + m; ++j) outer(i, j) = w[i] * w[j];
    return g.sum(g.mul(k, g.constant(std::move(outer))));
}

double mmd2(const Tensor& x, const Tensor& y, const KernelSpec& kernel) {
    Graph g;
    return mmd2(g, g.constant(x), g.constant(y), kernel).value().item();
}

// ---------------------------------------------------------------- history

std::string TrainHistory::csv() const {
    std::ostringstream os;
    os.precision(10);
    os << "epoch,kt_loss,mmd2,selected_count,lr,seconds\n";
    for (const auto& e : epochs) {
        os << e.epoch << ',' << e.kt_loss << ',' << e.mmd2 << ',' << e.selected << ',' << e.lr << ',' << e.seconds
           << '\n';
    }
    return os.str();
}

void TrainHistory::write_csv(const std::string& path) const {
    std::ofstream f(path);
    if (!f) throw DataError("cannot write " + path);
    f << csv();
}

// ---------------------------------------------------------------- selection

corpus::DomainDataset apply_selection(const corpus::DomainDataset& source, const autoenc::SelectionMask& mask) {
    if (mask.size() != source.bank.size()) {
        throw UsageError("selection mask covers " + std::to_string(mask.size()) + " questions, source bank has " +
                         std::to_string(source.bank.size()));
    }
    corpus::DomainDataset out;
    out.bank = source.bank;
    out.role = source.role;
    for (const auto& seq : source.sequences) {
        corpus::InteractionSequence kept{seq.student, {}};
        for (const auto& st : seq.steps)
            if (mask[st.question]) kept.steps.push_back(st);
        if (kept.steps.size() >= 2) out.sequences.push_back(std::move(kept));
    }
    if (out.sequences.empty()) {
        throw DataError("selection keeps no usable source sequences (" + std::to_string(mask.selected()) + " of " +
                        std::to_string(mask.size()) + " questions selected)");
    }
    return out;
}

// ---------------------------------------------------------------- KT epochs

namespace {

using Seconds = std::chrono::duration<double>;

struct TrainingData {
    corpus::DomainDataset data;
    std::vector<std::vector<std::uint8_t>> keep;  // only with loss masking
};

TrainingData prepare(const corpus::DomainDataset& source, const autoenc::SelectionMask& mask, bool mask_loss_only) {
    if (!mask_loss_only) return {apply_selection(source, mask), {}};
    if (mask.size() != source.bank.size()) throw UsageError("selection mask does not match the source bank");
    TrainingData td{source, {}};
    std::size_t scored = 0;
    for (const auto& seq : source.sequences) {
        auto& k = td.keep.emplace_back(seq.steps.size(), 0);
        for (std::size_t t = 0; t < seq.steps.size(); ++t) {
            k[t] = mask[seq.steps[t].question] ? 1 : 0;
            if (t > 0 && k[t]) ++scored;
        }
    }
    if (scored == 0) {
        throw DataError("selection keeps no scored source steps (" + std::to_string(mask.selected()) + " of " +
                        std::to_string(mask.size()) + " questions selected)");
    }
    return td;
}

struct EpochStats {
    double loss_sum = 0.0;
    std::size_t scored = 0;
    double mean() const { return scored ? loss_sum / double(scored) : 0.0; }
};

EpochStats kt_epoch(kt::Model& model, const TrainingData& td, std::span<num::Parameter* const> params,
                    num::AdamState& adam, double lr, std::size_t batch, std::uint64_t shuffle_seed) {
    const auto& seqs = td.data.sequences;
    std::vector<std::size_t> order(seqs.size());
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(shuffle_seed);
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng() % i]);

    EpochStats stats;
    for (std::size_t begin = 0; begin < order.size(); begin += batch) {
        const std::size_t end = std::min(order.size(), begin + batch);
        std::vector<const corpus::InteractionSequence*> members;
        std::vector<std::vector<std::uint8_t>> keep;
        for (std::size_t i = begin; i < end; ++i) {
            members.push_back(&seqs[order[i]]);
            if (!td.keep.empty()) keep.push_back(td.keep[order[i]]);
        }
        Graph g;
        kt::ForwardOptions opt;
        if (!td.keep.empty()) opt.keep = &keep;
        const auto fw = kt::forward_batch(g, model, td.data.bank, members, opt);
        if (fw.scored == 0) continue;
        const double loss = fw.loss.value().item();
        if (!std::isfinite(loss)) throw NumericError("non-finite KT loss during training");
        stats.loss_sum += loss;
        stats.scored += fw.scored;
        const auto grads = g.gradients(fw.loss);
        num::adam_step(params, grads, adam, lr);
    }
    return stats;
}

std::uint64_t epoch_seed(std::uint64_t seed, std::size_t epoch) {
    return num::derive_seed(seed, "kt.epoch." + std::to_string(epoch));
}

std::vector<std::uint32_t> id_remap(const kt::Model& model, const corpus::QuestionBank& bank) {
    if (model.cfg.mode != kt::QuestionMode::id) return {};
    std::vector<std::uint32_t> map(bank.size());
    for (std::size_t q = 0; q < bank.size(); ++q) map[q] = static_cast<std::uint32_t>(q % model.cfg.questions);
    return map;
}

// Graph rows of the adaptation-layer states at the given steps.
Var alpha_var(Graph& g, kt::Model& model, const corpus::DomainDataset& data, std::span<const std::pair<std::size_t, std::size_t>> steps) {
    if (steps.empty()) throw ShapeError("alpha states: no steps requested");
    std::map<std::size_t, std::size_t> batch_pos;
    for (auto [s, t] : steps) {
        if (s >= data.sequences.size() || t >= data.sequences[s].steps.size()) {
            throw ShapeError("alpha states: step out of range");
        }
        batch_pos.emplace(s, 0);
    }
    std::vector<const corpus::InteractionSequence*> members;
    for (auto& [s, pos] : batch_pos) {
        pos = members.size();
        members.push_back(&data.sequences[s]);
    }
    StepList local;
    local.reserve(steps.size());
    for (auto [s, t] : steps) local.emplace_back(batch_pos[s], t);
    const auto map = id_remap(model, data.bank);
    kt::ForwardOptions opt;
    opt.loss = false;
    opt.alpha = true;
    opt.alpha_steps = local;
    opt.column_map = map;
    return kt::forward_batch(g, model, data.bank, members, opt).alpha;
}

double mean_loss(kt::Model& model, const TrainingData& td, std::size_t batch) {
    EpochStats stats;
    const auto& seqs = td.data.sequences;
    for (std::size_t begin = 0; begin < seqs.size(); begin += batch) {
        const std::size_t end = std::min(seqs.size(), begin + batch);
        std::vector<const corpus::InteractionSequence*> members;
        std::vector<std::vector<std::uint8_t>> keep;
        for (std::size_t i = begin; i < end; ++i) {
            members.push_back(&seqs[i]);
            if (!td.keep.empty()) keep.push_back(td.keep[i]);
        }
        Graph g;
        kt::ForwardOptions opt;
        if (!td.keep.empty()) opt.keep = &keep;
        const auto fw = kt::forward_batch(g, model, td.data.bank, members, opt);
        stats.loss_sum += fw.loss.value().item();
        stats.scored += fw.scored;
    }
    return stats.mean();
}

}  // namespace

StepList sample_steps(const corpus::DomainDataset& data, std::size_t cap, std::uint64_t seed) {
    StepList all;
    for (std::size_t s = 0; s < data.sequences.size(); ++s)
        for (std::size_t t = 0; t < data.sequences[s].steps.size(); ++t) all.emplace_back(s, t);
    if (all.size() <= cap) return all;
    std::mt19937_64 rng(seed);
    // Partial Fisher-Yates: the first `cap` entries are a uniform sample.
    for (std::size_t i = 0; i < cap; ++i) std::swap(all[i], all[i + rng() % (all.size() - i)]);
    all.resize(cap);
    std::sort(all.begin(), all.end());
    return all;
}

Tensor alpha_states(kt::Model& model, const corpus::DomainDataset& data,
                    std::span<const std::pair<std::size_t, std::size_t>> steps) {
    Graph g;
    return alpha_var(g, model, data, steps).value();
}

num::GradientMap mmd_gradients(kt::Model& model, const corpus::DomainDataset& source,
                               std::span<const std::pair<std::size_t, std::size_t>> source_steps,
                               const corpus::DomainDataset& target,
                               std::span<const std::pair<std::size_t, std::size_t>> target_steps, double gamma,
                               const KernelSpec& kernel, double* value) {
    Graph g;
    const Var as = alpha_var(g, model, source, source_steps);
    const Var at = alpha_var(g, model, target, target_steps);
    const Var d = mmd2(g, as, at, kernel);
    if (value) *value = d.value().item();
    if (!std::isfinite(d.value().item())) throw NumericError("non-finite MMD^2");
    return g.gradients(g.scale(d, gamma));
}

TrainHistory train_source(kt::Model& model, const corpus::DomainDataset& source, const autoenc::SelectionMask& mask,
                          const AdaptConfig& cfg, const EpochCallback& on_epoch) {
    cfg.validate();
    const TrainingData td = prepare(source, mask, cfg.mask_loss_only);
    auto params = model.trainable();
    num::AdamState adam;
    TrainHistory hist;
    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const auto start = std::chrono::steady_clock::now();
        const EpochStats st = kt_epoch(model, td, params, adam, cfg.lr, cfg.batch, epoch_seed(cfg.seed, epoch));
        EpochRecord rec{epoch, st.mean(), 0.0, mask.selected(), cfg.lr,
                        Seconds(std::chrono::steady_clock::now() - start).count()};
        hist.epochs.push_back(rec);
        if (on_epoch) on_epoch(rec);
    }
    return hist;
}

TrainHistory adapt(kt::Model& model, const corpus::DomainDataset& source, const autoenc::SelectionMask& mask,
                   const corpus::DomainDataset& target_unlabeled, const AdaptConfig& cfg,
                   const EpochCallback& on_epoch) {
    cfg.validate();
    if (target_unlabeled.sequences.empty()) throw DataError("adapt: unlabeled target set is empty");
    const TrainingData td = prepare(source, mask, cfg.mask_loss_only);
    auto params = model.trainable();
    num::AdamState adam_kt;
    num::AdamState adam_mmd;

    const StepList eval_src = sample_steps(td.data, cfg.mmd_cap, num::derive_seed(cfg.seed, "mmd.eval.source"));
    const StepList eval_tgt = sample_steps(target_unlabeled, cfg.mmd_cap, num::derive_seed(cfg.seed, "mmd.eval.target"));
    auto measure = [&] {
        Graph g;
        const Var as = alpha_var(g, model, td.data, eval_src);
        const Var at = alpha_var(g, model, target_unlabeled, eval_tgt);
        return mmd2(g, as, at, cfg.kernel).value().item();
    };

    TrainHistory hist;
    hist.epochs.push_back({0, mean_loss(model, td, cfg.batch), measure(), mask.selected(), cfg.lr, 0.0});
    if (on_epoch) on_epoch(hist.epochs.back());
    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const auto start = std::chrono::steady_clock::now();
        const EpochStats st = kt_epoch(model, td, params, adam_kt, cfg.lr, cfg.batch, epoch_seed(cfg.seed, epoch));
        if (cfg.gamma > 0.0) {
            const std::uint64_t s = num::derive_seed(cfg.seed, "mmd.epoch." + std::to_string(epoch));
            const StepList src = sample_steps(td.data, cfg.mmd_cap, num::derive_seed(s, "source"));
            const StepList tgt = sample_steps(target_unlabeled, cfg.mmd_cap, num::derive_seed(s, "target"));
            const auto grads = mmd_gradients(model, td.data, src, target_unlabeled, tgt, cfg.gamma, cfg.kernel);
            num::adam_step(params, grads, adam_mmd, cfg.gamma * (cfg.mmd_lr > 0.0 ? cfg.mmd_lr : cfg.lr));
        }
        EpochRecord rec{epoch, st.mean(), measure(), mask.selected(), cfg.lr,
                        Seconds(std::chrono::steady_clock::now() - start).count()};
        hist.epochs.push_back(rec);
        if (on_epoch) on_epoch(rec);
    }
    return hist;
}

TrainHistory finetune(kt::Model& model, const corpus::DomainDataset& target_labeled, const FinetuneConfig& cfg,
                      const EpochCallback& on_epoch) {
    if (!(cfg.lr > 0.0)) throw UsageError("finetune: learning rate must be > 0");
    if (cfg.batch == 0) throw UsageError("finetune: batch must be >= 1");
    if (target_labeled.sequences.empty() || target_labeled.bank.empty()) {
        throw DataError("finetune: labeled target set is empty");
    }
    const std::uint64_t seed = num::derive_seed(cfg.seed, "finetune");
    model.bind_bank(target_labeled.bank);
    model.kt.reset_output(model.cfg, target_labeled.bank.size(), seed);
    if (model.cfg.mode == kt::QuestionMode::id) model.kt.reset_id_embed(model.cfg, target_labeled.bank.size(), seed);

    std::vector<num::Parameter*> params;
    if (cfg.unfreeze) {
        params = model.trainable();
    } else {
        params = model.kt.output_parameters();
        if (model.cfg.mode == kt::QuestionMode::id) params.push_back(&model.kt.id_embed);
    }
    TrainingData td{target_labeled, {}};
    num::AdamState adam;
    TrainHistory hist;
    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const auto start = std::chrono::steady_clock::now();
        const EpochStats st = kt_epoch(model, td, params, adam, cfg.lr, cfg.batch, epoch_seed(seed, epoch));
        EpochRecord rec{epoch, st.mean(), 0.0, 0, cfg.lr, Seconds(std::chrono::steady_clock::now() - start).count()};
        hist.epochs.push_back(rec);
        if (on_epoch) on_epoch(rec);
    }
    return hist;
}

}  // namespace akt::adapt
