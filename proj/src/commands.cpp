// SPDX-License-Identifier: Apache-2.0
#include "akt/commands.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "akt/checkpoint.hpp"
#include "akt/synthetic.hpp"

namespace akt::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void require_path(const std::string& p, const char* key) {
    if (p.empty()) throw UsageError(std::string("config: ") + key + " is not set");
}

struct Loaded {
    corpus::DomainDataset source;
    corpus::DomainDataset target;
    corpus::Vocab vocab;
};

corpus::DomainDataset read_domain(const std::string& bank_path, corpus::DomainRole role) {
    corpus::DomainDataset d;
    d.role = role;
    d.bank = corpus::read_question_bank(bank_path);
    return d;
}

void finish_domain(corpus::DomainDataset& d, const std::string& inter_path, const corpus::Vocab& vocab,
                   const RunConfig& rc) {
    corpus::assign_tokens(d.bank, vocab, rc.exp.max_len);
    d.sequences = corpus::load_interactions(inter_path, d.bank, rc.max_steps).sequences;
    if (d.sequences.empty()) throw DataError("no usable sequences in " + inter_path);
}

// Loads the source and (optionally) target domains. A fixed vocabulary comes
// from an earlier stage's checkpoint; otherwise it is built over both banks.
Loaded load_data(const RunConfig& rc, const corpus::Vocab* fixed, bool with_target = true) {
    require_path(rc.data.source_bank, "data.source_bank");
    require_path(rc.data.source_interactions, "data.source_interactions");
    if (with_target) {
        require_path(rc.data.target_bank, "data.target_bank");
        require_path(rc.data.target_interactions, "data.target_interactions");
    }
    Loaded d;
    d.source = read_domain(rc.data.source_bank, corpus::DomainRole::source);
    if (with_target) {
        d.target = read_domain(rc.data.target_bank, corpus::DomainRole::target_labeled);
    }
    if (fixed) {
        d.vocab = *fixed;
    } else {
        std::vector<const corpus::QuestionBank*> banks{&d.source.bank};
        if (with_target) banks.push_back(&d.target.bank);
        d.vocab = corpus::build_vocab(banks, rc.min_count);
    }
    finish_domain(d.source, rc.data.source_interactions, d.vocab, rc);
    if (with_target) finish_domain(d.target, rc.data.target_interactions, d.vocab, rc);
    return d;
}

eval::TargetSplit split(const RunConfig& rc, const corpus::DomainDataset& target) {
    return eval::split_target(target, rc.exp.labeled_fraction, rc.exp.unlabeled_fraction,
                              eval::seed_for(rc.exp, "target.split"));
}

fs::path out_dir(const RunConfig& rc) {
    fs::create_directories(rc.out);
    return rc.out;
}

void write_text(const fs::path& p, const std::string& text) {
    std::ofstream f(p, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("cannot write " + p.string());
    f << text;
}

json read_json(const fs::path& p) {
    std::ifstream f(p);
    if (!f) throw DataError("cannot open " + p.string());
    try {
        return json::parse(f);
    } catch (const json::exception& e) {
        throw DataError(p.string() + ": " + e.what());
    }
}

Checkpoint load_checkpoint_arg(const CommandOptions& opt, const char* what) {
    if (opt.checkpoint.empty()) throw UsageError(std::string("--checkpoint is required (") + what + ")");
    return read_checkpoint(opt.checkpoint);
}

void require_text(const RunConfig& rc, const char* cmd) {
    if (kt::variant_config(rc.exp.variant).mode != kt::QuestionMode::text) {
        throw UsageError(std::string(cmd) + ": variant " + std::string(kt::to_string(rc.exp.variant)) +
                         " has no autoencoder");
    }
}

void check_mask_order(const StoredMask& m, const corpus::QuestionBank& source) {
    if (m.qids != source.qids()) throw DataError("selection mask was saved for a different source question order");
}

std::string pretrain_csv(const std::vector<autoenc::PretrainEpoch>& h) {
    std::ostringstream os;
    os.precision(10);
    os << "epoch,mean_source_error,mean_target_error,selected_count,objective,empty_selection\n";
    for (const auto& e : h) {
        os << e.epoch << ',' << e.mean_source_error << ',' << e.mean_target_error << ',' << e.selected << ','
           << e.objective << ',' << (e.empty_selection ? 1 : 0) << '\n';
    }
    return os.str();
}

void save_model(const fs::path& path, kt::Model& model, const RunConfig& rc, const std::string& stage,
                const std::optional<StoredMask>& mask) {
    Checkpoint ckpt = pack_model(model, rc.exp.variant, stage, mask);
    ckpt.meta["fingerprint"] = eval::fingerprint(rc.exp);
    write_checkpoint(path, ckpt);
}

void log_history(std::ostream& log, const adapt::TrainHistory& h) {
    if (h.epochs.empty()) return;
    const auto& last = h.epochs.back();
    log << "  epochs=" << h.epochs.size() << " final kt_loss=" << last.kt_loss;
    if (h.epochs.front().mmd2 != 0.0 || last.mmd2 != 0.0) {
        log << " mmd2 " << h.epochs.front().mmd2 << " -> " << last.mmd2;
    }
    log << '\n';
}

json report_json(const eval::MetricsReport& r, const RunConfig& rc, const std::string& model, const std::string& stage,
                 const std::string& dataset, std::size_t s_dim, std::size_t a_dim) {
    json j = json::parse(r.to_json());
    j["model"] = model;
    j["stage"] = stage;
    j["dataset"] = dataset;
    j["s_dim"] = s_dim;
    j["adaptation_dim"] = a_dim;
    j["gamma"] = rc.exp.train.gamma;
    j["lambda"] = rc.exp.train.lambda;
    j["kernel"] = adapt::to_string(rc.exp.train.kernel.kind);
    j["mmd_cap"] = rc.exp.train.mmd_cap;
    j["seed"] = rc.exp.seed;
    return j;
}

std::string fmt(double v) {
    std::ostringstream os;
    os.precision(10);
    os << v;
    return os.str();
}

}  // namespace

RunConfig resolve_config(const CommandOptions& opt) {
    RunConfig rc = opt.config.empty() ? RunConfig{} : load_run_config(opt.config);
    if (opt.seed) rc.set_seed(*opt.seed);
    if (opt.out) rc.out = *opt.out;
    if (opt.variant) rc.exp.variant = kt::parse_variant(*opt.variant);
    rc.validate();
    return rc;
}

void cmd_gen_synthetic(const CommandOptions& opt, std::ostream& log) {
    const RunConfig rc = resolve_config(opt);
    const auto pair = corpus::generate_synthetic(rc.synthetic);
    const fs::path out = out_dir(rc);
    corpus::write_question_bank(out / "source_bank.jsonl", pair.source.bank);
    corpus::write_interactions(out / "source_interactions.jsonl", pair.source);
    corpus::write_question_bank(out / "target_bank.jsonl", pair.target.bank);
    corpus::write_interactions(out / "target_interactions.jsonl", pair.target);
    log << "wrote " << pair.source.sequences.size() << " source and " << pair.target.sequences.size()
        << " target students to " << out.string() << '\n';
}

void cmd_pretrain_ae(const CommandOptions& opt, std::ostream& log) {
    const RunConfig rc = resolve_config(opt);
    require_text(rc, "pretrain-ae");
    Loaded d = load_data(rc, nullptr);
    const auto parts = split(rc, d.target);
    auto ae = eval::init_autoencoder(rc.exp, d.vocab);
    StoredMask stored;
    stored.qids = d.source.bank.qids();
    const fs::path out = out_dir(rc);
    if (kt::uses_transfer(rc.exp.variant)) {
        auto res = autoenc::pretrain_selective(d.source.bank, parts.labeled.bank, ae, eval::autoencoder_config(rc.exp));
        stored.mask = res.mask;
        write_text(out / "pretrain.csv", pretrain_csv(res.history));
        std::ostringstream os;
        os.precision(10);
        os << "qid,error,selected\n";
        for (std::size_t i = 0; i < res.source_errors.size(); ++i) {
            os << stored.qids[i] << ',' << res.source_errors[i] << ',' << int(res.mask.u[i]) << '\n';
        }
        write_text(out / "source_errors.csv", os.str());
        if (!res.history.empty() && res.history.back().empty_selection) {
            log << "warning: no source question selected at lambda=" << rc.exp.train.lambda << '\n';
        }
    } else {
        const auto h = autoenc::pretrain(d.source.bank, ae, eval::autoencoder_config(rc.exp));
        stored.mask = autoenc::SelectionMask::all(d.source.bank.size(), rc.exp.train.lambda);
        write_text(out / "pretrain.csv", pretrain_csv(h));
    }
    Checkpoint ckpt = pack_autoencoder(ae, d.vocab, stored);
    ckpt.meta["fingerprint"] = eval::fingerprint(rc.exp);
    write_checkpoint(out / "ae.ckpt", ckpt);
    log << "selected " << stored.mask.selected() << " of " << stored.mask.size() << " source questions; wrote "
        << (out / "ae.ckpt").string() << '\n';
}

void cmd_train(const CommandOptions& opt, std::ostream& log) {
    const RunConfig rc = resolve_config(opt);
    const kt::ModelConfig mc = rc.exp.model_config();
    std::optional<Checkpoint> ae_ckpt;
    if (!opt.checkpoint.empty()) {
        ae_ckpt = read_checkpoint(opt.checkpoint);
        if (ae_ckpt->kind() != "autoencoder") throw UsageError("train: --checkpoint must come from pretrain-ae");
        require_text(rc, "train");
    }
    std::optional<corpus::Vocab> vocab;
    if (ae_ckpt) vocab = unpack_vocab(*ae_ckpt);
    Loaded d = load_data(rc, vocab ? &*vocab : nullptr, false);
    std::optional<autoenc::AutoencoderParams> ae;
    if (ae_ckpt) ae = unpack_autoencoder(*ae_ckpt);
    kt::Model model = eval::build_model(rc.exp, d.source.bank, d.vocab, ae ? &*ae : nullptr);
    const auto h = adapt::train_source(model, d.source, autoenc::SelectionMask::all(d.source.bank.size()),
                                       eval::stage_config(rc.exp, "adapt"));
    const fs::path out = out_dir(rc);
    h.write_csv((out / "train.csv").string());
    save_model(out / "trained.ckpt", model, rc, "train", std::nullopt);
    log << "trained " << kt::to_string(rc.exp.variant) << " (" << kt::to_string(mc.mode) << " mode) on "
        << d.source.sequences.size() << " source sequences\n";
    log_history(log, h);
}

void cmd_adapt(const CommandOptions& opt, std::ostream& log) {
    const RunConfig rc = resolve_config(opt);
    if (!kt::uses_transfer(rc.exp.variant)) {
        throw UsageError("adapt: variant " + std::string(kt::to_string(rc.exp.variant)) + " skips adaptation");
    }
    const bool text = rc.exp.model_config().mode == kt::QuestionMode::text;
    std::optional<Checkpoint> ae_ckpt;
    if (text) {
        ae_ckpt = load_checkpoint_arg(opt, "autoencoder from pretrain-ae");
        if (ae_ckpt->kind() != "autoencoder") throw UsageError("adapt: --checkpoint must come from pretrain-ae");
    }
    std::optional<corpus::Vocab> vocab;
    if (ae_ckpt) vocab = unpack_vocab(*ae_ckpt);
    Loaded d = load_data(rc, vocab ? &*vocab : nullptr);
    const auto parts = split(rc, d.target);
    StoredMask stored;
    stored.qids = d.source.bank.qids();
    std::optional<autoenc::AutoencoderParams> ae;
    if (ae_ckpt) {
        auto m = unpack_mask(*ae_ckpt);
        if (!m) throw DataError("adapt: autoencoder checkpoint carries no selection mask");
        check_mask_order(*m, d.source.bank);
        stored = *m;
        ae = unpack_autoencoder(*ae_ckpt);
    } else {
        stored.mask = autoenc::SelectionMask::all(d.source.bank.size(), rc.exp.train.lambda);
    }
    kt::Model model = eval::build_model(rc.exp, d.source.bank, d.vocab, ae ? &*ae : nullptr);
    const auto h = adapt::adapt(model, d.source, stored.mask, parts.unlabeled, eval::stage_config(rc.exp, "adapt"));
    const fs::path out = out_dir(rc);
    h.write_csv((out / "adapt.csv").string());
    save_model(out / "adapted.ckpt", model, rc, "adapt", stored);
    log << "adapted on " << stored.mask.selected() << " selected source questions and "
        << parts.unlabeled.sequences.size() << " unlabeled target sequences\n";
    log_history(log, h);
}

void cmd_finetune(const CommandOptions& opt, std::ostream& log) {
    const RunConfig rc = resolve_config(opt);
    const Checkpoint ckpt = load_checkpoint_arg(opt, "model from train or adapt");
    kt::Model model = unpack_model(ckpt);
    const bool text = model.cfg.mode == kt::QuestionMode::text;
    Loaded d = load_data(rc, text ? &model.vocab : nullptr);
    const auto parts = split(rc, d.target);
    const auto h = adapt::finetune(model, parts.labeled, eval::finetune_config(rc.exp));
    const fs::path out = out_dir(rc);
    h.write_csv((out / "finetune.csv").string());
    RunConfig saved = rc;
    saved.exp.variant = unpack_variant(ckpt);
    save_model(out / "finetuned.ckpt", model, saved, "finetune", unpack_mask(ckpt));
    log << "fine-tuned on " << parts.labeled.sequences.size() << " labeled target sequences\n";
    log_history(log, h);
}

void cmd_eval(const CommandOptions& opt, std::ostream& log) {
    const RunConfig rc = resolve_config(opt);
    const Checkpoint ckpt = load_checkpoint_arg(opt, "model to evaluate");
    kt::Model model = unpack_model(ckpt);
    const bool text = model.cfg.mode == kt::QuestionMode::text;
    Loaded d = load_data(rc, text ? &model.vocab : nullptr);
    const auto parts = split(rc, d.target);
    eval::MetricsReport r;
    if (model.bank_digest == d.target.bank.order_digest()) {
        r = eval::evaluate(model, parts.test);
    } else if (model.bank_digest == d.source.bank.order_digest()) {
        const auto map = eval::transfer_column_map(model, d.source.bank, d.target.bank);
        r = eval::evaluate(model, parts.test, map);
    } else {
        throw DataError("eval: checkpoint was built for neither the source nor the target question bank");
    }
    RunConfig used = rc;
    used.exp.variant = unpack_variant(ckpt);
    r.fingerprint = eval::fingerprint(used.exp);
    const std::string variant(kt::to_string(used.exp.variant));
    const std::string stage = ckpt.meta.value("stage", "");
    json j = report_json(r, used, variant, stage, "target-test", model.cfg.d_h,
                         model.cfg.adaptation ? model.cfg.d_a : 0);
    j["checkpoint_fingerprint"] = ckpt.meta.value("fingerprint", "");
    const fs::path out = out_dir(rc);
    const fs::path path = out / ("metrics_" + variant + "_" + stage + ".json");
    write_text(path, j.dump(2) + "\n");
    log << variant << " (" << stage << ") target test: auc=" << fmt(r.auc) << " f1=" << fmt(r.f1)
        << " pairs=" << r.pairs << " -> " << path.string() << '\n';
}

void cmd_cv(const CommandOptions& opt, std::ostream& log) {
    const RunConfig rc = resolve_config(opt);
    Loaded d = load_data(rc, nullptr, false);
    const auto r = eval::cross_validate(d.source, d.vocab, rc.exp);
    const std::string variant(kt::to_string(rc.exp.variant));
    const auto mc = rc.exp.model_config();
    const fs::path out = out_dir(rc);
    std::ostringstream os;
    os << "fold,auc,f1,pairs\n";
    for (const auto& f : r.folds) os << f.fold << ',' << fmt(f.auc) << ',' << fmt(f.f1) << ',' << f.pairs << '\n';
    write_text(out / ("cv_" + variant + ".csv"), os.str());
    const json j = report_json(r, rc, variant, "cv", "source-cv", mc.d_h, mc.adaptation ? mc.d_a : 0);
    write_text(out / ("metrics_" + variant + "_cv.json"), j.dump(2) + "\n");
    log << variant << " " << rc.exp.folds << "-fold cv: auc=" << fmt(r.auc) << " +- " << fmt(r.auc_std)
        << " f1=" << fmt(r.f1) << " +- " << fmt(r.f1_std) << '\n';
}

void cmd_sweep(const CommandOptions& opt, std::ostream& log) {
    const RunConfig rc = resolve_config(opt);
    if (opt.param != "lambda" && opt.param != "gamma") throw UsageError("sweep: --param must be lambda or gamma");
    if (!kt::uses_transfer(rc.exp.variant)) throw UsageError("sweep: variant has no transfer stage to sweep");
    const auto& values = opt.param == "lambda" ? rc.lambda_sweep : rc.gamma_sweep;
    if (values.empty()) throw UsageError("sweep: empty value list");
    Loaded d = load_data(rc, nullptr);
    const auto parts = split(rc, d.target);
    std::ostringstream os;
    os << "x,auc,f1,selected_count,adapted,fingerprint\n";
    for (double x : values) {
        eval::ExperimentConfig cfg = rc.exp;
        (opt.param == "lambda" ? cfg.train.lambda : cfg.train.gamma) = x;
        const auto run = eval::run_transfer(d.source, parts, d.vocab, cfg);
        os << fmt(x) << ',' << fmt(run.report.auc) << ',' << fmt(run.report.f1) << ',' << run.mask.selected() << ','
           << (run.adapted ? 1 : 0) << ',' << run.report.fingerprint << '\n';
        log << opt.param << "=" << fmt(x) << " auc=" << fmt(run.report.auc) << " f1=" << fmt(run.report.f1)
            << " selected=" << run.mask.selected() << '\n';
    }
    const fs::path out = out_dir(rc);
    write_text(out / ("sensitivity_" + opt.param + ".csv"), os.str());
}

void cmd_report(const CommandOptions& opt, std::ostream& log) {
    const RunConfig rc = resolve_config(opt);
    const fs::path root = rc.out;
    if (!fs::is_directory(root)) throw DataError("report: no such directory " + root.string());
    std::vector<fs::path> metrics, sweeps;
    for (const auto& e : fs::recursive_directory_iterator(root)) {
        if (!e.is_regular_file()) continue;
        const std::string name = e.path().filename().string();
        if (name.rfind("metrics_", 0) == 0 && e.path().extension() == ".json") metrics.push_back(e.path());
        if (name.rfind("sensitivity_", 0) == 0 && e.path().extension() == ".csv") sweeps.push_back(e.path());
    }
    std::sort(metrics.begin(), metrics.end());
    std::sort(sweeps.begin(), sweeps.end());
    std::ostringstream table, adaptation;
    table << "model,s.dim,dataset,auc,f1,stage,pairs,fingerprint\n";
    adaptation << "model,adaptation-dim,task,metric,value\n";
    for (const auto& p : metrics) {
        const json j = read_json(p);
        const std::string model = j.value("model", "");
        const std::string dataset = j.value("dataset", "");
        table << model << ',' << j.value("s_dim", 0) << ',' << dataset << ',' << fmt(j.value("auc", 0.0)) << ','
              << fmt(j.value("f1", 0.0)) << ',' << j.value("stage", "") << ',' << j.value("pairs", 0) << ','
              << j.value("fingerprint", "") << '\n';
        if (dataset == "target-test") {
            for (const char* m : {"auc", "f1"}) {
                adaptation << model << ',' << j.value("adaptation_dim", 0) << ',' << dataset << ',' << m << ','
                           << fmt(j.value(m, 0.0)) << '\n';
            }
        }
    }
    write_text(root / "table_models.csv", table.str());
    write_text(root / "table_adaptation.csv", adaptation.str());
    for (const auto& p : sweeps) {
        std::ifstream in(p);
        std::string line;
        std::getline(in, line);
        std::ostringstream series;
        series << "x,y\n";
        while (std::getline(in, line)) {
            std::istringstream row(line);
            std::string x, y;
            std::getline(row, x, ',');
            std::getline(row, y, ',');
            if (!x.empty()) series << x << ',' << y << '\n';
        }
        const std::string axis = p.stem().string().substr(std::string("sensitivity_").size());
        write_text(root / ("series_" + axis + "_auc.csv"), series.str());
    }
    log << "aggregated " << metrics.size() << " reports and " << sweeps.size() << " sweeps under " << root.string()
        << '\n';
}

int exit_code_for(const std::exception& e) {
    if (dynamic_cast<const UsageError*>(&e)) return 1;
    if (dynamic_cast<const NumericError*>(&e)) return 3;
    return 2;
}

}  // namespace akt::cli
