// SPDX-License-Identifier: Apache-2.0
// akt: command-line front end for the knowledge-tracing transfer pipeline.
#include <functional>
#include <iostream>
#include <map>

#include <CLI11.hpp>

#include "akt/commands.hpp"

int main(int argc, char** argv) {
    using namespace akt::cli;
    CLI::App app{"Knowledge tracing with cross-domain transfer"};
    app.require_subcommand(1);

    CommandOptions opt;
    std::string config, out, variant;
    std::uint64_t seed = 0;

    using Handler = std::function<void(const CommandOptions&, std::ostream&)>;
    const std::vector<std::tuple<std::string, std::string, Handler>> commands = {
        {"gen-synthetic", "Write a synthetic source/target domain pair", cmd_gen_synthetic},
        {"pretrain-ae", "Selective autoencoder pretraining; writes ae.ckpt", cmd_pretrain_ae},
        {"train", "Train a model on the source domain; writes trained.ckpt", cmd_train},
        {"adapt", "KT training with MMD adaptation; writes adapted.ckpt", cmd_adapt},
        {"finetune", "Fine-tune the output layer on labeled target data; writes finetuned.ckpt", cmd_finetune},
        {"eval", "Score a checkpoint on the target test split (read-only)", cmd_eval},
        {"report", "Aggregate metrics and sweeps found under --out", cmd_report},
        {"sweep", "Full pipeline over the configured lambda or gamma values", cmd_sweep},
        {"cv", "k-fold cross validation on the source domain", cmd_cv},
    };
    std::map<CLI::App*, Handler> handlers;
    for (const auto& [name, help, fn] : commands) {
        CLI::App* sub = app.add_subcommand(name, help);
        sub->add_option("--config", config, "TOML config file")->check(CLI::ExistingFile);
        sub->add_option("--seed", seed, "Seed overriding the config");
        sub->add_option("--out", out, "Output directory");
        sub->add_option("--checkpoint", opt.checkpoint, "Input checkpoint");
        sub->add_option("--variant", variant, "Model variant")
            ->check(CLI::IsMember({"akt", "akt-tx", "akt-tr", "akt-tx-tr", "dkt"}));
        if (name == "sweep") sub->add_option("--param", opt.param, "lambda or gamma")->check(CLI::IsMember({"lambda", "gamma"}));
        handlers[sub] = fn;
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    CLI::App* chosen = app.get_subcommands().front();
    if (!config.empty()) opt.config = config;
    if (chosen->count("--seed")) opt.seed = seed;
    if (!out.empty()) opt.out = out;
    if (!variant.empty()) opt.variant = variant;

    try {
        handlers.at(chosen)(opt, std::cout);
    } catch (const std::exception& e) {
        std::cerr << "akt " << chosen->get_name() << ": " << e.what() << '\n';
        return exit_code_for(e);
    }
    return 0;
}
