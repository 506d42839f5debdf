// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "akt/adapt.hpp"
#include "akt/autoenc.hpp"
#include "akt/corpus.hpp"
#include "akt/ktmodel.hpp"

namespace akt::eval {

// Mann-Whitney statistic with tied pairs counted as one half.
double auc(std::span<const double> scores, std::span<const std::uint8_t> labels);
// Binarises at `threshold` (score >= threshold is positive); 0 when nothing is predicted positive.
double f1(std::span<const double> scores, std::span<const std::uint8_t> labels, double threshold = 0.5);

struct Predictions {
    std::vector<double> scores;
    std::vector<std::uint8_t> labels;
};

// Next-step probabilities for every scored pair, pooled over all sequences.
Predictions predict_pairs(kt::Model& model, const corpus::DomainDataset& data,
                          std::span<const std::uint32_t> column_map = {}, std::size_t batch = 64);

struct FoldResult {
    std::size_t fold = 0;
    double auc = 0.0;
    double f1 = 0.0;
    std::size_t pairs = 0;
};

struct MetricsReport {
    double auc = 0.0;
    double f1 = 0.0;
    double threshold = 0.5;
    std::size_t pairs = 0;
    std::vector<FoldResult> folds;
    double auc_std = 0.0;  // across folds
    double f1_std = 0.0;
    std::string fingerprint;

    std::string to_json() const;
};

// Scores a model on a dataset. Without a column map the dataset bank must be
// the bank the output layer was built for.
MetricsReport evaluate(kt::Model& model, const corpus::DomainDataset& data,
                       std::span<const std::uint32_t> column_map = {});

struct ExperimentConfig {
    kt::Variant variant = kt::Variant::akt;
    kt::ModelConfig model;  // widths; mode and switches come from the variant
    autoenc::AutoencoderConfig ae;
    adapt::AdaptConfig train;  // also carries gamma, lambda and the kernel
    adapt::FinetuneConfig finetune;
    std::size_t folds = 5;
    std::size_t max_len = 100;
    std::uint64_t seed = 1;  // every component seed is derived from this
    double labeled_fraction = 0.2;
    double unlabeled_fraction = 0.4;
    std::string embeddings;  // optional pretrained word vectors for the autoencoder table

    kt::ModelConfig model_config() const;
    void validate() const;
};

// Stable digest of everything that determines a run.
std::string fingerprint(const ExperimentConfig& cfg);

// Component seeds.
std::uint64_t seed_for(const ExperimentConfig& cfg, const std::string& part);

// Stage settings shared by the in-process pipeline and the CLI stages, so both
// draw the same seeds.
autoenc::AutoencoderConfig autoencoder_config(const ExperimentConfig& cfg);
adapt::AdaptConfig stage_config(const ExperimentConfig& cfg, const std::string& tag);
adapt::FinetuneConfig finetune_config(const ExperimentConfig& cfg);
// Fresh autoencoder (with the optional embedding file applied).
autoenc::AutoencoderParams init_autoencoder(const ExperimentConfig& cfg, const corpus::Vocab& vocab);

// Builds a fresh model for `bank`. Text variants get an autoencoder pretrained
// on the bank texts (or the provided one).
kt::Model build_model(const ExperimentConfig& cfg, const corpus::QuestionBank& bank, const corpus::Vocab& vocab,
                      const autoenc::AutoencoderParams* pretrained = nullptr);

// k-fold cross validation of a single-domain variant; returns mean and spread
// of the per-fold metrics plus the per-fold breakdown. The bank must already be
// tokenised against `vocab`.
MetricsReport cross_validate(const corpus::DomainDataset& data, const corpus::Vocab& vocab,
                             const ExperimentConfig& cfg);

// Maps each target question to an output column of a source-trained model:
// nearest source question by cosine similarity of autoencoder codes in text
// mode, index modulo the source bank size in id mode.
std::vector<std::uint32_t> transfer_column_map(kt::Model& model, const corpus::QuestionBank& source_bank,
                                               const corpus::QuestionBank& target_bank);

struct TargetSplit {
    corpus::DomainDataset labeled;
    corpus::DomainDataset unlabeled;
    corpus::DomainDataset test;
};

TargetSplit split_target(const corpus::DomainDataset& target, double labeled_fraction, double unlabeled_fraction,
                         std::uint64_t seed);

struct TransferRun {
    MetricsReport report;  // on the target test split
    autoenc::SelectionMask mask;
    std::vector<autoenc::PretrainEpoch> pretrain_history;
    adapt::TrainHistory adapt_history;
    bool adapted = false;  // false when the selection left no usable source data
};

// Full pipeline: selective autoencoder pretraining, MMD adaptation, output
// fine-tuning, then evaluation on the target test split.
TransferRun run_transfer(const corpus::DomainDataset& source, const TargetSplit& target, const corpus::Vocab& vocab,
                         const ExperimentConfig& cfg);

// Source-only training applied to the target through transfer_column_map.
TransferRun run_direct(const corpus::DomainDataset& source, const TargetSplit& target, const corpus::Vocab& vocab,
                       const ExperimentConfig& cfg);

}  // namespace akt::eval
