// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "akt/autoenc.hpp"
#include "akt/corpus.hpp"
#include "akt/graph.hpp"
#include "akt/ktmodel.hpp"
#include "akt/optim.hpp"

namespace akt::adapt {

enum class KernelKind { linear, rbf };

struct KernelSpec {
    KernelKind kind = KernelKind::rbf;
    double bandwidth = 0.0;  // rbf: k = exp(-d^2 / bandwidth); 0 selects the median heuristic

    void validate() const;
};

std::string to_string(KernelKind k);
KernelKind parse_kernel(const std::string& s);

// Biased V-statistic estimate of squared MMD between the rows of x and y.
// The operands are ordered canonically, so mmd2(x, y) == mmd2(y, x) bitwise.
double mmd2(const num::Tensor& x, const num::Tensor& y, const KernelSpec& kernel);
num::Var mmd2(num::Graph& g, num::Var x, num::Var y, const KernelSpec& kernel);

// Median of the off-diagonal squared distances over the pooled rows.
double median_bandwidth(const num::Tensor& x, const num::Tensor& y);

struct AdaptConfig {
    double gamma = 0.5;
    double lambda = 0.5;
    std::size_t batch = 64;
    std::size_t mmd_cap = 1024;  // states per domain per MMD step
    std::size_t epochs = 10;
    double lr = 1e-3;
    // Step size of the MMD step before scaling by gamma; 0 reuses lr.
    double mmd_lr = 0.0;
    std::uint64_t seed = 1;
    KernelSpec kernel;
    // Keep unselected steps in the recurrence and only drop them from the loss.
    bool mask_loss_only = false;

    void validate() const;
};

struct EpochRecord {
    std::size_t epoch = 0;
    double kt_loss = 0.0;  // mean BCE per scored pair over the epoch
    double mmd2 = 0.0;     // on the fixed evaluation sample, after the epoch
    std::size_t selected = 0;
    double lr = 0.0;
    double seconds = 0.0;
};

struct TrainHistory {
    std::vector<EpochRecord> epochs;
    void write_csv(const std::string& path) const;
    std::string csv() const;
};

// Source data restricted to selected questions: unselected steps are removed
// (order kept) and sequences left with fewer than two steps are dropped.
corpus::DomainDataset apply_selection(const corpus::DomainDataset& source, const autoenc::SelectionMask& mask);

using EpochCallback = std::function<void(const EpochRecord&)>;

// Mini-batch Adam on the KT loss over the selected source data.
TrainHistory train_source(kt::Model& model, const corpus::DomainDataset& source, const autoenc::SelectionMask& mask,
                          const AdaptConfig& cfg, const EpochCallback& on_epoch = {});

// Alternates one KT epoch on the selected source with one full-batch step on
// gamma * MMD^2 between adaptation-layer states of the two domains. The MMD
// step keeps its own Adam moments; Adam ignores the scale of its objective, so
// gamma multiplies the MMD step size. Target responses drive the recurrence
// only. Record 0 holds the MMD^2 before training.
TrainHistory adapt(kt::Model& model, const corpus::DomainDataset& source, const autoenc::SelectionMask& mask,
                   const corpus::DomainDataset& target_unlabeled, const AdaptConfig& cfg,
                   const EpochCallback& on_epoch = {});

struct FinetuneConfig {
    std::size_t epochs = 10;
    double lr = 1e-3;
    std::size_t batch = 64;
    std::uint64_t seed = 1;
    bool unfreeze = false;  // train every parameter instead of the output layer only
};

// Replaces the output layer with a fresh one over the target bank and trains it
// on the labeled target data. In id mode the id-embedding table is replaced and
// trained as well, since its rows index the target bank.
TrainHistory finetune(kt::Model& model, const corpus::DomainDataset& target_labeled, const FinetuneConfig& cfg,
                      const EpochCallback& on_epoch = {});

// Adaptation-layer states for the given (sequence, step) pairs of a dataset.
num::Tensor alpha_states(kt::Model& model, const corpus::DomainDataset& data,
                         std::span<const std::pair<std::size_t, std::size_t>> steps);

// Up to `cap` (sequence, step) pairs drawn without replacement from all steps.
std::vector<std::pair<std::size_t, std::size_t>> sample_steps(const corpus::DomainDataset& data, std::size_t cap,
                                                              std::uint64_t seed);

// Gradients of gamma * MMD^2 between the two domains' sampled states, exposed for tests.
num::GradientMap mmd_gradients(kt::Model& model, const corpus::DomainDataset& source,
                               std::span<const std::pair<std::size_t, std::size_t>> source_steps,
                               const corpus::DomainDataset& target,
                               std::span<const std::pair<std::size_t, std::size_t>> target_steps, double gamma,
                               const KernelSpec& kernel, double* value = nullptr);

}  // namespace akt::adapt
