// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "akt/autoenc.hpp"
#include "akt/corpus.hpp"
#include "akt/graph.hpp"
#include "akt/layers.hpp"

namespace akt::kt {

enum class QuestionMode { text, id };

std::string_view to_string(QuestionMode m);
QuestionMode parse_mode(std::string_view s);

struct ModelConfig {
    QuestionMode mode = QuestionMode::text;
    bool slip_guess = true;
    bool adaptation = true;
    std::size_t d_q = 100;  // must equal the autoencoder code width in text mode
    std::size_t d_h = 100;
    std::size_t d_a = 256;
    std::size_t questions = 0;  // output columns

    // Width fed to the output layer.
    std::size_t out_dim() const { return adaptation ? d_a : d_h; }
    void validate() const;
};

// Named model variants.
enum class Variant { akt, akt_tx, akt_tr, akt_tx_tr, dkt };

std::string_view to_string(Variant v);
Variant parse_variant(std::string_view s);
// Architecture flags of a variant (question count and widths left at defaults).
ModelConfig variant_config(Variant v);
// Whether the variant runs the selection / adaptation / fine-tuning steps.
bool uses_transfer(Variant v);

// Gate order: input, forget, output, candidate.
inline constexpr std::array<const char*, 4> kGateNames{"i", "f", "o", "c"};

struct KTParams {
    std::array<num::Parameter, 4> w_pos;  // d_h x d_q, applied when r = 1
    std::array<num::Parameter, 4> w_neg;  // d_h x d_q, applied when r = 0
    std::array<num::Parameter, 4> w_h;    // d_h x d_h
    std::array<num::Parameter, 4> b;      // 1 x d_h
    layers::Dense slip;                   // d_q -> d_h
    layers::Dense guess;
    layers::Dense adapt;  // d_h -> d_a
    num::Parameter out_w;  // Q x out_dim
    num::Parameter out_b;  // Q x 1
    num::Parameter id_embed;  // Q x d_q, id mode only

    static KTParams init(const ModelConfig& cfg, std::uint64_t seed);

    // Parameters the configuration actually uses.
    std::vector<num::Parameter*> parameters(const ModelConfig& cfg);
    std::vector<num::Parameter*> output_parameters() { return {&out_w, &out_b}; }
    // Fresh Glorot / zero output layer with `questions` rows.
    void reset_output(const ModelConfig& cfg, std::size_t questions, std::uint64_t seed);
    void reset_id_embed(const ModelConfig& cfg, std::size_t questions, std::uint64_t seed);
};

// Full scoring network. In text mode questions are encoded by the autoencoder
// from the bank texts; in id mode by rows of id_embed.
struct Model {
    ModelConfig cfg;
    std::optional<autoenc::AutoencoderParams> ae;
    KTParams kt;
    corpus::Vocab vocab;
    std::vector<std::string> qids;  // output-column semantics
    std::uint64_t bank_digest = 0;

    static Model create(const ModelConfig& cfg, const corpus::QuestionBank& bank, std::uint64_t seed,
                        std::optional<autoenc::AutoencoderParams> ae = std::nullopt, corpus::Vocab vocab = {});

    // Everything that receives gradients (excludes the frozen embedding table).
    std::vector<num::Parameter*> trainable();
    // Everything persisted in a checkpoint.
    std::vector<num::Parameter*> all_parameters();
    void bind_bank(const corpus::QuestionBank& bank);
};

// Sequences of one batch, right-padded to the longest.
struct BatchForward {
    num::Var loss;        // summed BCE over scored next-step pairs (invalid when not requested)
    num::Var logits;      // (T-1)*B x 1, row (t * B + b) predicts step t+1 of sequence b
    num::Tensor labels;   // same shape as logits
    num::Tensor weights;  // 1 for scored pairs, 0 for padding
    num::Var alpha;       // one row per non-padded step, in (sequence, step) order (when requested)
    std::size_t scored = 0;
};

struct ForwardOptions {
    bool loss = true;
    bool alpha = false;
    // Optional remap of bank question index -> output column (and id row).
    std::span<const std::uint32_t> column_map = {};
    // Only compute alpha rows for these (sequence, step) pairs when non-empty.
    std::span<const std::pair<std::size_t, std::size_t>> alpha_steps = {};
    // Per batch position and step: a predicted step t is scored only when keep[b][t] is set.
    const std::vector<std::vector<std::uint8_t>>* keep = nullptr;
};

// Graph-level batched forward pass over `seqs` whose questions index `bank`.
BatchForward forward_batch(num::Graph& g, Model& model, const corpus::QuestionBank& bank,
                           std::span<const corpus::InteractionSequence* const> seqs, const ForwardOptions& opt = {});

// ---- value-level single-step operations ----

struct StepTrace {
    num::Tensor h, c, s, g, kappa, alpha, y;  // rows; y is 1 x Q
};

num::Tensor embed_question(Model& model, const corpus::QuestionBank& bank, std::string_view qid);
// [q, 0] for r = 1 and [0, q] for r = 0.
num::Tensor embed_interaction(const num::Tensor& q, int r);
std::pair<num::Tensor, num::Tensor> slip_guess(const KTParams& p, const num::Tensor& q);

struct CellState {
    num::Tensor h;
    num::Tensor c;
};

// Split form: W^+ q for r = 1, W^- q for r = 0.
CellState lstm_step(const KTParams& p, const num::Tensor& q, int r, const CellState& prev);
// Block form: [W^+ | W^-] applied to the interaction vector.
CellState lstm_step_block(const KTParams& p, const num::Tensor& interaction, const CellState& prev);

num::Tensor knowledge_state(const num::Tensor& h, const num::Tensor& s, const num::Tensor& g);
// Returns (alpha, y); alpha is kappa itself without an adaptation layer.
std::pair<num::Tensor, num::Tensor> predict(const KTParams& p, const ModelConfig& cfg, const num::Tensor& kappa);

std::vector<StepTrace> forward_sequence(Model& model, const corpus::QuestionBank& bank,
                                        const corpus::InteractionSequence& seq);

// sum over t of BCE(y_t[q_{t+1}], r_{t+1}).
double kt_loss(std::span<const StepTrace> traces, const corpus::InteractionSequence& seq);

}  // namespace akt::kt
