// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "akt/corpus.hpp"
#include "akt/graph.hpp"
#include "akt/layers.hpp"

namespace akt::autoenc {

struct AutoencoderConfig {
    std::size_t embed_dim = 100;  // encoder hidden is embed_dim / 2 per direction
    double lr = 1e-3;
    std::size_t batch = 64;
    std::size_t epochs = 20;
    double lambda = 0.5;
    std::uint64_t seed = 1;
};

// Bi-LSTM encoder and LSTM decoder over a frozen word-embedding table.
// The encoder output (2 x hidden) equals the embedding width, which is both
// the decoder's hidden size and its input size.
struct AutoencoderParams {
    num::Parameter embedding;  // vocab x embed_dim
    layers::LstmParams enc_fwd;
    layers::LstmParams enc_bwd;
    layers::LstmParams dec;
    layers::Dense proj;  // decoder hidden -> reconstructed embedding
    // Derived from `embedding`; refresh after changing the table.
    num::Tensor normalized;

    void refresh_normalized();

    static AutoencoderParams init(std::size_t vocab_size, std::size_t embed_dim, std::uint64_t seed);

    std::size_t embed_dim() const { return embedding.value.cols(); }
    std::size_t code_dim() const { return 2 * enc_fwd.hidden(); }

    std::vector<num::Parameter*> parameters();
    std::vector<num::Parameter*> encoder_parameters();
    // Everything except the frozen embedding table.
    std::vector<num::Parameter*> trainable();
};

// Coordinate-wise min-max normalisation of the embedding table into [0, 1],
// so sigmoid decoder outputs can reproduce it. Constant columns map to 0.5.
num::Tensor normalized_table(const num::Tensor& embedding);

// Parameters bound to one graph, plus the normalised embedding table as a constant.
class AeBinding {
public:
    AeBinding(num::Graph& g, AutoencoderParams& params);
    AeBinding(const AeBinding&) = delete;
    AeBinding& operator=(const AeBinding&) = delete;

    num::Graph& graph() { return *g_; }

    // Question codes (n x code_dim), row i for texts[i].
    num::Var encode(std::span<const std::vector<std::uint32_t>* const> texts);
    // Per-text reconstruction error (n x 1). Teacher forcing feeds the true
    // previous embedding instead of the previous reconstruction.
    num::Var reconstruction_errors(std::span<const std::vector<std::uint32_t>* const> texts,
                                   bool teacher_forcing = false);
    // eta_t (1 x code) for every step of a single text.
    std::vector<num::Var> encoder_states(const std::vector<std::uint32_t>& tokens);
    // Decoder outputs w_hat_t (B x d) for `length` steps starting from `codes`.
    // With `teacher` set (one token list per row), step t consumes the true
    // embedding of token t-1 instead of w_hat_{t-1}.
    std::vector<num::Var> decode(num::Var codes, std::size_t length,
                                 std::span<const std::vector<std::uint32_t>* const> teacher = {});
    // Normalised embeddings of one token column per step (B x d constants).
    num::Var embedded_step(std::span<const std::vector<std::uint32_t>* const> texts,
                           std::span<const std::size_t> members, std::size_t t);

private:
    struct Bucket {
        std::vector<std::size_t> members;
        std::size_t length = 0;
    };
    std::vector<Bucket> bucketize(std::span<const std::vector<std::uint32_t>* const> texts) const;
    // Returns eta_t per step for a same-length batch.
    std::vector<num::Var> run_encoder(std::span<const std::vector<std::uint32_t>* const> texts,
                                      const Bucket& bucket);

    num::Graph* g_;
    AutoencoderParams* params_;
    num::Var fwd_wx_, fwd_wh_, fwd_b_;
    num::Var bwd_wx_, bwd_wh_, bwd_b_;
    num::Var dec_wx_, dec_wh_, dec_b_;
};

// Value-level single-question helpers.
num::Tensor encode(const corpus::QuestionText& text, AutoencoderParams& params);
num::Tensor encoder_states(const corpus::QuestionText& text, AutoencoderParams& params);  // L x code
num::Tensor embed_tokens(std::span<const std::uint32_t> tokens, const AutoencoderParams& params);  // L x d
num::Tensor decode(const num::Tensor& code, std::size_t length, AutoencoderParams& params,
                   const std::vector<std::uint32_t>* teacher_tokens = nullptr);

// (1/L) sum_t ||xhat_t - x_t||^2 over the rows of two L x d tensors.
double reconstruction_error(const num::Tensor& x, const num::Tensor& xhat);

std::vector<double> bank_errors(const corpus::QuestionBank& bank, AutoencoderParams& params);
num::Tensor bank_codes(const corpus::QuestionBank& bank, AutoencoderParams& params);  // Q x code

struct SelectionMask {
    std::vector<std::uint8_t> u;
    double lambda = 0.5;

    std::size_t selected() const;
    std::size_t size() const { return u.size(); }
    bool operator[](std::size_t i) const { return u[i] != 0; }
    static SelectionMask all(std::size_t n, double lambda = 1.0);
};

// u_i = 1 exactly when errors[i] < lambda.
SelectionMask select_instances(std::span<const double> errors, double lambda);

// -(lambda / n_S) * sum_i u_i
double selection_regularizer(const SelectionMask& mask);

struct PretrainEpoch {
    std::size_t epoch = 0;
    double mean_source_error = 0.0;
    double mean_target_error = 0.0;
    std::size_t selected = 0;
    double objective = 0.0;  // full selective objective including the regulariser
    bool empty_selection = false;
};

struct PretrainResult {
    SelectionMask mask;
    std::vector<PretrainEpoch> history;
    std::vector<double> source_errors;  // after the final epoch
};

// Alternating selective pretraining: each epoch runs one pass of gradient steps
// on the masked source + full target reconstruction objective, then recomputes
// every source error and reselects. The mask starts all-ones.
PretrainResult pretrain_selective(const corpus::QuestionBank& source, const corpus::QuestionBank& target,
                                  AutoencoderParams& params, const AutoencoderConfig& cfg);

// Plain reconstruction pretraining on a single bank.
std::vector<PretrainEpoch> pretrain(const corpus::QuestionBank& bank, AutoencoderParams& params,
                                    const AutoencoderConfig& cfg);

// Mini-batch selective objective over explicit weights (used by pretraining and tests):
// sum_i weight_i * R_i.
num::Var weighted_reconstruction(AeBinding& ae, std::span<const std::vector<std::uint32_t>* const> texts,
                                 std::span<const double> weights);

}  // namespace akt::autoenc
