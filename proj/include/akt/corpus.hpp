// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "akt/errors.hpp"
#include "akt/tensor.hpp"

namespace akt::corpus {

// Token <-> id map with four reserved ids.
class Vocab {
public:
    static constexpr std::uint32_t kPad = 0;
    static constexpr std::uint32_t kUnk = 1;
    static constexpr std::uint32_t kBos = 2;
    static constexpr std::uint32_t kEos = 3;
    static constexpr std::uint32_t kReserved = 4;

    Vocab();
    // Rebuilds a vocabulary from its id-ordered token list (reserved entries first).
    static Vocab from_tokens(std::vector<std::string> tokens);

    std::size_t size() const noexcept { return tokens_.size(); }
    std::uint32_t add(const std::string& token);
    std::uint32_t id(std::string_view token) const;  // kUnk when absent
    bool contains(std::string_view token) const;
    const std::string& token(std::uint32_t id) const { return tokens_.at(id); }
    const std::vector<std::string>& tokens() const noexcept { return tokens_; }
    std::uint64_t hash() const;

    friend bool operator==(const Vocab& a, const Vocab& b) { return a.tokens_ == b.tokens_; }

private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, std::uint32_t> index_;
};

std::vector<std::string> tokenize(std::string_view text);

struct QuestionText {
    std::string qid;
    std::string concept_id;
    std::string text;
    std::vector<std::uint32_t> tokens;

    friend bool operator==(const QuestionText&, const QuestionText&) = default;
};

class QuestionBank {
public:
    void add(QuestionText q);
    std::size_t size() const noexcept { return questions_.size(); }
    bool empty() const noexcept { return questions_.empty(); }
    const QuestionText& operator[](std::size_t i) const { return questions_[i]; }
    QuestionText& operator[](std::size_t i) { return questions_[i]; }
    const std::vector<QuestionText>& questions() const noexcept { return questions_; }
    std::optional<std::size_t> find(std::string_view qid) const;
    std::vector<std::string> qids() const;
    // Digest of the qid ordering; output-layer columns are tied to it.
    std::uint64_t order_digest() const;

    friend bool operator==(const QuestionBank& a, const QuestionBank& b) { return a.questions_ == b.questions_; }

private:
    std::vector<QuestionText> questions_;
    std::unordered_map<std::string, std::size_t> index_;
};

struct Step {
    std::uint32_t question = 0;  // index into the owning bank
    std::uint8_t response = 0;

    friend bool operator==(const Step&, const Step&) = default;
};

struct InteractionSequence {
    std::string student;
    std::vector<Step> steps;

    friend bool operator==(const InteractionSequence&, const InteractionSequence&) = default;
};

enum class DomainRole { source, target_labeled, target_unlabeled };

struct DomainDataset {
    QuestionBank bank;
    std::vector<InteractionSequence> sequences;
    DomainRole role = DomainRole::source;

    std::size_t interaction_count() const;
    friend bool operator==(const DomainDataset&, const DomainDataset&) = default;
};

// Reads {"qid","concept","text"} JSON Lines without tokenising.
QuestionBank read_question_bank(const std::filesystem::path& path);
// Lowercases, splits on whitespace, maps through `vocab` and truncates to max_len.
void assign_tokens(QuestionBank& bank, const Vocab& vocab, std::size_t max_len);
QuestionBank load_question_bank(const std::filesystem::path& path, const Vocab& vocab, std::size_t max_len);

// Union vocabulary over every bank's texts, in first-occurrence order.
// Tokens seen fewer than min_count times are left out (they map to UNK).
Vocab build_vocab(std::span<const QuestionBank* const> banks, std::size_t min_count = 1);

struct LoadedInteractions {
    std::vector<InteractionSequence> sequences;
    std::size_t dropped_short = 0;  // chunks with fewer than two steps
};

// Chunking rule shared by the loader: consecutive pieces of at most max_len
// steps, pieces shorter than two steps dropped.
LoadedInteractions chunk_sequence(InteractionSequence seq, std::size_t max_len);

LoadedInteractions load_interactions(const std::filesystem::path& path, const QuestionBank& bank,
                                     std::size_t max_len);

void write_question_bank(const std::filesystem::path& path, const QuestionBank& bank);
void write_interactions(const std::filesystem::path& path, const DomainDataset& data);

// Optional pretrained embedding file: "<count> <dim>" header, then
// "<token> <dim floats>" per line. Overwrites matching rows of `table`;
// returns the number of rows replaced.
std::size_t apply_embedding_file(const std::filesystem::path& path, const Vocab& vocab, num::Tensor& table);

struct Fold {
    std::vector<std::size_t> train;  // sequence indices
    std::vector<std::size_t> test;
};

// Student-level k-fold partition: chunks of one student always land together.
std::vector<Fold> kfold_split(const DomainDataset& data, std::size_t k, std::uint64_t seed);

// Student-level split into consecutive groups by fraction (fractions sum to <= 1).
// Returns fractions.size() + 1 groups of sequence indices; the last holds the remainder.
std::vector<std::vector<std::size_t>> split_students(const DomainDataset& data, std::span<const double> fractions,
                                                     std::uint64_t seed);

DomainDataset subset(const DomainDataset& data, std::span<const std::size_t> sequence_indices, DomainRole role);

}  // namespace akt::corpus
