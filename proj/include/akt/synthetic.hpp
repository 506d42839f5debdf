// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "akt/corpus.hpp"

namespace akt::corpus {

// Two-domain IRT-style student simulator. Responses follow
//   P(r = 1) = guess + (1 - guess - slip) * sigmoid(ability - difficulty),
// and the target domain shifts every concept's difficulties by +-shift.
struct SyntheticSpec {
    std::size_t concepts = 5;
    std::size_t questions = 50;
    std::size_t students = 200;
    std::size_t length = 50;
    double guess = 0.25;
    double slip = 0.0;
    double shift = 0.0;
    std::uint64_t seed = 1;
};

void validate(const SyntheticSpec& spec);

double response_probability(const SyntheticSpec& spec, double ability, double difficulty);

// Latent truth behind one domain. Orders and noise come from streams that do
// not depend on abilities, so raising an ability can only flip 0 -> 1.
struct SyntheticDomain {
    std::vector<std::size_t> concept_of;           // per question
    std::vector<double> difficulty;                // per question
    std::vector<std::vector<double>> ability;      // [student][concept]
    std::vector<std::vector<std::uint32_t>> order; // [student][t] question index
    std::vector<std::vector<double>> noise;        // [student][t] uniform draws
    std::vector<std::string> text;                 // per question
};

struct SyntheticWorld {
    SyntheticDomain source;
    SyntheticDomain target;
    std::vector<double> concept_shift;  // signed, per concept
};

struct SyntheticPair {
    DomainDataset source;
    DomainDataset target;
};

SyntheticWorld draw_world(const SyntheticSpec& spec);
SyntheticPair realize(const SyntheticSpec& spec, const SyntheticWorld& world);
SyntheticPair generate_synthetic(const SyntheticSpec& spec);

// Expected number of correct answers of one student under the world's truth.
double expected_correct(const SyntheticSpec& spec, const SyntheticDomain& domain, std::size_t student);

// Replaces the texts of a random `fraction` of source questions with
// random-token texts and their responses with fair coin flips, so they carry
// nothing transferable. Returns the planted flags per question.
std::vector<bool> plant_random_questions(DomainDataset& source, double fraction, std::uint64_t seed);

// Builds the shared vocabulary over `banks` and tokenises each of them.
Vocab prepare_vocab(std::span<QuestionBank* const> banks, std::size_t min_count, std::size_t max_len);

}  // namespace akt::corpus
