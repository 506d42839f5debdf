// SPDX-License-Identifier: Apache-2.0
#include "akt/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "akt/optim.hpp"

namespace akt::corpus {

namespace {

constexpr double kStudentSpread = 1.2;
constexpr double kConceptSpread = 0.6;
constexpr double kDifficultySpread = 1.2;
constexpr std::size_t kWordsPerConcept = 6;
constexpr std::size_t kNoiseVocab = 300;
constexpr std::size_t kTextLength = 7;

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

std::size_t difficulty_bucket(double d) {
    if (d < -1.0) return 0;
    if (d < -0.3) return 1;
    if (d < 0.3) return 2;
    if (d < 1.0) return 3;
    return 4;
}

std::string question_text(std::size_t concept_id, double difficulty, std::mt19937_64& rng) {
    std::string text = "skill c" + std::to_string(concept_id) + " level d" + std::to_string(difficulty_bucket(difficulty));
    for (int k = 0; k < 2; ++k) {
        text += " w" + std::to_string(concept_id) + "_" + std::to_string(rng() % kWordsPerConcept);
    }
    text += " item";
    return text;
}

SyntheticDomain draw_domain(const SyntheticSpec& spec, std::string_view tag, std::span<const double> concept_offset) {
    SyntheticDomain d;
    std::mt19937_64 qrng(num::derive_seed(spec.seed, std::string(tag) + ".questions"));
    std::normal_distribution<double> normal(0.0, 1.0);
    d.concept_of.resize(spec.questions);
    d.difficulty.resize(spec.questions);
    d.text.resize(spec.questions);
    for (std::size_t q = 0; q < spec.questions; ++q) {
        d.concept_of[q] = q % spec.concepts;
        d.difficulty[q] = concept_offset[d.concept_of[q]] + kDifficultySpread * normal(qrng);
        d.text[q] = question_text(d.concept_of[q], d.difficulty[q], qrng);
    }

    std::mt19937_64 arng(num::derive_seed(spec.seed, std::string(tag) + ".abilities"));
    d.ability.assign(spec.students, std::vector<double>(spec.concepts));
    for (auto& row : d.ability) {
        const double base = kStudentSpread * normal(arng);
        for (double& a : row) a = base + kConceptSpread * normal(arng);
    }

    std::mt19937_64 orng(num::derive_seed(spec.seed, std::string(tag) + ".orders"));
    std::mt19937_64 nrng(num::derive_seed(spec.seed, std::string(tag) + ".noise"));
    d.order.resize(spec.students);
    d.noise.resize(spec.students);
    std::vector<std::uint32_t> perm(spec.questions);
    for (std::size_t s = 0; s < spec.students; ++s) {
        auto& ord = d.order[s];
        while (ord.size() < spec.length) {
            for (std::uint32_t q = 0; q < perm.size(); ++q) perm[q] = q;
            for (std::size_t i = perm.size(); i > 1; --i) std::swap(perm[i - 1], perm[orng() % i]);
            for (std::uint32_t q : perm) {
                if (ord.size() == spec.length) break;
                ord.push_back(q);
            }
        }
        d.noise[s].resize(spec.length);
        for (double& u : d.noise[s]) u = num::uniform01(nrng);
    }
    return d;
}

DomainDataset realize_domain(const SyntheticSpec& spec, const SyntheticDomain& d, std::string_view prefix,
                             DomainRole role) {
    DomainDataset out;
    out.role = role;
    for (std::size_t q = 0; q < d.difficulty.size(); ++q) {
        QuestionText qt;
        qt.qid = std::string(prefix) + "q" + std::to_string(q);
        qt.concept_id = "c" + std::to_string(d.concept_of[q]);
        qt.text = d.text[q];
        out.bank.add(std::move(qt));
    }
    for (std::size_t s = 0; s < d.ability.size(); ++s) {
        InteractionSequence seq;
        seq.student = std::string(prefix) + "s" + std::to_string(s);
        for (std::size_t t = 0; t < d.order[s].size(); ++t) {
            const std::uint32_t q = d.order[s][t];
            const double p = response_probability(spec, d.ability[s][d.concept_of[q]], d.difficulty[q]);
            seq.steps.push_back({q, static_cast<std::uint8_t>(d.noise[s][t] < p ? 1 : 0)});
        }
        out.sequences.push_back(std::move(seq));
    }
    return out;
}

}  // namespace

void validate(const SyntheticSpec& spec) {
    if (spec.concepts == 0 || spec.questions == 0 || spec.students == 0) {
        throw UsageError("synthetic: concepts, questions and students must be >= 1");
    }
    if (spec.length < 2) throw UsageError("synthetic: sequence length must be >= 2");
    if (!(spec.guess >= 0.0 && spec.guess <= 1.0)) throw UsageError("synthetic: guess must lie in [0, 1]");
    if (!(spec.slip >= 0.0 && spec.slip <= 1.0 - spec.guess)) {
        throw UsageError("synthetic: slip must lie in [0, 1 - guess]");
    }
    if (!(spec.shift >= 0.0) || !std::isfinite(spec.shift)) throw UsageError("synthetic: shift must be >= 0");
}

double response_probability(const SyntheticSpec& spec, double ability, double difficulty) {
    return spec.guess + (1.0 - spec.guess - spec.slip) * sigmoid(ability - difficulty);
}

SyntheticWorld draw_world(const SyntheticSpec& spec) {
    validate(spec);
    SyntheticWorld w;
    std::mt19937_64 srng(num::derive_seed(spec.seed, "shift"));
    w.concept_shift.resize(spec.concepts);
    for (double& s : w.concept_shift) s = (srng() & 1U) ? spec.shift : -spec.shift;
    const std::vector<double> zero(spec.concepts, 0.0);
    w.source = draw_domain(spec, "source", zero);
    w.target = draw_domain(spec, "target", w.concept_shift);
    return w;
}

SyntheticPair realize(const SyntheticSpec& spec, const SyntheticWorld& world) {
    return {realize_domain(spec, world.source, "s_", DomainRole::source),
            realize_domain(spec, world.target, "t_", DomainRole::target_unlabeled)};
}

SyntheticPair generate_synthetic(const SyntheticSpec& spec) { return realize(spec, draw_world(spec)); }

double expected_correct(const SyntheticSpec& spec, const SyntheticDomain& domain, std::size_t student) {
    double total = 0.0;
    for (std::uint32_t q : domain.order.at(student)) {
        total += response_probability(spec, domain.ability[student][domain.concept_of[q]], domain.difficulty[q]);
    }
    return total;
}

std::vector<bool> plant_random_questions(DomainDataset& source, double fraction, std::uint64_t seed) {
    if (!(fraction >= 0.0 && fraction <= 1.0)) throw UsageError("plant fraction must lie in [0, 1]");
    std::mt19937_64 rng(num::derive_seed(seed, "plant"));
    const std::size_t n = source.bank.size();
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng() % i]);
    const auto count = static_cast<std::size_t>(std::llround(fraction * double(n)));
    std::vector<bool> planted(n, false);
    for (std::size_t k = 0; k < count; ++k) {
        const std::size_t q = order[k];
        planted[q] = true;
        std::string text;
        for (std::size_t t = 0; t < kTextLength; ++t) {
            if (t) text += ' ';
            text += "n" + std::to_string(rng() % kNoiseVocab);
        }
        source.bank[q].text = std::move(text);
        source.bank[q].tokens.clear();
    }
    for (auto& seq : source.sequences) {
        for (auto& step : seq.steps) {
            if (planted[step.question]) step.response = static_cast<std::uint8_t>(rng() & 1U);
        }
    }
    return planted;
}

Vocab prepare_vocab(std::span<QuestionBank* const> banks, std::size_t min_count, std::size_t max_len) {
    std::vector<const QuestionBank*> view(banks.begin(), banks.end());
    Vocab v = build_vocab(view, min_count);
    for (QuestionBank* b : banks) assign_tokens(*b, v, max_len);
    return v;
}

}  // namespace akt::corpus
