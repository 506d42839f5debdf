// SPDX-License-Identifier: Apache-2.0
// Small helpers shared by the test binaries.
#pragma once

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "akt/corpus.hpp"
#include "akt/optim.hpp"
#include "akt/tensor.hpp"

namespace testutil {

inline akt::num::Tensor random_tensor(std::size_t r, std::size_t c, std::uint64_t seed, double lo = -1.0,
                                      double hi = 1.0) {
    std::mt19937_64 rng(seed);
    akt::num::Tensor t(r, c);
    for (double& v : t.values()) v = lo + (hi - lo) * akt::num::uniform01(rng);
    return t;
}

inline akt::num::Parameter random_param(const std::string& name, std::size_t r, std::size_t c, std::uint64_t seed,
                                        double scale = 1.0) {
    return {name, random_tensor(r, c, seed, -scale, scale)};
}

// Bank of templated texts, one question per entry of `texts`.
inline akt::corpus::QuestionBank make_bank(const std::vector<std::string>& texts, const std::string& prefix = "q") {
    akt::corpus::QuestionBank bank;
    for (std::size_t i = 0; i < texts.size(); ++i) {
        bank.add({prefix + std::to_string(i), "c" + std::to_string(i % 3), texts[i], {}});
    }
    return bank;
}

inline akt::corpus::Vocab tokenize_banks(std::vector<akt::corpus::QuestionBank*> banks, std::size_t max_len = 100) {
    std::vector<const akt::corpus::QuestionBank*> cb(banks.begin(), banks.end());
    auto vocab = akt::corpus::build_vocab(cb, 1);
    for (auto* b : banks) akt::corpus::assign_tokens(*b, vocab, max_len);
    return vocab;
}

inline akt::corpus::InteractionSequence make_seq(const std::string& student,
                                                 std::vector<std::pair<std::uint32_t, int>> steps) {
    akt::corpus::InteractionSequence s;
    s.student = student;
    for (auto [q, r] : steps) s.steps.push_back({q, static_cast<std::uint8_t>(r)});
    return s;
}

// Random sequences over a bank of `questions` entries.
inline std::vector<akt::corpus::InteractionSequence> random_sequences(std::size_t n, std::size_t len,
                                                                    std::size_t questions, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::vector<akt::corpus::InteractionSequence> out;
    for (std::size_t i = 0; i < n; ++i) {
        akt::corpus::InteractionSequence s;
        s.student = "s" + std::to_string(i);
        for (std::size_t t = 0; t < len; ++t) {
            s.steps.push_back({static_cast<std::uint32_t>(rng() % questions), static_cast<std::uint8_t>(rng() % 2)});
        }
        out.push_back(std::move(s));
    }
    return out;
}

}  // namespace testutil
