// SPDX-License-Identifier: Apache-2.0
#include "akt/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "akt/optim.hpp"
#include "json.hpp"

namespace akt::corpus {

using nlohmann::json;

namespace {

std::ifstream open_in(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path.string());
    return in;
}

std::ofstream open_out(const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    return out;
}

std::string where(const std::filesystem::path& path, std::size_t line) {
    return path.string() + ":" + std::to_string(line) + ": ";
}

bool blank(const std::string& s) {
    return std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c); });
}

}  // namespace

Vocab::Vocab() {
    for (const char* t : {"<pad>", "<unk>", "<bos>", "<eos>"}) add(t);
}

Vocab Vocab::from_tokens(std::vector<std::string> tokens) {
    if (tokens.size() < kReserved) throw DataError("vocab: token list shorter than the reserved block");
    Vocab v;
    for (std::uint32_t i = 0; i < kReserved; ++i) {
        if (tokens[i] != v.tokens_[i]) throw DataError("vocab: reserved token mismatch at id " + std::to_string(i));
    }
    for (std::size_t i = kReserved; i < tokens.size(); ++i) {
        if (v.contains(tokens[i])) throw DataError("vocab: duplicate token '" + tokens[i] + "'");
        v.add(tokens[i]);
    }
    return v;
}

std::uint32_t Vocab::add(const std::string& token) {
    auto [it, inserted] = index_.try_emplace(token, static_cast<std::uint32_t>(tokens_.size()));
    if (inserted) tokens_.push_back(token);
    return it->second;
}

std::uint32_t Vocab::id(std::string_view token) const {
    auto it = index_.find(std::string(token));
    return it == index_.end() ? kUnk : it->second;
}

bool Vocab::contains(std::string_view token) const { return index_.count(std::string(token)) != 0; }

std::uint64_t Vocab::hash() const {
    std::uint64_t h = num::fnv1a64("vocab");
    for (const auto& t : tokens_) {
        h = num::fnv1a64(t, h);
        h = num::fnv1a64(std::string_view("\0", 1), h);
    }
    return h;
}

std::vector<std::string> tokenize(std::string_view text) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : text) {
        const auto c = static_cast<unsigned char>(ch);
        if (std::isspace(c)) {
            if (!cur.empty()) out.push_back(std::move(cur));
            cur.clear();
        } else {
            cur.push_back(static_cast<char>(std::tolower(c)));
        }
    }
    if (!cur.empty()) out.push_back(std::move(cur));
    return out;
}

void QuestionBank::add(QuestionText q) {
    if (index_.count(q.qid)) throw DataError("duplicate qid '" + q.qid + "'");
    index_.emplace(q.qid, questions_.size());
    questions_.push_back(std::move(q));
}

std::optional<std::size_t> QuestionBank::find(std::string_view qid) const {
    auto it = index_.find(std::string(qid));
    if (it == index_.end()) return std::nullopt;
    return it->second;
}

std::vector<std::string> QuestionBank::qids() const {
    std::vector<std::string> out;
    out.reserve(questions_.size());
    for (const auto& q : questions_) out.push_back(q.qid);
    return out;
}

std::uint64_t QuestionBank::order_digest() const {
    std::uint64_t h = num::fnv1a64("bank");
    for (const auto& q : questions_) {
        h = num::fnv1a64(q.qid, h);
        h = num::fnv1a64(std::string_view("\0", 1), h);
    }
    return h;
}

std::size_t DomainDataset::interaction_count() const {
    std::size_t n = 0;
    for (const auto& s : sequences) n += s.steps.size();
    return n;
}

QuestionBank read_question_bank(const std::filesystem::path& path) {
    std::ifstream in = open_in(path);
    QuestionBank bank;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (blank(line)) continue;
        json obj;
        try {
            obj = json::parse(line);
        } catch (const json::parse_error& e) {
            throw DataError(where(path, lineno) + "malformed JSON: " + e.what());
        }
        if (!obj.is_object() || !obj.contains("qid") || !obj.contains("text") || !obj["qid"].is_string() ||
            !obj["text"].is_string()) {
            throw DataError(where(path, lineno) + "expected {\"qid\": string, \"concept\": string, \"text\": string}");
        }
        QuestionText q;
        q.qid = obj["qid"].get<std::string>();
        if (obj.contains("concept")) {
            if (!obj["concept"].is_string()) throw DataError(where(path, lineno) + "\"concept\" must be a string");
            q.concept_id = obj["concept"].get<std::string>();
        }
        q.text = obj["text"].get<std::string>();
        if (tokenize(q.text).empty()) throw DataError(where(path, lineno) + "question '" + q.qid + "' has empty text");
        try {
            bank.add(std::move(q));
        } catch (const DataError& e) {
            throw DataError(where(path, lineno) + e.what());
        }
    }
    return bank;
}

void assign_tokens(QuestionBank& bank, const Vocab& vocab, std::size_t max_len) {
    if (max_len == 0) throw UsageError("max question length must be >= 1");
    for (std::size_t i = 0; i < bank.size(); ++i) {
        QuestionText& q = bank[i];
        const auto words = tokenize(q.text);
        if (words.empty()) throw DataError("question '" + q.qid + "' has empty text");
        q.tokens.clear();
        for (std::size_t t = 0; t < words.size() && t < max_len; ++t) q.tokens.push_back(vocab.id(words[t]));
    }
}

QuestionBank load_question_bank(const std::filesystem::path& path, const Vocab& vocab, std::size_t max_len) {
    QuestionBank bank = read_question_bank(path);
    assign_tokens(bank, vocab, max_len);
    return bank;
}

Vocab build_vocab(std::span<const QuestionBank* const> banks, std::size_t min_count) {
    if (banks.empty()) throw UsageError("build_vocab: at least one bank is required");
    std::vector<std::string> order;
    std::unordered_map<std::string, std::size_t> counts;
    for (const QuestionBank* bank : banks) {
        for (const auto& q : bank->questions()) {
            for (auto& w : tokenize(q.text)) {
                auto [it, inserted] = counts.try_emplace(w, 0);
                if (inserted) order.push_back(w);
                ++it->second;
            }
        }
    }
    Vocab v;
    for (const auto& w : order) {
        if (counts[w] >= min_count && !v.contains(w)) v.add(w);
    }
    return v;
}

LoadedInteractions chunk_sequence(InteractionSequence seq, std::size_t max_len) {
    if (max_len < 2) throw UsageError("max sequence length must be >= 2");
    LoadedInteractions out;
    for (std::size_t begin = 0; begin < seq.steps.size(); begin += max_len) {
        const std::size_t end = std::min(seq.steps.size(), begin + max_len);
        if (end - begin < 2) {
            ++out.dropped_short;
            continue;
        }
        InteractionSequence piece;
        piece.student = seq.student;
        piece.steps.assign(seq.steps.begin() + static_cast<std::ptrdiff_t>(begin),
                           seq.steps.begin() + static_cast<std::ptrdiff_t>(end));
        out.sequences.push_back(std::move(piece));
    }
    if (seq.steps.empty()) ++out.dropped_short;
    return out;
}

LoadedInteractions load_interactions(const std::filesystem::path& path, const QuestionBank& bank,
                                     std::size_t max_len) {
    std::ifstream in = open_in(path);
    LoadedInteractions out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (blank(line)) continue;
        json obj;
        try {
            obj = json::parse(line);
        } catch (const json::parse_error& e) {
            throw DataError(where(path, lineno) + "malformed JSON: " + e.what());
        }
        if (!obj.is_object() || !obj.contains("student") || !obj.contains("steps") || !obj["steps"].is_array()) {
            throw DataError(where(path, lineno) + "expected {\"student\": string, \"steps\": [[qid, r], ...]}");
        }
        InteractionSequence seq;
        seq.student = obj["student"].is_string() ? obj["student"].get<std::string>() : obj["student"].dump();
        for (const auto& step : obj["steps"]) {
            if (!step.is_array() || step.size() != 2 || !step[0].is_string() || !step[1].is_number_integer()) {
                throw DataError(where(path, lineno) + "each step must be [qid, r]");
            }
            const auto qid = step[0].get<std::string>();
            const auto idx = bank.find(qid);
            if (!idx) throw DataError(where(path, lineno) + "unknown qid '" + qid + "'");
            const auto r = step[1].get<long long>();
            if (r != 0 && r != 1) {
                throw DataError(where(path, lineno) + "response must be 0 or 1, got " + std::to_string(r));
            }
            seq.steps.push_back({static_cast<std::uint32_t>(*idx), static_cast<std::uint8_t>(r)});
        }
        auto pieces = chunk_sequence(std::move(seq), max_len);
        out.dropped_short += pieces.dropped_short;
        for (auto& p : pieces.sequences) out.sequences.push_back(std::move(p));
    }
    return out;
}

void write_question_bank(const std::filesystem::path& path, const QuestionBank& bank) {
    std::ofstream out = open_out(path);
    for (const auto& q : bank.questions()) {
        json obj = {{"qid", q.qid}, {"concept", q.concept_id}, {"text", q.text}};
        out << obj.dump() << '\n';
    }
}

void write_interactions(const std::filesystem::path& path, const DomainDataset& data) {
    std::ofstream out = open_out(path);
    for (const auto& seq : data.sequences) {
        json steps = json::array();
        for (const auto& s : seq.steps) steps.push_back(json::array({data.bank[s.question].qid, int(s.response)}));
        json obj = {{"student", seq.student}, {"steps", std::move(steps)}};
        out << obj.dump() << '\n';
    }
}

std::size_t apply_embedding_file(const std::filesystem::path& path, const Vocab& vocab, num::Tensor& table) {
    std::ifstream in = open_in(path);
    std::size_t count = 0, dim = 0;
    std::string header;
    if (!std::getline(in, header)) throw DataError(path.string() + ": empty embedding file");
    {
        std::istringstream hs(header);
        if (!(hs >> count >> dim)) throw DataError(where(path, 1) + "expected \"<count> <dim>\"");
    }
    if (dim != table.cols()) {
        throw DataError(path.string() + ": embedding dim " + std::to_string(dim) + " does not match model dim " +
                        std::to_string(table.cols()));
    }
    std::size_t replaced = 0, lineno = 1;
    std::string line;
    while (std::getline(in, line)) {
        ++lineno;
        if (blank(line)) continue;
        std::istringstream ls(line);
        std::string token;
        ls >> token;
        std::vector<double> vec(dim);
        for (std::size_t j = 0; j < dim; ++j) {
            if (!(ls >> vec[j])) throw DataError(where(path, lineno) + "expected " + std::to_string(dim) + " floats");
        }
        if (!vocab.contains(token)) continue;
        const std::uint32_t id = vocab.id(token);
        std::copy(vec.begin(), vec.end(), table.data() + static_cast<std::size_t>(id) * dim);
        ++replaced;
    }
    return replaced;
}

namespace {

// Distinct students in first-appearance order, with their sequence indices.
std::vector<std::vector<std::size_t>> group_by_student(const DomainDataset& data) {
    std::vector<std::vector<std::size_t>> groups;
    std::unordered_map<std::string, std::size_t> slot;
    for (std::size_t i = 0; i < data.sequences.size(); ++i) {
        auto [it, inserted] = slot.try_emplace(data.sequences[i].student, groups.size());
        if (inserted) groups.emplace_back();
        groups[it->second].push_back(i);
    }
    return groups;
}

std::vector<std::size_t> shuffled_order(std::size_t n, std::uint64_t seed) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(seed);
    for (std::size_t i = n; i > 1; --i) {
        const std::size_t j = static_cast<std::size_t>(rng() % i);
        std::swap(order[i - 1], order[j]);
    }
    return order;
}

}  // namespace

std::vector<Fold> kfold_split(const DomainDataset& data, std::size_t k, std::uint64_t seed) {
    if (k < 2) throw UsageError("kfold_split: k must be >= 2");
    const auto groups = group_by_student(data);
    if (groups.size() < k) {
        throw DataError("kfold_split: " + std::to_string(groups.size()) + " students is fewer than k=" +
                        std::to_string(k));
    }
    const auto order = shuffled_order(groups.size(), seed);
    std::vector<Fold> folds(k);
    for (std::size_t pos = 0; pos < order.size(); ++pos) {
        const std::size_t f = pos % k;
        for (std::size_t s : groups[order[pos]]) {
            folds[f].test.push_back(s);
            for (std::size_t other = 0; other < k; ++other)
                if (other != f) folds[other].train.push_back(s);
        }
    }
    for (auto& f : folds) {
        std::sort(f.train.begin(), f.train.end());
        std::sort(f.test.begin(), f.test.end());
    }
    return folds;
}

std::vector<std::vector<std::size_t>> split_students(const DomainDataset& data, std::span<const double> fractions,
                                                     std::uint64_t seed) {
    if (fractions.empty()) throw UsageError("split_students: no fractions");
    double total = 0.0;
    for (double f : fractions) {
        if (f < 0.0) throw UsageError("split_students: negative fraction");
        total += f;
    }
    if (total > 1.0 + 1e-12) throw UsageError("split_students: fractions sum above 1");
    const auto groups = group_by_student(data);
    const auto order = shuffled_order(groups.size(), seed);
    std::vector<std::vector<std::size_t>> out(fractions.size() + 1);
    std::size_t pos = 0;
    double acc = 0.0;
    for (std::size_t g = 0; g < out.size(); ++g) {
        if (g < fractions.size()) acc += fractions[g];
        std::size_t end = g == fractions.size()
                              ? order.size()
                              : std::min(order.size(), static_cast<std::size_t>(acc * double(order.size()) + 0.5));
        for (; pos < end; ++pos)
            for (std::size_t s : groups[order[pos]]) out[g].push_back(s);
        std::sort(out[g].begin(), out[g].end());
    }
    return out;
}

DomainDataset subset(const DomainDataset& data, std::span<const std::size_t> sequence_indices, DomainRole role) {
    DomainDataset out;
    out.bank = data.bank;
    out.role = role;
    out.sequences.reserve(sequence_indices.size());
    for (std::size_t i : sequence_indices) out.sequences.push_back(data.sequences.at(i));
    return out;
}

}  // namespace akt::corpus
