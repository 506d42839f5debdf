// SPDX-License-Identifier: Apache-2.0
#include <catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <set>
#include <unistd.h>

#include "akt/corpus.hpp"
#include "akt/errors.hpp"
#include "akt/synthetic.hpp"
#include "test_util.hpp"

using namespace akt;
using namespace akt::corpus;
using Catch::Matchers::ContainsSubstring;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() / ("akt_corpus_" + std::to_string(reinterpret_cast<std::uintptr_t>(this)) +
                                            "_" + std::to_string(::getpid()));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    fs::path write(const std::string& name, const std::string& text) const {
        std::ofstream(path / name) << text;
        return path / name;
    }
};

QuestionBank bank_of(std::initializer_list<std::pair<const char*, const char*>> items) {
    QuestionBank b;
    for (auto [qid, text] : items) b.add({qid, "c", text, {}});
    return b;
}

}  // namespace

TEST_CASE("vocab reserves PAD, UNK, BOS, EOS") {
    Vocab v;
    CHECK(v.size() == 4);
    CHECK(v.token(Vocab::kPad) == v.tokens()[0]);
    CHECK(v.id("never-seen") == Vocab::kUnk);
    const auto id = v.add("apple");
    CHECK(id == 4);
    CHECK(v.add("apple") == 4);
    CHECK(Vocab::from_tokens(v.tokens()) == v);
    CHECK(Vocab::from_tokens(v.tokens()).hash() == v.hash());
}

TEST_CASE("tokenize lowercases and splits on whitespace") {
    CHECK(tokenize("Solve  X\tplus two") == std::vector<std::string>{"solve", "x", "plus", "two"});
    CHECK(tokenize("   ").empty());
}

TEST_CASE("question bank loading") {
    TempDir tmp;
    SECTION("one line gives four tokens") {
        const auto p = tmp.write("b.jsonl", R"({"qid":"q1","concept":"c1","text":"solve x plus two"})" "\n");
        QuestionBank raw = read_question_bank(p);
        const QuestionBank* banks[] = {&raw};
        const Vocab v = build_vocab(banks);
        const QuestionBank b = load_question_bank(p, v, 100);
        REQUIRE(b.size() == 1);
        CHECK(b[0].tokens.size() == 4);
        CHECK(b[0].concept_id == "c1");
    }
    SECTION("unknown words map to UNK under a frozen vocab") {
        const auto p = tmp.write("b.jsonl", R"({"qid":"q1","concept":"c1","text":"solve zebra"})" "\n");
        Vocab v;
        v.add("solve");
        const QuestionBank b = load_question_bank(p, v, 100);
        CHECK(b[0].tokens == std::vector<std::uint32_t>{4, Vocab::kUnk});
    }
    SECTION("truncation to max length") {
        const auto p = tmp.write("b.jsonl", R"({"qid":"q1","concept":"c1","text":"a b c d e f"})" "\n");
        QuestionBank raw = read_question_bank(p);
        const QuestionBank* banks[] = {&raw};
        const QuestionBank b = load_question_bank(p, build_vocab(banks), 3);
        CHECK(b[0].tokens.size() == 3);
    }
    SECTION("empty text is rejected") {
        const auto p = tmp.write("b.jsonl", R"({"qid":"q1","concept":"c1","text":"  "})" "\n");
        CHECK_THROWS_AS(read_question_bank(p), DataError);
    }
    SECTION("malformed lines name their line number") {
        const auto p = tmp.write("b.jsonl", R"({"qid":"q1","concept":"c1","text":"a"})" "\n{oops\n");
        CHECK_THROWS_WITH(read_question_bank(p), ContainsSubstring(":2"));
    }
    SECTION("duplicate qids are rejected") {
        const auto p = tmp.write("b.jsonl", R"({"qid":"q1","concept":"c","text":"a"})" "\n"
                                            R"({"qid":"q1","concept":"c","text":"b"})" "\n");
        CHECK_THROWS_WITH(read_question_bank(p), ContainsSubstring("q1"));
    }
}

TEST_CASE("interaction loading and chunking") {
    TempDir tmp;
    QuestionBank bank = bank_of({{"q1", "a"}, {"q2", "b"}});
    SECTION("a valid three-step sequence") {
        const auto p = tmp.write("i.jsonl", R"({"student":"s1","steps":[["q1",1],["q2",0],["q1",1]]})" "\n");
        const auto li = load_interactions(p, bank, 100);
        REQUIRE(li.sequences.size() == 1);
        CHECK(li.sequences[0].steps.size() == 3);
        CHECK(li.sequences[0].steps[1] == Step{1, 0});
    }
    SECTION("250 steps with N = 100 give chunks of 100, 100, 50") {
        InteractionSequence s = testutil::random_sequences(1, 250, 2, 3)[0];
        const auto li = chunk_sequence(s, 100);
        REQUIRE(li.sequences.size() == 3);
        CHECK(li.sequences[0].steps.size() == 100);
        CHECK(li.sequences[1].steps.size() == 100);
        CHECK(li.sequences[2].steps.size() == 50);
        CHECK(li.sequences[2].steps.back() == s.steps.back());
    }
    SECTION("a trailing single-step chunk is dropped and counted") {
        const auto li = chunk_sequence(testutil::random_sequences(1, 201, 2, 4)[0], 100);
        CHECK(li.sequences.size() == 2);
        CHECK(li.dropped_short == 1);
    }
    SECTION("responses outside {0, 1} fail") {
        const auto p = tmp.write("i.jsonl", R"({"student":"s1","steps":[["q1",1],["q2",2]]})" "\n");
        CHECK_THROWS_AS(load_interactions(p, bank, 100), DataError);
    }
    SECTION("unknown qids are named") {
        const auto p = tmp.write("i.jsonl", R"({"student":"s1","steps":[["q1",1],["q9",0]]})" "\n");
        CHECK_THROWS_WITH(load_interactions(p, bank, 100), ContainsSubstring("q9"));
    }
}

TEST_CASE("build_vocab over several banks") {
    QuestionBank a = bank_of({{"a1", "x y z"}});
    QuestionBank b = bank_of({{"b1", "z y x"}});
    QuestionBank c = bank_of({{"c1", "p q"}});
    SECTION("shared tokens") {
        const QuestionBank* banks[] = {&a, &b};
        CHECK(build_vocab(banks).size() == 3 + 4);
    }
    SECTION("disjoint banks give the union") {
        const QuestionBank* banks[] = {&a, &c};
        CHECK(build_vocab(banks).size() == 5 + 4);
    }
    SECTION("min_count above every count leaves only reserved ids") {
        const QuestionBank* banks[] = {&a, &c};
        CHECK(build_vocab(banks, 2).size() == 4);
    }
}

TEST_CASE("datasets round-trip through the file formats") {
    TempDir tmp;
    SyntheticSpec spec;
    spec.students = 6;
    spec.length = 7;
    spec.questions = 9;
    const auto pair = generate_synthetic(spec);
    write_question_bank(tmp.path / "b.jsonl", pair.source.bank);
    write_interactions(tmp.path / "i.jsonl", pair.source);
    DomainDataset back;
    back.bank = read_question_bank(tmp.path / "b.jsonl");
    back.sequences = load_interactions(tmp.path / "i.jsonl", back.bank, 100).sequences;
    back.role = pair.source.role;
    CHECK(back == pair.source);
}

TEST_CASE("embedding file overrides matching rows") {
    TempDir tmp;
    Vocab v;
    v.add("apple");
    v.add("pear");
    num::Tensor table(v.size(), 2, 9.0);
    const auto p = tmp.write("e.txt", "2 2\napple 0.5 -1\nplum 3 3\n");
    CHECK(apply_embedding_file(p, v, table) == 1);
    CHECK(table(4, 0) == 0.5);
    CHECK(table(4, 1) == -1.0);
    CHECK(table(5, 0) == 9.0);
    const auto bad = tmp.write("bad.txt", "1 3\napple 1 2 3\n");
    CHECK_THROWS_AS(apply_embedding_file(bad, v, table), DataError);
}

TEST_CASE("synthetic generator") {
    SyntheticSpec spec;
    spec.students = 30;
    spec.length = 20;
    spec.seed = 5;

    SECTION("seed determinism") {
        CHECK(generate_synthetic(spec).source == generate_synthetic(spec).source);
        SyntheticSpec other = spec;
        other.seed = 6;
        CHECK_FALSE(generate_synthetic(other).source == generate_synthetic(spec).source);
    }
    SECTION("zero shift: target difficulties share the source law") {
        spec.shift = 0.0;
        const auto w0 = draw_world(spec);
        for (double s : w0.concept_shift) CHECK(s == 0.0);
        spec.shift = 0.8;
        const auto w1 = draw_world(spec);
        // Same streams, so the shifted world differs only by the per-concept offsets.
        CHECK(w1.source.difficulty == w0.source.difficulty);
        for (std::size_t q = 0; q < spec.questions; ++q) {
            const double d = w1.target.difficulty[q] - w0.target.difficulty[q];
            CHECK_THAT(d, Catch::Matchers::WithinAbs(w1.concept_shift[w1.target.concept_of[q]], 1e-12));
            CHECK(std::abs(std::abs(d) - 0.8) < 1e-12);
        }
    }
    SECTION("guess floor 1 makes every response correct") {
        spec.guess = 1.0;
        const auto pair = generate_synthetic(spec);
        for (const auto* d : {&pair.source, &pair.target})
            for (const auto& s : d->sequences)
                for (const auto& st : s.steps) CHECK(st.response == 1);
    }
    SECTION("response law") {
        spec.guess = 0.2;
        spec.slip = 0.1;
        CHECK_THAT(response_probability(spec, 0.7, 0.7), Catch::Matchers::WithinAbs(0.2 + 0.7 * 0.5, 1e-15));
    }
    SECTION("raising an ability never lowers expected or realised correct counts") {
        auto world = draw_world(spec);
        for (std::size_t s = 0; s < 5; ++s) {
            const double before = expected_correct(spec, world.source, s);
            auto count = [&](const SyntheticWorld& w) {
                std::size_t n = 0;
                const auto pair = realize(spec, w);
                for (const auto& st : pair.source.sequences[s].steps) n += st.response;
                return n;
            };
            const std::size_t realised = count(world);
            auto raised = world;
            for (double& a : raised.source.ability[s]) a += 0.75;
            CHECK(expected_correct(spec, raised.source, s) >= before);
            CHECK(count(raised) >= realised);
        }
    }
    SECTION("invalid specs are rejected") {
        spec.guess = 0.9;
        spec.slip = 0.2;
        CHECK_THROWS_AS(validate(spec), UsageError);
        spec.slip = 0.0;
        spec.shift = -1.0;
        CHECK_THROWS_AS(validate(spec), UsageError);
    }
    SECTION("texts carry concept words shared across domains") {
        const auto pair = generate_synthetic(spec);
        CHECK(pair.source.bank[0].text.find("c0") != std::string::npos);
        CHECK(pair.target.bank[0].text.find("c0") != std::string::npos);
    }
}

TEST_CASE("planting random questions") {
    SyntheticSpec spec;
    spec.students = 20;
    spec.length = 30;
    auto pair = generate_synthetic(spec);
    const auto before = pair.source.bank;
    const auto planted = plant_random_questions(pair.source, 0.5, 3);
    std::size_t n = 0;
    for (std::size_t q = 0; q < planted.size(); ++q) {
        if (planted[q]) {
            ++n;
            CHECK(pair.source.bank[q].text != before[q].text);
            CHECK(pair.source.bank[q].text.find("skill") == std::string::npos);
        } else {
            CHECK(pair.source.bank[q].text == before[q].text);
        }
    }
    CHECK(n == 25);
}

TEST_CASE("k-fold split is a student-level partition") {
    DomainDataset d;
    d.bank = bank_of({{"q1", "a"}, {"q2", "b"}});
    d.sequences = testutil::random_sequences(10, 4, 2, 7);
    const auto folds = kfold_split(d, 5, 3);
    REQUIRE(folds.size() == 5);
    std::set<std::size_t> seen;
    for (const auto& f : folds) {
        CHECK(f.test.size() == 2);
        CHECK(f.train.size() == 8);
        for (std::size_t i : f.test) CHECK(seen.insert(i).second);
        for (std::size_t i : f.train) CHECK(std::find(f.test.begin(), f.test.end(), i) == f.test.end());
    }
    CHECK(seen.size() == 10);
    const auto again = kfold_split(d, 5, 3);
    for (std::size_t k = 0; k < 5; ++k) CHECK(again[k].test == folds[k].test);
    CHECK_THROWS_AS(kfold_split(d, 11, 3), DataError);
}

TEST_CASE("chunks of one student stay in one fold") {
    DomainDataset d;
    d.bank = bank_of({{"q1", "a"}});
    d.sequences = testutil::random_sequences(8, 3, 1, 2);
    for (std::size_t i = 0; i < 8; ++i) d.sequences[i].student = "s" + std::to_string(i / 2);
    for (const auto& f : kfold_split(d, 2, 1)) {
        for (std::size_t i : f.test) {
            const std::size_t partner = i ^ 1U;
            CHECK(std::find(f.test.begin(), f.test.end(), partner) != f.test.end());
        }
    }
}

TEST_CASE("split_students returns the remainder as a final group") {
    DomainDataset d;
    d.bank = bank_of({{"q1", "a"}});
    d.sequences = testutil::random_sequences(10, 3, 1, 2);
    const double fr[] = {0.2, 0.4};
    const auto groups = split_students(d, fr, 9);
    REQUIRE(groups.size() == 3);
    CHECK(groups[0].size() == 2);
    CHECK(groups[1].size() == 4);
    CHECK(groups[2].size() == 4);
    std::set<std::size_t> all;
    for (const auto& g : groups) all.insert(g.begin(), g.end());
    CHECK(all.size() == 10);
}
