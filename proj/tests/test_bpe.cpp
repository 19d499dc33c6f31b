#include <catch_amalgamated.hpp>

#include <filesystem>
#include <map>
#include <set>

#include "speechdx/bpe.hpp"
#include "speechdx/rng.hpp"
#include "support/bpe_oracle.hpp"

using namespace speechdx;
using namespace speechdx::bpe;
using namespace speechdx::testing;

TEST_CASE("only one pair exists: first merge is (a, a)") {
    const auto v = train_bpe(std::vector<std::string>(10, "aaaa"), 262);
    REQUIRE(v.merges().size() == 1);
    CHECK(v.token_bytes(v.merges()[0].first) == "a");
    CHECK(v.token_bytes(v.merges()[0].second) == "a");
    CHECK(v.size() == 262);
}

TEST_CASE("low/lower/lowest merge sequence matches the recounting oracle") {
    std::vector<std::string> corpus;
    corpus.insert(corpus.end(), 5, "low");
    corpus.insert(corpus.end(), 2, "lower");
    corpus.insert(corpus.end(), 2, "lowest");
    for (std::size_t size : {262u, 263u, 265u, 270u, 300u}) {
        const auto v = train_bpe(corpus, size);
        CHECK(merge_strings(v) == oracle_train(corpus, size));
    }
    const auto v = train_bpe(corpus, 300);
    const std::vector<SymPair> head = {{"l", "o"}, {"lo", "w"}};
    const auto all = merge_strings(v);
    REQUIRE(all.size() >= 2);
    CHECK(std::vector<SymPair>(all.begin(), all.begin() + 2) == head);
}

TEST_CASE("property: trainer matches the oracle on random corpora") {
    Rng rng(99);
    for (int trial = 0; trial < 40; ++trial) {
        std::vector<std::string> corpus;
        const std::size_t lines = 1 + rng.below(30);
        for (std::size_t i = 0; i < lines; ++i) {
            std::string line;
            const std::size_t len = rng.below(40);
            for (std::size_t k = 0; k < len; ++k) {
                line += "ab cd<>/spmk"[rng.below(12)];
            }
            corpus.push_back(line);
        }
        corpus.push_back("x");
        const std::size_t size = kBaseVocab + rng.below(60);
        INFO("trial " << trial);
        REQUIRE(merge_strings(train_bpe(corpus, size)) == oracle_train(corpus, size));
    }
}

TEST_CASE("merges never spell a special token") {
    const auto v = train_bpe(std::vector<std::string>(20, "<s><s></s><mask><pad>"), 400);
    for (int id = kBaseVocab; id < static_cast<int>(v.size()); ++id) {
        for (auto s : kSpecialTokens) {
            CHECK(v.token_bytes(id) != s);
        }
    }
    CHECK(v.encode("<s>").size() > 1);
}

TEST_CASE("vocabulary boundary and errors") {
    const auto v = train_bpe(dutch_corpus(), kBaseVocab);
    CHECK(v.merges().empty());
    CHECK(v.size() == 256 + kSpecialTokens.size());
    CHECK_THROWS_AS(train_bpe(dutch_corpus(), kBaseVocab - 1), Error);
    try {
        train_bpe({}, 300);
        FAIL("no error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::CorpusEmpty);
    }
    CHECK_THROWS_AS(train_bpe({"", ""}, 300), Error);
}

TEST_CASE("special token ids are the lowest") {
    const Vocab v;
    CHECK(v.display(kBos) == "<s>");
    CHECK(v.display(kEos) == "</s>");
    CHECK(v.display(kPad) == "<pad>");
    CHECK(v.display(kUnk) == "<unk>");
    CHECK(v.display(kMask) == "<mask>");
    CHECK(v.find("a") == kByteOffset + 'a');
}

TEST_CASE("encode and decode basics") {
    const auto v = train_bpe(dutch_corpus(), 400);
    CHECK(v.encode("", true) == std::vector<int>{kBos, kEos});
    CHECK(v.decode({kBos, kEos}).empty());
    CHECK(v.decode(v.encode("páciënt")) == "páciënt");
    auto ids = v.encode("ik ben moe");
    std::vector<int> padded;
    for (int id : ids) {
        padded.push_back(kPad);
        padded.push_back(id);
    }
    padded.push_back(kPad);
    CHECK(v.decode(padded) == "ik ben moe");
    try {
        v.decode({static_cast<int>(v.size())});
        FAIL("no error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::IdOutOfRange);
    }
    CHECK_THROWS_AS(v.decode({-1}), Error);
}

TEST_CASE("hand-traced encoding under a 10-merge vocabulary") {
    Vocab v;
    auto b = [](char c) { return kByteOffset + static_cast<unsigned char>(c); };
    const int lo = v.add_merge(b('l'), b('o'));   // 261
    const int low = v.add_merge(lo, b('w'));      // 262
    const int er = v.add_merge(b('e'), b('r'));   // 263
    const int sp_l = v.add_merge(b(' '), b('l')); // 264
    const int sp_lo = v.add_merge(sp_l, b('o'));  // 265
    const int sp_low = v.add_merge(sp_lo, b('w'));// 266
    v.add_merge(low, er);                         // 267 "lower"
    const int es = v.add_merge(b('e'), b('s'));   // 268
    const int est = v.add_merge(es, b('t'));      // 269
    v.add_merge(sp_low, est);                     // 270 " lowest"
    REQUIRE(v.size() == 271);
    // "lower"   : lo -> low -> er -> lower                        = [267]
    // " lowest" : lo wins over " l" (rank 0 < 3), then low, es, est = [' ', 262, 269]
    // " slow"   : lo -> low                                         = [' ', 's', 262]
    const std::vector<int> expected = {0, 267, 37, 262, 269, 37, 120, 262, 1};
    CHECK(v.encode("lower lowest slow", true) == expected);
    CHECK(v.decode(expected) == "lower lowest slow");
}

TEST_CASE("property: decode(encode(x)) == x for random UTF-8") {
    const auto v = train_bpe(dutch_corpus(), 420);
    Rng rng(1234);
    for (int i = 0; i < 10000; ++i) {
        const std::string s = random_utf8(rng, 24);
        REQUIRE(v.decode(v.encode(s, i % 2 == 0)) == s);
    }
}

TEST_CASE("property: encoding splits at the space that starts a pretoken") {
    const auto v = train_bpe(dutch_corpus(), 420);
    Rng rng(5);
    for (int i = 0; i < 2000; ++i) {
        const auto& a = dutch_corpus()[rng.below(dutch_corpus().size())];
        const auto& b = dutch_corpus()[rng.below(dutch_corpus().size())];
        auto left = v.encode(a);
        const auto right = v.encode(" " + b);
        left.insert(left.end(), right.begin(), right.end());
        REQUIRE(v.encode(a + " " + b) == left);
    }
}

TEST_CASE("vocabulary file round-trip") {
    const auto v = train_bpe(dutch_corpus(), 380);
    const auto path = std::filesystem::temp_directory_path() / "speechdx_vocab_roundtrip.json";
    v.save(path.string());
    const auto w = Vocab::load(path.string());
    CHECK(w.to_json() == v.to_json());
    for (const auto& line : dutch_corpus()) {
        CHECK(w.encode(line, true) == v.encode(line, true));
    }
    auto j = v.to_json();
    CHECK(j["version"] == 1);
    CHECK(j["special_tokens"].size() == 5);
    j["version"] = 2;
    try {
        Vocab::from_json(j);
        FAIL("no error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::VersionMismatch);
    }
    std::filesystem::remove(path);
}
