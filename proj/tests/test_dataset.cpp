#include <catch_amalgamated.hpp>

#include <map>
#include <set>
#include <sstream>

#include "speechdx/dataset.hpp"
#include "speechdx/rng.hpp"

using namespace speechdx;

namespace {

LabeledTranscript transcript(std::size_t n, const std::string& id = "P001", Label label = Label::Psychotic) {
    LabeledTranscript t{id, label, {}};
    for (std::size_t i = 0; i < n; ++i) {
        t.token_ids.push_back(static_cast<int>(5 + i % 300));
    }
    return t;
}

std::vector<std::size_t> lengths(const std::vector<Chunk>& chunks) {
    std::vector<std::size_t> out;
    for (const auto& c : chunks) {
        out.push_back(c.token_ids.size());
    }
    return out;
}

std::vector<Chunk> class_block(Label label, std::size_t n, const std::string& prefix) {
    std::vector<Chunk> out;
    for (std::size_t i = 0; i < n; ++i) {
        out.push_back({prefix + std::to_string(i), label, {7, 8, 9}, 0});
    }
    return out;
}

}  // namespace

TEST_CASE("greedy chunking") {
    CHECK(lengths(chunk_transcript(transcript(505), 220)) == std::vector<std::size_t>{220, 220, 65});
    CHECK(lengths(chunk_transcript(transcript(220), 220)) == std::vector<std::size_t>{220});
    CHECK(lengths(chunk_transcript(transcript(230), 220, 16)) == std::vector<std::size_t>{220});
    CHECK(lengths(chunk_transcript(transcript(236), 220, 16)) == std::vector<std::size_t>{220, 16});
    CHECK(lengths(chunk_transcript(transcript(10), 220, 16)).empty());
    const auto cs = chunk_transcript(transcript(505, "X9", Label::Depressed), 220);
    for (std::size_t i = 0; i < cs.size(); ++i) {
        CHECK(cs[i].participant_id == "X9");
        CHECK(cs[i].label == Label::Depressed);
        CHECK(cs[i].chunk_index == static_cast<int>(i));
    }
}

TEST_CASE("property: chunks reassemble the source up to the dropped remainder") {
    Rng rng(1);
    for (int trial = 0; trial < 500; ++trial) {
        const auto t = transcript(1 + rng.below(2000));
        const std::size_t size = 1 + rng.below(600);
        const std::size_t min_chunk = rng.below(40);
        const auto chunks = chunk_transcript(t, size, min_chunk);
        std::vector<int> joined;
        for (const auto& c : chunks) {
            REQUIRE(c.token_ids.size() <= size);
            joined.insert(joined.end(), c.token_ids.begin(), c.token_ids.end());
        }
        REQUIRE(std::equal(joined.begin(), joined.end(), t.token_ids.begin()));
        const std::size_t dropped = t.token_ids.size() - joined.size();
        REQUIRE(dropped == (t.token_ids.size() % size < min_chunk ? t.token_ids.size() % size : 0));
    }
}

TEST_CASE("largest-remainder apportionment") {
    const std::array<double, 3> f = {0.8, 0.1, 0.1};
    CHECK(apportion(10, f) == std::array<std::size_t, 3>{8, 1, 1});
    CHECK(apportion(294, f) == std::array<std::size_t, 3>{235, 29, 30});
    CHECK(apportion(24, f) == std::array<std::size_t, 3>{19, 2, 3});
    CHECK(apportion(274, f) == std::array<std::size_t, 3>{219, 27, 28});
    CHECK(apportion(0, f) == std::array<std::size_t, 3>{0, 0, 0});
    CHECK(apportion(1, f) == std::array<std::size_t, 3>{1, 0, 0});
}

TEST_CASE("chunk-level split of 10 per class gives (8, 1, 1) each") {
    std::vector<Chunk> samples;
    for (int c = 0; c < kNumClasses; ++c) {
        const auto block = class_block(label_from_index(c), 10, std::string(1, "PDH"[c]));
        samples.insert(samples.end(), block.begin(), block.end());
    }
    SplitSpec spec;
    spec.group_by_participant = false;
    const auto s = stratified_split(samples, spec);
    for (std::size_t b = 0; b < 3; ++b) {
        const auto counts = class_counts(s[b]);
        for (auto n : counts) {
            CHECK(n == (b == 0 ? 8u : 1u));
        }
    }
}

TEST_CASE("chunk-level split reproduces the 505-token train counts") {
    std::vector<Chunk> samples;
    for (auto [label, n, prefix] : {std::tuple{Label::Psychotic, 294, "P"}, std::tuple{Label::Depressed, 24, "D"},
                                    std::tuple{Label::Healthy, 274, "H"}}) {
        const auto block = class_block(label, static_cast<std::size_t>(n), prefix);
        samples.insert(samples.end(), block.begin(), block.end());
    }
    SplitSpec spec;
    spec.group_by_participant = false;
    spec.seed = 505;
    const auto s = stratified_split(samples, spec);
    CHECK(class_counts(s.train) == std::array<std::size_t, 3>{235, 19, 219});
    CHECK(class_counts(s.validation) == std::array<std::size_t, 3>{29, 2, 27});
    CHECK(class_counts(s.test) == std::array<std::size_t, 3>{30, 3, 28});
}

TEST_CASE("missing class is an error") {
    const auto samples = class_block(Label::Healthy, 10, "H");
    try {
        stratified_split(samples, SplitSpec{});
        FAIL("no error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::ClassMissing);
    }
}

TEST_CASE("property: grouped split never splits a participant") {
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        Rng rng(seed);
        std::vector<Chunk> samples;
        std::map<int, std::size_t> people_per_class;
        for (int p = 0; p < 100; ++p) {
            const int cls = p < 3 ? p : static_cast<int>(rng.below(3));
            ++people_per_class[cls];
            const std::size_t n = 1 + rng.below(8);
            for (std::size_t k = 0; k < n; ++k) {
                samples.push_back({"id" + std::to_string(p), label_from_index(cls), {1, 2, 3}, static_cast<int>(k)});
            }
        }
        rng.shuffle(samples);
        SplitSpec spec;
        spec.seed = seed;
        const auto s = stratified_split(samples, spec);
        std::map<std::string, std::set<std::size_t>> where;
        std::array<std::array<std::set<std::string>, 3>, 3> people{};
        std::size_t total = 0;
        for (std::size_t b = 0; b < 3; ++b) {
            total += s[b].size();
            for (const auto& c : s[b]) {
                where[c.participant_id].insert(b);
                people[b][static_cast<std::size_t>(index_of(c.label))].insert(c.participant_id);
            }
        }
        REQUIRE(total == samples.size());
        for (const auto& [id, buckets] : where) {
            REQUIRE(buckets.size() == 1);
        }
        for (int cls = 0; cls < 3; ++cls) {
            for (std::size_t b = 0; b < 3; ++b) {
                const double target = SplitSpec{}.fractions[b] * static_cast<double>(people_per_class[cls]);
                REQUIRE(std::abs(static_cast<double>(people[b][static_cast<std::size_t>(cls)].size()) - target) <= 1.0);
            }
        }
    }
}

TEST_CASE("property: splits partition the input and are deterministic") {
    Rng rng(4);
    std::vector<Chunk> samples;
    for (int i = 0; i < 300; ++i) {
        samples.push_back({"p" + std::to_string(i / 3), label_from_index(i / 3 % 3), {i}, i % 3});
    }
    for (bool grouped : {true, false}) {
        SplitSpec spec;
        spec.group_by_participant = grouped;
        spec.seed = 17;
        const auto a = stratified_split(samples, spec);
        const auto b = stratified_split(samples, spec);
        CHECK(a.train == b.train);
        CHECK(a.validation == b.validation);
        CHECK(a.test == b.test);
        std::multiset<int> seen;
        for (std::size_t k = 0; k < 3; ++k) {
            for (const auto& c : a[k]) {
                seen.insert(c.token_ids[0]);
            }
        }
        CHECK(seen.size() == samples.size());
        CHECK(std::set<int>(seen.begin(), seen.end()).size() == samples.size());
        spec.seed = 18;
        CHECK(stratified_split(samples, spec).train != a.train);
    }
}

TEST_CASE("JSONL round-trip and field order") {
    std::vector<Chunk> samples = {{"P1", Label::Psychotic, {5, 6, 7}, 0}, {"D1", Label::Depressed, {9}, 2}};
    std::stringstream ss;
    save_dataset(samples, ss);
    CHECK(ss.str().substr(0, ss.str().find('\n')) ==
          R"({"participant_id":"P1","label":"psychotic","tokens":[5,6,7],"chunk_index":0})");
    CHECK(load_dataset(ss) == samples);
}

TEST_CASE("schema violations name the record") {
    std::stringstream ss(
        "{\"participant_id\":\"a\",\"label\":\"healthy\",\"tokens\":[1],\"chunk_index\":0}\n"
        "{\"participant_id\":\"b\",\"tokens\":[1],\"chunk_index\":0}\n");
    try {
        load_dataset(ss);
        FAIL("no error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::SchemaViolation);
        CHECK(e.line() == 2);
    }
    std::stringstream bad_label("{\"participant_id\":\"a\",\"label\":\"sad\",\"tokens\":[1],\"chunk_index\":0}\n");
    CHECK_THROWS_AS(load_dataset(bad_label), Error);
    std::stringstream bad_json("{not json\n");
    CHECK_THROWS_AS(load_dataset(bad_json), Error);
}

TEST_CASE("1266-record fixture has the expected class totals") {
    const auto samples = load_dataset(std::string(SPEECHDX_FIXTURES) + "/dataset_1266.jsonl");
    CHECK(samples.size() == 1266);
    CHECK(class_counts(samples) == std::array<std::size_t, 3>{625, 52, 589});
}

TEST_CASE("labels") {
    CHECK(index_of(Label::Psychotic) == 0);
    CHECK(index_of(Label::Depressed) == 1);
    CHECK(index_of(Label::Healthy) == 2);
    CHECK(parse_label("depressed") == Label::Depressed);
    CHECK_FALSE(parse_label("Depressed").has_value());
    CHECK_THROWS_AS(label_from_index(3), Error);
}
