#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "speechdx/error.hpp"
#include "speechdx/rng.hpp"

namespace speechdx {

/// Class indices are fixed system-wide.
enum class Label : int { Psychotic = 0, Depressed = 1, Healthy = 2 };

inline constexpr int kNumClasses = 3;
inline constexpr std::array<std::string_view, kNumClasses> kLabelNames = {"psychotic", "depressed", "healthy"};
inline constexpr std::array<std::string_view, kNumClasses> kLabelTitles = {"Psychotic", "Depressed", "Healthy"};

inline int index_of(Label l) { return static_cast<int>(l); }

inline std::string_view to_string(Label l) { return kLabelNames[static_cast<std::size_t>(index_of(l))]; }

inline std::optional<Label> parse_label(std::string_view s) {
    for (int i = 0; i < kNumClasses; ++i) {
        if (s == kLabelNames[static_cast<std::size_t>(i)]) {
            return static_cast<Label>(i);
        }
    }
    return std::nullopt;
}

inline Label label_from_index(int i) {
    require(i >= 0 && i < kNumClasses, ErrorKind::InvalidArgument, "class index out of range");
    return static_cast<Label>(i);
}

struct LabeledTranscript {
    std::string participant_id;
    Label label = Label::Healthy;
    std::vector<int> token_ids;  // content tokens, no specials
};

struct Chunk {
    std::string participant_id;
    Label label = Label::Healthy;
    std::vector<int> token_ids;
    int chunk_index = 0;

    bool operator==(const Chunk&) const = default;
};

/// Greedy left-to-right slicing into chunks of at most `chunk_size` tokens. A partial
/// chunk is kept only when it holds at least `min_chunk` tokens.
inline std::vector<Chunk> chunk_transcript(const LabeledTranscript& t, std::size_t chunk_size,
                                           std::size_t min_chunk = 16) {
    require(chunk_size >= 1, ErrorKind::InvalidArgument, "chunk_size must be >= 1");
    std::vector<Chunk> out;
    for (std::size_t start = 0; start < t.token_ids.size(); start += chunk_size) {
        const std::size_t len = std::min(chunk_size, t.token_ids.size() - start);
        if (len < chunk_size && len < min_chunk) {
            break;
        }
        Chunk c;
        c.participant_id = t.participant_id;
        c.label = t.label;
        c.chunk_index = static_cast<int>(out.size());
        c.token_ids.assign(t.token_ids.begin() + static_cast<std::ptrdiff_t>(start),
                           t.token_ids.begin() + static_cast<std::ptrdiff_t>(start + len));
        out.push_back(std::move(c));
    }
    return out;
}

struct SplitSpec {
    std::array<double, 3> fractions = {0.8, 0.1, 0.1};  // train, validation, test
    bool group_by_participant = true;
    std::uint64_t seed = 0;

    void validate() const {
        double sum = 0.0;
        for (double f : fractions) {
            require(f >= 0.0, ErrorKind::InvalidArgument, "split fractions must be non-negative");
            sum += f;
        }
        require(std::abs(sum - 1.0) < 1e-9, ErrorKind::InvalidArgument, "split fractions must sum to 1");
    }
};

struct DatasetSplits {
    std::vector<Chunk> train;
    std::vector<Chunk> validation;
    std::vector<Chunk> test;

    std::vector<Chunk>& operator[](std::size_t i) { return i == 0 ? train : i == 1 ? validation : test; }
    const std::vector<Chunk>& operator[](std::size_t i) const { return i == 0 ? train : i == 1 ? validation : test; }
};

/// Largest-remainder apportionment of `total` items over the fractions. Equal remainders
/// go to the later bucket, so the extra item of a 0.8/0.1/0.1 split lands in test.
inline std::array<std::size_t, 3> apportion(std::size_t total, const std::array<double, 3>& fractions) {
    std::array<std::size_t, 3> counts{};
    std::array<double, 3> rem{};
    std::size_t assigned = 0;
    for (std::size_t i = 0; i < 3; ++i) {
        const double exact = fractions[i] * static_cast<double>(total);
        // Guard against 0.1 * 10 landing at 0.99999...
        const double fl = std::floor(exact + 1e-9);
        counts[i] = static_cast<std::size_t>(fl);
        rem[i] = std::max(0.0, exact - fl);
        assigned += counts[i];
    }
    std::array<std::size_t, 3> order = {2, 1, 0};
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return rem[a] > rem[b] + 1e-12; });
    for (std::size_t k = 0; assigned < total; ++k) {
        ++counts[order[k % 3]];
        ++assigned;
    }
    while (assigned > total) {
        for (std::size_t i = 0; i < 3 && assigned > total; ++i) {
            if (counts[i] > 0) {
                --counts[i];
                --assigned;
            }
        }
    }
    return counts;
}

inline std::array<std::size_t, kNumClasses> class_counts(const std::vector<Chunk>& samples) {
    std::array<std::size_t, kNumClasses> counts{};
    for (const auto& s : samples) {
        ++counts[static_cast<std::size_t>(index_of(s.label))];
    }
    return counts;
}

/// Stratified train/validation/test split.
///
/// Chunk-level mode apportions each class's chunks directly. Participant-grouped mode
/// apportions each class's participants (sorted by id, then shuffled with the seed) so
/// every participant's chunks land in a single split. Output keeps input order within
/// each split.
inline DatasetSplits stratified_split(const std::vector<Chunk>& samples, const SplitSpec& spec) {
    spec.validate();
    const auto totals = class_counts(samples);
    for (int c = 0; c < kNumClasses; ++c) {
        if (totals[static_cast<std::size_t>(c)] == 0) {
            fail(ErrorKind::ClassMissing,
                 "class '" + std::string(kLabelNames[static_cast<std::size_t>(c)]) + "' has no samples");
        }
    }

    std::vector<int> assignment(samples.size(), -1);
    Rng rng(spec.seed);
    for (int c = 0; c < kNumClasses; ++c) {
        const Label label = static_cast<Label>(c);
        if (spec.group_by_participant) {
            std::set<std::string> ids;
            for (const auto& s : samples) {
                if (s.label == label) {
                    ids.insert(s.participant_id);
                }
            }
            std::vector<std::string> order(ids.begin(), ids.end());
            rng.shuffle(order);
            const auto counts = apportion(order.size(), spec.fractions);
            std::map<std::string, int> bucket;
            std::size_t pos = 0;
            for (int b = 0; b < 3; ++b) {
                for (std::size_t k = 0; k < counts[static_cast<std::size_t>(b)]; ++k) {
                    bucket[order[pos++]] = b;
                }
            }
            for (std::size_t i = 0; i < samples.size(); ++i) {
                if (samples[i].label == label) {
                    assignment[i] = bucket.at(samples[i].participant_id);
                }
            }
        } else {
            std::vector<std::size_t> members;
            for (std::size_t i = 0; i < samples.size(); ++i) {
                if (samples[i].label == label) {
                    members.push_back(i);
                }
            }
            rng.shuffle(members);
            const auto counts = apportion(members.size(), spec.fractions);
            std::size_t pos = 0;
            for (int b = 0; b < 3; ++b) {
                for (std::size_t k = 0; k < counts[static_cast<std::size_t>(b)]; ++k) {
                    assignment[members[pos++]] = b;
                }
            }
        }
    }

    // A participant carrying chunks under two labels would be split twice in grouped mode.
    if (spec.group_by_participant) {
        std::map<std::string, int> seen;
        for (std::size_t i = 0; i < samples.size(); ++i) {
            const auto [it, fresh] = seen.emplace(samples[i].participant_id, assignment[i]);
            require(fresh || it->second == assignment[i], ErrorKind::InvalidArgument,
                    "participant '" + samples[i].participant_id + "' appears under more than one label");
        }
    }

    DatasetSplits out;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        out[static_cast<std::size_t>(assignment[i])].push_back(samples[i]);
    }
    return out;
}

// JSONL persistence: {"participant_id", "label", "tokens", "chunk_index"}.

inline nlohmann::ordered_json to_json(const Chunk& c) {
    nlohmann::ordered_json j;
    j["participant_id"] = c.participant_id;
    j["label"] = std::string(to_string(c.label));
    j["tokens"] = c.token_ids;
    j["chunk_index"] = c.chunk_index;
    return j;
}

inline Chunk chunk_from_json(const nlohmann::json& j, std::size_t record) {
    auto violation = [record](const std::string& what) {
        fail(ErrorKind::SchemaViolation, "record " + std::to_string(record) + ": " + what, record);
    };
    if (!j.is_object()) {
        violation("not a JSON object");
    }
    for (const char* field : {"participant_id", "label", "tokens", "chunk_index"}) {
        if (!j.contains(field)) {
            violation(std::string("missing \"") + field + "\"");
        }
    }
    Chunk c;
    if (!j["participant_id"].is_string()) {
        violation("\"participant_id\" must be a string");
    }
    c.participant_id = j["participant_id"].get<std::string>();
    const auto label = j["label"].is_string() ? parse_label(j["label"].get<std::string>()) : std::nullopt;
    if (!label) {
        violation("\"label\" must be one of psychotic|depressed|healthy");
    }
    c.label = *label;
    if (!j["tokens"].is_array()) {
        violation("\"tokens\" must be an array of integers");
    }
    for (const auto& t : j["tokens"]) {
        if (!t.is_number_integer()) {
            violation("\"tokens\" must be an array of integers");
        }
        c.token_ids.push_back(t.get<int>());
    }
    if (!j["chunk_index"].is_number_integer()) {
        violation("\"chunk_index\" must be an integer");
    }
    c.chunk_index = j["chunk_index"].get<int>();
    return c;
}

inline void save_dataset(const std::vector<Chunk>& samples, std::ostream& out) {
    for (const auto& s : samples) {
        out << to_json(s).dump() << '\n';
    }
}

inline void save_dataset(const std::vector<Chunk>& samples, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        fail(ErrorKind::Io, "cannot write " + path);
    }
    save_dataset(samples, out);
}

/// Reads JSONL records; blank lines are skipped. Errors name the 1-based line.
inline std::vector<Chunk> load_dataset(std::istream& in) {
    std::vector<Chunk> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) {
            continue;
        }
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            fail(ErrorKind::SchemaViolation, "record " + std::to_string(line_no) + ": " + e.what(), line_no);
        }
        out.push_back(chunk_from_json(j, line_no));
    }
    return out;
}

inline std::vector<Chunk> load_dataset(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        fail(ErrorKind::Io, "cannot read " + path);
    }
    return load_dataset(in);
}

// Transcript JSONL: {"participant_id", "label", "tokens"}.

inline nlohmann::ordered_json to_json(const LabeledTranscript& t) {
    nlohmann::ordered_json j;
    j["participant_id"] = t.participant_id;
    j["label"] = std::string(to_string(t.label));
    j["tokens"] = t.token_ids;
    return j;
}

inline std::vector<LabeledTranscript> load_transcripts(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        fail(ErrorKind::Io, "cannot read " + path);
    }
    std::vector<LabeledTranscript> out;
    std::set<std::string> ids;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) {
            continue;
        }
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            fail(ErrorKind::SchemaViolation, "record " + std::to_string(line_no) + ": " + e.what(), line_no);
        }
        nlohmann::json as_chunk = j;
        as_chunk["chunk_index"] = 0;
        Chunk c = chunk_from_json(as_chunk, line_no);
        if (c.token_ids.empty()) {
            fail(ErrorKind::SchemaViolation, "record " + std::to_string(line_no) + ": empty transcript", line_no);
        }
        if (!ids.insert(c.participant_id).second) {
            fail(ErrorKind::SchemaViolation,
                 "record " + std::to_string(line_no) + ": duplicate participant '" + c.participant_id + "'", line_no);
        }
        out.push_back({c.participant_id, c.label, std::move(c.token_ids)});
    }
    return out;
}

}  // namespace speechdx
