#pragma once

// Byte-level byte-pair encoding.
//
// Text is pretokenized into pieces where whitespace attaches to the word that follows
// it ("hello world" -> "hello", " world"). Merges never cross piece boundaries, so
// encode(a + " " + b) == encode(a) ++ encode(" " + b) whenever a ends in a non-space.
// The 256 byte symbols cover every input, so UNK is never produced.

#include <algorithm>
#include <array>
#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

#include "speechdx/error.hpp"

namespace speechdx::bpe {

inline constexpr std::array<std::string_view, 5> kSpecialTokens = {"<s>", "</s>", "<pad>", "<unk>", "<mask>"};
inline constexpr int kBos = 0;
inline constexpr int kEos = 1;
inline constexpr int kPad = 2;
inline constexpr int kUnk = 3;
inline constexpr int kMask = 4;
inline constexpr int kByteOffset = static_cast<int>(kSpecialTokens.size());
inline constexpr int kBaseVocab = kByteOffset + 256;
inline constexpr int kFormatVersion = 1;

namespace detail {

inline void append_utf8(std::string& out, std::uint32_t cp) {
    if (cp < 0x80) {
        out += static_cast<char>(cp);
    } else if (cp < 0x800) {
        out += static_cast<char>(0xC0 | (cp >> 6));
        out += static_cast<char>(0x80 | (cp & 0x3F));
    } else {
        out += static_cast<char>(0xE0 | (cp >> 12));
        out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
        out += static_cast<char>(0x80 | (cp & 0x3F));
    }
}

inline bool is_ws(unsigned char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }

}  // namespace detail

/// Printable stand-in for every byte (the GPT-2 byte-to-unicode table): printable
/// Latin-1 bytes map to themselves, the rest to U+0100 onwards, so a space becomes "Ġ".
inline const std::array<std::string, 256>& byte_symbols() {
    static const std::array<std::string, 256> table = [] {
        std::array<std::string, 256> t;
        std::uint32_t next = 256;
        for (std::uint32_t b = 0; b < 256; ++b) {
            const bool printable = (b >= '!' && b <= '~') || (b >= 0xA1 && b <= 0xAC) || (b >= 0xAE);
            detail::append_utf8(t[b], printable ? b : next++);
        }
        return t;
    }();
    return table;
}

inline std::string to_symbols(std::string_view bytes) {
    const auto& table = byte_symbols();
    std::string out;
    for (unsigned char c : bytes) {
        out += table[c];
    }
    return out;
}

inline std::string from_symbols(std::string_view symbols) {
    static const std::unordered_map<std::string, unsigned char> reverse = [] {
        std::unordered_map<std::string, unsigned char> r;
        const auto& table = byte_symbols();
        for (int b = 0; b < 256; ++b) {
            r.emplace(table[b], static_cast<unsigned char>(b));
        }
        return r;
    }();
    std::string out;
    std::size_t i = 0;
    while (i < symbols.size()) {
        const unsigned char lead = static_cast<unsigned char>(symbols[i]);
        const std::size_t len = lead < 0x80 ? 1 : lead < 0xE0 ? 2 : 3;
        const auto it = reverse.find(std::string(symbols.substr(i, len)));
        if (it == reverse.end()) {
            fail(ErrorKind::SchemaViolation, "vocab token contains a non byte-symbol character");
        }
        out += static_cast<char>(it->second);
        i += len;
    }
    return out;
}

inline std::vector<std::string_view> pretokenize(std::string_view text) {
    std::vector<std::string_view> pieces;
    std::size_t start = 0;
    for (std::size_t i = 1; i < text.size(); ++i) {
        const bool ws = detail::is_ws(static_cast<unsigned char>(text[i]));
        const bool prev_ws = detail::is_ws(static_cast<unsigned char>(text[i - 1]));
        if (ws && !prev_ws) {
            pieces.push_back(text.substr(start, i - start));
            start = i;
        }
    }
    if (start < text.size()) {
        pieces.push_back(text.substr(start));
    }
    return pieces;
}

class Vocab {
public:
    /// Byte vocabulary plus special tokens, no merges.
    Vocab() {
        for (auto s : kSpecialTokens) {
            add_token(std::string(s));
        }
        for (int b = 0; b < 256; ++b) {
            add_token(std::string(1, static_cast<char>(b)));
        }
    }

    std::size_t size() const { return id_bytes_.size(); }
    const std::vector<std::pair<int, int>>& merges() const { return merges_; }
    const std::string& token_bytes(int id) const { return id_bytes_.at(static_cast<std::size_t>(id)); }
    static bool is_special(int id) { return id >= 0 && id < kByteOffset; }

    /// Token id for a raw byte string, or -1.
    int find(std::string_view bytes) const {
        const auto it = bytes_to_id_.find(std::string(bytes));
        return it == bytes_to_id_.end() ? -1 : it->second;
    }

    /// Registers merge (left, right); returns the id of the merged token. A merged
    /// string that already exists reuses that id.
    int add_merge(int left, int right) {
        const std::string joined = token_bytes(left) + token_bytes(right);
        int id = find(joined);
        if (id < 0) {
            id = add_token(joined);
        }
        if (merge_rank_.contains(key(left, right))) {
            fail(ErrorKind::InvalidArgument, "duplicate merge");
        }
        merge_rank_.emplace(key(left, right), std::make_pair(static_cast<int>(merges_.size()), id));
        merges_.emplace_back(left, right);
        return id;
    }

    std::vector<int> encode(std::string_view text, bool add_specials = false) const {
        std::vector<int> out;
        if (add_specials) {
            out.push_back(kBos);
        }
        for (auto piece : pretokenize(text)) {
            encode_piece(piece, out);
        }
        if (add_specials) {
            out.push_back(kEos);
        }
        return out;
    }

    std::string decode(const std::vector<int>& ids) const {
        std::string out;
        for (int id : ids) {
            if (id < 0 || static_cast<std::size_t>(id) >= size()) {
                fail(ErrorKind::IdOutOfRange, "token id " + std::to_string(id) + " outside vocabulary of " +
                                                  std::to_string(size()));
            }
            if (!is_special(id)) {
                out += id_bytes_[static_cast<std::size_t>(id)];
            }
        }
        return out;
    }

    nlohmann::ordered_json to_json() const {
        nlohmann::ordered_json j;
        j["version"] = kFormatVersion;
        j["special_tokens"] = nlohmann::ordered_json::array();
        for (auto s : kSpecialTokens) {
            j["special_tokens"].push_back(std::string(s));
        }
        nlohmann::ordered_json vocab = nlohmann::ordered_json::object();
        for (std::size_t id = 0; id < size(); ++id) {
            vocab[display(static_cast<int>(id))] = id;
        }
        j["vocab"] = std::move(vocab);
        nlohmann::ordered_json merges = nlohmann::ordered_json::array();
        for (auto [l, r] : merges_) {
            merges.push_back(display(l) + " " + display(r));
        }
        j["merges"] = std::move(merges);
        return j;
    }

    static Vocab from_json(const nlohmann::json& j) {
        if (!j.contains("version") || j["version"] != kFormatVersion) {
            fail(ErrorKind::VersionMismatch, "vocab file version must be " + std::to_string(kFormatVersion));
        }
        const auto& specials = j.at("special_tokens");
        if (specials.size() != kSpecialTokens.size()) {
            fail(ErrorKind::SchemaViolation, "unexpected special token list");
        }
        for (std::size_t i = 0; i < kSpecialTokens.size(); ++i) {
            if (specials[i].get<std::string>() != kSpecialTokens[i]) {
                fail(ErrorKind::SchemaViolation, "special tokens must be <s> </s> <pad> <unk> <mask> in order");
            }
        }
        Vocab v;
        for (const auto& m : j.at("merges")) {
            const auto text = m.get<std::string>();
            const auto sp = text.find(' ');
            if (sp == std::string::npos) {
                fail(ErrorKind::SchemaViolation, "merge entry without separator: " + text);
            }
            const int l = v.find(from_symbols(text.substr(0, sp)));
            const int r = v.find(from_symbols(text.substr(sp + 1)));
            if (l < 0 || r < 0) {
                fail(ErrorKind::SchemaViolation, "merge refers to unknown token: " + text);
            }
            v.add_merge(l, r);
        }
        const auto& vocab = j.at("vocab");
        if (vocab.size() != v.size()) {
            fail(ErrorKind::SchemaViolation, "vocab size does not match merges");
        }
        for (auto it = vocab.begin(); it != vocab.end(); ++it) {
            const int id = it.value().get<int>();
            if (id < 0 || static_cast<std::size_t>(id) >= v.size() || v.display(id) != it.key()) {
                fail(ErrorKind::SchemaViolation, "vocab entry inconsistent with merges: " + it.key());
            }
        }
        return v;
    }

    void save(const std::string& path) const {
        std::ofstream out(path, std::ios::binary);
        if (!out) {
            fail(ErrorKind::Io, "cannot write " + path);
        }
        out << to_json().dump(1) << '\n';
    }

    static Vocab load(const std::string& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) {
            fail(ErrorKind::Io, "cannot read " + path);
        }
        nlohmann::json j;
        try {
            in >> j;
        } catch (const nlohmann::json::exception& e) {
            fail(ErrorKind::SchemaViolation, path + ": " + e.what());
        }
        return from_json(j);
    }

    std::string display(int id) const {
        return is_special(id) ? std::string(kSpecialTokens[static_cast<std::size_t>(id)]) : to_symbols(token_bytes(id));
    }

private:
    static std::uint64_t key(int l, int r) {
        return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(l)) << 32) | static_cast<std::uint32_t>(r);
    }

    int add_token(std::string bytes) {
        const int id = static_cast<int>(id_bytes_.size());
        if (!is_special(id)) {
            bytes_to_id_.emplace(bytes, id);
        }
        id_bytes_.push_back(std::move(bytes));
        return id;
    }

    void encode_piece(std::string_view piece, std::vector<int>& out) const {
        std::vector<int> syms;
        syms.reserve(piece.size());
        for (unsigned char c : piece) {
            syms.push_back(kByteOffset + c);
        }
        while (syms.size() > 1) {
            int best_rank = -1;
            int best_id = -1;
            std::uint64_t best_key = 0;
            for (std::size_t i = 0; i + 1 < syms.size(); ++i) {
                const auto it = merge_rank_.find(key(syms[i], syms[i + 1]));
                if (it != merge_rank_.end() && (best_rank < 0 || it->second.first < best_rank)) {
                    best_rank = it->second.first;
                    best_id = it->second.second;
                    best_key = it->first;
                }
            }
            if (best_rank < 0) {
                break;
            }
            std::vector<int> next;
            next.reserve(syms.size());
            for (std::size_t i = 0; i < syms.size(); ++i) {
                if (i + 1 < syms.size() && key(syms[i], syms[i + 1]) == best_key) {
                    next.push_back(best_id);
                    ++i;
                } else {
                    next.push_back(syms[i]);
                }
            }
            syms.swap(next);
        }
        out.insert(out.end(), syms.begin(), syms.end());
    }

    std::vector<std::string> id_bytes_;
    std::unordered_map<std::string, int> bytes_to_id_;
    std::vector<std::pair<int, int>> merges_;
    std::unordered_map<std::uint64_t, std::pair<int, int>> merge_rank_;  // pair -> (rank, merged id)
};

/// Greedy BPE training. Each step merges the most frequent adjacent pair (ties go to the
/// lexicographically smaller (left bytes, right bytes)) until the vocabulary reaches
/// `vocab_size` or no pair occurs at least twice. Merges that would spell a special
/// token are skipped.
inline Vocab train_bpe(const std::vector<std::string>& corpus, std::size_t vocab_size) {
    require(vocab_size >= static_cast<std::size_t>(kBaseVocab), ErrorKind::InvalidArgument,
            "vocab_size must be at least " + std::to_string(kBaseVocab));
    std::map<std::string, std::int64_t> piece_counts;
    for (const auto& line : corpus) {
        for (auto p : pretokenize(line)) {
            ++piece_counts[std::string(p)];
        }
    }
    if (piece_counts.empty()) {
        fail(ErrorKind::CorpusEmpty, "tokenizer corpus contains no text");
    }

    Vocab vocab;
    struct Word {
        std::vector<int> syms;
        std::int64_t count;
    };
    std::vector<Word> words;
    words.reserve(piece_counts.size());
    for (const auto& [piece, count] : piece_counts) {
        Word w{{}, count};
        for (unsigned char c : piece) {
            w.syms.push_back(kByteOffset + c);
        }
        words.push_back(std::move(w));
    }

    using Pair = std::pair<int, int>;
    std::map<Pair, std::int64_t> counts;
    std::map<Pair, std::vector<std::size_t>> where;
    auto for_pairs = [](const std::vector<int>& s, auto&& fn) {
        for (std::size_t i = 0; i + 1 < s.size(); ++i) {
            fn(Pair{s[i], s[i + 1]});
        }
    };
    for (std::size_t wi = 0; wi < words.size(); ++wi) {
        for_pairs(words[wi].syms, [&](Pair p) {
            counts[p] += words[wi].count;
            where[p].push_back(wi);
        });
    }

    // Ordered candidate set: highest count first, then lexicographic pair bytes.
    auto before = [&vocab](const std::tuple<std::int64_t, int, int>& a, const std::tuple<std::int64_t, int, int>& b) {
        if (std::get<0>(a) != std::get<0>(b)) {
            return std::get<0>(a) > std::get<0>(b);
        }
        const auto& al = vocab.token_bytes(std::get<1>(a));
        const auto& bl = vocab.token_bytes(std::get<1>(b));
        if (al != bl) {
            return al < bl;
        }
        const auto& ar = vocab.token_bytes(std::get<2>(a));
        const auto& br = vocab.token_bytes(std::get<2>(b));
        if (ar != br) {
            return ar < br;
        }
        return std::make_pair(std::get<1>(a), std::get<2>(a)) < std::make_pair(std::get<1>(b), std::get<2>(b));
    };
    std::set<std::tuple<std::int64_t, int, int>, decltype(before)> queue(before);
    for (const auto& [p, c] : counts) {
        queue.emplace(c, p.first, p.second);
    }
    std::set<Pair> banned;

    auto adjust = [&](Pair p, std::int64_t delta) {
        auto& c = counts[p];
        if (c > 0 && !banned.contains(p)) {
            queue.erase({c, p.first, p.second});
        }
        c += delta;
        if (c > 0 && !banned.contains(p)) {
            queue.emplace(c, p.first, p.second);
        }
    };

    while (vocab.size() < vocab_size && !queue.empty()) {
        const auto [count, left, right] = *queue.begin();
        if (count < 2) {
            break;
        }
        const Pair best{left, right};
        const std::string joined = vocab.token_bytes(left) + vocab.token_bytes(right);
        if (std::find(kSpecialTokens.begin(), kSpecialTokens.end(), joined) != kSpecialTokens.end()) {
            queue.erase(queue.begin());
            banned.insert(best);
            continue;
        }
        const int merged = vocab.add_merge(left, right);

        auto affected = std::move(where[best]);
        std::sort(affected.begin(), affected.end());
        affected.erase(std::unique(affected.begin(), affected.end()), affected.end());
        for (std::size_t wi : affected) {
            Word& w = words[wi];
            bool present = false;
            for (std::size_t i = 0; i + 1 < w.syms.size(); ++i) {
                present = present || (w.syms[i] == left && w.syms[i + 1] == right);
            }
            if (!present) {
                continue;
            }
            for_pairs(w.syms, [&](Pair p) { adjust(p, -w.count); });
            std::vector<int> next;
            next.reserve(w.syms.size());
            for (std::size_t i = 0; i < w.syms.size(); ++i) {
                if (i + 1 < w.syms.size() && w.syms[i] == left && w.syms[i + 1] == right) {
                    next.push_back(merged);
                    ++i;
                } else {
                    next.push_back(w.syms[i]);
                }
            }
            w.syms.swap(next);
            for_pairs(w.syms, [&](Pair p) {
                adjust(p, w.count);
                if (p.first == merged || p.second == merged) {
                    where[p].push_back(wi);
                }
            });
        }
    }
    return vocab;
}

}  // namespace speechdx::bpe
