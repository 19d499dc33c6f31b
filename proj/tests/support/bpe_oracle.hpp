#pragma once

// Brute-force BPE trainer and random UTF-8 strings for tokenizer properties.

#include <cctype>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "speechdx/bpe.hpp"
#include "speechdx/rng.hpp"

namespace speechdx::testing {

using SymPair = std::pair<std::string, std::string>;

// Brute-force trainer: recount every pair after each merge.
inline std::vector<SymPair> oracle_train(const std::vector<std::string>& corpus, std::size_t vocab_size) {
    std::map<std::string, long> pieces;
    for (const auto& line : corpus) {
        // Whitespace starts a new piece and stays attached to the following word.
        std::string cur;
        for (std::size_t i = 0; i < line.size(); ++i) {
            const bool ws = std::isspace(static_cast<unsigned char>(line[i]));
            const bool prev_ws = i > 0 && std::isspace(static_cast<unsigned char>(line[i - 1]));
            if (i > 0 && ws && !prev_ws) {
                ++pieces[cur];
                cur.clear();
            }
            cur += line[i];
        }
        if (!cur.empty()) {
            ++pieces[cur];
        }
    }
    std::vector<std::pair<std::vector<std::string>, long>> words;
    for (const auto& [p, c] : pieces) {
        std::vector<std::string> syms;
        for (char ch : p) {
            syms.emplace_back(1, ch);
        }
        words.emplace_back(syms, c);
    }
    std::set<std::string> tokens;
    for (int b = 0; b < 256; ++b) {
        tokens.insert(std::string(1, static_cast<char>(b)));
    }
    const std::set<std::string> specials = {"<s>", "</s>", "<pad>", "<unk>", "<mask>"};
    std::set<SymPair> banned;
    std::vector<SymPair> merges;
    while (tokens.size() + specials.size() < vocab_size) {
        std::map<SymPair, long> counts;
        for (const auto& [syms, c] : words) {
            for (std::size_t i = 0; i + 1 < syms.size(); ++i) {
                counts[{syms[i], syms[i + 1]}] += c;
            }
        }
        const SymPair* best = nullptr;
        long best_count = 0;
        for (const auto& [p, c] : counts) {  // std::map iterates pairs in lexicographic order
            if (!banned.contains(p) && c > best_count) {
                best = &p;
                best_count = c;
            }
        }
        if (!best || best_count < 2) {
            break;
        }
        const SymPair chosen = *best;
        if (specials.contains(chosen.first + chosen.second)) {
            banned.insert(chosen);
            continue;
        }
        merges.push_back(chosen);
        tokens.insert(chosen.first + chosen.second);
        for (auto& [syms, c] : words) {
            std::vector<std::string> next;
            for (std::size_t i = 0; i < syms.size(); ++i) {
                if (i + 1 < syms.size() && syms[i] == chosen.first && syms[i + 1] == chosen.second) {
                    next.push_back(chosen.first + chosen.second);
                    ++i;
                } else {
                    next.push_back(syms[i]);
                }
            }
            syms = std::move(next);
        }
    }
    return merges;
}

inline std::vector<SymPair> merge_strings(const bpe::Vocab& v) {
    std::vector<SymPair> out;
    for (auto [l, r] : v.merges()) {
        out.emplace_back(v.token_bytes(l), v.token_bytes(r));
    }
    return out;
}

inline std::string random_utf8(Rng& rng, std::size_t max_cps) {
    std::string s;
    const std::size_t n = rng.below(max_cps + 1);
    for (std::size_t i = 0; i < n; ++i) {
        std::uint32_t cp = 0;
        switch (rng.below(5)) {
        case 0: cp = static_cast<std::uint32_t>(0x20 + rng.below(0x5f)); break;
        case 1: cp = static_cast<std::uint32_t>(rng.below(0x80)); break;
        case 2: cp = static_cast<std::uint32_t>(0x80 + rng.below(0x780)); break;
        case 3:
            cp = static_cast<std::uint32_t>(0x800 + rng.below(0xF800));
            if (cp >= 0xD800 && cp <= 0xDFFF) {
                cp = 0xE9;
            }
            break;
        default: cp = static_cast<std::uint32_t>(0x10000 + rng.below(0x100000)); break;
        }
        bpe::detail::append_utf8(s, cp);
    }
    return s;
}

inline const std::vector<std::string>& dutch_corpus() {
    static const std::vector<std::string> lines = {
        "de patiënt vertelt over zijn dag en over zijn werk",
        "ik slaap de laatste tijd erg slecht en ik ben moe",
        "het gaat wel maar ik maak me zorgen over mijn familie",
        "we hebben het gesprek opgenomen en daarna uitgeschreven",
        "de dokter vroeg hoe het met haar ging en zij zei goed",
        "páciënt één, café, naïef, coördinatie",
    };
    return lines;
}

}  // namespace speechdx::testing
