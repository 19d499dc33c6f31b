#pragma once

// Web-crawl corpus cleaning: non-textual line removal, long-line filtering, fuzzy
// near-duplicate removal and a seeded held-out split. Stage order is fixed:
// non-textual -> long-line -> dedup -> split.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "speechdx/error.hpp"
#include "speechdx/rng.hpp"

namespace speechdx::corpus {

struct CleanConfig {
    double overlap_threshold = 0.9;
    std::size_t max_words = 2000;
    double heldout_fraction = 0.10;
    std::size_t shingle_size = 5;
    std::uint64_t seed = 0;
    // Inputs at or below this many lines are deduplicated with the exact pairwise scan.
    std::size_t exact_cutoff = 2000;

    void validate() const {
        require(overlap_threshold > 0.0 && overlap_threshold <= 1.0, ErrorKind::InvalidArgument,
                "overlap_threshold must be in (0, 1]");
        require(heldout_fraction >= 0.0 && heldout_fraction < 1.0, ErrorKind::InvalidArgument,
                "heldout_fraction must be in [0, 1)");
        require(shingle_size >= 1, ErrorKind::InvalidArgument, "shingle_size must be >= 1");
    }
};

inline std::vector<std::string_view> split_words(std::string_view line) {
    std::vector<std::string_view> words;
    std::size_t i = 0;
    while (i < line.size()) {
        while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) {
            ++i;
        }
        const std::size_t start = i;
        while (i < line.size() && !std::isspace(static_cast<unsigned char>(line[i]))) {
            ++i;
        }
        if (i > start) {
            words.push_back(line.substr(start, i - start));
        }
    }
    return words;
}

inline std::size_t word_count(std::string_view line) { return split_words(line).size(); }

/// Keep unless the line carries a URL scheme marker or has fewer than 3 words.
inline bool keep_textual(std::string_view line) {
    if (line.find("://") != std::string_view::npos) {
        return false;
    }
    return word_count(line) >= 3;
}

inline bool keep_length(std::string_view line, std::size_t max_words) { return word_count(line) <= max_words; }

/// Sorted, unique 64-bit hashes of the line's word k-shingles. Lines with fewer than k
/// words fall back to their word set; the two kinds never collide because shingle hashes
/// are salted with k.
inline std::vector<std::uint64_t> shingle_set(std::string_view line, std::size_t k) {
    const auto words = split_words(line);
    std::vector<std::uint64_t> out;
    if (words.size() < k) {
        for (auto w : words) {
            out.push_back(fnv1a64(w, 0xcbf29ce484222325ULL ^ 1ULL));
        }
    } else {
        out.reserve(words.size() - k + 1);
        for (std::size_t i = 0; i + k <= words.size(); ++i) {
            std::uint64_t h = 0xcbf29ce484222325ULL ^ (k << 1);
            for (std::size_t j = 0; j < k; ++j) {
                h = fnv1a64(words[i + j], h);
                h = fnv1a64(std::string_view("\x1f", 1), h);
            }
            out.push_back(h);
        }
    }
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

/// Jaccard similarity of two sorted unique sets. Two empty sets are identical.
inline double jaccard(const std::vector<std::uint64_t>& a, const std::vector<std::uint64_t>& b) {
    if (a.empty() && b.empty()) {
        return 1.0;
    }
    std::size_t i = 0, j = 0, inter = 0;
    while (i < a.size() && j < b.size()) {
        if (a[i] == b[j]) {
            ++inter;
            ++i;
            ++j;
        } else if (a[i] < b[j]) {
            ++i;
        } else {
            ++j;
        }
    }
    const std::size_t uni = a.size() + b.size() - inter;
    return static_cast<double>(inter) / static_cast<double>(uni);
}

/// Exact first-occurrence-wins dedup: a line is dropped when its similarity to any line
/// already retained reaches the threshold. Returns retained indices in input order.
inline std::vector<std::size_t> dedup_exact(const std::vector<std::string>& lines, const CleanConfig& cfg) {
    std::vector<std::vector<std::uint64_t>> kept_sets;
    std::vector<std::size_t> kept;
    for (std::size_t i = 0; i < lines.size(); ++i) {
        auto s = shingle_set(lines[i], cfg.shingle_size);
        const bool dup = std::any_of(kept_sets.begin(), kept_sets.end(), [&](const auto& other) {
            return jaccard(s, other) >= cfg.overlap_threshold;
        });
        if (!dup) {
            kept.push_back(i);
            kept_sets.push_back(std::move(s));
        }
    }
    return kept;
}

/// Banding layout for MinHash LSH.
struct LshParams {
    std::size_t bands = 20;
    std::size_t rows = 5;

    /// Probability that a pair with similarity s never shares a bucket.
    double miss_probability(double s) const {
        return std::pow(1.0 - std::pow(s, static_cast<double>(rows)), static_cast<double>(bands));
    }

    /// Layout for a similarity threshold: the most rows per band (fewest spurious
    /// candidates) whose total hash count stays within `max_hashes` while the miss
    /// probability at the threshold stays below `max_miss`.
    static LshParams for_threshold(double threshold, double max_miss = 1e-6, std::size_t max_hashes = 128) {
        for (std::size_t rows = 16; rows >= 1; --rows) {
            for (std::size_t bands = 1; bands * rows <= max_hashes; ++bands) {
                const LshParams p{bands, rows};
                if (p.miss_probability(threshold) < max_miss) {
                    return p;
                }
            }
        }
        return {max_hashes, 1};
    }
};

/// MinHash signatures with LSH banding. Candidates are confirmed with the exact Jaccard,
/// so the only possible disagreement with dedup_exact is a missed candidate pair.
class LshIndex {
public:
    LshIndex(LshParams params, std::uint64_t seed) : params_(params) {
        salts_.resize(params_.bands * params_.rows);
        for (std::size_t i = 0; i < salts_.size(); ++i) {
            salts_[i] = derive_seed(seed, i);
        }
        buckets_.resize(params_.bands);
    }

    std::vector<std::uint64_t> signature(const std::vector<std::uint64_t>& set) const {
        std::vector<std::uint64_t> sig(salts_.size(), UINT64_MAX);
        for (std::uint64_t x : set) {
            for (std::size_t i = 0; i < salts_.size(); ++i) {
                sig[i] = std::min(sig[i], splitmix64(x ^ salts_[i]));
            }
        }
        return sig;
    }

    std::vector<std::size_t> candidates(const std::vector<std::uint64_t>& sig) const {
        std::vector<std::size_t> out;
        for (std::size_t b = 0; b < params_.bands; ++b) {
            const auto it = buckets_[b].find(band_key(sig, b));
            if (it != buckets_[b].end()) {
                out.insert(out.end(), it->second.begin(), it->second.end());
            }
        }
        std::sort(out.begin(), out.end());
        out.erase(std::unique(out.begin(), out.end()), out.end());
        return out;
    }

    void insert(const std::vector<std::uint64_t>& sig, std::size_t id) {
        for (std::size_t b = 0; b < params_.bands; ++b) {
            buckets_[b][band_key(sig, b)].push_back(id);
        }
    }

private:
    std::uint64_t band_key(const std::vector<std::uint64_t>& sig, std::size_t band) const {
        std::uint64_t h = 0x84222325cbf29ce4ULL;
        for (std::size_t r = 0; r < params_.rows; ++r) {
            h = splitmix64(h ^ sig[band * params_.rows + r]);
        }
        return h;
    }

    LshParams params_;
    std::vector<std::uint64_t> salts_;
    std::vector<std::unordered_map<std::uint64_t, std::vector<std::size_t>>> buckets_;
};

inline std::vector<std::size_t> dedup_lsh(const std::vector<std::string>& lines, const CleanConfig& cfg) {
    LshIndex index(LshParams::for_threshold(cfg.overlap_threshold), derive_seed(cfg.seed, 0x5348494e474c45ULL));
    std::vector<std::vector<std::uint64_t>> kept_sets;
    std::vector<std::size_t> kept;
    for (std::size_t i = 0; i < lines.size(); ++i) {
        auto s = shingle_set(lines[i], cfg.shingle_size);
        const auto sig = index.signature(s);
        bool dup = false;
        for (std::size_t c : index.candidates(sig)) {
            if (jaccard(s, kept_sets[c]) >= cfg.overlap_threshold) {
                dup = true;
                break;
            }
        }
        if (!dup) {
            index.insert(sig, kept_sets.size());
            kept.push_back(i);
            kept_sets.push_back(std::move(s));
        }
    }
    return kept;
}

/// Surviving lines in input order. Small inputs use the exact scan, larger ones LSH.
inline std::vector<std::string> fuzzy_dedup(const std::vector<std::string>& lines, const CleanConfig& cfg) {
    cfg.validate();
    const auto kept = lines.size() <= cfg.exact_cutoff ? dedup_exact(lines, cfg) : dedup_lsh(lines, cfg);
    std::vector<std::string> out;
    out.reserve(kept.size());
    for (std::size_t i : kept) {
        out.push_back(lines[i]);
    }
    return out;
}

/// Seeded per-line hash mapped to [0, 1); depends only on the line text and the seed.
inline double split_draw(std::string_view line, std::uint64_t seed) {
    const std::uint64_t h = splitmix64(fnv1a64(line) ^ splitmix64(seed));
    return static_cast<double>(h >> 11) * 0x1.0p-53;
}

struct HeldoutSplit {
    std::vector<std::string> train;
    std::vector<std::string> validation;
};

inline HeldoutSplit heldout_split(const std::vector<std::string>& lines, const CleanConfig& cfg) {
    cfg.validate();
    HeldoutSplit out;
    for (const auto& line : lines) {
        if (split_draw(line, cfg.seed) < cfg.heldout_fraction) {
            out.validation.push_back(line);
        } else {
            out.train.push_back(line);
        }
    }
    return out;
}

struct CleanStats {
    std::size_t lines_in = 0;
    std::size_t after_non_textual = 0;
    std::size_t after_long_lines = 0;
    std::size_t after_dedup = 0;
    std::size_t train = 0;
    std::size_t validation = 0;
};

struct CleanResult {
    HeldoutSplit split;
    CleanStats stats;
};

inline CleanResult clean_corpus(const std::vector<std::string>& lines, const CleanConfig& cfg) {
    cfg.validate();
    CleanResult r;
    r.stats.lines_in = lines.size();
    std::vector<std::string> stage;
    for (const auto& l : lines) {
        if (keep_textual(l)) {
            stage.push_back(l);
        }
    }
    r.stats.after_non_textual = stage.size();
    std::erase_if(stage, [&](const std::string& l) { return !keep_length(l, cfg.max_words); });
    r.stats.after_long_lines = stage.size();
    stage = fuzzy_dedup(stage, cfg);
    r.stats.after_dedup = stage.size();
    r.split = heldout_split(stage, cfg);
    r.stats.train = r.split.train.size();
    r.stats.validation = r.split.validation.size();
    return r;
}

}  // namespace speechdx::corpus
