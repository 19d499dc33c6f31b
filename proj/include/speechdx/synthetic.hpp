#pragma once

// Deterministic stand-ins for the private clinical data.
//
// Text: each class draws its words from its own pool, except that depressed speakers
// share the healthy pool, so text alone cannot separate those two classes.
// Audio: Gaussian blobs in which only the depressed class is displaced, so audio alone
// cannot separate psychotic from healthy. Together the two channels determine the label.

#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "speechdx/audio_model.hpp"
#include "speechdx/dataset.hpp"
#include "speechdx/fusion.hpp"
#include "speechdx/rng.hpp"

namespace speechdx::synthetic {

struct Participant {
    std::string id;
    Label label = Label::Healthy;
};

/// Classes cycle P, H, P, H, P, H, D, D: 37.5% / 37.5% / 25%.
inline std::vector<Participant> participants(std::size_t n) {
    static constexpr std::array<Label, 8> kCycle = {Label::Psychotic, Label::Healthy, Label::Psychotic,
                                                    Label::Healthy,   Label::Psychotic, Label::Healthy,
                                                    Label::Depressed, Label::Depressed};
    std::vector<Participant> out;
    for (std::size_t i = 0; i < n; ++i) {
        const Label l = kCycle[i % kCycle.size()];
        const char tag = "PDH"[index_of(l)];
        std::string num = std::to_string(i + 1);
        out.push_back({std::string(1, tag) + std::string(3 - std::min<std::size_t>(3, num.size()), '0') + num, l});
    }
    return out;
}

// Word pools. Depressed speakers use the healthy pool (see header comment).
inline const std::vector<std::string>& word_pool(Label l) {
    static const std::vector<std::string> psychotic = {"stemmen", "signalen", "straling", "camera", "complot",
                                                       "zender", "geheim", "volgen", "boodschap", "machine"};
    static const std::vector<std::string> healthy = {"werk", "fietsen", "koken", "vrienden", "vakantie",
                                                     "tuin", "muziek", "boek", "markt", "sport"};
    return l == Label::Psychotic ? psychotic : healthy;
}

inline const std::vector<std::string>& shared_words() {
    static const std::vector<std::string> w = {"ik", "de", "het", "en", "een", "dat", "is", "niet", "wel", "ja"};
    return w;
}

/// A CHAT interview: investigator prompts and participant answers with fillers,
/// retracings and pauses the cleaner has to strip.
inline std::string chat_transcript(const Participant& p, std::size_t utterances, std::uint64_t seed) {
    Rng rng(derive_seed(seed, fnv1a64(p.id)));
    std::string out = "@UTF8\n@Begin\n@Languages:\tnld\n@Participants:\tPAR " + p.id + " Participant, INV Investigator\n";
    out += "@ID:\tnld|interview|PAR|||||Participant|||\n";
    const auto& pool = word_pool(p.label);
    for (std::size_t u = 0; u < utterances; ++u) {
        out += "*INV:\tkunt u daar iets meer over vertellen ?\n";
        std::string line = "*PAR:\t";
        const std::size_t words = 6 + rng.below(8);
        for (std::size_t w = 0; w < words; ++w) {
            if (w > 0) {
                line += ' ';
            }
            const bool content = rng.below(2) == 0;
            const auto& src = content ? pool : shared_words();
            const auto& word = src[rng.below(src.size())];
            line += word;
            if (rng.below(20) == 0) {
                line += " [/] " + word;  // "word [/] word": the first copy is retraced
            }
            if (rng.below(12) == 0) {
                line += " (.)";
            }
            if (rng.below(15) == 0) {
                line += " &-uh";
            }
        }
        line += " .\n";
        out += line;
        if (rng.below(4) == 0) {
            out += "%com:\tspreekt zacht\n";
        }
    }
    out += "@End\n";
    return out;
}

/// 94-wide raw feature rows. Only the depressed class is displaced, along the first 20
/// columns; columns carry different offsets and scales so standardization matters.
inline std::vector<double> audio_row(Label l, Rng& rng, double margin = 1.5) {
    std::vector<double> row(audio::kFeatureCount);
    for (std::size_t c = 0; c < row.size(); ++c) {
        const double shift = (l == Label::Depressed && c < 20) ? margin : 0.0;
        row[c] = 5.0 * static_cast<double>(c % 7) + (1.0 + static_cast<double>(c % 3)) * (shift + rng.normal());
    }
    return row;
}

inline audio::FeatureTable audio_table(const std::vector<Participant>& people, std::uint64_t seed) {
    audio::FeatureTable t{audio::feature_names(), {}, {}, {}};
    for (const auto& p : people) {
        Rng rng(derive_seed(seed, fnv1a64(p.id) ^ 0xa0d10));
        t.ids.push_back(p.id);
        t.labels.push_back(p.label);
        t.rows.push_back(audio_row(p.label, rng));
    }
    return t;
}

/// Writes one .cha per participant plus labels.json, and audio.csv (all participants)
/// plus audio_extra.csv (extra audio-only speakers for the audio training split).
inline void write_fixture(const std::filesystem::path& dir, std::size_t n_participants, std::uint64_t seed,
                          std::size_t utterances = 40, std::size_t audio_only = 60) {
    std::filesystem::create_directories(dir / "chat");
    const auto people = participants(n_participants);
    nlohmann::ordered_json labels = nlohmann::ordered_json::object();
    for (const auto& p : people) {
        std::ofstream(dir / "chat" / (p.id + ".cha"), std::ios::binary) << chat_transcript(p, utterances, seed);
        labels[p.id] = to_string(p.label);
    }
    std::ofstream(dir / "labels.json", std::ios::binary) << labels.dump(2) << '\n';
    {
        std::ofstream out(dir / "audio.csv", std::ios::binary);
        audio::save_features(audio_table(people, seed), out);
    }
    std::vector<Participant> extra;
    for (const auto& p : participants(audio_only)) {
        extra.push_back({"X" + p.id, p.label});
    }
    std::ofstream out(dir / "audio_extra.csv", std::ios::binary);
    audio::save_features(audio_table(extra, seed ^ 0x5eed), out);
}

/// Fusion inputs with complementary channels: text is right for psychotic and healthy
/// chunks and reads depressed chunks as healthy; audio flags depressed participants and is
/// uninformative otherwise. Text-only accuracy is therefore the non-depressed share.
inline std::vector<fusion::FusionInput> complementary_inputs(std::size_t n_participants, std::size_t chunks_each,
                                                             std::uint64_t seed) {
    Rng rng(seed);
    auto noisy = [&rng](std::size_t peak, double strength) {
        std::array<double, 3> l{};
        for (std::size_t k = 0; k < 3; ++k) {
            l[k] = (k == peak ? strength : 0.0) + rng.normal(0.0, 0.4);
        }
        const auto p = nn::softmax_values(l);
        return fusion::Vec3{p[0], p[1], p[2]};
    };
    std::vector<fusion::FusionInput> out;
    for (const auto& p : participants(n_participants)) {
        const bool dep = p.label == Label::Depressed;
        const fusion::Vec3 audio = dep ? noisy(1, 2.0) : noisy(rng.below(2) ? 0 : 2, 0.3);
        for (std::size_t c = 0; c < chunks_each; ++c) {
            const std::size_t text_peak = dep ? 2 : static_cast<std::size_t>(index_of(p.label));
            out.push_back({p.id, static_cast<int>(c), noisy(text_peak, 2.5), audio, p.label});
        }
    }
    return out;
}

}  // namespace speechdx::synthetic
