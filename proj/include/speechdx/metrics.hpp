#pragma once

// Confusion matrices, per-class recall/precision/F1 and the evaluation report.
// Rows are actual classes, columns predicted classes. A zero denominator yields 0.

#include <array>
#include <cstdint>
#include <cstdio>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "speechdx/dataset.hpp"
#include "speechdx/error.hpp"

namespace speechdx::eval {

inline constexpr int kReportVersion = 1;

struct ConfusionMatrix {
    std::array<std::array<std::uint64_t, 3>, 3> counts{};

    std::uint64_t total() const {
        std::uint64_t n = 0;
        for (const auto& row : counts) {
            for (auto v : row) {
                n += v;
            }
        }
        return n;
    }

    std::uint64_t row_total(std::size_t a) const { return counts[a][0] + counts[a][1] + counts[a][2]; }
    std::uint64_t col_total(std::size_t p) const { return counts[0][p] + counts[1][p] + counts[2][p]; }

    bool operator==(const ConfusionMatrix&) const = default;
};

inline ConfusionMatrix confusion(const std::vector<int>& predictions, const std::vector<int>& labels) {
    if (predictions.size() != labels.size()) {
        fail(ErrorKind::LengthMismatch, std::to_string(predictions.size()) + " predictions for " +
                                            std::to_string(labels.size()) + " labels");
    }
    ConfusionMatrix cm;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || labels[i] >= kNumClasses || predictions[i] < 0 || predictions[i] >= kNumClasses) {
            fail(ErrorKind::IdOutOfRange, "class index outside 0..2 at position " + std::to_string(i), i + 1);
        }
        ++cm.counts[static_cast<std::size_t>(labels[i])][static_cast<std::size_t>(predictions[i])];
    }
    return cm;
}

struct ClassMetrics {
    std::array<double, 3> recall{};
    std::array<double, 3> precision{};
    std::array<double, 3> f1{};
    double accuracy = 0.0;

    bool operator==(const ClassMetrics&) const = default;
};

inline double ratio(std::uint64_t num, std::uint64_t den) {
    return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

/// Harmonic mean; 0 when both inputs are 0.
inline double f1_score(double recall, double precision) {
    return recall + precision == 0.0 ? 0.0 : 2.0 * recall * precision / (recall + precision);
}

inline ClassMetrics metrics(const ConfusionMatrix& cm) {
    ClassMetrics m;
    std::uint64_t trace = 0;
    for (std::size_t c = 0; c < 3; ++c) {
        const auto tp = cm.counts[c][c];
        trace += tp;
        m.recall[c] = ratio(tp, cm.row_total(c));
        m.precision[c] = ratio(tp, cm.col_total(c));
        m.f1[c] = f1_score(m.recall[c], m.precision[c]);
    }
    m.accuracy = ratio(trace, cm.total());
    return m;
}

/// Argmax over a probability or logit row; ties go to the lower class index.
template <class Row>
int argmax3(const Row& v) {
    int best = 0;
    for (int k = 1; k < 3; ++k) {
        if (v[static_cast<std::size_t>(k)] > v[static_cast<std::size_t>(best)]) {
            best = k;
        }
    }
    return best;
}

/// Participant-level majority vote over chunk predictions. A tied vote goes to the class
/// with the larger summed probability, then to the lower index.
inline std::map<std::string, int> participant_vote(const std::vector<std::string>& ids,
                                                   const std::vector<std::array<double, 3>>& probas) {
    if (ids.size() != probas.size()) {
        fail(ErrorKind::LengthMismatch, "participant ids and predictions differ in length");
    }
    std::map<std::string, std::pair<std::array<int, 3>, std::array<double, 3>>> tally;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        auto& [votes, mass] = tally[ids[i]];
        ++votes[static_cast<std::size_t>(argmax3(probas[i]))];
        for (std::size_t k = 0; k < 3; ++k) {
            mass[k] += probas[i][k];
        }
    }
    std::map<std::string, int> out;
    for (const auto& [id, vm] : tally) {
        const auto& [votes, mass] = vm;
        int best = 0;
        for (int k = 1; k < 3; ++k) {
            const auto ku = static_cast<std::size_t>(k), bu = static_cast<std::size_t>(best);
            if (votes[ku] > votes[bu] || (votes[ku] == votes[bu] && mass[ku] > mass[bu])) {
                best = k;
            }
        }
        out[id] = best;
    }
    return out;
}

struct ReportSection {
    std::string name;  // e.g. "validation", "test"
    ConfusionMatrix cm;
    ClassMetrics metrics;
};

inline ReportSection make_section(std::string name, const ConfusionMatrix& cm) {
    return {std::move(name), cm, metrics(cm)};
}

inline nlohmann::ordered_json to_json(const ReportSection& s) {
    nlohmann::ordered_json j;
    j["name"] = s.name;
    j["samples"] = s.cm.total();
    j["confusion"] = nlohmann::ordered_json::array();
    for (const auto& row : s.cm.counts) {
        j["confusion"].push_back(row);
    }
    j["accuracy"] = s.metrics.accuracy;
    nlohmann::ordered_json classes = nlohmann::ordered_json::object();
    for (std::size_t c = 0; c < 3; ++c) {
        classes[std::string(kLabelNames[c])] = {
            {"recall", s.metrics.recall[c]}, {"precision", s.metrics.precision[c]}, {"f1", s.metrics.f1[c]}};
    }
    j["classes"] = classes;
    return j;
}

inline ReportSection section_from_json(const nlohmann::json& j) {
    ReportSection s;
    try {
        s.name = j.at("name").get<std::string>();
        for (std::size_t a = 0; a < 3; ++a) {
            for (std::size_t p = 0; p < 3; ++p) {
                s.cm.counts[a][p] = j.at("confusion").at(a).at(p).get<std::uint64_t>();
            }
        }
        s.metrics.accuracy = j.at("accuracy").get<double>();
        for (std::size_t c = 0; c < 3; ++c) {
            const auto& cj = j.at("classes").at(std::string(kLabelNames[c]));
            s.metrics.recall[c] = cj.at("recall").get<double>();
            s.metrics.precision[c] = cj.at("precision").get<double>();
            s.metrics.f1[c] = cj.at("f1").get<double>();
        }
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::SchemaViolation, std::string("report section: ") + e.what());
    }
    return s;
}

struct Report {
    nlohmann::ordered_json json;
    std::string text;
};

inline std::string percent(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f%%", 100.0 * v);
    return buf;
}

namespace detail {

inline std::string pad(const std::string& s, std::size_t width, bool right = true) {
    if (s.size() >= width) {
        return s;
    }
    return right ? std::string(width - s.size(), ' ') + s : s + std::string(width - s.size(), ' ');
}

}  // namespace detail

/// Deterministic report: sections in the given order (validation and test side by side in
/// the accuracy table), then per-section metric tables and confusion grids.
inline Report render_report(const std::vector<ReportSection>& sections, const nlohmann::ordered_json& metadata = {}) {
    Report r;
    r.json["version"] = kReportVersion;
    r.json["metadata"] = metadata.is_null() ? nlohmann::ordered_json::object() : metadata;
    r.json["sections"] = nlohmann::ordered_json::array();
    for (const auto& s : sections) {
        r.json["sections"].push_back(to_json(s));
    }

    std::string t;
    if (metadata.is_object()) {
        for (const auto& [k, v] : metadata.items()) {
            t += k + ": " + (v.is_string() ? v.get<std::string>() : v.dump()) + "\n";
        }
        if (!metadata.empty()) {
            t += "\n";
        }
    }
    std::string head = detail::pad("", 12, false), acc = detail::pad("Accuracy", 12, false);
    for (const auto& s : sections) {
        head += detail::pad(s.name, 14);
        acc += detail::pad(percent(s.metrics.accuracy), 14);
    }
    t += head + "\n" + acc + "\n";
    for (const auto& s : sections) {
        t += "\n[" + s.name + "] " + std::to_string(s.cm.total()) + " samples\n";
        t += detail::pad("Metric", 12, false);
        for (auto title : kLabelTitles) {
            t += detail::pad(std::string(title), 12);
        }
        t += "\n";
        const std::array<std::pair<const char*, const std::array<double, 3>*>, 3> rows = {
            {{"Recall", &s.metrics.recall}, {"Precision", &s.metrics.precision}, {"F1-score", &s.metrics.f1}}};
        for (const auto& [label, vals] : rows) {
            t += detail::pad(label, 12, false);
            for (double v : *vals) {
                t += detail::pad(percent(v), 12);
            }
            t += "\n";
        }
        t += "\n" + detail::pad("actual\\pred", 12, false);
        for (auto title : kLabelTitles) {
            t += detail::pad(std::string(title), 12);
        }
        t += "\n";
        for (std::size_t a = 0; a < 3; ++a) {
            t += detail::pad(std::string(kLabelTitles[a]), 12, false);
            for (std::size_t p = 0; p < 3; ++p) {
                t += detail::pad(std::to_string(s.cm.counts[a][p]), 12);
            }
            t += "\n";
        }
    }
    r.text = std::move(t);
    return r;
}

inline std::vector<ReportSection> sections_from_report(const nlohmann::json& j) {
    if (!j.contains("version") || j["version"] != kReportVersion) {
        fail(ErrorKind::VersionMismatch, "report version is not " + std::to_string(kReportVersion));
    }
    std::vector<ReportSection> out;
    for (const auto& s : j.at("sections")) {
        out.push_back(section_from_json(s));
    }
    return out;
}

}  // namespace speechdx::eval
