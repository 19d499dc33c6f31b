#pragma once

// Three-layer MLP over a fixed vector of precomputed speech parameters.
//
// Raw feature tables keep missing cells as NaN. The Standardizer fitted on the training
// split imputes them with the column mean and z-scores every column; it travels inside
// the model checkpoint so test-time inputs see exactly the training transform.

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <functional>
#include <istream>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "speechdx/dataset.hpp"
#include "speechdx/nn/checkpoint.hpp"
#include "speechdx/nn/layers.hpp"
#include "speechdx/nn/optim.hpp"
#include "speechdx/train_config.hpp"

namespace speechdx::audio {

using nn::Tensor;
using nn::Var;

inline constexpr std::size_t kFeatureCount = 94;
inline constexpr std::size_t kNamedFeatures = 59;

// Named eGeMAPS functionals in canonical order. The published list stops at 59 names, so
// the remaining columns of the 94-wide vector are canonical placeholders.
inline constexpr std::array<std::string_view, kNamedFeatures> kNamedFeatureList = {
    "F0semitoneFrom27.5Hz_sma3nz_amean_numeric",
    "F0semitoneFrom27.5Hz_sma3nz_stddevNorm_numeric",
    "F0semitoneFrom27.5Hz_sma3nz_pctlrange0-2_numeric",
    "loudness_sma3_amean_numeric",
    "loudness_sma3_stddevNorm_numeric",
    "loudness_sma3_pctlrange0-2_numeric",
    "loudness_sma3_meanRisingSlope_numeric",
    "loudness_sma3_stddevRisingSlope_numeric",
    "loudness_sma3_meanFallingSlope_numeric",
    "loudness_sma3_stddevFallingSlope_numeric",
    "spectralFlux_sma3_amean_numeric",
    "spectralFlux_sma3_stddevNorm_numeric",
    "mfcc1_sma3_amean_numeric",
    "mfcc1_sma3_stddevNorm_numeric",
    "mfcc2_sma3_amean_numeric",
    "mfcc2_sma3_stddevNorm_numeric",
    "mfcc3_sma3_amean_numeric",
    "mfcc3_sma3_stddevNorm_numeric",
    "mfcc4_sma3_amean_numeric",
    "mfcc4_sma3_stddevNorm_numeric",
    "jitterLocal_sma3nz_amean_numeric",
    "jitterLocal_sma3nz_stddevNorm_numeric",
    "shimmerLocaldB_sma3nz_amean_numeric",
    "shimmerLocaldB_sma3nz_stddevNorm_numeric",
    "HNRdBACF_sma3nz_amean_numeric",
    "HNRdBACF_sma3nz_stddevNorm_numeric",
    "logRelF0-H1-H2_sma3nz_amean_numeric",
    "logRelF0-H1-H2_sma3nz_stddevNorm_numeric",
    "logRelF0-H1-A3_sma3nz_amean_numeric",
    "logRelF0-H1-A3_sma3nz_stddevNorm_numeric",
    "F1frequency_sma3nz_amean_numeric",
    "F1frequency_sma3nz_stddevNorm_numeric",
    "F1bandwidth_sma3nz_amean_numeric",
    "F1bandwidth_sma3nz_stddevNorm_numeric",
    "F1amplitudeLogRelF0_sma3nz_amean_numeric",
    "F1amplitudeLogRelF0_sma3nz_stddevNorm_numeric",
    "F2frequency_sma3nz_amean_numeric",
    "F2frequency_sma3nz_stddevNorm_numeric",
    "F2amplitudeLogRelF0_sma3nz_amean_numeric",
    "F2amplitudeLogRelF0_sma3nz_stddevNorm_numeric",
    "F3frequency_sma3nz_amean_numeric",
    "F3frequency_sma3nz_stddevNorm_numeric",
    "F3bandwidth_sma3nz_amean_numeric",
    "F3bandwidth_sma3nz_stddevNorm_numeric",
    "F3amplitudeLogRelF0_sma3nz_amean_numeric",
    "F3amplitudeLogRelF0_sma3nz_stddevNorm_numeric",
    "alphaRatioV_sma3nz_amean_numeric",
    "alphaRatioV_sma3nz_stddevNorm_numeric",
    "hammarbergIndexV_sma3nz_amean_numeric",
    "hammarbergIndexV_sma3nz_stddevNorm_numeric",
    "slopeV0-500_sma3nz_amean_numeric",
    "slopeV500-1500_sma3nz_amean_numeric",
    "slopeV500-1500_sma3nz_stddevNorm_numeric",
    "spectralFluxV_sma3nz_amean_numeric",
    "mfcc1V_sma3nz_amean_numeric",
    "mfcc1V_sma3nz_stddevNorm_numeric",
    "mfcc2V_sma3nz_amean_numeric",
    "mfcc2V_sma3nz_stddevNorm_numeric",
    "mfcc3V_sma3nz_amean_numeric",
};

/// Canonical column order for a table of `count` features.
inline std::vector<std::string> feature_names(std::size_t count = kFeatureCount) {
    require(count >= 1 && count <= kFeatureCount, ErrorKind::InvalidArgument,
            "feature count must be in [1, " + std::to_string(kFeatureCount) + "]");
    std::vector<std::string> out;
    for (std::size_t i = 0; i < count; ++i) {
        if (i < kNamedFeatures) {
            out.emplace_back(kNamedFeatureList[i]);
        } else {
            const std::size_t k = i - kNamedFeatures + 1;
            out.push_back(std::string("egemaps_extra_") + (k < 10 ? "0" : "") + std::to_string(k));
        }
    }
    return out;
}

struct FeatureTable {
    std::vector<std::string> feature_names;
    std::vector<std::string> ids;
    std::vector<std::vector<double>> rows;  // canonical order; NaN marks a missing cell
    std::vector<Label> labels;              // empty when the table has no label column

    std::size_t size() const { return ids.size(); }
    bool labeled() const { return !labels.empty(); }

    FeatureTable subset(const std::vector<std::size_t>& which) const {
        FeatureTable t{feature_names, {}, {}, {}};
        for (std::size_t i : which) {
            t.ids.push_back(ids[i]);
            t.rows.push_back(rows[i]);
            if (labeled()) {
                t.labels.push_back(labels[i]);
            }
        }
        return t;
    }
};

namespace detail {

inline std::vector<std::string> split_fields(const std::string& line, char delim) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == delim) {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    out.push_back(cur);
    for (auto& f : out) {
        const auto b = f.find_first_not_of(" \t\"");
        const auto e = f.find_last_not_of(" \t\"");
        f = b == std::string::npos ? std::string() : f.substr(b, e - b + 1);
    }
    return out;
}

inline bool is_missing(const std::string& cell) {
    return cell.empty() || cell == "NA" || cell == "NaN" || cell == "nan" || cell == "?";
}

}  // namespace detail

/// Reads a CSV or TSV (tab if the header holds a tab) with an id column ("participant_id"
/// or "id"), an optional "label" column and exactly the canonical feature columns in any
/// order. A header name may omit the trailing "_numeric".
inline FeatureTable load_features(std::istream& in, std::size_t feature_count = kFeatureCount) {
    const auto names = feature_names(feature_count);
    std::map<std::string, std::size_t> canonical;
    for (std::size_t i = 0; i < names.size(); ++i) {
        canonical[names[i]] = i;
        const std::string suffix = "_numeric";
        if (names[i].size() > suffix.size() && names[i].ends_with(suffix)) {
            canonical[names[i].substr(0, names[i].size() - suffix.size())] = i;
        }
    }
    std::string header;
    if (!std::getline(in, header)) {
        fail(ErrorKind::SchemaViolation, "feature table is empty", 1);
    }
    const char delim = header.find('\t') != std::string::npos ? '\t' : ',';
    const auto cols = detail::split_fields(header, delim);
    std::optional<std::size_t> id_col, label_col;
    std::vector<std::optional<std::size_t>> target(cols.size());
    std::set<std::size_t> seen;
    for (std::size_t c = 0; c < cols.size(); ++c) {
        if (cols[c] == "participant_id" || cols[c] == "id") {
            id_col = c;
        } else if (cols[c] == "label") {
            label_col = c;
        } else if (auto it = canonical.find(cols[c]); it != canonical.end()) {
            if (!seen.insert(it->second).second) {
                fail(ErrorKind::SchemaViolation, "duplicate feature column '" + cols[c] + "'", 1);
            }
            target[c] = it->second;
        } else {
            fail(ErrorKind::UnknownColumn, "unknown column '" + cols[c] + "'", 1);
        }
    }
    if (!id_col) {
        fail(ErrorKind::MissingIdColumn, "no participant_id column", 1);
    }
    if (seen.size() != names.size()) {
        for (std::size_t i = 0; i < names.size(); ++i) {
            if (!seen.count(i)) {
                fail(ErrorKind::SchemaViolation, "missing feature column '" + names[i] + "'", 1);
            }
        }
    }
    FeatureTable t{names, {}, {}, {}};
    std::string line;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) {
            continue;
        }
        const auto cells = detail::split_fields(line, delim);
        if (cells.size() != cols.size()) {
            fail(ErrorKind::SchemaViolation,
                 "expected " + std::to_string(cols.size()) + " fields, found " + std::to_string(cells.size()), line_no);
        }
        std::vector<double> row(names.size(), std::numeric_limits<double>::quiet_NaN());
        for (std::size_t c = 0; c < cols.size(); ++c) {
            if (!target[c] || detail::is_missing(cells[c])) {
                continue;
            }
            std::size_t used = 0;
            double v = 0.0;
            try {
                v = std::stod(cells[c], &used);
            } catch (const std::exception&) {
                used = 0;
            }
            if (used != cells[c].size() || !std::isfinite(v)) {
                fail(ErrorKind::SchemaViolation, "column '" + cols[c] + "' holds non-numeric '" + cells[c] + "'",
                     line_no);
            }
            row[*target[c]] = v;
        }
        if (cells[*id_col].empty()) {
            fail(ErrorKind::SchemaViolation, "empty participant_id", line_no);
        }
        t.ids.push_back(cells[*id_col]);
        t.rows.push_back(std::move(row));
        if (label_col) {
            const auto l = parse_label(cells[*label_col]);
            if (!l) {
                fail(ErrorKind::SchemaViolation, "unknown label '" + cells[*label_col] + "'", line_no);
            }
            t.labels.push_back(*l);
        }
    }
    return t;
}

inline FeatureTable load_features(const std::string& path, std::size_t feature_count = kFeatureCount) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        fail(ErrorKind::Io, "cannot read " + path);
    }
    try {
        return load_features(in, feature_count);
    } catch (const Error& e) {
        std::string msg = e.what();
        msg.erase(0, to_string(e.kind()).size() + 2);  // drop the "Kind: " prefix
        throw Error(e.kind(), path + (e.line() ? ":" + std::to_string(e.line()) : "") + ": " + msg, e.line());
    }
}

/// Writes canonical-order CSV; missing cells are left empty.
inline void save_features(const FeatureTable& t, std::ostream& out) {
    out << "participant_id";
    if (t.labeled()) {
        out << ",label";
    }
    for (const auto& n : t.feature_names) {
        out << ',' << n;
    }
    out << '\n';
    std::ostringstream cell;
    for (std::size_t i = 0; i < t.size(); ++i) {
        out << t.ids[i];
        if (t.labeled()) {
            out << ',' << to_string(t.labels[i]);
        }
        for (double v : t.rows[i]) {
            out << ',';
            if (!std::isnan(v)) {
                cell.str("");
                cell.precision(17);
                cell << v;
                out << cell.str();
            }
        }
        out << '\n';
    }
}

/// Train-split column statistics. Columns with (near) zero spread keep scale 1, so a
/// constant column standardizes to zeros instead of dividing by zero.
struct Standardizer {
    std::vector<double> mean;
    std::vector<double> scale;

    static Standardizer fit(const std::vector<std::vector<double>>& rows, std::size_t width) {
        Standardizer s{std::vector<double>(width, 0.0), std::vector<double>(width, 1.0)};
        for (std::size_t c = 0; c < width; ++c) {
            double sum = 0.0;
            std::size_t n = 0;
            for (const auto& r : rows) {
                if (!std::isnan(r[c])) {
                    sum += r[c];
                    ++n;
                }
            }
            s.mean[c] = n ? sum / static_cast<double>(n) : 0.0;
            // Imputed cells equal the mean and add nothing to the spread.
            double ss = 0.0;
            for (const auto& r : rows) {
                if (!std::isnan(r[c])) {
                    ss += (r[c] - s.mean[c]) * (r[c] - s.mean[c]);
                }
            }
            const double sd = rows.empty() ? 0.0 : std::sqrt(ss / static_cast<double>(rows.size()));
            s.scale[c] = sd < 1e-12 ? 1.0 : sd;
        }
        return s;
    }

    std::vector<double> apply(const std::vector<double>& raw) const {
        if (raw.size() != mean.size()) {
            fail(ErrorKind::DimensionMismatch, "feature vector has " + std::to_string(raw.size()) + " values, model expects " +
                                                   std::to_string(mean.size()));
        }
        std::vector<double> out(raw.size());
        for (std::size_t c = 0; c < raw.size(); ++c) {
            out[c] = std::isnan(raw[c]) ? 0.0 : (raw[c] - mean[c]) / scale[c];
        }
        return out;
    }
};

struct MlpConfig {
    std::vector<std::size_t> sizes = {kFeatureCount, 64, 16, 3};
    double dropout = 0.1;

    void validate(std::size_t feature_count = kFeatureCount) const {
        require(sizes.size() >= 2, ErrorKind::InvalidArgument, "an MLP needs at least an input and output size");
        if (sizes.front() != feature_count || sizes.back() != static_cast<std::size_t>(kNumClasses)) {
            fail(ErrorKind::DimensionMismatch, "MLP must map " + std::to_string(feature_count) + " features to 3 classes");
        }
        for (auto s : sizes) {
            require(s >= 1, ErrorKind::InvalidArgument, "layer sizes must be >= 1");
        }
        require(dropout >= 0.0 && dropout < 1.0, ErrorKind::InvalidArgument, "dropout must be in [0, 1)");
    }

    bool operator==(const MlpConfig&) const = default;
};

inline nlohmann::ordered_json to_json(const MlpConfig& c) { return {{"sizes", c.sizes}, {"dropout", c.dropout}}; }

class AudioModel {
public:
    AudioModel(const MlpConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
        cfg.validate(cfg.sizes.front());
        Rng rng(seed);
        for (std::size_t i = 0; i + 1 < cfg.sizes.size(); ++i) {
            layers_.push_back(nn::Linear::create(params_, "mlp." + std::to_string(i), cfg.sizes[i], cfg.sizes[i + 1], rng));
        }
        standardizer_ = {std::vector<double>(cfg.sizes.front(), 0.0), std::vector<double>(cfg.sizes.front(), 1.0)};
    }

    AudioModel(const AudioModel&) = delete;
    AudioModel& operator=(const AudioModel&) = delete;
    AudioModel(AudioModel&&) = default;
    AudioModel& operator=(AudioModel&&) = default;

    const MlpConfig& config() const { return cfg_; }
    std::size_t feature_count() const { return cfg_.sizes.front(); }
    nn::ParamSet& params() { return params_; }
    const nn::ParamSet& params() const { return params_; }
    const Standardizer& standardizer() const { return standardizer_; }
    void set_standardizer(Standardizer s) {
        if (s.mean.size() != feature_count() || s.scale.size() != feature_count()) {
            fail(ErrorKind::DimensionMismatch, "standardizer width does not match the model");
        }
        standardizer_ = std::move(s);
    }

    /// Logits [n, 3] for already standardized rows x[n, features].
    Var logits(const Var& x, bool training = false, Rng* rng = nullptr) const {
        if (x.value().cols() != feature_count()) {
            fail(ErrorKind::DimensionMismatch, "input has " + std::to_string(x.value().cols()) + " features, model expects " +
                                                   std::to_string(feature_count()));
        }
        Var h = x;
        for (std::size_t i = 0; i < layers_.size(); ++i) {
            h = layers_[i](h);
            if (i + 1 < layers_.size()) {
                h = nn::dropout(nn::relu(h), cfg_.dropout, rng, training);
            }
        }
        return h;
    }

    void zero_parameters() {
        for (const auto& [_, v] : params_.items()) {
            Var p = v;
            p.mutable_value().fill(0.0);
        }
    }

    nn::Checkpoint to_checkpoint() const {
        auto ck = nn::make_checkpoint("audio_mlp", {{"mlp", to_json(cfg_)}}, params_);
        const std::size_t n = feature_count();
        ck.tensors.emplace_back("standardizer.mean", Tensor({n}, standardizer_.mean));
        ck.tensors.emplace_back("standardizer.scale", Tensor({n}, standardizer_.scale));
        return ck;
    }

    static AudioModel from_checkpoint(const nn::Checkpoint& ck) {
        if (ck.kind != "audio_mlp") {
            fail(ErrorKind::SchemaViolation, "checkpoint kind '" + ck.kind + "' is not audio_mlp");
        }
        MlpConfig cfg;
        try {
            cfg.sizes = ck.config.at("mlp").at("sizes").get<std::vector<std::size_t>>();
            cfg.dropout = ck.config.at("mlp").at("dropout").get<double>();
        } catch (const nlohmann::json::exception& e) {
            fail(ErrorKind::SchemaViolation, std::string("audio checkpoint config: ") + e.what());
        }
        AudioModel m(cfg, 0);
        nn::load_params(ck, m.params_);
        const Tensor* mean = ck.find("standardizer.mean");
        const Tensor* scale = ck.find("standardizer.scale");
        if (!mean || !scale) {
            fail(ErrorKind::SchemaViolation, "audio checkpoint lacks standardizer tensors");
        }
        m.set_standardizer({mean->vec(), scale->vec()});
        return m;
    }

private:
    MlpConfig cfg_;
    nn::ParamSet params_;
    std::vector<nn::Linear> layers_;
    Standardizer standardizer_;
};

inline Var to_matrix(const std::vector<std::vector<double>>& rows, std::size_t width) {
    Tensor t({rows.size(), width});
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i].size() != width) {
            fail(ErrorKind::DimensionMismatch, "row " + std::to_string(i) + " has " + std::to_string(rows[i].size()) +
                                                   " values, expected " + std::to_string(width));
        }
        std::copy(rows[i].begin(), rows[i].end(), t.vec().begin() + static_cast<std::ptrdiff_t>(i * width));
    }
    return Var::constant(std::move(t));
}

inline std::vector<std::vector<double>> standardize_all(const Standardizer& s, const std::vector<std::vector<double>>& rows) {
    std::vector<std::vector<double>> out;
    out.reserve(rows.size());
    for (const auto& r : rows) {
        out.push_back(s.apply(r));
    }
    return out;
}

/// Probabilities for one raw (unstandardized) feature vector.
inline std::array<double, 3> predict_audio(const AudioModel& m, const std::vector<double>& raw) {
    if (raw.size() != m.feature_count()) {
        fail(ErrorKind::DimensionMismatch, "feature vector has " + std::to_string(raw.size()) + " values, model expects " +
                                               std::to_string(m.feature_count()));
    }
    const Var l = m.logits(to_matrix({m.standardizer().apply(raw)}, m.feature_count()));
    const auto p = nn::softmax_values(l.value().vec());
    return {p[0], p[1], p[2]};
}

struct EpochRecord {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double validation_loss = 0.0;
    double validation_accuracy = 0.0;
};

inline nlohmann::ordered_json to_json(const EpochRecord& r) {
    return {{"epoch", r.epoch},
            {"train_loss", r.train_loss},
            {"validation_loss", r.validation_loss},
            {"validation_accuracy", r.validation_accuracy}};
}

struct TrainResult {
    std::vector<EpochRecord> history;
    std::size_t best_epoch = 0;
};

struct EvalResult {
    double loss = 0.0;
    double accuracy = 0.0;
};

/// Loss and accuracy on standardized rows.
inline EvalResult evaluate_rows(const AudioModel& m, const std::vector<std::vector<double>>& rows,
                                const std::vector<Label>& labels) {
    EvalResult r;
    if (rows.empty()) {
        return r;
    }
    std::vector<int> targets;
    for (auto l : labels) {
        targets.push_back(index_of(l));
    }
    const Var logits = m.logits(to_matrix(rows, m.feature_count()));
    r.loss = nn::cross_entropy(logits, targets).value()[0];
    std::size_t correct = 0;
    const auto& v = logits.value().vec();
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto row = v.begin() + static_cast<std::ptrdiff_t>(3 * i);
        correct += std::max_element(row, row + 3) - row == targets[i];
    }
    r.accuracy = static_cast<double>(correct) / static_cast<double>(rows.size());
    return r;
}

inline EvalResult evaluate_table(const AudioModel& m, const FeatureTable& t) {
    return evaluate_rows(m, standardize_all(m.standardizer(), t.rows), t.labels);
}

/// Fits the standardizer on `train`, then runs mini-batch Adam at a constant learning rate
/// and keeps the epoch of lowest validation loss (training loss if validation is empty).
inline TrainResult train_audio(AudioModel& m, const FeatureTable& train, const FeatureTable& validation,
                               const TrainConfig& tc, const std::function<void(const EpochRecord&)>& on_epoch = {}) {
    tc.validate();
    require(train.labeled() && train.labels.size() == train.size(), ErrorKind::SchemaViolation,
            "training table has no labels");
    require(validation.size() == 0 || validation.labeled(), ErrorKind::SchemaViolation, "validation table has no labels");
    const auto counts = [&] {
        std::array<std::size_t, 3> c{};
        for (auto l : train.labels) {
            ++c[static_cast<std::size_t>(index_of(l))];
        }
        return c;
    }();
    for (int c = 0; c < kNumClasses; ++c) {
        if (counts[static_cast<std::size_t>(c)] == 0) {
            fail(ErrorKind::ClassMissing, "training split has no " + std::string(kLabelNames[static_cast<std::size_t>(c)]) +
                                              " samples");
        }
    }
    m.set_standardizer(Standardizer::fit(train.rows, m.feature_count()));
    const auto x_train = standardize_all(m.standardizer(), train.rows);
    const auto x_val = standardize_all(m.standardizer(), validation.rows);
    nn::AdamState opt;
    TrainResult result;
    auto best = m.params().snapshot();
    double best_loss = INFINITY;
    for (std::size_t epoch = 0; epoch < tc.epochs; ++epoch) {
        std::vector<std::size_t> order(train.size());
        std::iota(order.begin(), order.end(), 0);
        Rng shuffler(derive_seed(tc.seed, 0x5f1e0000 + epoch));
        shuffler.shuffle(order);
        Rng drop(derive_seed(tc.seed, 0xd80f0000 + epoch));
        double total = 0.0;
        for (std::size_t start = 0; start < order.size(); start += tc.batch_size) {
            const std::size_t end = std::min(order.size(), start + tc.batch_size);
            std::vector<std::vector<double>> rows;
            std::vector<int> targets;
            for (std::size_t i = start; i < end; ++i) {
                rows.push_back(x_train[order[i]]);
                targets.push_back(index_of(train.labels[order[i]]));
            }
            m.params().zero_grad();
            const Var loss = nn::cross_entropy(m.logits(to_matrix(rows, m.feature_count()), true, &drop), targets);
            nn::backward(loss);
            nn::adam_step(m.params(), opt, tc.peak_lr);
            total += loss.value()[0] * static_cast<double>(end - start);
        }
        EpochRecord rec{epoch, total / static_cast<double>(train.size()), 0.0, 0.0};
        const auto ev = validation.size() ? evaluate_rows(m, x_val, validation.labels) : evaluate_rows(m, x_train, train.labels);
        rec.validation_loss = ev.loss;
        rec.validation_accuracy = ev.accuracy;
        if (rec.validation_loss < best_loss) {
            best_loss = rec.validation_loss;
            best = m.params().snapshot();
            result.best_epoch = epoch;
        }
        result.history.push_back(rec);
        if (on_epoch) {
            on_epoch(rec);
        }
    }
    m.params().restore(best);
    return result;
}

/// LR-range subject: one epoch of plain mini-batch Adam on fixed, standardized data.
class AudioLrSubject {
public:
    AudioLrSubject(AudioModel& m, const FeatureTable& train, std::size_t batch_size, std::uint64_t seed)
        : model_(m), batch_(batch_size), seed_(seed) {
        model_.set_standardizer(Standardizer::fit(train.rows, model_.feature_count()));
        x_ = standardize_all(model_.standardizer(), train.rows);
        for (auto l : train.labels) {
            y_.push_back(index_of(l));
        }
    }

    double loss() const {
        return nn::cross_entropy(model_.logits(to_matrix(x_, model_.feature_count())), y_).value()[0];
    }

    void train_epoch(double lr) {
        Rng drop(derive_seed(seed_, epoch_++));
        for (std::size_t start = 0; start < x_.size(); start += batch_) {
            const std::size_t end = std::min(x_.size(), start + batch_);
            std::vector<std::vector<double>> rows(x_.begin() + static_cast<std::ptrdiff_t>(start),
                                                  x_.begin() + static_cast<std::ptrdiff_t>(end));
            std::vector<int> y(y_.begin() + static_cast<std::ptrdiff_t>(start), y_.begin() + static_cast<std::ptrdiff_t>(end));
            model_.params().zero_grad();
            nn::backward(nn::cross_entropy(model_.logits(to_matrix(rows, model_.feature_count()), true, &drop), y));
            nn::adam_step(model_.params(), opt_, lr);
        }
    }

private:
    AudioModel& model_;
    std::size_t batch_;
    std::uint64_t seed_;
    std::uint64_t epoch_ = 0;
    std::vector<std::vector<double>> x_;
    std::vector<int> y_;
    nn::AdamState opt_;
};

struct AudioSplits {
    FeatureTable train, validation, test;
};

/// Audio samples whose participant also has a transcript form the test set in full, so
/// the audio model never trains on anyone the text model saw. The rest is split per class
/// into train and validation by largest remainder.
inline AudioSplits transcript_holdout_split(const FeatureTable& t, const std::set<std::string>& has_transcript,
                                            double validation_fraction = 0.1, std::uint64_t seed = 0) {
    require(t.labeled(), ErrorKind::SchemaViolation, "split needs labels");
    require(validation_fraction >= 0.0 && validation_fraction < 1.0, ErrorKind::InvalidArgument,
            "validation fraction must be in [0, 1)");
    std::vector<std::size_t> test;
    std::array<std::vector<std::size_t>, 3> pool;
    for (std::size_t i = 0; i < t.size(); ++i) {
        if (has_transcript.count(t.ids[i])) {
            test.push_back(i);
        } else {
            pool[static_cast<std::size_t>(index_of(t.labels[i]))].push_back(i);
        }
    }
    std::vector<std::size_t> train, val;
    for (std::size_t c = 0; c < 3; ++c) {
        Rng rng(derive_seed(seed, c));
        rng.shuffle(pool[c]);
        const auto n = apportion(pool[c].size(), {1.0 - validation_fraction, validation_fraction, 0.0});
        train.insert(train.end(), pool[c].begin(), pool[c].begin() + static_cast<std::ptrdiff_t>(n[0]));
        val.insert(val.end(), pool[c].begin() + static_cast<std::ptrdiff_t>(n[0]), pool[c].end());
    }
    std::sort(train.begin(), train.end());
    std::sort(val.begin(), val.end());
    return {t.subset(train), t.subset(val), t.subset(test)};
}

inline std::array<std::size_t, 3> class_counts(const FeatureTable& t) {
    std::array<std::size_t, 3> c{};
    for (auto l : t.labels) {
        ++c[static_cast<std::size_t>(index_of(l))];
    }
    return c;
}

}  // namespace speechdx::audio
