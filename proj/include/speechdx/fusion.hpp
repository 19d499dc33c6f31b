#pragma once

// Late fusion: one dense layer over the concatenated text and audio output vectors.
// The submodels never enter the fusion graph; their outputs arrive as constants.

#include <array>
#include <cmath>
#include <functional>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include <json.hpp>

#include "speechdx/dataset.hpp"
#include "speechdx/nn/checkpoint.hpp"
#include "speechdx/nn/layers.hpp"
#include "speechdx/nn/optim.hpp"
#include "speechdx/train_config.hpp"

namespace speechdx::fusion {

using nn::Tensor;
using nn::Var;
using Vec3 = std::array<double, 3>;

enum class InputMode { Probabilities, Logits };

inline std::string_view to_string(InputMode m) { return m == InputMode::Logits ? "logits" : "probabilities"; }

inline InputMode parse_mode(std::string_view s) {
    if (s == "probabilities") {
        return InputMode::Probabilities;
    }
    if (s == "logits") {
        return InputMode::Logits;
    }
    fail(ErrorKind::InvalidArgument, "fusion input mode must be 'probabilities' or 'logits'");
}

struct ChunkPrediction {
    std::string participant_id;
    int chunk_index = 0;
    Vec3 values{};
};

struct FusionInput {
    std::string participant_id;
    int chunk_index = 0;
    Vec3 text{};
    Vec3 audio{};
    Label label = Label::Healthy;

    bool operator==(const FusionInput&) const = default;
};

inline void check_distribution(const Vec3& p, const std::string& what) {
    const double s = p[0] + p[1] + p[2];
    if (std::abs(s - 1.0) > 1e-6 || p[0] < 0.0 || p[1] < 0.0 || p[2] < 0.0) {
        fail(ErrorKind::SchemaViolation, what + " is not a probability vector");
    }
}

/// One input per chunk, carrying that chunk's text vector and its participant's audio
/// vector. In probability mode both vectors must sum to 1.
inline std::vector<FusionInput> build_fusion_dataset(const std::vector<ChunkPrediction>& text,
                                                     const std::map<std::string, Vec3>& audio,
                                                     const std::vector<Chunk>& chunks,
                                                     InputMode mode = InputMode::Probabilities) {
    std::map<std::pair<std::string, int>, Vec3> by_chunk;
    for (const auto& t : text) {
        by_chunk[{t.participant_id, t.chunk_index}] = t.values;
    }
    std::vector<FusionInput> out;
    out.reserve(chunks.size());
    for (const auto& c : chunks) {
        const auto a = audio.find(c.participant_id);
        if (a == audio.end()) {
            fail(ErrorKind::MissingAudioForParticipant, "no audio prediction for participant '" + c.participant_id + "'");
        }
        const auto t = by_chunk.find({c.participant_id, c.chunk_index});
        if (t == by_chunk.end()) {
            fail(ErrorKind::SchemaViolation, "no text prediction for chunk " + c.participant_id + "#" +
                                                 std::to_string(c.chunk_index));
        }
        if (mode == InputMode::Probabilities) {
            check_distribution(t->second, "text prediction for " + c.participant_id);
            check_distribution(a->second, "audio prediction for " + c.participant_id);
        }
        out.push_back({c.participant_id, c.chunk_index, t->second, a->second, c.label});
    }
    return out;
}

class FusionModel {
public:
    FusionModel(double dropout, InputMode mode, std::uint64_t seed) : dropout_(dropout), mode_(mode) {
        require(dropout >= 0.0 && dropout < 1.0, ErrorKind::InvalidArgument, "dropout must be in [0, 1)");
        Rng rng(seed);
        dense_ = nn::Linear::create(params_, "fusion.dense", 6, 3, rng);
    }

    FusionModel(const FusionModel&) = delete;
    FusionModel& operator=(const FusionModel&) = delete;
    FusionModel(FusionModel&&) = default;
    FusionModel& operator=(FusionModel&&) = default;

    double dropout() const { return dropout_; }
    InputMode mode() const { return mode_; }
    nn::ParamSet& params() { return params_; }
    const nn::ParamSet& params() const { return params_; }

    /// Weight [6, 3]: rows 0-2 read the text vector, rows 3-5 the audio vector.
    void set_weights(const Tensor& weight, const Tensor& bias) {
        if (weight.shape() != nn::Shape{6, 3} || bias.shape() != nn::Shape{3}) {
            fail(ErrorKind::DimensionMismatch, "fusion weights must be [6, 3] and [3]");
        }
        Var w = dense_.weight, b = dense_.bias;
        w.mutable_value() = weight;
        b.mutable_value() = bias;
    }

    Var logits(const Var& x, bool training = false, Rng* rng = nullptr) const {
        if (x.value().cols() != 6) {
            fail(ErrorKind::DimensionMismatch, "fusion input must have 6 columns");
        }
        return dense_(nn::dropout(x, dropout_, rng, training));
    }

    nn::Checkpoint to_checkpoint() const {
        return nn::make_checkpoint("fusion", {{"dropout", dropout_}, {"mode", to_string(mode_)}}, params_);
    }

    static FusionModel from_checkpoint(const nn::Checkpoint& ck) {
        if (ck.kind != "fusion") {
            fail(ErrorKind::SchemaViolation, "checkpoint kind '" + ck.kind + "' is not fusion");
        }
        FusionModel m(ck.config.value("dropout", 0.0), parse_mode(ck.config.value("mode", "probabilities")), 0);
        nn::load_params(ck, m.params_);
        return m;
    }

private:
    double dropout_;
    InputMode mode_;
    nn::ParamSet params_;
    nn::Linear dense_;
};

inline Var to_matrix(const std::vector<FusionInput>& inputs) {
    Tensor t({inputs.size(), 6});
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        for (std::size_t k = 0; k < 3; ++k) {
            t.at(i, k) = inputs[i].text[k];
            t.at(i, 3 + k) = inputs[i].audio[k];
        }
    }
    return Var::constant(std::move(t));
}

/// softmax(dense([text, audio])) for one 6-vector.
inline Vec3 predict_fusion(const FusionModel& m, const std::vector<double>& features) {
    if (features.size() != 6) {
        fail(ErrorKind::DimensionMismatch, "fusion input has " + std::to_string(features.size()) + " values, expected 6");
    }
    const Var l = m.logits(Var::constant(Tensor({1, 6}, features)));
    const auto p = nn::softmax_values(l.value().vec());
    return {p[0], p[1], p[2]};
}

inline Vec3 predict_fusion(const FusionModel& m, const FusionInput& in) {
    return predict_fusion(m, {in.text[0], in.text[1], in.text[2], in.audio[0], in.audio[1], in.audio[2]});
}

inline int argmax(const Vec3& v) { return static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin()); }

/// Trips when any watched parameter set changes. Watching by digest covers every value
/// bit, so even a no-op rewrite with a different NaN payload or signed zero is caught.
class FreezeGuard {
public:
    void watch(const std::string& name, const nn::ParamSet& params) {
        watched_.push_back({name, &params, params.digest()});
    }

    void check() const {
        for (const auto& w : watched_) {
            if (w.params->digest() != w.digest) {
                fail(ErrorKind::SubmodelMutated, "frozen submodel '" + w.name + "' changed during fusion training");
            }
        }
    }

private:
    struct Watched {
        std::string name;
        const nn::ParamSet* params;
        std::uint64_t digest;
    };
    std::vector<Watched> watched_;
};

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

inline std::vector<int> targets_of(const std::vector<FusionInput>& inputs) {
    std::vector<int> t;
    for (const auto& in : inputs) {
        t.push_back(index_of(in.label));
    }
    return t;
}

inline EvalResult evaluate_inputs(const FusionModel& m, const std::vector<FusionInput>& inputs) {
    EvalResult r;
    if (inputs.empty()) {
        return r;
    }
    const Var l = m.logits(to_matrix(inputs));
    const auto targets = targets_of(inputs);
    r.loss = nn::cross_entropy(l, targets).value()[0];
    std::size_t correct = 0;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        const Vec3 row = {l.value().at(i, 0), l.value().at(i, 1), l.value().at(i, 2)};
        correct += argmax(row) == targets[i];
    }
    r.accuracy = static_cast<double>(correct) / static_cast<double>(inputs.size());
    return r;
}

/// Cross-entropy + Adam on the fusion layer alone, keeping the epoch of lowest validation
/// loss. The guard is checked before and after training.
inline TrainResult train_fusion(FusionModel& m, const std::vector<FusionInput>& train,
                                const std::vector<FusionInput>& validation, const TrainConfig& tc,
                                const FreezeGuard& guard = {},
                                const std::function<void(const EpochRecord&)>& on_epoch = {}) {
    tc.validate();
    require(!train.empty(), ErrorKind::CorpusEmpty, "empty fusion training set");
    guard.check();
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
            std::vector<FusionInput> batch;
            for (std::size_t i = start; i < end; ++i) {
                batch.push_back(train[order[i]]);
            }
            m.params().zero_grad();
            const Var loss = nn::cross_entropy(m.logits(to_matrix(batch), true, &drop), targets_of(batch));
            nn::backward(loss);
            nn::adam_step(m.params(), opt, tc.peak_lr);
            total += loss.value()[0] * static_cast<double>(batch.size());
        }
        EpochRecord rec{epoch, total / static_cast<double>(train.size()), 0.0, 0.0};
        const auto ev = evaluate_inputs(m, validation.empty() ? train : validation);
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
    guard.check();
    return result;
}

/// Fraction of inputs whose text vector alone points at the label.
inline double text_only_accuracy(const std::vector<FusionInput>& inputs) {
    if (inputs.empty()) {
        return 0.0;
    }
    std::size_t correct = 0;
    for (const auto& in : inputs) {
        correct += argmax(in.text) == index_of(in.label);
    }
    return static_cast<double>(correct) / static_cast<double>(inputs.size());
}

inline nlohmann::ordered_json to_json(const ChunkPrediction& p) {
    return {{"participant_id", p.participant_id}, {"chunk_index", p.chunk_index}, {"proba", p.values}};
}

}  // namespace speechdx::fusion
