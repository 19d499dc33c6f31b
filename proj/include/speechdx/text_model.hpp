#pragma once

// Small post-LN transformer encoder with a masked-LM head for pretraining and a
// first-token classification head for the 3-way task.
//
// Sequences are processed one at a time ([T, d] activations); a batch is the sum of its
// members' losses, so gradients accumulate across backward() calls before each step.

#include <array>
#include <cmath>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include <json.hpp>

#include "speechdx/bpe.hpp"
#include "speechdx/dataset.hpp"
#include "speechdx/nn/checkpoint.hpp"
#include "speechdx/nn/layers.hpp"
#include "speechdx/nn/optim.hpp"
#include "speechdx/train_config.hpp"

namespace speechdx::text {

using nn::Tensor;
using nn::Var;

struct EncoderConfig {
    std::size_t layers = 2;
    std::size_t heads = 4;
    std::size_t d_model = 64;
    std::size_t d_ff = 256;
    std::size_t max_positions = 512;
    std::size_t vocab_size = 0;
    double dropout = 0.1;
    double init_std = 0.02;

    /// `chunk_size` 0 skips the positional-capacity check.
    void validate(std::size_t chunk_size = 0) const {
        if (vocab_size <= static_cast<std::size_t>(bpe::kMask)) {
            fail(ErrorKind::VocabMissingMask, "vocabulary of " + std::to_string(vocab_size) + " has no <mask> id");
        }
        require(layers >= 1 && d_model >= 1 && d_ff >= 1, ErrorKind::InvalidArgument, "encoder sizes must be >= 1");
        if (heads == 0 || d_model % heads != 0) {
            fail(ErrorKind::ShapeMismatch, "d_model " + std::to_string(d_model) + " not divisible by " +
                                               std::to_string(heads) + " heads");
        }
        require(dropout >= 0.0 && dropout < 1.0, ErrorKind::InvalidArgument, "dropout must be in [0, 1)");
        if (chunk_size + 2 > max_positions) {
            fail(ErrorKind::SequenceTooLong, "max_positions " + std::to_string(max_positions) +
                                                 " cannot hold chunks of " + std::to_string(chunk_size) + " plus specials");
        }
    }

    bool operator==(const EncoderConfig&) const = default;
};

inline nlohmann::ordered_json to_json(const EncoderConfig& c) {
    return {{"layers", c.layers},         {"heads", c.heads},         {"d_model", c.d_model},
            {"d_ff", c.d_ff},             {"max_positions", c.max_positions}, {"vocab_size", c.vocab_size},
            {"dropout", c.dropout},       {"init_std", c.init_std}};
}

inline EncoderConfig encoder_config_from_json(const nlohmann::json& j) {
    EncoderConfig c;
    try {
        c.layers = j.value("layers", c.layers);
        c.heads = j.value("heads", c.heads);
        c.d_model = j.value("d_model", c.d_model);
        c.d_ff = j.value("d_ff", c.d_ff);
        c.max_positions = j.value("max_positions", c.max_positions);
        c.vocab_size = j.value("vocab_size", c.vocab_size);
        c.dropout = j.value("dropout", c.dropout);
        c.init_std = j.value("init_std", c.init_std);
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::SchemaViolation, std::string("encoder config: ") + e.what());
    }
    c.validate();
    return c;
}

/// Parameters live in the owner's ParamSet under "encoder.".
struct Encoder {
    struct Block {
        nn::MultiHeadAttention attention;
        nn::LayerNorm attention_norm;
        nn::Linear ff_in, ff_out;
        nn::LayerNorm ff_norm;
    };

    EncoderConfig cfg;
    Var token_embedding;     // [vocab, d]
    Var position_embedding;  // [max_positions, d]
    nn::LayerNorm embedding_norm;
    std::vector<Block> blocks;

    static Encoder create(nn::ParamSet& ps, const EncoderConfig& cfg, Rng& rng) {
        cfg.validate();
        Encoder e;
        e.cfg = cfg;
        const std::size_t d = cfg.d_model;
        e.token_embedding = ps.add("encoder.embeddings.token", nn::normal_tensor({cfg.vocab_size, d}, cfg.init_std, rng));
        e.position_embedding =
            ps.add("encoder.embeddings.position", nn::normal_tensor({cfg.max_positions, d}, cfg.init_std, rng));
        e.embedding_norm = nn::LayerNorm::create(ps, "encoder.embeddings.norm", d);
        for (std::size_t l = 0; l < cfg.layers; ++l) {
            const std::string p = "encoder.layer" + std::to_string(l);
            Block b;
            b.attention = nn::MultiHeadAttention::create(ps, p + ".attention", d, cfg.heads, cfg.init_std, rng);
            b.attention_norm = nn::LayerNorm::create(ps, p + ".attention_norm", d);
            b.ff_in = nn::Linear::create_normal(ps, p + ".ff_in", d, cfg.d_ff, cfg.init_std, rng);
            b.ff_out = nn::Linear::create_normal(ps, p + ".ff_out", cfg.d_ff, d, cfg.init_std, rng);
            b.ff_norm = nn::LayerNorm::create(ps, p + ".ff_norm", d);
            e.blocks.push_back(std::move(b));
        }
        return e;
    }

    /// Hidden states [T, d] for one id sequence. PAD positions are masked as keys, so no
    /// non-PAD row depends on them. `attention_out` collects layer-major, head-minor weights.
    Var operator()(const std::vector<int>& ids, bool training, Rng* rng,
                   std::vector<Tensor>* attention_out = nullptr) const {
        if (ids.size() > cfg.max_positions) {
            fail(ErrorKind::SequenceTooLong, "sequence of " + std::to_string(ids.size()) + " ids exceeds " +
                                                 std::to_string(cfg.max_positions) + " positions");
        }
        require(!ids.empty(), ErrorKind::InvalidArgument, "empty sequence");
        std::vector<int> positions(ids.size());
        std::iota(positions.begin(), positions.end(), 0);
        std::vector<char> pad_mask(ids.size());
        for (std::size_t i = 0; i < ids.size(); ++i) {
            pad_mask[i] = ids[i] == bpe::kPad;
        }
        Var x = nn::add(nn::embedding(token_embedding, ids), nn::embedding(position_embedding, positions));
        x = nn::dropout(embedding_norm(x), cfg.dropout, rng, training);
        for (const auto& b : blocks) {
            const Var a = b.attention(x, pad_mask, cfg.dropout, rng, training, attention_out);
            x = b.attention_norm(nn::add(x, nn::dropout(a, cfg.dropout, rng, training)));
            const Var f = b.ff_out(nn::gelu(b.ff_in(x)));
            x = b.ff_norm(nn::add(x, nn::dropout(f, cfg.dropout, rng, training)));
        }
        return x;
    }
};

/// [BOS] content [EOS]
inline std::vector<int> wrap(const std::vector<int>& content) {
    std::vector<int> ids;
    ids.reserve(content.size() + 2);
    ids.push_back(bpe::kBos);
    ids.insert(ids.end(), content.begin(), content.end());
    ids.push_back(bpe::kEos);
    return ids;
}

class TextClassifier {
public:
    TextClassifier(const EncoderConfig& cfg, std::uint64_t seed) {
        Rng rng(seed);
        encoder_ = Encoder::create(params_, cfg, rng);
        dense_ = nn::Linear::create_normal(params_, "head.dense", cfg.d_model, cfg.d_model, cfg.init_std, rng);
        out_ = nn::Linear::create_normal(params_, "head.out", cfg.d_model, kNumClasses, cfg.init_std, rng);
    }

    TextClassifier(const TextClassifier&) = delete;
    TextClassifier& operator=(const TextClassifier&) = delete;
    TextClassifier(TextClassifier&&) = default;
    TextClassifier& operator=(TextClassifier&&) = default;

    const EncoderConfig& config() const { return encoder_.cfg; }
    nn::ParamSet& params() { return params_; }
    const nn::ParamSet& params() const { return params_; }

    /// Logits [1, 3] for an already wrapped id sequence.
    Var logits_ids(const std::vector<int>& ids, bool training, Rng* rng,
                   std::vector<Tensor>* attention_out = nullptr) const {
        const Var h = encoder_(ids, training, rng, attention_out);
        Var pooled = nn::tanh(dense_(nn::gather_rows(h, {0})));
        pooled = nn::dropout(pooled, encoder_.cfg.dropout, rng, training);
        return out_(pooled);
    }

    Var logits(const std::vector<int>& content, bool training = false, Rng* rng = nullptr) const {
        return logits_ids(wrap(content), training, rng);
    }

    /// First-token hidden state of a wrapped sequence, evaluation mode.
    std::vector<double> pooled_state(const std::vector<int>& ids) const {
        const Var h = encoder_(ids, false, nullptr);
        const auto& v = h.value().vec();
        return {v.begin(), v.begin() + static_cast<std::ptrdiff_t>(encoder_.cfg.d_model)};
    }

    std::vector<Tensor> attention_weights(const std::vector<int>& content) const {
        std::vector<Tensor> out;
        encoder_(wrap(content), false, nullptr, &out);
        return out;
    }

    /// Zeroes the output projection so every prediction is uniform.
    void zero_output_layer() {
        out_.weight.mutable_value().fill(0.0);
        out_.bias.mutable_value().fill(0.0);
    }

    nn::Checkpoint to_checkpoint() const {
        return nn::make_checkpoint("text_classifier", {{"encoder", to_json(encoder_.cfg)}}, params_);
    }

    static TextClassifier from_checkpoint(const nn::Checkpoint& ck) {
        if (ck.kind != "text_classifier") {
            fail(ErrorKind::SchemaViolation, "checkpoint kind '" + ck.kind + "' is not text_classifier");
        }
        TextClassifier c(encoder_config_from_json(ck.config.at("encoder")), 0);
        nn::load_params(ck, c.params_);
        return c;
    }

private:
    nn::ParamSet params_;
    Encoder encoder_;
    nn::Linear dense_, out_;
};

inline std::array<double, 3> predict_logits(const TextClassifier& clf, const std::vector<int>& content) {
    const Var l = clf.logits(content);
    const auto& v = l.value().vec();
    return {v[0], v[1], v[2]};
}

inline std::array<double, 3> predict_proba(const TextClassifier& clf, const std::vector<int>& content) {
    const auto l = predict_logits(clf, content);
    const auto p = nn::softmax_values(l);
    return {p[0], p[1], p[2]};
}

// ---------------------------------------------------------------------------------------
// Masked-LM pretraining

class MlmModel {
public:
    MlmModel(const EncoderConfig& cfg, std::uint64_t seed) {
        Rng rng(seed);
        encoder_ = Encoder::create(params_, cfg, rng);
        transform_ = nn::Linear::create_normal(params_, "mlm.dense", cfg.d_model, cfg.d_model, cfg.init_std, rng);
        norm_ = nn::LayerNorm::create(params_, "mlm.norm", cfg.d_model);
        decoder_bias_ = params_.add("mlm.bias", Tensor({cfg.vocab_size}));
    }

    MlmModel(const MlmModel&) = delete;
    MlmModel& operator=(const MlmModel&) = delete;
    MlmModel(MlmModel&&) = default;
    MlmModel& operator=(MlmModel&&) = default;

    const EncoderConfig& config() const { return encoder_.cfg; }
    nn::ParamSet& params() { return params_; }
    const nn::ParamSet& params() const { return params_; }

    /// Vocabulary logits [positions, vocab]; the decoder is tied to the token embedding.
    Var logits(const std::vector<int>& ids, const std::vector<std::size_t>& positions, bool training, Rng* rng) const {
        const Var h = nn::gather_rows(encoder_(ids, training, rng), positions);
        const Var t = norm_(nn::gelu(transform_(h)));
        return nn::add_bias(nn::matmul(t, nn::transpose(encoder_.token_embedding)), decoder_bias_);
    }

    nn::Checkpoint to_checkpoint() const {
        return nn::make_checkpoint("mlm", {{"encoder", to_json(encoder_.cfg)}}, params_);
    }

private:
    nn::ParamSet params_;
    Encoder encoder_;
    nn::Linear transform_;
    nn::LayerNorm norm_;
    Var decoder_bias_;
};

struct MaskedExample {
    std::vector<int> input;
    std::vector<std::size_t> positions;
    std::vector<int> targets;  // original ids at `positions`
};

/// Selects max(1, round(0.15 n)) of the n content (non-special) positions; 80% become
/// MASK, 10% a random content id, 10% stay. The draw depends only on (seed, epoch, index),
/// so every epoch sees a fresh mask and reruns see the same one.
inline MaskedExample mask_tokens(const std::vector<int>& ids, std::size_t vocab_size, std::uint64_t seed,
                                 std::uint64_t epoch, std::uint64_t index, double rate = 0.15) {
    if (vocab_size <= static_cast<std::size_t>(bpe::kMask)) {
        fail(ErrorKind::VocabMissingMask, "vocabulary of " + std::to_string(vocab_size) + " has no <mask> id");
    }
    MaskedExample ex{ids, {}, {}};
    std::vector<std::size_t> content;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] >= bpe::kByteOffset) {
            content.push_back(i);
        }
    }
    if (content.empty()) {
        return ex;
    }
    Rng rng(derive_seed(derive_seed(seed, epoch), index));
    rng.shuffle(content);
    const auto k = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(rate * static_cast<double>(content.size()))));
    content.resize(std::min(k, content.size()));
    std::sort(content.begin(), content.end());
    const auto n_content = static_cast<std::uint64_t>(vocab_size) - static_cast<std::uint64_t>(bpe::kByteOffset);
    for (std::size_t pos : content) {
        ex.positions.push_back(pos);
        ex.targets.push_back(ids[pos]);
        const double r = rng.uniform();
        if (r < 0.8) {
            ex.input[pos] = bpe::kMask;
        } else if (r < 0.9 && n_content > 0) {
            ex.input[pos] = bpe::kByteOffset + static_cast<int>(rng.below(n_content));
        }
    }
    return ex;
}

inline Var masked_loss(const MlmModel& m, const MaskedExample& ex, bool training, Rng* rng) {
    return nn::cross_entropy(m.logits(ex.input, ex.positions, training, rng), ex.targets);
}

/// Mean masked loss over fixed evaluation masks (epoch tag 0xe7a1), evaluation mode.
inline double mlm_eval_loss(const MlmModel& m, const std::vector<std::vector<int>>& sequences, std::uint64_t seed) {
    double total = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < sequences.size(); ++i) {
        const auto ex = mask_tokens(sequences[i], m.config().vocab_size, seed, 0xe7a1, i);
        if (ex.positions.empty()) {
            continue;
        }
        total += masked_loss(m, ex, false, nullptr).value()[0];
        ++n;
    }
    return n ? total / static_cast<double>(n) : 0.0;
}

struct MlmHistory {
    std::vector<double> step_losses;  // training loss of each optimizer step
};

/// `sequences` are wrapped id sequences. Runs epochs x ceil(n / batch) Adam steps on the
/// linear schedule.
inline MlmHistory mlm_pretrain(MlmModel& m, const std::vector<std::vector<int>>& sequences, const TrainConfig& train,
                               const std::function<void(std::size_t, double)>& on_step = {}) {
    train.validate();
    m.config().validate();
    if (sequences.empty()) {
        fail(ErrorKind::CorpusEmpty, "no sequences to pretrain on");
    }
    const std::size_t per_epoch = (sequences.size() + train.batch_size - 1) / train.batch_size;
    const auto schedule = nn::LinearSchedule::for_run(train.warmup_steps, train.peak_lr, per_epoch * train.epochs);
    nn::AdamState opt;
    MlmHistory hist;
    std::size_t step = 0;
    for (std::size_t epoch = 0; epoch < train.epochs; ++epoch) {
        std::vector<std::size_t> order(sequences.size());
        std::iota(order.begin(), order.end(), 0);
        Rng shuffler(derive_seed(train.seed, 0x5f1e0000 + epoch));
        shuffler.shuffle(order);
        Rng drop(derive_seed(train.seed, 0xd80f0000 + epoch));
        for (std::size_t start = 0; start < order.size(); start += train.batch_size) {
            const std::size_t end = std::min(order.size(), start + train.batch_size);
            m.params().zero_grad();
            double batch_loss = 0.0;
            std::size_t counted = 0;
            std::vector<MaskedExample> batch;
            for (std::size_t i = start; i < end; ++i) {
                auto ex = mask_tokens(sequences[order[i]], m.config().vocab_size, train.seed, epoch, order[i]);
                if (!ex.positions.empty()) {
                    batch.push_back(std::move(ex));
                }
            }
            for (const auto& ex : batch) {
                const Var loss = nn::scale(masked_loss(m, ex, true, &drop), 1.0 / static_cast<double>(batch.size()));
                nn::backward(loss);
                batch_loss += loss.value()[0];
                ++counted;
            }
            if (counted) {
                nn::adam_step(m.params(), opt, nn::lr_at(schedule, step));
            }
            hist.step_losses.push_back(batch_loss);
            if (on_step) {
                on_step(step, batch_loss);
            }
            ++step;
        }
    }
    return hist;
}

// ---------------------------------------------------------------------------------------
// Fine-tuning

struct EpochRecord {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double validation_loss = 0.0;
    double validation_accuracy = 0.0;
};

struct FineTuneOptions {
    bool freeze_encoder = false;
};

struct FineTuneResult {
    std::vector<EpochRecord> history;
    std::size_t best_epoch = 0;
};

struct EvalResult {
    double loss = 0.0;
    double accuracy = 0.0;
};

inline EvalResult evaluate_chunks(const TextClassifier& clf, const std::vector<Chunk>& chunks) {
    EvalResult r;
    if (chunks.empty()) {
        return r;
    }
    std::size_t correct = 0;
    for (const auto& c : chunks) {
        const Var l = clf.logits(c.token_ids);
        r.loss += nn::cross_entropy(l, {index_of(c.label)}).value()[0];
        const auto& v = l.value().vec();
        correct += static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin()) ==
                   static_cast<std::size_t>(index_of(c.label));
    }
    r.loss /= static_cast<double>(chunks.size());
    r.accuracy = static_cast<double>(correct) / static_cast<double>(chunks.size());
    return r;
}

inline void check_lengths(const EncoderConfig& cfg, const std::vector<Chunk>& chunks) {
    for (std::size_t i = 0; i < chunks.size(); ++i) {
        if (chunks[i].token_ids.size() + 2 > cfg.max_positions) {
            fail(ErrorKind::SequenceTooLong,
                 "chunk " + chunks[i].participant_id + "#" + std::to_string(chunks[i].chunk_index) + " has " +
                     std::to_string(chunks[i].token_ids.size()) + " tokens; limit is " +
                     std::to_string(cfg.max_positions - 2),
                 i + 1);
        }
    }
}

/// Trains encoder and head with cross-entropy on the linear warmup/decay schedule and
/// leaves the classifier at the epoch of lowest validation loss (earliest on ties).
/// With an empty validation split the training loss is used instead.
inline FineTuneResult fine_tune(TextClassifier& clf, const std::vector<Chunk>& train_set,
                                const std::vector<Chunk>& validation, const TrainConfig& train,
                                const FineTuneOptions& opts = {},
                                const std::function<void(const EpochRecord&)>& on_epoch = {}) {
    train.validate();
    if (train_set.empty()) {
        fail(ErrorKind::CorpusEmpty, "empty training split");
    }
    check_lengths(clf.config(), train_set);
    check_lengths(clf.config(), validation);
    if (opts.freeze_encoder) {
        clf.params().set_trainable("encoder.", false);
    }
    const std::size_t per_epoch = (train_set.size() + train.batch_size - 1) / train.batch_size;
    const auto schedule = nn::LinearSchedule::for_run(train.warmup_steps, train.peak_lr, per_epoch * train.epochs);
    nn::AdamState opt;
    FineTuneResult result;
    std::vector<Tensor> best = clf.params().snapshot();
    double best_loss = INFINITY;
    std::size_t step = 0;
    for (std::size_t epoch = 0; epoch < train.epochs; ++epoch) {
        std::vector<std::size_t> order(train_set.size());
        std::iota(order.begin(), order.end(), 0);
        Rng shuffler(derive_seed(train.seed, 0x5f1e0000 + epoch));
        shuffler.shuffle(order);
        Rng drop(derive_seed(train.seed, 0xd80f0000 + epoch));
        double epoch_loss = 0.0;
        for (std::size_t start = 0; start < order.size(); start += train.batch_size) {
            const std::size_t end = std::min(order.size(), start + train.batch_size);
            const double inv = 1.0 / static_cast<double>(end - start);
            clf.params().zero_grad();
            for (std::size_t i = start; i < end; ++i) {
                const auto& c = train_set[order[i]];
                const Var loss =
                    nn::scale(nn::cross_entropy(clf.logits(c.token_ids, true, &drop), {index_of(c.label)}), inv);
                nn::backward(loss);
                epoch_loss += loss.value()[0] / inv;
            }
            nn::adam_step(clf.params(), opt, nn::lr_at(schedule, step++));
        }
        EpochRecord rec{epoch, epoch_loss / static_cast<double>(train_set.size()), 0.0, 0.0};
        const auto ev = evaluate_chunks(clf, validation.empty() ? train_set : validation);
        rec.validation_loss = ev.loss;
        rec.validation_accuracy = ev.accuracy;
        if (rec.validation_loss < best_loss) {
            best_loss = rec.validation_loss;
            best = clf.params().snapshot();
            result.best_epoch = epoch;
        }
        result.history.push_back(rec);
        if (on_epoch) {
            on_epoch(rec);
        }
    }
    if (opts.freeze_encoder) {
        clf.params().set_trainable("encoder.", true);
    }
    clf.params().restore(best);
    return result;
}

inline nlohmann::ordered_json to_json(const EpochRecord& r) {
    return {{"epoch", r.epoch},
            {"train_loss", r.train_loss},
            {"validation_loss", r.validation_loss},
            {"validation_accuracy", r.validation_accuracy}};
}

}  // namespace speechdx::text
