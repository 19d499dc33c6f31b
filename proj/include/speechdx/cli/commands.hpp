#pragma once

// The `speechdx` command line: one subcommand per pipeline stage. `run` is the whole
// program minus process setup, so tests drive it in-process.
//
// Exit codes: 0 success, 1 library error (kind, file and line on stderr), 2 usage error,
// 3 anything else.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "speechdx/audio_model.hpp"
#include "speechdx/bpe.hpp"
#include "speechdx/chat.hpp"
#include "speechdx/cli/manifest.hpp"
#include "speechdx/corpus.hpp"
#include "speechdx/dataset.hpp"
#include "speechdx/fusion.hpp"
#include "speechdx/metrics.hpp"
#include "speechdx/nn/lr_range.hpp"
#include "speechdx/sweep.hpp"
#include "speechdx/synthetic.hpp"
#include "speechdx/text_model.hpp"
#include "speechdx/train_config.hpp"

namespace speechdx::cli {

using json = nlohmann::ordered_json;

struct Globals {
    std::uint64_t seed = 0;
    bool json_output = false;
    std::size_t threads = 1;
};

/// Re-raises a library error with the offending file (and line, when known) in front.
template <class F>
auto in_file(const fs::path& path, F&& f) -> decltype(f()) {
    try {
        return f();
    } catch (const Error& e) {
        std::string msg = e.what();
        const std::string prefix = std::string(to_string(e.kind())) + ": ";
        if (msg.rfind(prefix, 0) == 0) {
            msg.erase(0, prefix.size());
        }
        const std::string where = path.string() + (e.line() ? ":" + std::to_string(e.line()) : std::string());
        if (msg.rfind(path.string(), 0) == 0) {
            throw;
        }
        throw Error(e.kind(), where + ": " + msg, e.line());
    }
}

inline json read_json_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        fail(ErrorKind::Io, "cannot read " + path.string());
    }
    try {
        return json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::SchemaViolation, path.string() + ": " + e.what());
    }
}

inline void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) {
        fs::create_directories(path.parent_path());
    }
    std::ofstream out(path, std::ios::binary);
    out << text;
    if (!out) {
        fail(ErrorKind::Io, "cannot write " + path.string());
    }
}

inline fs::path run_manifest_path(const fs::path& output) {
    if (fs::is_directory(output)) {
        return output / "run.json";
    }
    auto p = output;
    return p.replace_extension(".run.json");
}

inline fs::path payload_of(const fs::path& checkpoint) {
    auto p = checkpoint;
    return p.replace_extension(".bin");
}

inline std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    for (std::string item; std::getline(ss, item, ',');) {
        if (!item.empty()) {
            out.push_back(item);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------------------
// Shared loaders

/// {"participant id": "label", ...}
inline std::map<std::string, Label> load_labels(const fs::path& path) {
    const json j = read_json_file(path);
    if (!j.is_object()) {
        fail(ErrorKind::SchemaViolation, path.string() + ": labels must be an object of id -> label");
    }
    std::map<std::string, Label> out;
    std::size_t record = 0;
    for (const auto& [id, v] : j.items()) {
        ++record;
        const auto l = v.is_string() ? parse_label(v.get<std::string>()) : std::nullopt;
        if (!l) {
            fail(ErrorKind::SchemaViolation, path.string() + ":" + std::to_string(record) + ": unknown label for '" + id + "'",
                 record);
        }
        out[id] = *l;
    }
    return out;
}

inline std::vector<Chunk> load_chunks(const fs::path& path) {
    return in_file(path, [&] { return load_dataset(path.string()); });
}

/// Distinct participant ids named in any JSONL file with a "participant_id" field.
inline std::set<std::string> participant_ids(const fs::path& path) {
    std::set<std::string> out;
    std::size_t n = 0;
    for (const auto& line : read_lines(path)) {
        ++n;
        if (line.find_first_not_of(" \t") == std::string::npos) {
            continue;
        }
        try {
            out.insert(nlohmann::json::parse(line).at("participant_id").get<std::string>());
        } catch (const nlohmann::json::exception& e) {
            fail(ErrorKind::SchemaViolation, path.string() + ":" + std::to_string(n) + ": " + e.what(), n);
        }
    }
    return out;
}

/// Concatenates feature tables and fills labels from `labels` where the tables have none.
inline audio::FeatureTable load_feature_tables(const std::vector<std::string>& paths, const std::string& labels_path,
                                               std::size_t feature_count) {
    audio::FeatureTable all;
    std::optional<std::map<std::string, Label>> labels;
    if (!labels_path.empty()) {
        labels = load_labels(labels_path);
    }
    std::set<std::string> seen;
    for (const auto& p : paths) {
        auto t = in_file(p, [&] { return audio::load_features(p, feature_count); });
        if (all.feature_names.empty()) {
            all.feature_names = t.feature_names;
        }
        for (std::size_t i = 0; i < t.size(); ++i) {
            if (!seen.insert(t.ids[i]).second) {
                fail(ErrorKind::SchemaViolation, p + ": participant '" + t.ids[i] + "' appears in more than one row",
                     i + 2);
            }
            all.ids.push_back(t.ids[i]);
            all.rows.push_back(t.rows[i]);
            if (t.labeled()) {
                all.labels.push_back(t.labels[i]);
            } else if (labels) {
                const auto it = labels->find(t.ids[i]);
                if (it == labels->end()) {
                    fail(ErrorKind::SchemaViolation, labels_path + ": no label for participant '" + t.ids[i] + "'");
                }
                all.labels.push_back(it->second);
            }
        }
    }
    if (!all.labels.empty() && all.labels.size() != all.ids.size()) {
        fail(ErrorKind::SchemaViolation, "some feature rows have labels and some do not; pass --labels");
    }
    return all;
}

inline std::string checkpoint_kind(const fs::path& path) {
    return read_json_file(path).value("kind", std::string());
}

// ---------------------------------------------------------------------------------------
// Options shared by commands and sweep stages

struct TrainOptions {
    std::string preset;
    std::string config_file;
    std::optional<std::size_t> batch_size, epochs, warmup_steps;
    std::optional<double> lr, dropout;

    void add(CLI::App* app) {
        app->add_option("--preset", preset, "named hyperparameter preset")
            ->check(CLI::IsMember([] {
                std::vector<std::string> names;
                for (const auto& p : kPresets) {
                    names.emplace_back(p.name);
                }
                return names;
            }()));
        app->add_option("--train-config", config_file, "JSON training config")->check(CLI::ExistingFile);
        app->add_option("--batch-size", batch_size);
        app->add_option("--epochs", epochs);
        app->add_option("--lr", lr, "peak learning rate");
        app->add_option("--warmup-steps", warmup_steps);
        app->add_option("--dropout", dropout);
    }

    TrainConfig resolve(const TrainConfig& fallback, std::uint64_t seed) const {
        TrainConfig c = preset.empty() ? fallback : speechdx::preset(preset);
        if (!config_file.empty()) {
            c = in_file(config_file, [&] { return train_config_from_json(read_json_file(config_file), c); });
        }
        if (batch_size) c.batch_size = *batch_size;
        if (epochs) c.epochs = *epochs;
        if (lr) c.peak_lr = *lr;
        if (warmup_steps) c.warmup_steps = *warmup_steps;
        if (dropout) c.dropout = *dropout;
        c.seed = seed;
        c.validate();
        return c;
    }
};

struct EncoderOptions {
    text::EncoderConfig cfg;

    void add(CLI::App* app) {
        app->add_option("--layers", cfg.layers);
        app->add_option("--heads", cfg.heads);
        app->add_option("--d-model", cfg.d_model);
        app->add_option("--d-ff", cfg.d_ff);
        app->add_option("--max-positions", cfg.max_positions);
    }
};

struct TextStage {
    std::string train, validation, init, vocab, output;
    bool freeze_encoder = false;
    EncoderOptions enc;
    TrainOptions tc;

    void add(CLI::App* app) {
        app->add_option("--train", train, "training chunks (JSONL)")->required()->check(CLI::ExistingFile);
        app->add_option("--validation", validation, "validation chunks (JSONL)")->check(CLI::ExistingFile);
        app->add_option("--init", init, "pretrained MLM checkpoint")->check(CLI::ExistingFile);
        app->add_option("--vocab", vocab, "tokenizer (sets the vocabulary size without --init)")
            ->check(CLI::ExistingFile);
        app->add_flag("--freeze-encoder", freeze_encoder);
        enc.add(app);
        tc.add(app);
    }
};

struct AudioStage {
    std::vector<std::string> features;
    std::string labels, transcripts;
    std::string hidden = "64,16";
    double validation_fraction = 0.1;
    std::size_t feature_count = audio::kFeatureCount;
    TrainOptions tc;

    void add(CLI::App* app) {
        app->add_option("--features", features, "feature tables (CSV/TSV); repeatable")->required()
            ->check(CLI::ExistingFile);
        app->add_option("--labels", labels, "id -> label JSON for unlabeled tables")->check(CLI::ExistingFile);
        app->add_option("--transcripts", transcripts,
                        "JSONL naming participants with transcripts; they form the audio test set")
            ->check(CLI::ExistingFile);
        app->add_option("--hidden", hidden, "hidden layer widths, comma separated");
        app->add_option("--validation-fraction", validation_fraction);
        app->add_option("--feature-count", feature_count);
        tc.add(app);
    }

    audio::AudioSplits splits(std::uint64_t seed) const {
        const auto table = load_feature_tables(features, labels, feature_count);
        if (!table.labeled()) {
            fail(ErrorKind::SchemaViolation, "feature tables carry no labels; pass --labels");
        }
        const std::set<std::string> held = transcripts.empty() ? std::set<std::string>{} : participant_ids(transcripts);
        return audio::transcript_holdout_split(table, held, validation_fraction, seed);
    }

    audio::MlpConfig mlp(double dropout) const {
        audio::MlpConfig c;
        c.sizes = {feature_count};
        for (const auto& w : split_list(hidden)) {
            c.sizes.push_back(static_cast<std::size_t>(std::stoul(w)));
        }
        c.sizes.push_back(3);
        c.dropout = dropout;
        c.validate(feature_count);
        return c;
    }
};

struct FusionStage {
    std::string text_model, audio_model, train, validation, labels, mode = "probabilities";
    std::vector<std::string> features;
    std::size_t feature_count = audio::kFeatureCount;
    TrainOptions tc;

    void add(CLI::App* app) {
        app->add_option("--text-model", text_model)->required()->check(CLI::ExistingFile);
        app->add_option("--audio-model", audio_model)->required()->check(CLI::ExistingFile);
        app->add_option("--features", features, "feature tables; repeatable")->required()->check(CLI::ExistingFile);
        app->add_option("--labels", labels)->check(CLI::ExistingFile);
        app->add_option("--train", train, "training chunks (JSONL)")->required()->check(CLI::ExistingFile);
        app->add_option("--validation", validation)->check(CLI::ExistingFile);
        app->add_option("--mode", mode, "submodel outputs fed to fusion")
            ->check(CLI::IsMember({"probabilities", "logits"}));
        app->add_option("--feature-count", feature_count);
        tc.add(app);
    }
};

// ---------------------------------------------------------------------------------------
// Stage bodies shared by the train-* commands and sweep

struct StageResult {
    double validation_loss = 0.0;
    json summary = json::object();
    json history = json::array();
    std::vector<fs::path> inputs;
    std::vector<fs::path> outputs;
    json config = json::object();
};

template <class Record>
json history_json(const std::vector<Record>& h) {
    json out = json::array();
    for (const auto& r : h) {
        out.push_back(to_json(r));
    }
    return out;
}

inline StageResult run_text_stage(const TextStage& s, const TrainConfig& tc, const fs::path& output) {
    StageResult r;
    const auto train = load_chunks(s.train);
    const auto validation = s.validation.empty() ? std::vector<Chunk>{} : load_chunks(s.validation);
    r.inputs = {s.train};
    if (!s.validation.empty()) {
        r.inputs.push_back(s.validation);
    }
    std::optional<nn::Checkpoint> init;
    text::EncoderConfig cfg = s.enc.cfg;
    if (!s.init.empty()) {
        init = in_file(s.init, [&] { return nn::read_checkpoint(s.init); });
        if (init->kind != "mlm") {
            fail(ErrorKind::SchemaViolation, s.init + ": checkpoint kind '" + init->kind + "' is not mlm");
        }
        cfg = text::encoder_config_from_json(init->config.at("encoder"));
        r.inputs.push_back(s.init);
        r.inputs.push_back(payload_of(s.init));
    } else if (!s.vocab.empty()) {
        cfg.vocab_size = in_file(s.vocab, [&] { return bpe::Vocab::load(s.vocab); }).size();
        r.inputs.push_back(s.vocab);
    } else {
        fail(ErrorKind::InvalidArgument, "finetune-text needs --init or --vocab");
    }
    cfg.dropout = tc.dropout;
    cfg.validate();
    in_file(s.train, [&] { text::check_lengths(cfg, train); });
    if (!s.validation.empty()) {
        in_file(s.validation, [&] { text::check_lengths(cfg, validation); });
    }
    text::TextClassifier clf(cfg, derive_seed(tc.seed, 0x7e47));
    if (init) {
        nn::load_params(*init, clf.params(), "encoder.");
    }
    const auto res = text::fine_tune(clf, train, validation, tc, {s.freeze_encoder});
    nn::write_checkpoint(output, clf.to_checkpoint());
    r.outputs = {output, payload_of(output)};
    r.validation_loss = res.history[res.best_epoch].validation_loss;
    r.history = history_json(res.history);
    r.config = {{"train", to_json(tc)}, {"encoder", to_json(cfg)}, {"freeze_encoder", s.freeze_encoder}};
    r.summary = {{"best_epoch", res.best_epoch},
                 {"validation_loss", r.validation_loss},
                 {"validation_accuracy", res.history[res.best_epoch].validation_accuracy},
                 {"train_chunks", train.size()},
                 {"validation_chunks", validation.size()}};
    return r;
}

inline StageResult run_audio_stage(const AudioStage& s, const TrainConfig& tc, const fs::path& output) {
    StageResult r;
    const auto sp = s.splits(tc.seed);
    for (const auto& f : s.features) {
        r.inputs.push_back(f);
    }
    if (!s.labels.empty()) {
        r.inputs.push_back(s.labels);
    }
    if (!s.transcripts.empty()) {
        r.inputs.push_back(s.transcripts);
    }
    const auto mcfg = s.mlp(tc.dropout);
    audio::AudioModel m(mcfg, derive_seed(tc.seed, 0xa0d1));
    const auto res = audio::train_audio(m, sp.train, sp.validation, tc);
    nn::write_checkpoint(output, m.to_checkpoint());
    r.outputs = {output, payload_of(output)};
    r.validation_loss = res.history[res.best_epoch].validation_loss;
    r.history = history_json(res.history);
    r.config = {{"train", to_json(tc)}, {"mlp", to_json(mcfg)}, {"validation_fraction", s.validation_fraction}};
    auto counts = [](const audio::FeatureTable& t) {
        const auto c = audio::class_counts(t);
        return json{{"psychotic", c[0]}, {"depressed", c[1]}, {"healthy", c[2]}};
    };
    r.summary = {{"best_epoch", res.best_epoch},
                 {"validation_loss", r.validation_loss},
                 {"validation_accuracy", res.history[res.best_epoch].validation_accuracy},
                 {"split", {{"train", counts(sp.train)}, {"validation", counts(sp.validation)}, {"test", counts(sp.test)}}}};
    if (sp.test.size()) {
        r.summary["test_accuracy"] = audio::evaluate_table(m, sp.test).accuracy;
    }
    return r;
}

// Submodel outputs in the representation the fusion layer expects.
inline fusion::Vec3 text_output(const text::TextClassifier& clf, const std::vector<int>& ids, fusion::InputMode mode) {
    return mode == fusion::InputMode::Logits ? text::predict_logits(clf, ids) : text::predict_proba(clf, ids);
}

inline fusion::Vec3 audio_output(const audio::AudioModel& m, const std::vector<double>& raw, fusion::InputMode mode) {
    if (mode == fusion::InputMode::Probabilities) {
        return audio::predict_audio(m, raw);
    }
    const nn::Var l = m.logits(audio::to_matrix({m.standardizer().apply(raw)}, m.feature_count()));
    return {l.value()[0], l.value()[1], l.value()[2]};
}

inline std::map<std::string, fusion::Vec3> audio_outputs(const audio::AudioModel& m, const audio::FeatureTable& t,
                                                         fusion::InputMode mode) {
    std::map<std::string, fusion::Vec3> out;
    for (std::size_t i = 0; i < t.size(); ++i) {
        out[t.ids[i]] = audio_output(m, t.rows[i], mode);
    }
    return out;
}

inline std::vector<fusion::ChunkPrediction> text_outputs(const text::TextClassifier& clf,
                                                         const std::vector<Chunk>& chunks, fusion::InputMode mode) {
    std::vector<fusion::ChunkPrediction> out;
    for (const auto& c : chunks) {
        out.push_back({c.participant_id, c.chunk_index, text_output(clf, c.token_ids, mode)});
    }
    return out;
}

inline std::string submodel_digest(const fs::path& checkpoint) {
    return sha256_hex(sha256_file(checkpoint) + sha256_file(payload_of(checkpoint)));
}

inline StageResult run_fusion_stage(const FusionStage& s, const TrainConfig& tc, const fs::path& output) {
    StageResult r;
    const auto mode = fusion::parse_mode(s.mode);
    const auto txt = text::TextClassifier::from_checkpoint(in_file(s.text_model, [&] { return nn::read_checkpoint(s.text_model); }));
    const auto aud =
        audio::AudioModel::from_checkpoint(in_file(s.audio_model, [&] { return nn::read_checkpoint(s.audio_model); }));
    const auto table = load_feature_tables(s.features, s.labels, s.feature_count);
    const auto audio_map = audio_outputs(aud, table, mode);
    auto build = [&](const std::string& path) {
        const auto chunks = load_chunks(path);
        return in_file(path, [&] { return fusion::build_fusion_dataset(text_outputs(txt, chunks, mode), audio_map, chunks, mode); });
    };
    const auto train = build(s.train);
    const auto validation = s.validation.empty() ? std::vector<fusion::FusionInput>{} : build(s.validation);

    fusion::FreezeGuard guard;
    guard.watch("text", txt.params());
    guard.watch("audio", aud.params());
    fusion::FusionModel m(tc.dropout, mode, derive_seed(tc.seed, 0xf05e));
    const auto res = fusion::train_fusion(m, train, validation, tc, guard);
    auto ck = m.to_checkpoint();
    ck.config["text_model_sha256"] = submodel_digest(s.text_model);
    ck.config["audio_model_sha256"] = submodel_digest(s.audio_model);
    nn::write_checkpoint(output, ck);

    r.inputs = {s.text_model, payload_of(s.text_model), s.audio_model, payload_of(s.audio_model), s.train};
    if (!s.validation.empty()) {
        r.inputs.push_back(s.validation);
    }
    for (const auto& f : s.features) {
        r.inputs.push_back(f);
    }
    r.outputs = {output, payload_of(output)};
    r.validation_loss = res.history[res.best_epoch].validation_loss;
    r.history = history_json(res.history);
    r.config = {{"train", to_json(tc)}, {"mode", s.mode}};
    r.summary = {{"best_epoch", res.best_epoch},
                 {"validation_loss", r.validation_loss},
                 {"validation_accuracy", res.history[res.best_epoch].validation_accuracy},
                 {"text_only_validation_accuracy",
                  mode == fusion::InputMode::Probabilities
                      ? json(fusion::text_only_accuracy(validation.empty() ? train : validation))
                      : json()}};
    return r;
}

// ---------------------------------------------------------------------------------------
// Prediction files: JSONL {"participant_id", "chunk_index", "proba" | "logits"}

struct PredictionRecord {
    std::string participant_id;
    int chunk_index = 0;
    fusion::Vec3 values{};
    bool logits = false;
};

inline std::vector<PredictionRecord> load_predictions(const fs::path& path) {
    std::vector<PredictionRecord> out;
    std::size_t n = 0;
    for (const auto& line : read_lines(path)) {
        ++n;
        if (line.find_first_not_of(" \t") == std::string::npos) {
            continue;
        }
        try {
            const auto j = nlohmann::json::parse(line);
            PredictionRecord p;
            p.participant_id = j.at("participant_id").get<std::string>();
            p.chunk_index = j.at("chunk_index").get<int>();
            p.logits = !j.contains("proba");
            const auto& v = p.logits ? j.at("logits") : j.at("proba");
            if (v.size() != 3) {
                fail(ErrorKind::SchemaViolation, path.string() + ":" + std::to_string(n) + ": expected 3 values", n);
            }
            p.values = {v[0].get<double>(), v[1].get<double>(), v[2].get<double>()};
            out.push_back(std::move(p));
        } catch (const nlohmann::json::exception& e) {
            fail(ErrorKind::SchemaViolation, path.string() + ":" + std::to_string(n) + ": " + e.what(), n);
        }
    }
    return out;
}

inline void save_predictions(const fs::path& path, const std::vector<PredictionRecord>& preds, fusion::InputMode mode) {
    std::string text;
    const char* key = mode == fusion::InputMode::Logits ? "logits" : "proba";
    for (const auto& p : preds) {
        json j;
        j["participant_id"] = p.participant_id;
        j["chunk_index"] = p.chunk_index;
        j[key] = p.values;
        text += j.dump() + '\n';
    }
    write_text(path, text);
}

/// Pairs each dataset chunk with its prediction; returns (predicted, actual) class indices.
inline std::pair<std::vector<int>, std::vector<int>> join_predictions(const std::vector<Chunk>& chunks,
                                                                      const std::vector<PredictionRecord>& preds,
                                                                      const fs::path& preds_path, bool by_participant) {
    std::map<std::pair<std::string, int>, const PredictionRecord*> by_key;
    for (const auto& p : preds) {
        by_key[{p.participant_id, p.chunk_index}] = &p;
    }
    std::vector<int> predicted, actual;
    std::vector<std::string> ids;
    std::vector<std::array<double, 3>> values;
    std::map<std::string, int> truth;
    for (std::size_t i = 0; i < chunks.size(); ++i) {
        const auto& c = chunks[i];
        const auto found = by_key.find({c.participant_id, c.chunk_index});
        if (found == by_key.end()) {
            fail(ErrorKind::SchemaViolation,
                 preds_path.string() + ": no prediction for chunk " + c.participant_id + "#" + std::to_string(c.chunk_index) +
                     " (dataset record " + std::to_string(i + 1) + ")",
                 i + 1);
        }
        const PredictionRecord* it = found->second;
        if (by_participant) {
            ids.push_back(c.participant_id);
            const auto p = it->logits ? nn::softmax_values(it->values) : std::vector<double>(it->values.begin(), it->values.end());
            values.push_back({p[0], p[1], p[2]});
            truth[c.participant_id] = index_of(c.label);
        } else {
            predicted.push_back(eval::argmax3(found->second->values));
            actual.push_back(index_of(c.label));
        }
    }
    if (by_participant) {
        for (const auto& [id, cls] : eval::participant_vote(ids, values)) {
            predicted.push_back(cls);
            actual.push_back(truth.at(id));
        }
    }
    return {predicted, actual};
}

// ---------------------------------------------------------------------------------------
// Output helpers

class Output {
public:
    Output(const Globals& g, std::ostream& out) : g_(g), out_(out) {}

    /// Human mode prints "key: value" lines (or `text` when given); --json prints the object.
    void emit(const json& summary, const std::string& text = {}) {
        if (g_.json_output) {
            out_ << summary.dump(2) << '\n';
        } else if (!text.empty()) {
            out_ << text;
        } else {
            for (const auto& [k, v] : summary.items()) {
                out_ << k << ": " << (v.is_string() ? v.get<std::string>() : v.dump()) << '\n';
            }
        }
    }

private:
    const Globals& g_;
    std::ostream& out_;
};

inline void finish(const Globals& g, const std::string& stage, const fs::path& manifest, json config,
                   std::vector<fs::path> inputs, std::vector<fs::path> outputs, const json& summary) {
    RunManifest m;
    m.stage = stage;
    m.seed = g.seed;
    m.config = std::move(config);
    m.inputs = std::move(inputs);
    m.outputs = std::move(outputs);
    m.summary = summary;
    write_manifest(manifest, m);
}

// ---------------------------------------------------------------------------------------

inline int run(const std::vector<std::string>& args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    CLI::App app{"speechdx: speech-based psychiatric classification pipeline", "speechdx"};
    app.allow_config_extras(CLI::config_extras_mode::error);
    app.require_subcommand(1);
    app.fallthrough();  // global flags may follow the subcommand
    Globals g;
    app.add_option("--seed", g.seed, "seed for every random choice")->capture_default_str();
    app.add_flag("--json", g.json_output, "machine-readable output");
    app.add_option("--threads", g.threads, "worker cap (sweep trials run in parallel)")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    app.set_config("--config", "", "TOML file with global keys and one [section] per subcommand");
    app.set_version_flag("--version", kToolVersion);

    Output o(g, out);
    std::function<void()> action;
    auto cmd = [&](const std::string& name, const std::string& help) {
        auto* sub = app.add_subcommand(name, help);
        return sub;
    };

    // synth ---------------------------------------------------------------------------
    struct {
        std::string dir;
        std::size_t participants = 30, utterances = 40, audio_only = 60;
    } synth;
    auto* c_synth = cmd("synth", "write a synthetic fixture (CHAT transcripts, labels, audio features)");
    c_synth->add_option("--output-dir", synth.dir)->required();
    c_synth->add_option("--participants", synth.participants)->capture_default_str();
    c_synth->add_option("--utterances", synth.utterances)->capture_default_str();
    c_synth->add_option("--audio-only", synth.audio_only, "extra speakers with audio but no transcript")
        ->capture_default_str();
    c_synth->callback([&] {
        action = [&] {
            synthetic::write_fixture(synth.dir, synth.participants, g.seed, synth.utterances, synth.audio_only);
            const json cfg = {{"participants", synth.participants},
                              {"utterances", synth.utterances},
                              {"audio_only", synth.audio_only}};
            const json summary = {{"participants", synth.participants}};
            finish(g, "synth", fs::path(synth.dir) / "run.json", cfg, {}, {fs::path(synth.dir) / "chat",
                   fs::path(synth.dir) / "labels.json", fs::path(synth.dir) / "audio.csv",
                   fs::path(synth.dir) / "audio_extra.csv"}, summary);
            o.emit(summary);
        };
    });

    // parse-chat ----------------------------------------------------------------------
    struct {
        std::string input, output, speakers;
        bool include_interviewer = false, keep_retraced = false, keep_fillers = false, keep_pauses = false;
    } pc;
    auto* c_pc = cmd("parse-chat", "flatten CHAT transcripts into one cleaned utterance per line");
    c_pc->add_option("--input", pc.input, ".cha file or directory of .cha files")->required()->check(CLI::ExistingPath);
    c_pc->add_option("--output", pc.output, "output .txt file, or directory when --input is a directory")->required();
    c_pc->add_option("--speakers", pc.speakers, "comma-separated speaker codes (default: participants)");
    c_pc->add_flag("--include-interviewer", pc.include_interviewer);
    c_pc->add_flag("--keep-retraced", pc.keep_retraced);
    c_pc->add_flag("--keep-fillers", pc.keep_fillers);
    c_pc->add_flag("--keep-pauses", pc.keep_pauses);
    c_pc->callback([&] {
        action = [&] {
            chat::StripRuleSet rules;
            rules.drop_retraced = !pc.keep_retraced;
            rules.drop_fillers = !pc.keep_fillers;
            rules.drop_pauses = !pc.keep_pauses;
            const bool dir_mode = fs::is_directory(pc.input);
            std::vector<fs::path> files;
            for (const auto& f : expand(pc.input)) {
                if (f.extension() == ".cha") {
                    files.push_back(f);
                }
            }
            if (files.empty()) {
                fail(ErrorKind::CorpusEmpty, pc.input + ": no .cha files");
            }
            std::vector<fs::path> outputs;
            std::size_t lines = 0, notes = 0;
            for (const auto& f : files) {
                const auto doc = in_file(f, [&] {
                    std::ifstream in(f, std::ios::binary);
                    return chat::parse_chat(in);
                });
                std::set<std::string> speakers;
                for (const auto& s : split_list(pc.speakers)) {
                    speakers.insert(s);
                }
                if (speakers.empty()) {
                    speakers = chat::default_speakers(doc, pc.include_interviewer);
                }
                const auto flat = chat::flatten(doc, speakers, rules);
                lines += flat.lines.size();
                notes += flat.notes.size();
                const fs::path target = dir_mode ? fs::path(pc.output) / f.filename().replace_extension(".txt")
                                                 : fs::path(pc.output);
                write_text(target, flat.text());
                outputs.push_back(target);
            }
            const json cfg = {{"speakers", pc.speakers},
                              {"include_interviewer", pc.include_interviewer},
                              {"keep_retraced", pc.keep_retraced},
                              {"keep_fillers", pc.keep_fillers},
                              {"keep_pauses", pc.keep_pauses}};
            const json summary = {{"files", files.size()}, {"lines", lines}, {"notes", notes}};
            finish(g, "parse-chat", dir_mode ? fs::path(pc.output) / "run.json" : run_manifest_path(pc.output), cfg,
                   {pc.input}, outputs, summary);
            o.emit(summary);
        };
    });

    // clean-corpus --------------------------------------------------------------------
    struct {
        std::vector<std::string> inputs;
        std::string dir;
        corpus::CleanConfig cfg;
    } cc;
    auto* c_cc = cmd("clean-corpus", "filter, deduplicate and split a pretraining corpus");
    c_cc->add_option("--input", cc.inputs, "text files or directories (.gz accepted); repeatable")->required()
        ->check(CLI::ExistingPath);
    c_cc->add_option("--output-dir", cc.dir)->required();
    c_cc->add_option("--threshold", cc.cfg.overlap_threshold, "Jaccard overlap that marks a duplicate")
        ->capture_default_str();
    c_cc->add_option("--max-words", cc.cfg.max_words)->capture_default_str();
    c_cc->add_option("--heldout-fraction", cc.cfg.heldout_fraction)->capture_default_str();
    c_cc->add_option("--shingle-size", cc.cfg.shingle_size)->capture_default_str();
    c_cc->callback([&] {
        action = [&] {
            cc.cfg.seed = g.seed;
            std::vector<std::string> lines;
            std::vector<fs::path> inputs;
            for (const auto& in : cc.inputs) {
                for (const auto& f : expand(in)) {
                    if (f.filename() == "run.json" || f.extension() == ".json") {
                        continue;
                    }
                    for (auto& l : read_lines(f)) {
                        lines.push_back(std::move(l));
                    }
                    inputs.push_back(f);
                }
            }
            const auto r = corpus::clean_corpus(lines, cc.cfg);
            const fs::path dir = cc.dir;
            auto join = [](const std::vector<std::string>& v) {
                std::string s;
                for (const auto& l : v) {
                    s += l + '\n';
                }
                return s;
            };
            write_text(dir / "train.txt", join(r.split.train));
            write_text(dir / "validation.txt", join(r.split.validation));
            const json summary = {{"lines_in", r.stats.lines_in},
                                  {"after_non_textual", r.stats.after_non_textual},
                                  {"after_long_lines", r.stats.after_long_lines},
                                  {"after_dedup", r.stats.after_dedup},
                                  {"train", r.stats.train},
                                  {"validation", r.stats.validation}};
            const json cfg = {{"threshold", cc.cfg.overlap_threshold},
                              {"max_words", cc.cfg.max_words},
                              {"heldout_fraction", cc.cfg.heldout_fraction},
                              {"shingle_size", cc.cfg.shingle_size}};
            write_text(dir / "stats.json", summary.dump(2) + '\n');
            finish(g, "clean-corpus", dir / "run.json", cfg, inputs,
                   {dir / "train.txt", dir / "validation.txt", dir / "stats.json"}, summary);
            o.emit(summary);
        };
    });

    // train-tokenizer -----------------------------------------------------------------
    struct {
        std::vector<std::string> inputs;
        std::string output;
        std::size_t vocab_size = 1000;
    } tt;
    auto* c_tt = cmd("train-tokenizer", "learn a byte-level BPE vocabulary");
    c_tt->add_option("--input", tt.inputs, "training text files (.gz accepted); repeatable")->required()
        ->check(CLI::ExistingFile);
    c_tt->add_option("--vocab-size", tt.vocab_size)->capture_default_str();
    c_tt->add_option("--output", tt.output, "vocabulary JSON")->required();
    c_tt->callback([&] {
        action = [&] {
            std::vector<std::string> lines;
            for (const auto& f : tt.inputs) {
                for (auto& l : read_lines(f)) {
                    lines.push_back(std::move(l));
                }
            }
            const auto vocab = bpe::train_bpe(lines, tt.vocab_size);
            if (fs::path(tt.output).has_parent_path()) {
                fs::create_directories(fs::path(tt.output).parent_path());
            }
            vocab.save(tt.output);
            const json summary = {{"vocab_size", vocab.size()}, {"lines", lines.size()}};
            finish(g, "train-tokenizer", run_manifest_path(tt.output), {{"vocab_size", tt.vocab_size}},
                   {tt.inputs.begin(), tt.inputs.end()}, {tt.output}, summary);
            o.emit(summary);
        };
    });

    // encode --------------------------------------------------------------------------
    struct {
        std::string vocab, text_dir, labels, output, text;
    } en;
    auto* c_en = cmd("encode", "tokenize flattened transcripts into labeled id sequences");
    c_en->add_option("--vocab", en.vocab)->required()->check(CLI::ExistingFile);
    c_en->add_option("--text-dir", en.text_dir, "directory of <participant>.txt files")->check(CLI::ExistingDirectory);
    c_en->add_option("--labels", en.labels, "id -> label JSON")->check(CLI::ExistingFile);
    c_en->add_option("--output", en.output, "transcripts JSONL");
    c_en->add_option("--text", en.text, "encode one string and print its ids");
    c_en->callback([&] {
        action = [&] {
            const auto vocab = in_file(en.vocab, [&] { return bpe::Vocab::load(en.vocab); });
            if (!en.text.empty()) {
                const auto ids = vocab.encode(en.text);
                o.emit({{"ids", ids}, {"decoded", vocab.decode(ids)}});
                return;
            }
            if (en.text_dir.empty() || en.labels.empty() || en.output.empty()) {
                fail(ErrorKind::InvalidArgument, "encode needs --text-dir, --labels and --output (or --text)");
            }
            const auto labels = load_labels(en.labels);
            std::string out_text;
            std::vector<fs::path> inputs = {en.vocab, en.labels};
            std::size_t n = 0, tokens = 0;
            for (const auto& f : expand(en.text_dir)) {
                if (f.extension() != ".txt") {
                    continue;
                }
                const std::string id = f.stem().string();
                const auto it = labels.find(id);
                if (it == labels.end()) {
                    fail(ErrorKind::SchemaViolation, en.labels + ": no label for participant '" + id + "'");
                }
                std::string text;
                for (const auto& l : read_lines(f)) {
                    text += l + '\n';
                }
                LabeledTranscript t{id, it->second, vocab.encode(text)};
                if (t.token_ids.empty()) {
                    fail(ErrorKind::CorpusEmpty, f.string() + ": transcript is empty");
                }
                tokens += t.token_ids.size();
                out_text += to_json(t).dump() + '\n';
                inputs.push_back(f);
                ++n;
            }
            write_text(en.output, out_text);
            const json summary = {{"transcripts", n}, {"tokens", tokens}};
            finish(g, "encode", run_manifest_path(en.output), json::object(), inputs, {en.output}, summary);
            o.emit(summary);
        };
    });

    // chunk ---------------------------------------------------------------------------
    struct {
        std::string input, output;
        std::size_t chunk_size = 220, min_chunk = 16;
    } ch;
    auto* c_ch = cmd("chunk", "slice transcripts into fixed-length chunks");
    c_ch->add_option("--input", ch.input, "transcripts JSONL")->required()->check(CLI::ExistingFile);
    c_ch->add_option("--output", ch.output, "chunks JSONL")->required();
    c_ch->add_option("--chunk-size", ch.chunk_size)->capture_default_str();
    c_ch->add_option("--min-chunk", ch.min_chunk, "shortest trailing chunk kept")->capture_default_str();
    c_ch->callback([&] {
        action = [&] {
            const auto ts = in_file(ch.input, [&] { return load_transcripts(ch.input); });
            std::vector<Chunk> chunks;
            for (const auto& t : ts) {
                for (auto& c : chunk_transcript(t, ch.chunk_size, ch.min_chunk)) {
                    chunks.push_back(std::move(c));
                }
            }
            if (fs::path(ch.output).has_parent_path()) {
                fs::create_directories(fs::path(ch.output).parent_path());
            }
            save_dataset(chunks, ch.output);
            const auto counts = class_counts(chunks);
            const json summary = {{"transcripts", ts.size()},
                                  {"chunks", chunks.size()},
                                  {"psychotic", counts[0]},
                                  {"depressed", counts[1]},
                                  {"healthy", counts[2]}};
            finish(g, "chunk", run_manifest_path(ch.output), {{"chunk_size", ch.chunk_size}, {"min_chunk", ch.min_chunk}},
                   {ch.input}, {ch.output}, summary);
            o.emit(summary);
        };
    });

    // split ---------------------------------------------------------------------------
    struct {
        std::string input, dir, fractions = "0.8,0.1,0.1";
        bool per_chunk = false;
    } sp;
    auto* c_sp = cmd("split", "stratified train/validation/test split");
    c_sp->add_option("--input", sp.input, "chunks JSONL")->required()->check(CLI::ExistingFile);
    c_sp->add_option("--output-dir", sp.dir)->required();
    c_sp->add_option("--fractions", sp.fractions, "train,validation,test")->capture_default_str();
    c_sp->add_flag("--per-chunk", sp.per_chunk, "split chunks independently instead of by participant");
    c_sp->callback([&] {
        action = [&] {
            const auto chunks = load_chunks(sp.input);
            SplitSpec spec;
            const auto f = split_list(sp.fractions);
            if (f.size() != 3) {
                fail(ErrorKind::InvalidArgument, "--fractions needs three comma-separated values");
            }
            for (std::size_t i = 0; i < 3; ++i) {
                spec.fractions[i] = std::stod(f[i]);
            }
            spec.group_by_participant = !sp.per_chunk;
            spec.seed = g.seed;
            const auto s = stratified_split(chunks, spec);
            const fs::path dir = sp.dir;
            fs::create_directories(dir);
            json summary = json::object();
            const std::array<const char*, 3> names = {"train", "validation", "test"};
            std::vector<fs::path> outputs;
            for (std::size_t i = 0; i < 3; ++i) {
                const auto path = dir / (std::string(names[i]) + ".jsonl");
                save_dataset(s[i], path.string());
                outputs.push_back(path);
                const auto c = class_counts(s[i]);
                summary[names[i]] = {{"psychotic", c[0]}, {"depressed", c[1]}, {"healthy", c[2]}};
            }
            finish(g, "split", dir / "run.json", {{"fractions", spec.fractions}, {"per_chunk", sp.per_chunk}},
                   {sp.input}, outputs, summary);
            o.emit(summary);
        };
    });

    // pretrain-mlm --------------------------------------------------------------------
    struct {
        std::string vocab, corpus, validation, output;
        EncoderOptions enc;
        TrainOptions tc;
    } pm;
    auto* c_pm = cmd("pretrain-mlm", "masked-LM pretraining of the encoder");
    c_pm->add_option("--vocab", pm.vocab)->required()->check(CLI::ExistingFile);
    c_pm->add_option("--corpus", pm.corpus, "one training sequence per line (.gz accepted)")->required()
        ->check(CLI::ExistingFile);
    c_pm->add_option("--validation", pm.validation, "held-out lines for the final MLM loss")->check(CLI::ExistingFile);
    c_pm->add_option("--output", pm.output, "checkpoint JSON")->required();
    pm.enc.add(c_pm);
    pm.tc.add(c_pm);
    c_pm->callback([&] {
        action = [&] {
            const auto vocab = in_file(pm.vocab, [&] { return bpe::Vocab::load(pm.vocab); });
            auto cfg = pm.enc.cfg;
            cfg.vocab_size = vocab.size();
            const auto tc = pm.tc.resolve(TrainConfig{8, 1, 5e-4, 0, 0.1, 0}, g.seed);
            cfg.dropout = tc.dropout;
            cfg.validate();
            auto encode_all = [&](const std::string& path) {
                std::vector<std::vector<int>> seqs;
                for (const auto& line : read_lines(path)) {
                    auto ids = vocab.encode(line);
                    if (ids.empty()) {
                        continue;
                    }
                    if (ids.size() + 2 > cfg.max_positions) {
                        ids.resize(cfg.max_positions - 2);
                    }
                    seqs.push_back(text::wrap(ids));
                }
                return seqs;
            };
            const auto train = encode_all(pm.corpus);
            text::MlmModel m(cfg, derive_seed(g.seed, 0x3a5c));
            const double initial = text::mlm_eval_loss(m, train, g.seed);
            const auto hist = text::mlm_pretrain(m, train, tc);
            json summary = {{"sequences", train.size()},
                            {"steps", hist.step_losses.size()},
                            {"initial_loss", initial},
                            {"final_train_loss", text::mlm_eval_loss(m, train, g.seed)}};
            std::vector<fs::path> inputs = {pm.vocab, pm.corpus};
            if (!pm.validation.empty()) {
                const auto val = encode_all(pm.validation);
                if (!val.empty()) {
                    summary["validation_loss"] = text::mlm_eval_loss(m, val, g.seed);
                }
                inputs.push_back(pm.validation);
            }
            if (fs::path(pm.output).has_parent_path()) {
                fs::create_directories(fs::path(pm.output).parent_path());
            }
            nn::write_checkpoint(pm.output, m.to_checkpoint());
            finish(g, "pretrain-mlm", run_manifest_path(pm.output), {{"train", to_json(tc)}, {"encoder", to_json(cfg)}},
                   inputs, {pm.output, payload_of(pm.output)}, summary);
            o.emit(summary);
        };
    });

    // finetune-text -------------------------------------------------------------------
    TextStage ft;
    std::string ft_output;
    auto* c_ft = cmd("finetune-text", "fine-tune the text classifier on labeled chunks");
    ft.add(c_ft);
    c_ft->add_option("--output", ft_output, "checkpoint JSON")->required();
    c_ft->callback([&] {
        action = [&] {
            const auto tc = ft.tc.resolve(preset("belabbert-220"), g.seed);
            if (fs::path(ft_output).has_parent_path()) {
                fs::create_directories(fs::path(ft_output).parent_path());
            }
            auto r = run_text_stage(ft, tc, ft_output);
            r.summary["history"] = r.history;
            finish(g, "finetune-text", run_manifest_path(ft_output), r.config, r.inputs, r.outputs, r.summary);
            o.emit(r.summary);
        };
    });

    // train-audio ---------------------------------------------------------------------
    AudioStage ta;
    std::string ta_output;
    auto* c_ta = cmd("train-audio", "train the acoustic-feature MLP");
    ta.add(c_ta);
    c_ta->add_option("--output", ta_output, "checkpoint JSON")->required();
    c_ta->callback([&] {
        action = [&] {
            const auto tc = ta.tc.resolve(preset("audio-default"), g.seed);
            if (fs::path(ta_output).has_parent_path()) {
                fs::create_directories(fs::path(ta_output).parent_path());
            }
            auto r = run_audio_stage(ta, tc, ta_output);
            r.summary["history"] = r.history;
            finish(g, "train-audio", run_manifest_path(ta_output), r.config, r.inputs, r.outputs, r.summary);
            o.emit(r.summary);
        };
    });

    // train-fusion --------------------------------------------------------------------
    FusionStage tf;
    std::string tf_output;
    auto* c_tf = cmd("train-fusion", "train the late-fusion layer over frozen text and audio models");
    tf.add(c_tf);
    c_tf->add_option("--output", tf_output, "checkpoint JSON")->required();
    c_tf->callback([&] {
        action = [&] {
            const auto tc = tf.tc.resolve(preset("fusion-best"), g.seed);
            if (fs::path(tf_output).has_parent_path()) {
                fs::create_directories(fs::path(tf_output).parent_path());
            }
            auto r = run_fusion_stage(tf, tc, tf_output);
            r.summary["history"] = r.history;
            finish(g, "train-fusion", run_manifest_path(tf_output), r.config, r.inputs, r.outputs, r.summary);
            o.emit(r.summary);
        };
    });

    // predict -------------------------------------------------------------------------
    struct {
        std::string model, dataset, output, text_model, audio_model, labels, mode = "probabilities";
        std::vector<std::string> features;
        std::size_t feature_count = audio::kFeatureCount;
    } pr;
    auto* c_pr = cmd("predict", "write per-chunk class scores for a dataset");
    c_pr->add_option("--model", pr.model, "text, audio or fusion checkpoint")->required()->check(CLI::ExistingFile);
    c_pr->add_option("--dataset", pr.dataset, "chunks JSONL")->check(CLI::ExistingFile);
    c_pr->add_option("--output", pr.output, "predictions JSONL")->required();
    c_pr->add_option("--features", pr.features, "feature tables (audio and fusion models)")->check(CLI::ExistingFile);
    c_pr->add_option("--labels", pr.labels)->check(CLI::ExistingFile);
    c_pr->add_option("--text-model", pr.text_model, "text submodel (fusion)")->check(CLI::ExistingFile);
    c_pr->add_option("--audio-model", pr.audio_model, "audio submodel (fusion)")->check(CLI::ExistingFile);
    c_pr->add_option("--mode", pr.mode, "output probabilities or logits (text and audio models)")
        ->check(CLI::IsMember({"probabilities", "logits"}));
    c_pr->add_option("--feature-count", pr.feature_count);
    c_pr->callback([&] {
        action = [&] {
            const auto kind = checkpoint_kind(pr.model);
            const auto ck = in_file(pr.model, [&] { return nn::read_checkpoint(pr.model); });
            std::vector<fs::path> inputs = {pr.model, payload_of(pr.model)};
            std::vector<PredictionRecord> preds;
            auto mode = fusion::parse_mode(pr.mode);
            std::vector<Chunk> chunks;
            if (!pr.dataset.empty()) {
                chunks = load_chunks(pr.dataset);
                inputs.push_back(pr.dataset);
            }
            auto need = [](bool ok, const std::string& what) {
                if (!ok) {
                    fail(ErrorKind::InvalidArgument, what);
                }
            };
            if (kind == "text_classifier") {
                need(!chunks.empty(), "text predictions need --dataset");
                const auto clf = text::TextClassifier::from_checkpoint(ck);
                in_file(pr.dataset, [&] { text::check_lengths(clf.config(), chunks); });
                for (const auto& p : text_outputs(clf, chunks, mode)) {
                    preds.push_back({p.participant_id, p.chunk_index, p.values});
                }
            } else if (kind == "audio_mlp") {
                need(!pr.features.empty(), "audio predictions need --features");
                const auto m = audio::AudioModel::from_checkpoint(ck);
                const auto table = load_feature_tables(pr.features, pr.labels, pr.feature_count);
                const auto outs = audio_outputs(m, table, mode);
                if (chunks.empty()) {
                    for (const auto& [id, v] : outs) {
                        preds.push_back({id, 0, v});
                    }
                } else {
                    for (const auto& c : chunks) {
                        const auto it = outs.find(c.participant_id);
                        if (it == outs.end()) {
                            fail(ErrorKind::MissingAudioForParticipant,
                                 "no audio features for participant '" + c.participant_id + "'");
                        }
                        preds.push_back({c.participant_id, c.chunk_index, it->second});
                    }
                }
                for (const auto& f : pr.features) {
                    inputs.push_back(f);
                }
            } else if (kind == "fusion") {
                need(!chunks.empty() && !pr.features.empty() && !pr.text_model.empty() && !pr.audio_model.empty(),
                     "fusion predictions need --dataset, --features, --text-model and --audio-model");
                const auto m = fusion::FusionModel::from_checkpoint(ck);
                for (const auto& [key, path] : {std::pair{"text_model_sha256", pr.text_model},
                                                std::pair{"audio_model_sha256", pr.audio_model}}) {
                    if (ck.config.contains(key) && ck.config[key] != submodel_digest(path)) {
                        fail(ErrorKind::SubmodelMutated,
                             path + " is not the submodel this fusion layer was trained on");
                    }
                }
                const auto txt = text::TextClassifier::from_checkpoint(nn::read_checkpoint(pr.text_model));
                const auto aud = audio::AudioModel::from_checkpoint(nn::read_checkpoint(pr.audio_model));
                const auto table = load_feature_tables(pr.features, pr.labels, pr.feature_count);
                const auto inputs_f = in_file(pr.dataset, [&] {
                    return fusion::build_fusion_dataset(text_outputs(txt, chunks, m.mode()),
                                                        audio_outputs(aud, table, m.mode()), chunks, m.mode());
                });
                for (const auto& in : inputs_f) {
                    preds.push_back({in.participant_id, in.chunk_index, fusion::predict_fusion(m, in)});
                }
                mode = fusion::InputMode::Probabilities;
                for (const auto& p : {pr.text_model, pr.audio_model}) {
                    inputs.push_back(p);
                    inputs.push_back(payload_of(p));
                }
                for (const auto& f : pr.features) {
                    inputs.push_back(f);
                }
            } else {
                fail(ErrorKind::SchemaViolation, pr.model + ": cannot predict with a '" + kind + "' checkpoint");
            }
            save_predictions(pr.output, preds, mode);
            const json summary = {{"model_kind", kind}, {"predictions", preds.size()}};
            finish(g, "predict", run_manifest_path(pr.output), {{"mode", pr.mode}}, inputs, {pr.output}, summary);
            o.emit(summary);
        };
    });

    // evaluate ------------------------------------------------------------------------
    struct {
        std::string dataset, predictions, val_dataset, val_predictions, output, level = "chunk";
    } ev;
    auto* c_ev = cmd("evaluate", "confusion matrices and per-class metrics");
    c_ev->add_option("--dataset", ev.dataset, "labeled test chunks (JSONL)")->required()->check(CLI::ExistingFile);
    c_ev->add_option("--predictions", ev.predictions, "test predictions (JSONL)")->required()->check(CLI::ExistingFile);
    c_ev->add_option("--validation-dataset", ev.val_dataset)->check(CLI::ExistingFile);
    c_ev->add_option("--validation-predictions", ev.val_predictions)->check(CLI::ExistingFile);
    c_ev->add_option("--level", ev.level, "score chunks, or participants by majority vote")
        ->check(CLI::IsMember({"chunk", "participant"}));
    c_ev->add_option("--output", ev.output, "report JSON (a .txt rendering is written beside it)");
    c_ev->callback([&] {
        action = [&] {
            if (ev.val_dataset.empty() != ev.val_predictions.empty()) {
                fail(ErrorKind::InvalidArgument, "--validation-dataset and --validation-predictions go together");
            }
            const bool vote = ev.level == "participant";
            std::vector<eval::ReportSection> sections;
            std::vector<fs::path> inputs;
            auto section = [&](const std::string& name, const std::string& d, const std::string& p) {
                const auto [pred, actual] = join_predictions(load_chunks(d), load_predictions(p), p, vote);
                sections.push_back(eval::make_section(name, eval::confusion(pred, actual)));
                inputs.push_back(d);
                inputs.push_back(p);
            };
            if (!ev.val_dataset.empty()) {
                section("validation", ev.val_dataset, ev.val_predictions);
            }
            section("test", ev.dataset, ev.predictions);
            const json meta = {{"level", ev.level},
                               {"dataset", fs::path(ev.dataset).filename().string()},
                               {"predictions", fs::path(ev.predictions).filename().string()}};
            const auto report = eval::render_report(sections, meta);
            if (!ev.output.empty()) {
                write_text(ev.output, report.json.dump(2) + '\n');
                auto txt = fs::path(ev.output);
                txt.replace_extension(".txt");
                write_text(txt, report.text);
                finish(g, "evaluate", run_manifest_path(ev.output), {{"level", ev.level}}, inputs, {ev.output, txt},
                       {{"test_accuracy", sections.back().metrics.accuracy}});
            }
            o.emit(report.json, report.text);
        };
    });

    // lr-find -------------------------------------------------------------------------
    AudioStage lf;
    nn::LrRangeConfig lf_cfg;
    std::string lf_output;
    auto* c_lf = cmd("lr-find", "LR range test for the audio MLP");
    lf.add(c_lf);
    c_lf->add_option("--lr-min", lf_cfg.lr_min)->capture_default_str();
    c_lf->add_option("--lr-max", lf_cfg.lr_max)->capture_default_str();
    c_lf->add_option("--range-epochs", lf_cfg.epochs)->capture_default_str();
    c_lf->add_option("--output", lf_output, "result JSON");
    c_lf->callback([&] {
        action = [&] {
            const auto tc = lf.tc.resolve(preset("audio-default"), g.seed);
            const auto sp_ = lf.splits(g.seed);
            audio::AudioModel m(lf.mlp(tc.dropout), derive_seed(g.seed, 0xa0d1));
            audio::AudioLrSubject subject(m, sp_.train, tc.batch_size, g.seed);
            const auto r = nn::lr_range_test(subject, lf_cfg);
            const json result = {{"lower", r.lower},         {"upper", r.upper},   {"default_lr", r.default_lr},
                                 {"baseline_loss", r.baseline_loss}, {"lrs", r.lrs}, {"losses", r.losses},
                                 {"smoothed", r.smoothed}};
            if (!lf_output.empty()) {
                write_text(lf_output, result.dump(2) + '\n');
                std::vector<fs::path> inputs(lf.features.begin(), lf.features.end());
                finish(g, "lr-find", run_manifest_path(lf_output),
                       {{"lr_min", lf_cfg.lr_min}, {"lr_max", lf_cfg.lr_max}, {"epochs", lf_cfg.epochs},
                        {"train", to_json(tc)}},
                       inputs, {lf_output}, {{"default_lr", r.default_lr}});
            }
            o.emit(json{{"lower", r.lower}, {"upper", r.upper}, {"default_lr", r.default_lr}});
        };
    });

    // sweep ---------------------------------------------------------------------------
    struct {
        std::string spec, stage, ledger;
        std::optional<std::size_t> trials;
    } sw;
    TextStage sw_text;
    AudioStage sw_audio;
    FusionStage sw_fusion;
    auto* c_sw = cmd("sweep", "random-search hyperparameter sweep; keeps the lowest validation loss");
    c_sw->add_option("--spec", sw.spec, "sweep spec JSON")->required()->check(CLI::ExistingFile);
    c_sw->add_option("--trials", sw.trials, "override the spec's trial count");
    c_sw->add_option("--ledger-dir", sw.ledger, "per-trial records and checkpoints")->required();
    auto* s_text = c_sw->add_subcommand("text", "sweep text fine-tuning");
    auto* s_audio = c_sw->add_subcommand("audio", "sweep the audio MLP");
    auto* s_fusion = c_sw->add_subcommand("fusion", "sweep the fusion layer");
    c_sw->require_subcommand(1);
    sw_text.add(s_text);
    sw_audio.add(s_audio);
    sw_fusion.add(s_fusion);
    auto sweep_action = [&](const std::string& stage) {
        return [&, stage] {
            action = [&, stage] {
                auto spec = in_file(sw.spec, [&] { return sweep::load_spec(sw.spec); });
                if (sw.trials) {
                    spec.trial_count = *sw.trials;
                }
                spec.seed = g.seed;
                const fs::path ledger = sw.ledger;
                fs::create_directories(ledger);
                const auto trainer = [&](const TrainConfig& c, std::size_t t) {
                    char name[32];
                    std::snprintf(name, sizeof name, "trial_%03zu.ckpt.json", t);
                    const auto out_path = ledger / name;
                    TrainConfig tc = c;
                    tc.seed = derive_seed(g.seed, t);
                    StageResult r = stage == "text"    ? run_text_stage(sw_text, tc, out_path)
                                    : stage == "audio" ? run_audio_stage(sw_audio, tc, out_path)
                                                       : run_fusion_stage(sw_fusion, tc, out_path);
                    return sweep::TrialOutcome{r.validation_loss, r.history, out_path.filename().string()};
                };
                const auto res = sweep::run_sweep(spec, trainer, ledger, g.threads);
                const auto& best = res.best_trial();
                std::size_t failed = 0;
                for (const auto& t : res.trials) {
                    failed += !t.outcome;
                }
                const json summary = {{"stage", stage},
                                      {"trials", res.trials.size()},
                                      {"failed", failed},
                                      {"best_trial", best.index},
                                      {"best_validation_loss", best.outcome->validation_loss},
                                      {"best_checkpoint", best.outcome->checkpoint},
                                      {"best_config", to_json(best.config)}};
                finish(g, "sweep", ledger / "run.json", {{"stage", stage}, {"trials", spec.trial_count}}, {sw.spec},
                       {ledger / "sweep.json"}, summary);
                o.emit(summary);
            };
        };
    };
    s_text->callback(sweep_action("text"));
    s_audio->callback(sweep_action("audio"));
    s_fusion->callback(sweep_action("fusion"));

    // report --------------------------------------------------------------------------
    struct {
        std::string evaluation, verify, output;
    } rp;
    auto* c_rp = cmd("report", "render an evaluation report and verify the run-manifest chain");
    c_rp->add_option("--evaluation", rp.evaluation, "report JSON written by evaluate")->required()
        ->check(CLI::ExistingFile);
    c_rp->add_option("--verify", rp.verify, "directory whose run manifests must all verify")
        ->check(CLI::ExistingDirectory);
    c_rp->add_option("--output", rp.output, "text report");
    c_rp->callback([&] {
        action = [&] {
            const auto j = read_json_file(rp.evaluation);
            const auto sections = in_file(rp.evaluation, [&] { return eval::sections_from_report(j); });
            json meta = j.value("metadata", json::object());
            std::size_t manifests = 0, files = 0;
            if (!rp.verify.empty()) {
                for (const auto& f : expand(rp.verify)) {
                    const auto name = f.filename().string();
                    if (name == "run.json" || (name.size() > 9 && name.ends_with(".run.json"))) {
                        files += verify_manifest(f);
                        ++manifests;
                    }
                }
                meta["verified_manifests"] = manifests;
                meta["verified_files"] = files;
            }
            const auto report = eval::render_report(sections, meta);
            if (!rp.output.empty()) {
                write_text(rp.output, report.text);
            }
            o.emit(report.json, report.text);
        };
    });

    try {
        std::vector<const char*> argv = {"speechdx"};
        for (const auto& a : args) {
            argv.push_back(a.c_str());
        }
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? 0 : 2;
    }
    try {
        if (action) {
            action();
        }
        return 0;
    } catch (const Error& e) {
        if (g.json_output) {
            out << json{{"error", {{"kind", to_string(e.kind())}, {"message", e.what()}, {"line", e.line()}}}}.dump(2)
                << '\n';
        }
        err << "speechdx: error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        err << "speechdx: error: " << e.what() << '\n';
        return 3;
    }
}

}  // namespace speechdx::cli
