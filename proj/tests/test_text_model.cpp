#include <catch_amalgamated.hpp>

#include <filesystem>

#include "speechdx/text_model.hpp"
#include "support/gradcheck.hpp"
#include "support/toy_problems.hpp"

using namespace speechdx;
using namespace speechdx::text;
using speechdx::testing::random_content;
using speechdx::testing::separable_chunks;
using speechdx::testing::toy_config;

namespace {

double train_accuracy(const TextClassifier& clf, const std::vector<Chunk>& chunks) {
    return evaluate_chunks(clf, chunks).accuracy;
}

std::vector<nn::Var> all_params(const nn::ParamSet& ps) {
    std::vector<nn::Var> out;
    for (const auto& [_, v] : ps.items()) {
        out.push_back(v);
    }
    return out;
}

}  // namespace

TEST_CASE("text presets parse to the reported best runs") {
    const std::string dir = std::string(SPEECHDX_SOURCE_DIR) + "/configs/presets/";
    const auto b505 = load_train_config(dir + "belabbert-505.json");
    CHECK(b505.batch_size == 10);
    CHECK(b505.epochs == 3);
    CHECK(b505.peak_lr == 6.22e-5);
    CHECK(b505.warmup_steps == 373);
    const auto b220 = load_train_config(dir + "belabbert-220.json");
    CHECK(b220.batch_size == 9);
    CHECK(b220.epochs == 5);
    CHECK(b220.peak_lr == 8.42e-5);
    CHECK(b220.warmup_steps == 190);
    for (const auto& p : kPresets) {
        CHECK(load_train_config(dir + std::string(p.name) + ".json") == p.config);
    }
    CHECK_THROWS_AS(train_config_from_json(nlohmann::json{{"batch", 3}}), Error);
    CHECK_THROWS_AS(preset("nope"), Error);
}

TEST_CASE("encoder config validation") {
    auto c = toy_config(40);
    CHECK_NOTHROW(c.validate(30));
    try {
        c.validate(31);
        FAIL("no error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::SequenceTooLong);
    }
    c.vocab_size = 4;
    try {
        c.validate();
        FAIL("no error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::VocabMissingMask);
    }
    c = toy_config(40, 10, 4);
    CHECK_THROWS_AS(c.validate(), Error);
    CHECK(encoder_config_from_json(to_json(toy_config(40))) == toy_config(40));
}

TEST_CASE("predictions are distributions and deterministic") {
    TextClassifier clf(toy_config(60), 3);
    Rng rng(1);
    for (int i = 0; i < 30; ++i) {
        const auto ids = random_content(rng, 1 + rng.below(25), 60);
        const auto p = predict_proba(clf, ids);
        CHECK(std::abs(p[0] + p[1] + p[2] - 1.0) < 1e-6);
        CHECK(predict_proba(clf, ids) == p);
    }
    clf.zero_output_layer();
    const auto p = predict_proba(clf, random_content(rng, 9, 60));
    CHECK(p[0] == 1.0 / 3.0);
    CHECK(p[1] == 1.0 / 3.0);
    CHECK(p[2] == 1.0 / 3.0);
}

TEST_CASE("too-long input is rejected") {
    TextClassifier clf(toy_config(60), 3);
    Rng rng(2);
    CHECK_NOTHROW(predict_proba(clf, random_content(rng, 30, 60)));
    try {
        predict_proba(clf, random_content(rng, 31, 60));
        FAIL("no error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::SequenceTooLong);
    }
    std::vector<Chunk> chunks = {{"a", Label::Healthy, random_content(rng, 5, 60), 0},
                                 {"b", Label::Healthy, random_content(rng, 31, 60), 0}};
    try {
        fine_tune(clf, chunks, {}, TrainConfig{});
        FAIL("no error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::SequenceTooLong);
        CHECK(e.line() == 2);
    }
}

TEST_CASE("property: attention rows sum to one in every head") {
    TextClassifier clf(toy_config(60, 16, 4), 5);
    Rng rng(3);
    for (int trial = 0; trial < 20; ++trial) {
        auto ids = random_content(rng, 1 + rng.below(20), 60);
        for (auto& id : ids) {
            if (rng.below(5) == 0) {
                id = bpe::kPad;
            }
        }
        const auto weights = clf.attention_weights(ids);
        REQUIRE(weights.size() == 2 * 4);
        for (const auto& w : weights) {
            for (std::size_t r = 0; r < w.rows(); ++r) {
                double s = 0.0;
                for (std::size_t c = 0; c < w.cols(); ++c) {
                    s += w.at(r, c);
                }
                REQUIRE(std::abs(s - 1.0) < 1e-6);
            }
        }
    }
}

TEST_CASE("property: a PAD suffix does not change the first-token state") {
    TextClassifier clf(toy_config(60), 6);
    Rng rng(4);
    for (int trial = 0; trial < 30; ++trial) {
        const auto ids = wrap(random_content(rng, 1 + rng.below(15), 60));
        const auto base = clf.pooled_state(ids);
        auto padded = ids;
        padded.insert(padded.end(), 1 + rng.below(10), bpe::kPad);
        const auto with_pad = clf.pooled_state(padded);
        for (std::size_t i = 0; i < base.size(); ++i) {
            REQUIRE(std::abs(base[i] - with_pad[i]) < 1e-8);
        }
    }
}

TEST_CASE("end-to-end gradient check, 2 layers, d_model 8") {
    auto cfg = toy_config(12, 8, 2, 10);
    TextClassifier clf(cfg, 11);
    const std::vector<int> ids = {bpe::kBos, 7, 9, 11, 5, bpe::kPad, bpe::kEos};
    for (bool training : {false, true}) {
        const auto r = testing::gradcheck(all_params(clf.params()), [&] {
            Rng drop(77);
            return nn::cross_entropy(clf.logits_ids(ids, training, &drop), {1});
        });
        INFO("training=" << training << " worst " << r.worst);
        CHECK(r.max_rel_error < 1e-4);
    }
}

TEST_CASE("masked-LM head gradient check") {
    MlmModel m(toy_config(12, 8, 2, 10), 12);
    const std::vector<int> ids = {bpe::kBos, 7, bpe::kMask, 11, 5, bpe::kMask, bpe::kEos};
    std::vector<nn::Var> leaves;
    for (const auto& [_, v] : m.params().items()) {
        leaves.push_back(v);
    }
    const auto r = testing::gradcheck(leaves, [&] {
        return nn::cross_entropy(m.logits(ids, {2, 5}, false, nullptr), {9, 6});
    });
    INFO("worst " << r.worst);
    CHECK(r.max_rel_error < 1e-4);
}

TEST_CASE("masking is deterministic per epoch and dynamic across epochs") {
    Rng rng(5);
    const auto ids = wrap(random_content(rng, 100, 300));
    const auto a = mask_tokens(ids, 300, 42, 0, 7);
    const auto b = mask_tokens(ids, 300, 42, 0, 7);
    const auto c = mask_tokens(ids, 300, 42, 1, 7);
    CHECK(a.input == b.input);
    CHECK(a.positions == b.positions);
    CHECK(a.positions != c.positions);
    CHECK(a.positions.size() == 15);
    for (std::size_t k = 0; k < a.positions.size(); ++k) {
        CHECK(a.positions[k] != 0);
        CHECK(a.positions[k] != ids.size() - 1);
        CHECK(a.targets[k] == ids[a.positions[k]]);
    }
    CHECK(mask_tokens({bpe::kBos, 9, bpe::kEos}, 300, 1, 0, 0).positions.size() == 1);
    CHECK(mask_tokens({bpe::kBos, bpe::kEos}, 300, 1, 0, 0).positions.empty());
    CHECK_THROWS_AS(mask_tokens(ids, 4, 1, 0, 0), Error);
}

TEST_CASE("property: replacement proportions are near 80/10/10") {
    Rng rng(6);
    std::size_t masked = 0, random = 0, kept = 0;
    for (int i = 0; i < 400; ++i) {
        const auto ids = wrap(random_content(rng, 200, 5000));
        const auto ex = mask_tokens(ids, 5000, 9, 0, static_cast<std::uint64_t>(i));
        for (std::size_t k = 0; k < ex.positions.size(); ++k) {
            const int now = ex.input[ex.positions[k]];
            if (now == bpe::kMask) {
                ++masked;
            } else if (now == ex.targets[k]) {
                ++kept;
            } else {
                ++random;
            }
        }
    }
    const double n = static_cast<double>(masked + random + kept);
    CHECK(n == 400 * 30);
    CHECK(std::abs(masked / n - 0.8) < 0.015);
    CHECK(std::abs(random / n - 0.1) < 0.01);
    CHECK(std::abs(kept / n - 0.1) < 0.01);
}

TEST_CASE("initial masked-LM loss is close to ln(vocab)") {
    auto cfg = toy_config(300, 64, 4, 64);
    MlmModel m(cfg, 21);
    Rng rng(7);
    std::vector<std::vector<int>> seqs;
    for (int i = 0; i < 30; ++i) {
        seqs.push_back(wrap(random_content(rng, 40, 300)));
    }
    const double loss = mlm_eval_loss(m, seqs, 3);
    CHECK(std::abs(loss - std::log(300.0)) / std::log(300.0) < 0.05);
}

TEST_CASE("masked-LM loss halves on a repetitive corpus within 200 steps") {
    // Four fixed cyclic patterns over 20 content ids: every masked id is implied by its neighbours.
    std::vector<std::vector<int>> seqs;
    for (int i = 0; i < 200; ++i) {
        std::vector<int> content;
        const int t = i % 4;
        for (int j = 0; j < 12; ++j) {
            content.push_back(bpe::kByteOffset + (t * 5 + j * 3) % 20);
        }
        seqs.push_back(wrap(content));
    }
    auto cfg = toy_config(25, 32, 2, 16);
    cfg.dropout = 0.0;
    MlmModel m(cfg, 4);
    const double initial = mlm_eval_loss(m, seqs, 1);
    TrainConfig tc{8, 8, 3e-3, 10, 0.0, 5};
    const auto hist = mlm_pretrain(m, seqs, tc);
    CHECK(hist.step_losses.size() == 200);
    const double final_loss = mlm_eval_loss(m, seqs, 1);
    INFO("initial " << initial << " final " << final_loss);
    CHECK(final_loss < 0.5 * initial);
}

TEST_CASE("fine-tuning fits 8 separable chunks within 30 epochs") {
    const auto chunks = separable_chunks();
    TextClassifier clf(toy_config(40), 9);
    TrainConfig tc{2, 30, 2e-3, 4, 0.1, 1};
    const auto result = fine_tune(clf, chunks, chunks, tc);
    CHECK(result.history.size() == 30);
    CHECK(train_accuracy(clf, chunks) == 1.0);
    double best = INFINITY;
    for (const auto& r : result.history) {
        best = std::min(best, r.validation_loss);
    }
    CHECK(result.history[result.best_epoch].validation_loss == best);
    CHECK(evaluate_chunks(clf, chunks).loss == best);
}

TEST_CASE("frozen encoder: only head parameters change") {
    const auto chunks = separable_chunks();
    TextClassifier clf(toy_config(40), 10);
    const auto enc_before = clf.params().digest("encoder.");
    const auto head_before = clf.params().digest("head.");
    fine_tune(clf, chunks, chunks, TrainConfig{4, 3, 1e-2, 0, 0.1, 2}, FineTuneOptions{true});
    CHECK(clf.params().digest("encoder.") == enc_before);
    CHECK(clf.params().digest("head.") != head_before);
    for (const auto& [name, v] : clf.params().items()) {
        CHECK(v.requires_grad());
    }
}

TEST_CASE("fine-tuning is reproducible and checkpoints round-trip") {
    const auto chunks = separable_chunks();
    TrainConfig tc{3, 2, 1e-3, 1, 0.1, 3};
    TextClassifier a(toy_config(40), 1), b(toy_config(40), 1);
    fine_tune(a, chunks, {}, tc);
    fine_tune(b, chunks, {}, tc);
    CHECK(a.params().digest() == b.params().digest());

    const auto path = std::filesystem::temp_directory_path() / "speechdx_text_ck.json";
    nn::write_checkpoint(path, a.to_checkpoint());
    const auto c = TextClassifier::from_checkpoint(nn::read_checkpoint(path));
    CHECK(c.params().digest() == a.params().digest());
    CHECK(predict_proba(c, chunks[0].token_ids) == predict_proba(a, chunks[0].token_ids));

    // Pretrained encoder weights transfer into a fresh classifier.
    MlmModel m(toy_config(40), 8);
    TextClassifier d(toy_config(40), 2);
    nn::load_params(m.to_checkpoint(), d.params(), "encoder.");
    CHECK(d.params().digest("encoder.") == m.params().digest("encoder."));
    std::filesystem::remove(path);
    std::filesystem::remove(path.parent_path() / "speechdx_text_ck.bin");
}
