#include <catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include <zlib.h>

#include "support/pipeline.hpp"

using support::cli;
namespace fs = std::filesystem;

namespace {

const std::string kFixtures = SPEECHDX_FIXTURES;

fs::path scratch(const std::string& name) {
    const auto d = fs::temp_directory_path() / ("speechdx_cli_" + name);
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
}

void write(const fs::path& p, const std::string& text) { std::ofstream(p, std::ios::binary) << text; }

std::string read(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

TEST_CASE("evaluate on the bundled prediction fixture reproduces the text-model table") {
    const auto dir = scratch("eval");
    const auto r = cli({"evaluate", "--dataset", kFixtures + "/eval_dataset.jsonl", "--predictions",
                        kFixtures + "/eval_predictions.jsonl", "--output", (dir / "report.json").string()});
    REQUIRE(r.code == 0);
    CHECK(r.out.find("80.58%") != std::string::npos);  // psychotic F1
    CHECK(r.out.find("75.68%") != std::string::npos);  // accuracy
    CHECK(r.out.find("22.22%") != std::string::npos);  // depressed F1
    const auto j = nlohmann::json::parse(read(dir / "report.json"));
    CHECK(std::abs(100 * j["sections"][0]["classes"]["psychotic"]["f1"].get<double>() - 80.58) <= 0.02);
    CHECK(j["sections"][0]["confusion"] == nlohmann::json::parse("[[56,1,12],[4,2,9],[10,0,54]]"));
    CHECK(fs::exists(dir / "report.txt"));
    CHECK(fs::exists(dir / "report.run.json"));

    const auto again = cli({"--json", "evaluate", "--dataset", kFixtures + "/eval_dataset.jsonl", "--predictions",
                            kFixtures + "/eval_predictions.jsonl"});
    REQUIRE(again.code == 0);
    CHECK(nlohmann::json::parse(again.out)["version"] == 1);

    const auto vote = cli({"evaluate", "--level", "participant", "--dataset", kFixtures + "/eval_dataset.jsonl",
                           "--predictions", kFixtures + "/eval_predictions.jsonl"});
    REQUIRE(vote.code == 0);
    CHECK(vote.out.find("80.58%") != std::string::npos);  // one chunk per participant: same table
    fs::remove_all(dir);
}

TEST_CASE("input errors name the file and the record") {
    const auto dir = scratch("errors");
    write(dir / "bad.jsonl", "{\"participant_id\":\"A\",\"label\":\"psychotic\",\"tokens\":[5],\"chunk_index\":0}\n"
                             "{\"participant_id\":\"B\",\"label\":\"sad\",\"tokens\":[5],\"chunk_index\":0}\n");
    auto r = cli({"chunk", "--input", (dir / "bad.jsonl").string(), "--output", (dir / "c.jsonl").string()});
    CHECK(r.code == 1);
    CHECK(r.err.find("bad.jsonl:2") != std::string::npos);
    CHECK(r.err.find("SchemaViolation") != std::string::npos);

    r = cli({"--json", "split", "--input", (dir / "bad.jsonl").string(), "--output-dir", (dir / "s").string()});
    CHECK(r.code == 1);
    const auto j = nlohmann::json::parse(r.out);
    CHECK(j["error"]["kind"] == "SchemaViolation");
    CHECK(j["error"]["line"] == 2);

    // A prediction file missing a chunk.
    write(dir / "preds.jsonl", "{\"participant_id\":\"A\",\"chunk_index\":0,\"proba\":[1,0,0]}\n");
    write(dir / "ds.jsonl", "{\"participant_id\":\"A\",\"label\":\"psychotic\",\"tokens\":[5],\"chunk_index\":0}\n"
                            "{\"participant_id\":\"A\",\"label\":\"psychotic\",\"tokens\":[6],\"chunk_index\":1}\n");
    r = cli({"evaluate", "--dataset", (dir / "ds.jsonl").string(), "--predictions", (dir / "preds.jsonl").string()});
    CHECK(r.code == 1);
    CHECK(r.err.find("A#1") != std::string::npos);

    // Feature table with a non-numeric cell.
    std::string header = "participant_id";
    for (const auto& n : speechdx::audio::feature_names()) {
        header += "," + n;
    }
    std::string row = "P1";
    for (std::size_t i = 0; i < speechdx::audio::kFeatureCount; ++i) {
        row += i == 3 ? ",abc" : ",1";
    }
    write(dir / "f.csv", header + "\n" + row + "\n");
    write(dir / "labels.json", R"({"P1": "healthy"})");
    r = cli({"train-audio", "--features", (dir / "f.csv").string(), "--labels", (dir / "labels.json").string(),
             "--output", (dir / "a.json").string()});
    CHECK(r.code == 1);
    CHECK(r.err.find("f.csv:2") != std::string::npos);

    // Usage errors exit with 2.
    CHECK(cli({"finetune-text", "--train", (dir / "ds.jsonl").string(), "--output", "x", "--preset", "nope"}).code == 2);
    CHECK(cli({"no-such-stage"}).code == 2);
    fs::remove_all(dir);
}

TEST_CASE("TOML config merges with flags, flags win, unknown keys are rejected") {
    const auto dir = scratch("config");
    write(dir / "t.jsonl", "{\"participant_id\":\"A\",\"label\":\"healthy\",\"tokens\":[" +
                               [] {
                                   std::string s = "5";
                                   for (int i = 0; i < 99; ++i) {
                                       s += ",6";
                                   }
                                   return s;
                               }() +
                               "]}\n");
    write(dir / "c.toml", "seed = 4\n[chunk]\nchunk-size = 10\n");
    auto r = cli({"--config", (dir / "c.toml").string(), "chunk", "--input", (dir / "t.jsonl").string(), "--output",
                  (dir / "a.jsonl").string()});
    REQUIRE(r.code == 0);
    CHECK(r.out.find("chunks: 10") != std::string::npos);
    r = cli({"--config", (dir / "c.toml").string(), "chunk", "--input", (dir / "t.jsonl").string(), "--output",
             (dir / "b.jsonl").string(), "--chunk-size", "50"});
    REQUIRE(r.code == 0);
    CHECK(r.out.find("chunks: 2") != std::string::npos);
    const auto m = nlohmann::json::parse(read(dir / "a.run.json"));
    CHECK(m["seed"] == 4);
    CHECK(m["config"]["chunk_size"] == 10);

    write(dir / "bad.toml", "[chunk]\nchunk-sise = 10\n");
    r = cli({"--config", (dir / "bad.toml").string(), "chunk", "--input", (dir / "t.jsonl").string(), "--output",
             (dir / "c.jsonl").string()});
    CHECK(r.code != 0);
    fs::remove_all(dir);
}

TEST_CASE("gzip corpora are read transparently") {
    const auto dir = scratch("gz");
    std::string text;
    for (int i = 0; i < 50; ++i) {
        text += "regel nummer " + std::to_string(i) + " met wat extra woorden erbij\n";
    }
    write(dir / "plain.txt", text);
    gzFile f = gzopen((dir / "packed.txt.gz").string().c_str(), "wb");
    gzwrite(f, text.data(), static_cast<unsigned>(text.size()));
    gzclose(f);
    const auto a = cli({"--json", "clean-corpus", "--input", (dir / "plain.txt").string(), "--output-dir",
                        (dir / "a").string()});
    const auto b = cli({"--json", "clean-corpus", "--input", (dir / "packed.txt.gz").string(), "--output-dir",
                        (dir / "b").string()});
    REQUIRE(a.code == 0);
    REQUIRE(b.code == 0);
    CHECK(a.out == b.out);
    CHECK(read(dir / "a/train.txt") == read(dir / "b/train.txt"));
    fs::remove_all(dir);
}

TEST_CASE("full pipeline on the 30-participant synthetic fixture; reruns are byte-identical") {
    const auto a = fs::temp_directory_path() / "speechdx_pipeline_a";
    const auto b = fs::temp_directory_path() / "speechdx_pipeline_b";
    const auto ra = support::run_pipeline(a, 11);
    INFO(ra.failed_stage << ": " << ra.error);
    REQUIRE(ra.ok);
    CHECK(ra.report_text.find("Psychotic") != std::string::npos);
    CHECK(ra.report_text.find("verified_manifests") != std::string::npos);
    const auto rb = support::run_pipeline(b, 11);
    REQUIRE(rb.ok);
    const auto sa = support::snapshot(a), sb = support::snapshot(b);
    CHECK(sa.size() == sb.size());
    for (const auto& [path, bytes] : sa) {
        INFO(path);
        REQUIRE(sb.count(path));
        CHECK(sb.at(path) == bytes);
    }

    // Tampering with any recorded artifact breaks verification.
    {
        std::ofstream(a / "pred_test.jsonl", std::ios::app) << "\n";
    }
    const auto r = cli({"report", "--evaluation", (a / "evaluation.json").string(), "--verify", a.string()});
    CHECK(r.code == 1);
    CHECK(r.err.find("pred_test.jsonl") != std::string::npos);

    // A fusion layer refuses a submodel it was not trained with.
    const auto wrong = cli({"predict", "--model", (b / "fusion.json").string(), "--text-model",
                            (b / "text.json").string(), "--audio-model", (a / "mlm.json").string(), "--features",
                            (b / "fx/audio.csv").string(), "--dataset", (b / "split/test.jsonl").string(), "--output",
                            (b / "x.jsonl").string()});
    CHECK(wrong.code == 1);
    CHECK(wrong.err.find("SubmodelMutated") != std::string::npos);

    // Artifacts carry versions and loaders reject others.
    auto ev = nlohmann::json::parse(read(b / "evaluation.json"));
    ev["version"] = 99;
    write(b / "evaluation_v99.json", ev.dump());
    const auto v = cli({"report", "--evaluation", (b / "evaluation_v99.json").string()});
    CHECK(v.code == 1);
    CHECK(v.err.find("VersionMismatch") != std::string::npos);
    fs::remove_all(a);
    fs::remove_all(b);
}

TEST_CASE("sweep and lr-find stages") {
    const auto dir = scratch("sweep");
    REQUIRE(cli({"synth", "--output-dir", (dir / "fx").string(), "--participants", "16"}).code == 0);
    write(dir / "spec.json", R"({"trials": 3, "base": "audio-default",
        "parameters": {"peak_lr": {"log_uniform": [1e-3, 1e-1]}, "dropout": {"uniform": [0.1, 0.3]}}})");
    const auto r = cli({"--json", "--threads", "2", "sweep", "--spec", (dir / "spec.json").string(), "--ledger-dir",
                        (dir / "ledger").string(), "audio", "--features", (dir / "fx/audio_extra.csv").string(),
                        "--epochs", "3"});
    INFO(r.err);
    REQUIRE(r.code == 0);
    const auto j = nlohmann::json::parse(r.out);
    CHECK(j["trials"] == 3);
    const auto ledger = nlohmann::json::parse(read(dir / "ledger/sweep.json"));
    REQUIRE(ledger["trials"].size() == 3);
    std::size_t oracle = 0;
    for (std::size_t i = 1; i < 3; ++i) {
        if (ledger["trials"][i]["validation_loss"].get<double>() <
            ledger["trials"][oracle]["validation_loss"].get<double>()) {
            oracle = i;
        }
    }
    CHECK(j["best_trial"] == oracle);
    CHECK(fs::exists(dir / "ledger" / j["best_checkpoint"].get<std::string>()));

    const auto lf = cli({"--json", "lr-find", "--features", (dir / "fx/audio_extra.csv").string(), "--lr-min", "1e-5",
                         "--lr-max", "1", "--range-epochs", "12", "--batch-size", "8"});
    INFO(lf.err);
    REQUIRE(lf.code == 0);
    const auto lj = nlohmann::json::parse(lf.out);
    CHECK(lj["lower"].get<double>() > 0.0);
    CHECK(lj["lower"].get<double>() <= lj["upper"].get<double>());
    fs::remove_all(dir);
}

TEST_CASE("the installed binary reports exit codes") {
    const std::string bin = SPEECHDX_BINARY;
    CHECK(std::system((bin + " --version > /dev/null").c_str()) == 0);
    CHECK(WEXITSTATUS(std::system((bin + " chunk --input /nonexistent --output x 2> /dev/null").c_str())) == 2);
}
