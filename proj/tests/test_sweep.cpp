#include <catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "speechdx/sweep.hpp"

using namespace speechdx;
using namespace speechdx::sweep;

namespace {

SweepSpec lr_spec(std::size_t trials, std::uint64_t seed) {
    SweepSpec s;
    s.trial_count = trials;
    s.seed = seed;
    s.ranges["peak_lr"] = {RangeKind::LogUniform, 1e-5, 1e-1, {}};
    return s;
}

Trainer stub(std::vector<double> losses) {
    return [losses](const TrainConfig&, std::size_t t) { return TrialOutcome{losses.at(t), {}, {}}; };
}

}  // namespace

TEST_CASE("range validation") {
    SweepSpec s;
    s.ranges["dropout"] = {RangeKind::Uniform, 0.3, 0.1, {}};
    try {
        generate_trials(s);
        FAIL("no error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::EmptyRange);
    }
    s.ranges["dropout"] = {RangeKind::Choice, 0, 0, {}};
    CHECK_THROWS_AS(generate_trials(s), Error);
    s.ranges["dropout"] = {RangeKind::LogUniform, 0.0, 0.1, {}};
    CHECK_THROWS_AS(generate_trials(s), Error);
    s.ranges.clear();
    s.trial_count = 0;
    CHECK_THROWS_AS(generate_trials(s), Error);
    s.trial_count = 2;
    s.ranges["momentum"] = {RangeKind::Uniform, 0, 1, {}};
    CHECK_THROWS_AS(generate_trials(s), Error);
}

TEST_CASE("single-value choice and determinism") {
    SweepSpec s = lr_spec(20, 4);
    s.ranges["batch_size"] = {RangeKind::Choice, 0, 0, {12}};
    s.ranges["dropout"] = {RangeKind::Uniform, 0.1, 0.3, {}};
    const auto a = generate_trials(s), b = generate_trials(s);
    CHECK(a == b);
    for (const auto& c : a) {
        CHECK(c.batch_size == 12);
        CHECK(c.dropout >= 0.1);
        CHECK(c.dropout <= 0.3);
        CHECK(c.peak_lr >= 1e-5);
        CHECK(c.peak_lr <= 1e-1);
    }
    s.seed = 5;
    CHECK(generate_trials(s) != a);
}

TEST_CASE("property: trial k does not depend on trial_count") {
    const auto few = generate_trials(lr_spec(3, 9)), many = generate_trials(lr_spec(30, 9));
    for (std::size_t i = 0; i < few.size(); ++i) {
        CHECK(few[i] == many[i]);
    }
}

TEST_CASE("log-uniform deciles are uniform within 5%") {
    const auto trials = generate_trials(lr_spec(1000, 11));
    std::array<int, 10> bins{};
    const double lo = std::log(1e-5), hi = std::log(1e-1);
    for (const auto& t : trials) {
        const auto b = static_cast<std::size_t>(std::min(9.0, 10.0 * (std::log(t.peak_lr) - lo) / (hi - lo)));
        ++bins[b];
    }
    for (int n : bins) {
        // Each decile holds 10% of trials, give or take 5 percentage points.
        CHECK(std::abs(n / 1000.0 - 0.1) <= 0.05);
    }
}

TEST_CASE("selection: lowest loss, earliest on ties") {
    CHECK(run_sweep(lr_spec(3, 0), stub({0.9, 0.4, 0.4})).best == 1);
    CHECK(run_sweep(lr_spec(1, 0), stub({2.5})).best == 0);
}

TEST_CASE("property: selection equals an argmin oracle") {
    Rng rng(21);
    for (int round = 0; round < 50; ++round) {
        std::vector<double> losses;
        for (int i = 0; i < 15; ++i) {
            // Coarse values so ties occur.
            losses.push_back(static_cast<double>(rng.below(8)) / 4.0);
        }
        std::size_t oracle = 0;
        for (std::size_t i = 1; i < losses.size(); ++i) {
            if (losses[i] < losses[oracle]) {
                oracle = i;
            }
        }
        CHECK(run_sweep(lr_spec(15, 1), stub(losses)).best == oracle);
        CHECK(run_sweep(lr_spec(15, 1), stub(losses), {}, 4).best == oracle);
    }
}

TEST_CASE("failures are recorded and the sweep continues") {
    const auto dir = std::filesystem::temp_directory_path() / "speechdx_sweep_ledger";
    std::filesystem::remove_all(dir);
    Trainer t = [](const TrainConfig&, std::size_t i) -> TrialOutcome {
        if (i == 0) {
            throw std::runtime_error("boom");
        }
        if (i == 2) {
            return {NAN, {}, {}};
        }
        return {1.0 / static_cast<double>(i), {}, "ck" + std::to_string(i)};
    };
    const auto r = run_sweep(lr_spec(4, 2), t, dir);
    CHECK(r.best == 3);
    CHECK(r.best_trial().outcome->checkpoint == "ck3");
    CHECK_FALSE(r.trials[0].outcome);
    CHECK(r.trials[0].error == "boom");
    CHECK_FALSE(r.trials[2].outcome);
    for (int i = 0; i < 4; ++i) {
        CHECK(std::filesystem::exists(dir / ("trial_00" + std::to_string(i) + ".json")));
    }
    std::ifstream in(dir / "sweep.json");
    const auto j = nlohmann::json::parse(in);
    CHECK(j["best_trial"] == 3);
    CHECK(j["trials"].size() == 4);
    CHECK(j["trials"][0]["status"] == "failed");

    try {
        run_sweep(lr_spec(3, 2), [](const TrainConfig&, std::size_t) -> TrialOutcome { throw std::runtime_error("x"); },
                  dir);
        FAIL("no error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::AllTrialsFailed);
    }
    std::filesystem::remove_all(dir);
}

TEST_CASE("spec files") {
    const auto s = spec_from_json(nlohmann::json::parse(R"({
        "trials": 7, "seed": 3, "base": "audio-default",
        "parameters": {"peak_lr": {"log_uniform": [1e-4, 1e-1]},
                       "batch_size": {"choice": [4, 8, 16]},
                       "dropout": {"uniform": [0.1, 0.3]}}})"));
    CHECK(s.trial_count == 7);
    CHECK(s.base == preset("audio-default"));
    CHECK(s.ranges.at("batch_size").choices == std::vector<double>{4, 8, 16});
    CHECK_THROWS_AS(spec_from_json(nlohmann::json::parse(R"({"trials": 2, "budget": 1})")), Error);
    CHECK_THROWS_AS(spec_from_json(nlohmann::json::parse(R"({"parameters": {"dropout": {"normal": [0, 1]}}})")),
                    Error);
    for (const auto& entry : std::filesystem::directory_iterator(std::string(SPEECHDX_SOURCE_DIR) + "/configs/sweeps")) {
        INFO(entry.path());
        CHECK(generate_trials(load_spec(entry.path())).size() >= 1);
    }
}
