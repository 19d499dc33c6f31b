#pragma once

// Random-search sweeps over TrainConfig fields. Trial k draws every parameter from its own
// generator seeded by (master seed, k), so trial configs do not depend on scheduling.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "speechdx/error.hpp"
#include "speechdx/rng.hpp"
#include "speechdx/train_config.hpp"

namespace speechdx::sweep {

inline constexpr int kLedgerVersion = 1;

enum class RangeKind { Uniform, LogUniform, Choice };

struct Range {
    RangeKind kind = RangeKind::Uniform;
    double lo = 0.0;
    double hi = 0.0;
    std::vector<double> choices;

    void validate(const std::string& name) const {
        if (kind == RangeKind::Choice) {
            if (choices.empty()) {
                fail(ErrorKind::EmptyRange, "choice range for '" + name + "' has no values");
            }
            return;
        }
        if (!std::isfinite(lo) || !std::isfinite(hi) || lo > hi) {
            fail(ErrorKind::EmptyRange, "range for '" + name + "' is empty");
        }
        if (kind == RangeKind::LogUniform && lo <= 0.0) {
            fail(ErrorKind::EmptyRange, "log-uniform range for '" + name + "' must be positive");
        }
    }

    double sample(Rng& rng) const {
        switch (kind) {
        case RangeKind::Uniform: return rng.uniform(lo, hi);
        case RangeKind::LogUniform: return std::exp(rng.uniform(std::log(lo), std::log(hi)));
        case RangeKind::Choice: return choices[rng.below(choices.size())];
        }
        return lo;
    }
};

/// Fields that a sweep may vary. Integer fields round the drawn value to nearest.
inline constexpr std::array<std::string_view, 5> kSweepable = {"batch_size", "epochs", "peak_lr", "warmup_steps",
                                                               "dropout"};

struct SweepSpec {
    std::map<std::string, Range> ranges;
    std::size_t trial_count = 15;
    std::uint64_t seed = 0;
    TrainConfig base;

    void validate() const {
        require(trial_count >= 1, ErrorKind::InvalidArgument, "trial_count must be >= 1");
        for (const auto& [name, r] : ranges) {
            if (std::find(kSweepable.begin(), kSweepable.end(), name) == kSweepable.end()) {
                fail(ErrorKind::SchemaViolation, "parameter '" + name + "' cannot be swept");
            }
            r.validate(name);
        }
    }
};

inline void assign(TrainConfig& c, const std::string& name, double v) {
    auto count = [&](double x) {
        const double r = std::round(x);
        require(r >= 0.0, ErrorKind::InvalidArgument, "'" + name + "' drew a negative value");
        return static_cast<std::size_t>(r);
    };
    if (name == "batch_size") {
        c.batch_size = count(v);
    } else if (name == "epochs") {
        c.epochs = count(v);
    } else if (name == "peak_lr") {
        c.peak_lr = v;
    } else if (name == "warmup_steps") {
        c.warmup_steps = count(v);
    } else if (name == "dropout") {
        c.dropout = v;
    }
}

/// trial_count configs; parameters are drawn in name order from derive_seed(seed, trial).
inline std::vector<TrainConfig> generate_trials(const SweepSpec& spec) {
    spec.validate();
    std::vector<TrainConfig> out;
    out.reserve(spec.trial_count);
    for (std::size_t t = 0; t < spec.trial_count; ++t) {
        Rng rng(derive_seed(spec.seed, t));
        TrainConfig c = spec.base;
        for (const auto& [name, r] : spec.ranges) {
            assign(c, name, r.sample(rng));
        }
        out.push_back(c);
    }
    return out;
}

inline std::string_view to_string(RangeKind k) {
    switch (k) {
    case RangeKind::Uniform: return "uniform";
    case RangeKind::LogUniform: return "log_uniform";
    case RangeKind::Choice: return "choice";
    }
    return "uniform";
}

/// {"trials": n, "seed": s, "base": {..TrainConfig..} or "preset-name",
///  "parameters": {"peak_lr": {"log_uniform": [lo, hi]}, "batch_size": {"choice": [8, 16]}}}
inline SweepSpec spec_from_json(const nlohmann::json& j) {
    if (!j.is_object()) {
        fail(ErrorKind::SchemaViolation, "sweep spec must be a JSON object");
    }
    SweepSpec s;
    try {
        for (auto it = j.begin(); it != j.end(); ++it) {
            const auto& k = it.key();
            if (k == "trials" || k == "trial_count") {
                s.trial_count = it->get<std::size_t>();
            } else if (k == "seed") {
                s.seed = it->get<std::uint64_t>();
            } else if (k == "base") {
                s.base = it->is_string() ? preset(it->get<std::string>()) : train_config_from_json(*it);
            } else if (k == "parameters") {
                for (auto p = it->begin(); p != it->end(); ++p) {
                    if (!p->is_object() || p->size() != 1) {
                        fail(ErrorKind::SchemaViolation, "parameter '" + p.key() + "' needs exactly one range kind");
                    }
                    Range r;
                    const auto& kind = p->begin().key();
                    const auto& v = p->begin().value();
                    if (kind == "choice") {
                        r.kind = RangeKind::Choice;
                        r.choices = v.get<std::vector<double>>();
                    } else if (kind == "uniform" || kind == "log_uniform") {
                        r.kind = kind == "uniform" ? RangeKind::Uniform : RangeKind::LogUniform;
                        if (!v.is_array() || v.size() != 2) {
                            fail(ErrorKind::SchemaViolation, "range for '" + p.key() + "' must be [lo, hi]");
                        }
                        r.lo = v[0].get<double>();
                        r.hi = v[1].get<double>();
                    } else {
                        fail(ErrorKind::SchemaViolation, "unknown range kind '" + kind + "'");
                    }
                    s.ranges[p.key()] = r;
                }
            } else if (k == "name" || k == "source") {
                // descriptive only
            } else {
                fail(ErrorKind::SchemaViolation, "unknown sweep spec key '" + k + "'");
            }
        }
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::SchemaViolation, std::string("sweep spec: ") + e.what());
    }
    s.validate();
    return s;
}

inline SweepSpec load_spec(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        fail(ErrorKind::Io, "cannot read " + path.string());
    }
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::SchemaViolation, path.string() + ": " + e.what());
    }
    return spec_from_json(j);
}

/// What a trainer hands back: the final validation cross-entropy plus anything worth keeping.
struct TrialOutcome {
    double validation_loss = 0.0;
    nlohmann::ordered_json history = nlohmann::ordered_json::array();
    std::string checkpoint;  // path, empty if the trainer keeps nothing
};

struct TrialRecord {
    std::size_t index = 0;
    TrainConfig config;
    std::optional<TrialOutcome> outcome;
    std::string error;  // set iff outcome is empty
};

inline nlohmann::ordered_json to_json(const TrialRecord& r) {
    nlohmann::ordered_json j;
    j["version"] = kLedgerVersion;
    j["trial"] = r.index;
    j["config"] = to_json(r.config);
    if (r.outcome) {
        j["status"] = "ok";
        j["validation_loss"] = r.outcome->validation_loss;
        j["checkpoint"] = r.outcome->checkpoint;
        j["history"] = r.outcome->history;
    } else {
        j["status"] = "failed";
        j["error"] = r.error;
    }
    return j;
}

struct SweepResult {
    std::vector<TrialRecord> trials;
    std::size_t best = 0;

    const TrialRecord& best_trial() const { return trials[best]; }
};

using Trainer = std::function<TrialOutcome(const TrainConfig&, std::size_t trial)>;

/// Lowest validation loss wins; ties go to the earlier trial. Failing trials (exceptions or
/// a non-finite loss) are recorded and skipped. With a ledger directory, each trial is
/// written to trial_NNN.json as it finishes and sweep.json is written at the end.
inline SweepResult run_sweep(const SweepSpec& spec, const Trainer& train,
                             const std::filesystem::path& ledger_dir = {}, std::size_t threads = 1) {
    const auto configs = generate_trials(spec);
    if (!ledger_dir.empty()) {
        std::filesystem::create_directories(ledger_dir);
    }
    SweepResult result;
    result.trials.resize(configs.size());
    auto run_one = [&](std::size_t t) {
        TrialRecord& rec = result.trials[t];
        rec.index = t;
        rec.config = configs[t];
        try {
            TrialOutcome o = train(configs[t], t);
            if (!std::isfinite(o.validation_loss)) {
                fail(ErrorKind::NonFiniteValue, "validation loss is not finite");
            }
            rec.outcome = std::move(o);
        } catch (const std::exception& e) {
            rec.error = e.what();
        }
        if (!ledger_dir.empty()) {
            char name[32];
            std::snprintf(name, sizeof name, "trial_%03zu.json", t);
            std::ofstream(ledger_dir / name, std::ios::binary) << to_json(rec).dump(2) << '\n';
        }
    };
    threads = std::clamp<std::size_t>(threads, 1, configs.size());
    if (threads == 1) {
        for (std::size_t t = 0; t < configs.size(); ++t) {
            run_one(t);
        }
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < threads; ++w) {
            pool.emplace_back([&] {
                for (std::size_t t = next++; t < configs.size(); t = next++) {
                    run_one(t);
                }
            });
        }
        for (auto& th : pool) {
            th.join();
        }
    }

    std::optional<std::size_t> best;
    for (const auto& r : result.trials) {
        if (r.outcome && (!best || r.outcome->validation_loss < result.trials[*best].outcome->validation_loss)) {
            best = r.index;
        }
    }
    if (!ledger_dir.empty()) {
        nlohmann::ordered_json summary;
        summary["version"] = kLedgerVersion;
        summary["seed"] = spec.seed;
        summary["best_trial"] = best ? nlohmann::ordered_json(*best) : nlohmann::ordered_json();
        summary["trials"] = nlohmann::ordered_json::array();
        for (const auto& r : result.trials) {
            summary["trials"].push_back(to_json(r));
        }
        std::ofstream(ledger_dir / "sweep.json", std::ios::binary) << summary.dump(2) << '\n';
    }
    if (!best) {
        fail(ErrorKind::AllTrialsFailed, "all " + std::to_string(configs.size()) + " trials failed");
    }
    result.best = *best;
    return result;
}

}  // namespace speechdx::sweep
