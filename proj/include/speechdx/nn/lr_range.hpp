#pragma once

#include <cmath>
#include <concepts>
#include <cstddef>
#include <string>
#include <vector>

#include "speechdx/error.hpp"

namespace speechdx::nn {

/// Anything that can report its current training loss and train one epoch at a given LR.
template <class S>
concept LrRangeSubject = requires(S s, double lr) {
    { s.loss() } -> std::convertible_to<double>;
    s.train_epoch(lr);
};

struct LrRangeConfig {
    double lr_min = 1e-7;
    double lr_max = 1e-1;
    std::size_t epochs = 20;
    double smoothing = 0.5;      // EMA weight of the newest loss
    double descent_ratio = 0.99; // smoothed loss at or below this fraction of the baseline counts as descent
    double divergence_ratio = 2.0;

    void validate() const {
        if (!(lr_min < lr_max)) {
            fail(ErrorKind::StepOutOfRange, "lr_min must be strictly below lr_max");
        }
        require(lr_min >= 0.0, ErrorKind::InvalidArgument, "lr_min must be non-negative");
        require(epochs >= 2, ErrorKind::InvalidArgument, "an LR range test needs at least 2 epochs");
        require(smoothing > 0.0 && smoothing <= 1.0, ErrorKind::InvalidArgument, "smoothing must be in (0, 1]");
    }
};

struct LrRangeResult {
    double lower = 0.0;
    double upper = 0.0;
    double default_lr = 0.0;
    double baseline_loss = 0.0;
    std::vector<double> lrs;
    std::vector<double> losses;
    std::vector<double> smoothed;
};

/// Epoch e of n trains at lr_min + (lr_max - lr_min) * e / (n - 1).
inline double lr_range_lr(const LrRangeConfig& cfg, std::size_t epoch) {
    return cfg.lr_min + (cfg.lr_max - cfg.lr_min) * static_cast<double>(epoch) / static_cast<double>(cfg.epochs - 1);
}

/// Trains `subject` for cfg.epochs epochs with a per-epoch linear LR ramp. The lower bound
/// is the first LR whose smoothed loss is a meaningful drop from the starting loss; the
/// upper bound is the last LR before the smoothed loss exceeds divergence_ratio times its
/// running minimum (lr_max if it never does). The default is their geometric midpoint.
template <LrRangeSubject S>
LrRangeResult lr_range_test(S& subject, const LrRangeConfig& cfg) {
    cfg.validate();
    LrRangeResult r;
    r.baseline_loss = subject.loss();
    double ema = r.baseline_loss;
    double running_min = ema;
    bool have_lower = false;
    bool have_upper = false;
    for (std::size_t e = 0; e < cfg.epochs; ++e) {
        const double lr = lr_range_lr(cfg, e);
        double loss = INFINITY;
        try {
            subject.train_epoch(lr);
            loss = subject.loss();
        } catch (const Error& err) {
            // Blow-up at a high LR is the divergence signal, not a failure.
            if (err.kind() != ErrorKind::NonFiniteValue) {
                throw;
            }
        }
        ema = std::isfinite(loss) ? cfg.smoothing * loss + (1.0 - cfg.smoothing) * ema : INFINITY;
        r.lrs.push_back(lr);
        r.losses.push_back(loss);
        r.smoothed.push_back(ema);
        if (!have_lower && ema <= cfg.descent_ratio * r.baseline_loss) {
            have_lower = true;
            r.lower = lr;
        }
        if (have_lower && ema > cfg.divergence_ratio * running_min) {
            have_upper = true;
            r.upper = e > 0 ? r.lrs[e - 1] : lr;
            break;
        }
        running_min = std::min(running_min, ema);
    }
    if (!have_lower) {
        fail(ErrorKind::NoDescentDetected, "smoothed loss never fell 1% below the starting loss");
    }
    if (!have_upper || r.upper < r.lower) {
        r.upper = have_upper ? r.lower : cfg.lr_max;
    }
    r.default_lr = r.lower > 0.0 ? std::sqrt(r.lower * r.upper) : 0.5 * (r.lower + r.upper);
    return r;
}

}  // namespace speechdx::nn
