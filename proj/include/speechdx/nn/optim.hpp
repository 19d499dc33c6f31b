#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "speechdx/nn/params.hpp"

namespace speechdx::nn {

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.95;
    double eps = 1e-8;
};

struct AdamState {
    AdamConfig cfg;
    std::vector<Tensor> m;
    std::vector<Tensor> v;
    std::size_t t = 0;
};

/// One bias-corrected Adam update on raw buffers.
inline void adam_update(std::vector<double>& theta, const std::vector<double>& grad, std::vector<double>& m,
                        std::vector<double>& v, std::size_t t, const AdamConfig& cfg, double lr) {
    const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
    for (std::size_t i = 0; i < theta.size(); ++i) {
        const double g = grad[i];
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
        const double mhat = m[i] / c1;
        const double vhat = v[i] / c2;
        theta[i] -= lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
}

/// Applies one Adam step to every trainable parameter of `params` using its accumulated
/// gradient. Frozen parameters are left bitwise untouched; t advances regardless.
inline void adam_step(ParamSet& params, AdamState& state, double lr) {
    if (!std::isfinite(lr) || lr < 0.0) {
        fail(ErrorKind::NonFiniteValue, "learning rate must be finite and non-negative");
    }
    const auto& items = params.items();
    if (state.m.empty()) {
        for (const auto& [_, p] : items) {
            state.m.emplace_back(p.shape(), 0.0);
            state.v.emplace_back(p.shape(), 0.0);
        }
    }
    if (state.m.size() != items.size()) {
        fail(ErrorKind::ShapeMismatch, "optimizer state tracks " + std::to_string(state.m.size()) +
                                           " parameters, model has " + std::to_string(items.size()));
    }
    ++state.t;
    for (std::size_t i = 0; i < items.size(); ++i) {
        Var p = items[i].second;
        if (!p.requires_grad()) {
            continue;
        }
        if (!state.m[i].same_shape(p.value())) {
            fail(ErrorKind::ShapeMismatch, "optimizer state shape mismatch for '" + items[i].first + "'");
        }
        const Tensor& g = p.grad();
        check_finite(g, "gradient");
        adam_update(p.mutable_value().vec(), g.vec(), state.m[i].vec(), state.v[i].vec(), state.t, state.cfg, lr);
        check_finite(p.value(), "adam update");
    }
}

/// Linear warmup from 0 to peak_lr, then linear decay to 0 at total_steps.
struct LinearSchedule {
    std::size_t warmup_steps = 0;
    double peak_lr = 1e-3;
    std::size_t total_steps = 1;

    void validate() const {
        require(warmup_steps <= total_steps, ErrorKind::InvalidArgument, "warmup_steps exceeds total_steps");
        require(peak_lr > 0.0 && std::isfinite(peak_lr), ErrorKind::InvalidArgument, "peak_lr must be positive");
    }

    /// Schedule for a run of `steps` optimizer steps. A warmup longer than the run keeps
    /// its slope, so the run ends part-way up the ramp.
    static LinearSchedule for_run(std::size_t warmup, double peak, std::size_t steps) {
        return LinearSchedule{warmup, peak, std::max(warmup, steps)};
    }
};

inline double lr_at(const LinearSchedule& s, std::size_t step) {
    s.validate();
    if (step > s.total_steps) {
        fail(ErrorKind::StepOutOfRange,
             "step " + std::to_string(step) + " beyond total_steps " + std::to_string(s.total_steps));
    }
    if (step < s.warmup_steps) {
        return s.peak_lr * static_cast<double>(step) / static_cast<double>(s.warmup_steps);
    }
    if (s.total_steps == s.warmup_steps) {
        return s.peak_lr;
    }
    return s.peak_lr * static_cast<double>(s.total_steps - step) / static_cast<double>(s.total_steps - s.warmup_steps);
}

}  // namespace speechdx::nn
