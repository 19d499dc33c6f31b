#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "speechdx/nn/params.hpp"

namespace speechdx::nn {

struct Linear {
    Var weight;  // [in, out]
    Var bias;    // [out]

    /// Weights ~ U(-1/sqrt(in), 1/sqrt(in)), bias zero.
    static Linear create(ParamSet& ps, const std::string& name, std::size_t in, std::size_t out, Rng& rng) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(in));
        return {ps.add(name + ".weight", uniform_tensor({in, out}, bound, rng)), ps.add(name + ".bias", Tensor({out}))};
    }

    /// Weights ~ N(0, stddev), bias zero (transformer-style init).
    static Linear create_normal(ParamSet& ps, const std::string& name, std::size_t in, std::size_t out, double stddev,
                                Rng& rng) {
        return {ps.add(name + ".weight", normal_tensor({in, out}, stddev, rng)), ps.add(name + ".bias", Tensor({out}))};
    }

    Var operator()(const Var& x) const { return dense(x, weight, bias); }
};

struct LayerNorm {
    Var gamma;
    Var beta;
    double eps = 1e-5;

    static LayerNorm create(ParamSet& ps, const std::string& name, std::size_t dim) {
        return {ps.add(name + ".weight", Tensor({dim}, 1.0)), ps.add(name + ".bias", Tensor({dim})), 1e-5};
    }

    Var operator()(const Var& x) const { return layer_norm(x, gamma, beta, eps); }
};

struct MultiHeadAttention {
    Linear query, key, value, output;
    std::size_t heads = 1;

    static MultiHeadAttention create(ParamSet& ps, const std::string& name, std::size_t d_model, std::size_t heads,
                                     double init_std, Rng& rng) {
        if (heads == 0 || d_model % heads != 0) {
            fail(ErrorKind::ShapeMismatch, "d_model " + std::to_string(d_model) + " not divisible by " +
                                               std::to_string(heads) + " heads");
        }
        MultiHeadAttention a;
        a.query = Linear::create_normal(ps, name + ".query", d_model, d_model, init_std, rng);
        a.key = Linear::create_normal(ps, name + ".key", d_model, d_model, init_std, rng);
        a.value = Linear::create_normal(ps, name + ".value", d_model, d_model, init_std, rng);
        a.output = Linear::create_normal(ps, name + ".output", d_model, d_model, init_std, rng);
        a.heads = heads;
        return a;
    }

    /// Self-attention over one sequence x[T, d]. Keys flagged in `key_mask` get zero
    /// weight. When `weights_out` is set, the per-head [T, T] attention matrices are
    /// appended to it (before dropout).
    Var operator()(const Var& x, const std::vector<char>& key_mask, double dropout_rate, Rng* rng, bool training,
                   std::vector<Tensor>* weights_out = nullptr) const {
        const std::size_t d = x.value().cols();
        if (d % heads != 0) {
            fail(ErrorKind::ShapeMismatch, "attention input width not divisible by heads");
        }
        const std::size_t dh = d / heads;
        const Var q = query(x), k = key(x), v = value(x);
        const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
        std::vector<Var> ctx;
        ctx.reserve(heads);
        for (std::size_t h = 0; h < heads; ++h) {
            const Var qh = slice_cols(q, h * dh, dh);
            const Var kh = slice_cols(k, h * dh, dh);
            const Var vh = slice_cols(v, h * dh, dh);
            Var p = softmax(scale(matmul(qh, transpose(kh)), inv_sqrt), key_mask);
            if (weights_out) {
                weights_out->push_back(p.value());
            }
            p = dropout(p, dropout_rate, rng, training);
            ctx.push_back(matmul(p, vh));
        }
        return output(heads == 1 ? ctx.front() : concat_cols(ctx));
    }
};

}  // namespace speechdx::nn
