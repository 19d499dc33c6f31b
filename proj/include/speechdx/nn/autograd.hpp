#pragma once

// Reverse-mode automatic differentiation over Tensor values.
//
// Every op builds a node holding its forward value and a closure that pushes the
// output gradient into its parents. Nodes that do not depend on any trainable leaf
// keep no parents and no closure, so frozen sub-networks cost nothing in backward().

#include <cmath>
#include <memory>
#include <numbers>
#include <unordered_set>
#include <utility>
#include <vector>

#include "speechdx/nn/tensor.hpp"
#include "speechdx/rng.hpp"

namespace speechdx::nn {

struct Node {
    Tensor value;
    Tensor grad;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward;
    bool requires_grad = false;

    Tensor& ensure_grad() {
        if (grad.size() != value.size()) {
            grad = Tensor(value.shape(), 0.0);
        }
        return grad;
    }
};

class Var {
public:
    Var() = default;
    explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

    static Var constant(Tensor value) {
        auto n = std::make_shared<Node>();
        n->value = std::move(value);
        return Var(std::move(n));
    }

    static Var leaf(Tensor value, bool requires_grad = true) {
        auto n = std::make_shared<Node>();
        n->value = std::move(value);
        n->requires_grad = requires_grad;
        return Var(std::move(n));
    }

    bool defined() const { return node_ != nullptr; }
    const Tensor& value() const { return node_->value; }
    Tensor& mutable_value() { return node_->value; }
    const Shape& shape() const { return node_->value.shape(); }
    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool on) { node_->requires_grad = on; }

    /// Gradient accumulated by backward(); zero-filled if none has arrived yet.
    Tensor& grad() { return node_->ensure_grad(); }
    void zero_grad() {
        if (node_->grad.size() == node_->value.size()) {
            node_->grad.fill(0.0);
        }
    }

    const std::shared_ptr<Node>& node() const { return node_; }

private:
    std::shared_ptr<Node> node_;
};

namespace detail {

inline Var make_op(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> backward, const char* name) {
    check_finite(value, name);
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    for (const auto& in : inputs) {
        n->requires_grad = n->requires_grad || in.requires_grad();
    }
    if (n->requires_grad) {
        for (auto& in : inputs) {
            n->parents.push_back(in.node());
        }
        n->backward = std::move(backward);
    }
    return Var(std::move(n));
}

/// Gradient buffer of parent i, or nullptr when that parent does not need one.
inline Tensor* pgrad(Node& n, std::size_t i) {
    Node& p = *n.parents[i];
    return p.requires_grad ? &p.ensure_grad() : nullptr;
}

inline void require_matrix_cols(const Tensor& t, std::size_t cols, const char* what) {
    if (t.cols() != cols) {
        fail(ErrorKind::ShapeMismatch, std::string(what) + ": expected " + std::to_string(cols) + " columns, got " +
                                           shape_string(t.shape()));
    }
}

}  // namespace detail

/// Runs reverse accumulation from a single-element output.
inline void backward(const Var& loss) {
    if (loss.value().size() != 1) {
        fail(ErrorKind::ShapeMismatch, "backward() needs a scalar output, got " + shape_string(loss.shape()));
    }
    if (!loss.requires_grad()) {
        return;
    }
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack{{loss.node().get(), 0}};
    visited.insert(loss.node().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* p = node->parents[next++].get();
            if (p->requires_grad && visited.insert(p).second) {
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    loss.node()->ensure_grad()[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward) {
            n->ensure_grad();
            n->backward(*n);
        }
    }
}

/// a[n,k] x b[k,m]
inline Var matmul(const Var& a, const Var& b) {
    const Tensor& A = a.value();
    const Tensor& B = b.value();
    const std::size_t n = A.rows(), k = A.cols(), m = B.cols();
    if (B.rows() != k) {
        fail(ErrorKind::ShapeMismatch, "matmul " + shape_string(A.shape()) + " x " + shape_string(B.shape()));
    }
    Tensor C({n, m}, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        double* crow = &C.vec()[i * m];
        for (std::size_t p = 0; p < k; ++p) {
            const double av = A.vec()[i * k + p];
            if (av == 0.0) {
                continue;
            }
            const double* brow = &B.vec()[p * m];
            for (std::size_t j = 0; j < m; ++j) {
                crow[j] += av * brow[j];
            }
        }
    }
    return detail::make_op(std::move(C), {a, b}, [n, k, m](Node& self) {
        const Tensor& G = self.grad;
        const Tensor& A = self.parents[0]->value;
        const Tensor& B = self.parents[1]->value;
        if (Tensor* dA = detail::pgrad(self, 0)) {
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t p = 0; p < k; ++p) {
                    double s = 0.0;
                    const double* grow = &G.vec()[i * m];
                    const double* brow = &B.vec()[p * m];
                    for (std::size_t j = 0; j < m; ++j) {
                        s += grow[j] * brow[j];
                    }
                    dA->vec()[i * k + p] += s;
                }
            }
        }
        if (Tensor* dB = detail::pgrad(self, 1)) {
            for (std::size_t i = 0; i < n; ++i) {
                const double* grow = &G.vec()[i * m];
                for (std::size_t p = 0; p < k; ++p) {
                    const double av = A.vec()[i * k + p];
                    double* drow = &dB->vec()[p * m];
                    for (std::size_t j = 0; j < m; ++j) {
                        drow[j] += av * grow[j];
                    }
                }
            }
        }
    }, "matmul");
}

inline Var transpose(const Var& a) {
    const Tensor& A = a.value();
    const std::size_t n = A.rows(), m = A.cols();
    Tensor T({m, n});
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < m; ++j) {
            T.vec()[j * n + i] = A.vec()[i * m + j];
        }
    }
    return detail::make_op(std::move(T), {a}, [n, m](Node& self) {
        Tensor* dA = detail::pgrad(self, 0);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < m; ++j) {
                dA->vec()[i * m + j] += self.grad.vec()[j * n + i];
            }
        }
    }, "transpose");
}

inline Var add(const Var& a, const Var& b) {
    if (!a.value().same_shape(b.value())) {
        fail(ErrorKind::ShapeMismatch, "add " + shape_string(a.shape()) + " + " + shape_string(b.shape()));
    }
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] += b.value()[i];
    }
    return detail::make_op(std::move(out), {a, b}, [](Node& self) {
        for (std::size_t p = 0; p < 2; ++p) {
            if (Tensor* d = detail::pgrad(self, p)) {
                for (std::size_t i = 0; i < d->size(); ++i) {
                    (*d)[i] += self.grad[i];
                }
            }
        }
    }, "add");
}

/// a[n,m] + bias[m] broadcast over rows.
inline Var add_bias(const Var& a, const Var& bias) {
    const std::size_t m = a.value().cols();
    if (bias.value().size() != m) {
        fail(ErrorKind::ShapeMismatch, "add_bias " + shape_string(a.shape()) + " + " + shape_string(bias.shape()));
    }
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] += bias.value()[i % m];
    }
    return detail::make_op(std::move(out), {a, bias}, [m](Node& self) {
        if (Tensor* d = detail::pgrad(self, 0)) {
            for (std::size_t i = 0; i < d->size(); ++i) {
                (*d)[i] += self.grad[i];
            }
        }
        if (Tensor* d = detail::pgrad(self, 1)) {
            for (std::size_t i = 0; i < self.grad.size(); ++i) {
                (*d)[i % m] += self.grad[i];
            }
        }
    }, "add_bias");
}

inline Var mul(const Var& a, const Var& b) {
    if (!a.value().same_shape(b.value())) {
        fail(ErrorKind::ShapeMismatch, "mul " + shape_string(a.shape()) + " * " + shape_string(b.shape()));
    }
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] *= b.value()[i];
    }
    return detail::make_op(std::move(out), {a, b}, [](Node& self) {
        const Tensor& A = self.parents[0]->value;
        const Tensor& B = self.parents[1]->value;
        if (Tensor* d = detail::pgrad(self, 0)) {
            for (std::size_t i = 0; i < d->size(); ++i) {
                (*d)[i] += self.grad[i] * B[i];
            }
        }
        if (Tensor* d = detail::pgrad(self, 1)) {
            for (std::size_t i = 0; i < d->size(); ++i) {
                (*d)[i] += self.grad[i] * A[i];
            }
        }
    }, "mul");
}

inline Var scale(const Var& a, double s) {
    Tensor out = a.value();
    for (auto& x : out.vec()) {
        x *= s;
    }
    return detail::make_op(std::move(out), {a}, [s](Node& self) {
        Tensor* d = detail::pgrad(self, 0);
        for (std::size_t i = 0; i < d->size(); ++i) {
            (*d)[i] += self.grad[i] * s;
        }
    }, "scale");
}

namespace detail {

template <class F, class DF>
Var unary(const Var& a, F f, DF df, const char* name) {
    Tensor out = a.value();
    for (auto& x : out.vec()) {
        x = f(x);
    }
    return make_op(std::move(out), {a}, [df](Node& self) {
        const Tensor& X = self.parents[0]->value;
        Tensor* d = pgrad(self, 0);
        for (std::size_t i = 0; i < d->size(); ++i) {
            (*d)[i] += self.grad[i] * df(X[i], self.value[i]);
        }
    }, name);
}

}  // namespace detail

inline Var relu(const Var& a) {
    return detail::unary(
        a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; }, "relu");
}

inline Var tanh(const Var& a) {
    return detail::unary(
        a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; }, "tanh");
}

/// Exact (erf-based) GELU.
inline Var gelu(const Var& a) {
    return detail::unary(
        a, [](double x) { return 0.5 * x * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0)); },
        [](double x, double) {
            const double cdf = 0.5 * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0));
            const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
            return cdf + x * pdf;
        },
        "gelu");
}

/// Row-wise layer normalisation with variance floor `eps`.
inline Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5) {
    const Tensor& X = x.value();
    const std::size_t n = X.rows(), m = X.cols();
    detail::require_matrix_cols(gamma.value(), m, "layer_norm gamma");
    detail::require_matrix_cols(beta.value(), m, "layer_norm beta");
    Tensor xhat({n, m});
    std::vector<double> inv_std(n);
    Tensor out({n, m});
    for (std::size_t i = 0; i < n; ++i) {
        double mean = 0.0;
        for (std::size_t j = 0; j < m; ++j) {
            mean += X.vec()[i * m + j];
        }
        mean /= static_cast<double>(m);
        double var = 0.0;
        for (std::size_t j = 0; j < m; ++j) {
            const double d = X.vec()[i * m + j] - mean;
            var += d * d;
        }
        var /= static_cast<double>(m);
        inv_std[i] = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < m; ++j) {
            const double h = (X.vec()[i * m + j] - mean) * inv_std[i];
            xhat.vec()[i * m + j] = h;
            out.vec()[i * m + j] = gamma.value()[j] * h + beta.value()[j];
        }
    }
    return detail::make_op(std::move(out), {x, gamma, beta},
                           [n, m, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
        const Tensor& G = self.grad;
        const Tensor& gam = self.parents[1]->value;
        if (Tensor* dg = detail::pgrad(self, 1)) {
            for (std::size_t i = 0; i < n * m; ++i) {
                (*dg)[i % m] += G[i] * xhat[i];
            }
        }
        if (Tensor* db = detail::pgrad(self, 2)) {
            for (std::size_t i = 0; i < n * m; ++i) {
                (*db)[i % m] += G[i];
            }
        }
        if (Tensor* dx = detail::pgrad(self, 0)) {
            for (std::size_t i = 0; i < n; ++i) {
                double mean_d = 0.0, mean_dh = 0.0;
                for (std::size_t j = 0; j < m; ++j) {
                    const double dh = G[i * m + j] * gam[j];
                    mean_d += dh;
                    mean_dh += dh * xhat[i * m + j];
                }
                mean_d /= static_cast<double>(m);
                mean_dh /= static_cast<double>(m);
                for (std::size_t j = 0; j < m; ++j) {
                    const double dh = G[i * m + j] * gam[j];
                    (*dx)[i * m + j] += inv_std[i] * (dh - mean_d - xhat[i * m + j] * mean_dh);
                }
            }
        }
    }, "layer_norm");
}

/// Row-wise softmax. Columns flagged in `key_mask` (non-zero) receive exactly zero weight.
inline Var softmax(const Var& x, const std::vector<char>& key_mask = {}) {
    const Tensor& X = x.value();
    const std::size_t n = X.rows(), m = X.cols();
    if (!key_mask.empty() && key_mask.size() != m) {
        fail(ErrorKind::ShapeMismatch, "softmax mask length " + std::to_string(key_mask.size()) + " vs " +
                                           std::to_string(m) + " columns");
    }
    auto masked = [&key_mask](std::size_t j) { return !key_mask.empty() && key_mask[j] != 0; };
    Tensor Y({n, m}, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        double mx = -INFINITY;
        for (std::size_t j = 0; j < m; ++j) {
            if (!masked(j)) {
                mx = std::max(mx, X.vec()[i * m + j]);
            }
        }
        if (mx == -INFINITY) {
            continue;
        }
        double sum = 0.0;
        for (std::size_t j = 0; j < m; ++j) {
            if (!masked(j)) {
                const double e = std::exp(X.vec()[i * m + j] - mx);
                Y.vec()[i * m + j] = e;
                sum += e;
            }
        }
        for (std::size_t j = 0; j < m; ++j) {
            Y.vec()[i * m + j] /= sum;
        }
    }
    if (x.shape().size() == 1) {
        Y = Tensor(x.shape(), std::move(Y.vec()));
    }
    return detail::make_op(std::move(Y), {x}, [n, m](Node& self) {
        Tensor* dX = detail::pgrad(self, 0);
        for (std::size_t i = 0; i < n; ++i) {
            double dot = 0.0;
            for (std::size_t j = 0; j < m; ++j) {
                dot += self.grad[i * m + j] * self.value[i * m + j];
            }
            for (std::size_t j = 0; j < m; ++j) {
                (*dX)[i * m + j] += self.value[i * m + j] * (self.grad[i * m + j] - dot);
            }
        }
    }, "softmax");
}

/// Mean negative log-likelihood of `targets` under row-wise softmax(logits). Rows with
/// target -1 are ignored; the loss is 0 when every row is ignored.
inline Var cross_entropy(const Var& logits, const std::vector<int>& targets) {
    const Tensor& L = logits.value();
    const std::size_t n = L.rows(), c = L.cols();
    if (targets.size() != n) {
        fail(ErrorKind::ShapeMismatch, "cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                                           std::to_string(n) + " rows");
    }
    Tensor probs({n, c});
    double total = 0.0;
    std::size_t counted = 0;
    for (std::size_t i = 0; i < n; ++i) {
        double mx = -INFINITY;
        for (std::size_t j = 0; j < c; ++j) {
            mx = std::max(mx, L.vec()[i * c + j]);
        }
        double sum = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            sum += std::exp(L.vec()[i * c + j] - mx);
        }
        const double log_z = mx + std::log(sum);
        for (std::size_t j = 0; j < c; ++j) {
            probs.vec()[i * c + j] = std::exp(L.vec()[i * c + j] - log_z);
        }
        const int t = targets[i];
        if (t < 0) {
            continue;
        }
        if (static_cast<std::size_t>(t) >= c) {
            fail(ErrorKind::ShapeMismatch, "cross_entropy: target " + std::to_string(t) + " outside " +
                                               std::to_string(c) + " classes");
        }
        total += log_z - L.vec()[i * c + static_cast<std::size_t>(t)];
        ++counted;
    }
    const double denom = counted ? static_cast<double>(counted) : 1.0;
    return detail::make_op(Tensor::scalar(total / denom), {logits},
                           [n, c, denom, targets, probs = std::move(probs)](Node& self) {
        Tensor* d = detail::pgrad(self, 0);
        const double g = self.grad[0] / denom;
        for (std::size_t i = 0; i < n; ++i) {
            if (targets[i] < 0) {
                continue;
            }
            for (std::size_t j = 0; j < c; ++j) {
                const double onehot = static_cast<int>(j) == targets[i] ? 1.0 : 0.0;
                (*d)[i * c + j] += g * (probs[i * c + j] - onehot);
            }
        }
    }, "cross_entropy");
}

/// Rows of `table` selected by `ids`.
inline Var embedding(const Var& table, const std::vector<int>& ids) {
    const Tensor& T = table.value();
    const std::size_t v = T.rows(), d = T.cols();
    Tensor out({ids.size(), d});
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= v) {
            fail(ErrorKind::IdOutOfRange, "embedding id " + std::to_string(ids[i]) + " outside table of " +
                                              std::to_string(v));
        }
        std::copy_n(&T.vec()[static_cast<std::size_t>(ids[i]) * d], d, &out.vec()[i * d]);
    }
    return detail::make_op(std::move(out), {table}, [ids, d](Node& self) {
        Tensor* dT = detail::pgrad(self, 0);
        for (std::size_t i = 0; i < ids.size(); ++i) {
            for (std::size_t j = 0; j < d; ++j) {
                (*dT)[static_cast<std::size_t>(ids[i]) * d + j] += self.grad[i * d + j];
            }
        }
    }, "embedding");
}

inline Var gather_rows(const Var& x, const std::vector<std::size_t>& rows) {
    const Tensor& X = x.value();
    const std::size_t n = X.rows(), m = X.cols();
    Tensor out({rows.size(), m});
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] >= n) {
            fail(ErrorKind::ShapeMismatch, "gather_rows: row " + std::to_string(rows[i]) + " of " + std::to_string(n));
        }
        std::copy_n(&X.vec()[rows[i] * m], m, &out.vec()[i * m]);
    }
    return detail::make_op(std::move(out), {x}, [rows, m](Node& self) {
        Tensor* d = detail::pgrad(self, 0);
        for (std::size_t i = 0; i < rows.size(); ++i) {
            for (std::size_t j = 0; j < m; ++j) {
                (*d)[rows[i] * m + j] += self.grad[i * m + j];
            }
        }
    }, "gather_rows");
}

inline Var slice_cols(const Var& x, std::size_t start, std::size_t len) {
    const Tensor& X = x.value();
    const std::size_t n = X.rows(), m = X.cols();
    if (start + len > m) {
        fail(ErrorKind::ShapeMismatch, "slice_cols beyond " + std::to_string(m) + " columns");
    }
    Tensor out({n, len});
    for (std::size_t i = 0; i < n; ++i) {
        std::copy_n(&X.vec()[i * m + start], len, &out.vec()[i * len]);
    }
    return detail::make_op(std::move(out), {x}, [n, m, start, len](Node& self) {
        Tensor* d = detail::pgrad(self, 0);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < len; ++j) {
                (*d)[i * m + start + j] += self.grad[i * len + j];
            }
        }
    }, "slice_cols");
}

inline Var concat_cols(const std::vector<Var>& parts) {
    require(!parts.empty(), ErrorKind::ShapeMismatch, "concat_cols of nothing");
    const std::size_t n = parts.front().value().rows();
    std::size_t m = 0;
    for (const auto& p : parts) {
        if (p.value().rows() != n) {
            fail(ErrorKind::ShapeMismatch, "concat_cols row mismatch");
        }
        m += p.value().cols();
    }
    Tensor out({n, m});
    std::vector<std::size_t> offsets;
    std::size_t off = 0;
    for (const auto& p : parts) {
        const std::size_t w = p.value().cols();
        for (std::size_t i = 0; i < n; ++i) {
            std::copy_n(&p.value().vec()[i * w], w, &out.vec()[i * m + off]);
        }
        offsets.push_back(off);
        off += w;
    }
    return detail::make_op(std::move(out), parts, [n, m, offsets](Node& self) {
        for (std::size_t k = 0; k < self.parents.size(); ++k) {
            Tensor* d = detail::pgrad(self, k);
            if (!d) {
                continue;
            }
            const std::size_t w = self.parents[k]->value.cols();
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t j = 0; j < w; ++j) {
                    (*d)[i * w + j] += self.grad[i * m + offsets[k] + j];
                }
            }
        }
    }, "concat_cols");
}

inline Var concat_rows(const std::vector<Var>& parts) {
    require(!parts.empty(), ErrorKind::ShapeMismatch, "concat_rows of nothing");
    const std::size_t m = parts.front().value().cols();
    std::size_t n = 0;
    for (const auto& p : parts) {
        detail::require_matrix_cols(p.value(), m, "concat_rows");
        n += p.value().rows();
    }
    Tensor out({n, m});
    std::size_t row = 0;
    for (const auto& p : parts) {
        std::copy(p.value().vec().begin(), p.value().vec().end(), out.vec().begin() + static_cast<std::ptrdiff_t>(row * m));
        row += p.value().rows();
    }
    return detail::make_op(std::move(out), parts, [m](Node& self) {
        std::size_t row = 0;
        for (std::size_t k = 0; k < self.parents.size(); ++k) {
            const std::size_t r = self.parents[k]->value.rows();
            if (Tensor* d = detail::pgrad(self, k)) {
                for (std::size_t i = 0; i < r * m; ++i) {
                    (*d)[i] += self.grad[row * m + i];
                }
            }
            row += r;
        }
    }, "concat_rows");
}

/// Inverted dropout. Identity (the same Var) when not training or when rate is 0.
inline Var dropout(const Var& x, double rate, Rng* rng, bool training) {
    if (!training || rate <= 0.0) {
        return x;
    }
    require(rate < 1.0, ErrorKind::InvalidArgument, "dropout rate must be < 1");
    require(rng != nullptr, ErrorKind::InvalidArgument, "dropout in training mode needs an rng");
    Tensor mask(x.shape());
    const double keep = 1.0 / (1.0 - rate);
    for (auto& v : mask.vec()) {
        v = rng->uniform() >= rate ? keep : 0.0;
    }
    return mul(x, Var::constant(std::move(mask)));
}

inline Var sum(const Var& x) {
    double s = 0.0;
    for (double v : x.value().vec()) {
        s += v;
    }
    return detail::make_op(Tensor::scalar(s), {x}, [](Node& self) {
        Tensor* d = detail::pgrad(self, 0);
        for (auto& v : d->vec()) {
            v += self.grad[0];
        }
    }, "sum");
}

inline Var mean(const Var& x) { return scale(sum(x), 1.0 / static_cast<double>(x.value().size())); }

/// x W + b
inline Var dense(const Var& x, const Var& weight, const Var& bias) { return add_bias(matmul(x, weight), bias); }

/// Plain (non-differentiable) row-wise softmax for inference paths.
inline std::vector<double> softmax_values(std::span<const double> logits) {
    std::vector<double> p(logits.begin(), logits.end());
    const double mx = *std::max_element(p.begin(), p.end());
    double s = 0.0;
    for (auto& v : p) {
        v = std::exp(v - mx);
        s += v;
    }
    for (auto& v : p) {
        v /= s;
    }
    return p;
}

}  // namespace speechdx::nn
