#pragma once

#include <cstdint>
#include <cstring>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "speechdx/nn/autograd.hpp"
#include "speechdx/rng.hpp"

namespace speechdx::nn {

/// Named trainable tensors in registration order. Order is part of the contract: the
/// optimizer state, snapshots and checkpoints all index parameters by position.
class ParamSet {
public:
    Var add(const std::string& name, Tensor init, bool trainable = true) {
        if (index_.count(name)) {
            fail(ErrorKind::InvalidArgument, "duplicate parameter name '" + name + "'");
        }
        index_.emplace(name, items_.size());
        items_.emplace_back(name, Var::leaf(std::move(init), trainable));
        return items_.back().second;
    }

    bool contains(const std::string& name) const { return index_.count(name) != 0; }

    Var get(const std::string& name) const {
        const auto it = index_.find(name);
        if (it == index_.end()) {
            fail(ErrorKind::InvalidArgument, "no parameter named '" + name + "'");
        }
        return items_[it->second].second;
    }

    const std::vector<std::pair<std::string, Var>>& items() const { return items_; }
    std::size_t size() const { return items_.size(); }

    std::size_t scalar_count() const {
        std::size_t n = 0;
        for (const auto& [_, v] : items_) {
            n += v.value().size();
        }
        return n;
    }

    void zero_grad() {
        for (auto& [_, v] : items_) {
            v.zero_grad();
        }
    }

    /// Marks every parameter whose name starts with `prefix` as (non-)trainable.
    void set_trainable(const std::string& prefix, bool trainable) {
        for (auto& [name, v] : items_) {
            if (name.rfind(prefix, 0) == 0) {
                v.set_requires_grad(trainable);
            }
        }
    }

    std::vector<Tensor> snapshot() const {
        std::vector<Tensor> out;
        out.reserve(items_.size());
        for (const auto& [_, v] : items_) {
            out.push_back(v.value());
        }
        return out;
    }

    void restore(const std::vector<Tensor>& snap) {
        if (snap.size() != items_.size()) {
            fail(ErrorKind::ShapeMismatch, "snapshot has " + std::to_string(snap.size()) + " tensors, expected " +
                                               std::to_string(items_.size()));
        }
        for (std::size_t i = 0; i < snap.size(); ++i) {
            Var v = items_[i].second;
            if (!snap[i].same_shape(v.value())) {
                fail(ErrorKind::ShapeMismatch, "snapshot shape mismatch for '" + items_[i].first + "'");
            }
            v.mutable_value() = snap[i];
        }
    }

    /// Content digest over names, shapes and the exact bit patterns of all values.
    std::uint64_t digest(const std::string& prefix = "") const {
        std::uint64_t h = 0xcbf29ce484222325ULL;
        for (const auto& [name, v] : items_) {
            if (name.rfind(prefix, 0) != 0) {
                continue;
            }
            h = fnv1a64(name, h);
            for (std::size_t d : v.shape()) {
                h = splitmix64(h ^ d);
            }
            const auto& data = v.value().vec();
            h = fnv1a64(std::string_view(reinterpret_cast<const char*>(data.data()), data.size() * sizeof(double)), h);
        }
        return h;
    }

private:
    std::vector<std::pair<std::string, Var>> items_;
    std::unordered_map<std::string, std::size_t> index_;
};

inline Tensor uniform_tensor(Shape shape, double bound, Rng& rng) {
    Tensor t(std::move(shape));
    for (auto& x : t.vec()) {
        x = rng.uniform(-bound, bound);
    }
    return t;
}

inline Tensor normal_tensor(Shape shape, double stddev, Rng& rng) {
    Tensor t(std::move(shape));
    for (auto& x : t.vec()) {
        x = rng.normal(0.0, stddev);
    }
    return t;
}

}  // namespace speechdx::nn
