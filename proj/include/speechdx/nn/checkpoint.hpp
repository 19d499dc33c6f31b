#pragma once

// Checkpoint = JSON manifest + little-endian float64 payload next to it.
//
//   {"version": 1, "kind": "...", "config": {...}, "dtype": "float64",
//    "payload": "<stem>.bin", "payload_fnv1a64": "<hex>",
//    "tensors": [{"name": "...", "shape": [...], "offset": <element offset>}, ...]}

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "speechdx/nn/params.hpp"

namespace speechdx::nn {

inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
    std::string kind;
    nlohmann::ordered_json config;
    std::vector<std::pair<std::string, Tensor>> tensors;

    const Tensor* find(const std::string& name) const {
        for (const auto& [n, t] : tensors) {
            if (n == name) {
                return &t;
            }
        }
        return nullptr;
    }
};

namespace detail {

inline void append_le(std::string& out, double x) {
    auto bits = std::bit_cast<std::uint64_t>(x);
    for (int i = 0; i < 8; ++i) {
        out.push_back(static_cast<char>(bits & 0xff));
        bits >>= 8;
    }
}

inline double read_le(const char* p) {
    std::uint64_t bits = 0;
    for (int i = 7; i >= 0; --i) {
        bits = (bits << 8) | static_cast<unsigned char>(p[i]);
    }
    return std::bit_cast<double>(bits);
}

inline std::string hex64(std::uint64_t v) {
    std::ostringstream s;
    s << std::hex;
    s.width(16);
    s.fill('0');
    s << v;
    return s.str();
}

}  // namespace detail

inline void write_checkpoint(const std::filesystem::path& manifest_path, const Checkpoint& ck) {
    std::string payload;
    nlohmann::ordered_json tensors = nlohmann::ordered_json::array();
    std::size_t offset = 0;
    for (const auto& [name, t] : ck.tensors) {
        for (double x : t.vec()) {
            detail::append_le(payload, x);
        }
        tensors.push_back({{"name", name}, {"shape", t.shape()}, {"offset", offset}});
        offset += t.size();
    }
    auto payload_path = manifest_path;
    payload_path.replace_extension(".bin");
    nlohmann::ordered_json j;
    j["version"] = kCheckpointVersion;
    j["kind"] = ck.kind;
    j["config"] = ck.config;
    j["dtype"] = "float64";
    j["payload"] = payload_path.filename().string();
    j["payload_fnv1a64"] = detail::hex64(fnv1a64(payload));
    j["tensors"] = std::move(tensors);

    std::ofstream bin(payload_path, std::ios::binary);
    bin.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    std::ofstream man(manifest_path, std::ios::binary);
    man << j.dump(1) << '\n';
    if (!bin || !man) {
        fail(ErrorKind::Io, "cannot write checkpoint " + manifest_path.string());
    }
}

inline Checkpoint read_checkpoint(const std::filesystem::path& manifest_path) {
    std::ifstream man(manifest_path, std::ios::binary);
    if (!man) {
        fail(ErrorKind::Io, "cannot read checkpoint " + manifest_path.string());
    }
    nlohmann::ordered_json j;
    try {
        man >> j;
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::SchemaViolation, manifest_path.string() + ": " + e.what());
    }
    if (j.value("version", -1) != kCheckpointVersion) {
        fail(ErrorKind::VersionMismatch, manifest_path.string() + ": unsupported checkpoint version");
    }
    if (j.value("dtype", "") != "float64") {
        fail(ErrorKind::SchemaViolation, manifest_path.string() + ": dtype must be float64");
    }
    const auto payload_path = manifest_path.parent_path() / j.at("payload").get<std::string>();
    std::ifstream bin(payload_path, std::ios::binary);
    if (!bin) {
        fail(ErrorKind::Io, "cannot read checkpoint payload " + payload_path.string());
    }
    const std::string payload((std::istreambuf_iterator<char>(bin)), std::istreambuf_iterator<char>());
    if (detail::hex64(fnv1a64(payload)) != j.value("payload_fnv1a64", "")) {
        fail(ErrorKind::SchemaViolation, payload_path.string() + ": payload digest mismatch");
    }
    Checkpoint ck;
    ck.kind = j.value("kind", "");
    ck.config = j.value("config", nlohmann::ordered_json::object());
    for (const auto& entry : j.at("tensors")) {
        auto shape = entry.at("shape").get<Shape>();
        const auto offset = entry.at("offset").get<std::size_t>();
        const std::size_t n = shape_size(shape);
        if ((offset + n) * 8 > payload.size()) {
            fail(ErrorKind::SchemaViolation, "tensor '" + entry.at("name").get<std::string>() + "' overruns payload");
        }
        std::vector<double> data(n);
        for (std::size_t i = 0; i < n; ++i) {
            data[i] = detail::read_le(payload.data() + (offset + i) * 8);
        }
        ck.tensors.emplace_back(entry.at("name").get<std::string>(), Tensor(std::move(shape), std::move(data)));
    }
    return ck;
}

inline Checkpoint make_checkpoint(std::string kind, nlohmann::ordered_json config, const ParamSet& params) {
    Checkpoint ck{std::move(kind), std::move(config), {}};
    for (const auto& [name, v] : params.items()) {
        ck.tensors.emplace_back(name, v.value());
    }
    return ck;
}

/// Copies checkpoint tensors into `params`. With an empty prefix every parameter must be
/// present; with a prefix only parameters under it are loaded (e.g. an encoder into a
/// fresh classifier). Shapes must match exactly.
inline void load_params(const Checkpoint& ck, ParamSet& params, const std::string& prefix = "") {
    std::size_t loaded = 0;
    for (const auto& [name, v] : params.items()) {
        if (name.rfind(prefix, 0) != 0) {
            continue;
        }
        const Tensor* t = ck.find(name);
        if (!t) {
            fail(ErrorKind::ShapeMismatch, "checkpoint lacks parameter '" + name + "'");
        }
        if (t->shape() != v.shape()) {
            fail(ErrorKind::ShapeMismatch, "parameter '" + name + "' has shape " + shape_string(t->shape()) +
                                               " in checkpoint, model expects " + shape_string(v.shape()));
        }
        Var target = v;
        target.mutable_value() = *t;
        ++loaded;
    }
    if (loaded == 0) {
        fail(ErrorKind::ShapeMismatch, "no parameters matched prefix '" + prefix + "'");
    }
}

}  // namespace speechdx::nn
