#pragma once

// Run manifests: every CLI stage records what it read, what it wrote and the options that
// shaped it. Paths are stored relative to the manifest so a copied run directory still
// verifies, and so two runs in different directories produce identical manifests.

#include <algorithm>
#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>
#include <openssl/evp.h>
#include <zlib.h>

#include "speechdx/error.hpp"

namespace speechdx::cli {

namespace fs = std::filesystem;

inline constexpr int kManifestVersion = 1;
inline constexpr const char* kToolVersion = "0.1.0";

inline std::string to_hex(const unsigned char* p, std::size_t n) {
    static constexpr char digits[] = "0123456789abcdef";
    std::string out;
    out.reserve(2 * n);
    for (std::size_t i = 0; i < n; ++i) {
        out += digits[p[i] >> 4];
        out += digits[p[i] & 15];
    }
    return out;
}

class Sha256 {
public:
    Sha256() : ctx_(EVP_MD_CTX_new()) {
        if (!ctx_ || EVP_DigestInit_ex(ctx_, EVP_sha256(), nullptr) != 1) {
            fail(ErrorKind::Io, "cannot initialise SHA-256");
        }
    }
    ~Sha256() { EVP_MD_CTX_free(ctx_); }
    Sha256(const Sha256&) = delete;
    Sha256& operator=(const Sha256&) = delete;

    void update(const void* data, std::size_t n) { EVP_DigestUpdate(ctx_, data, n); }

    std::string hex() {
        std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
        unsigned int len = 0;
        EVP_DigestFinal_ex(ctx_, md.data(), &len);
        return to_hex(md.data(), len);
    }

private:
    EVP_MD_CTX* ctx_;
};

inline std::string sha256_hex(std::string_view data) {
    Sha256 h;
    h.update(data.data(), data.size());
    return h.hex();
}

inline std::string sha256_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        fail(ErrorKind::Io, "cannot read " + path.string());
    }
    Sha256 h;
    std::array<char, 1 << 16> buf{};
    while (in) {
        in.read(buf.data(), buf.size());
        h.update(buf.data(), static_cast<std::size_t>(in.gcount()));
    }
    return h.hex();
}

/// Lines of a text file; files ending in ".gz" are decompressed on the fly. Trailing '\r'
/// is dropped.
inline std::vector<std::string> read_lines(const fs::path& path) {
    std::vector<std::string> out;
    auto push = [&out](std::string line) {
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        out.push_back(std::move(line));
    };
    if (path.extension() == ".gz") {
        gzFile f = gzopen(path.string().c_str(), "rb");
        if (!f) {
            fail(ErrorKind::Io, "cannot read " + path.string());
        }
        std::string pending;
        std::array<char, 1 << 16> buf{};
        int n = 0;
        while ((n = gzread(f, buf.data(), static_cast<unsigned>(buf.size()))) > 0) {
            pending.append(buf.data(), static_cast<std::size_t>(n));
            std::size_t start = 0;
            for (std::size_t nl; (nl = pending.find('\n', start)) != std::string::npos; start = nl + 1) {
                push(pending.substr(start, nl - start));
            }
            pending.erase(0, start);
        }
        const bool bad = n < 0;
        gzclose(f);
        if (bad) {
            fail(ErrorKind::Io, "corrupt gzip stream in " + path.string());
        }
        if (!pending.empty()) {
            push(std::move(pending));
        }
        return out;
    }
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        fail(ErrorKind::Io, "cannot read " + path.string());
    }
    for (std::string line; std::getline(in, line);) {
        push(std::move(line));
    }
    return out;
}

/// Files under `p` in sorted order, or `p` itself when it is a file.
inline std::vector<fs::path> expand(const fs::path& p) {
    if (!fs::is_directory(p)) {
        return {p};
    }
    std::vector<fs::path> out;
    for (const auto& e : fs::recursive_directory_iterator(p)) {
        if (e.is_regular_file()) {
            out.push_back(e.path());
        }
    }
    std::sort(out.begin(), out.end());
    return out;
}

struct RunManifest {
    std::string stage;
    std::uint64_t seed = 0;
    nlohmann::ordered_json config = nlohmann::ordered_json::object();
    std::vector<fs::path> inputs;
    std::vector<fs::path> outputs;
    nlohmann::ordered_json summary = nlohmann::ordered_json::object();
};

inline std::string relative_to(const fs::path& p, const fs::path& base) {
    return fs::relative(fs::absolute(p), fs::absolute(base)).generic_string();
}

inline nlohmann::ordered_json digests(const std::vector<fs::path>& paths, const fs::path& base) {
    std::vector<fs::path> files;
    for (const auto& p : paths) {
        for (auto& f : expand(p)) {
            files.push_back(std::move(f));
        }
    }
    nlohmann::ordered_json out = nlohmann::ordered_json::array();
    for (const auto& f : files) {
        out.push_back({{"path", relative_to(f, base)}, {"sha256", sha256_file(f)}});
    }
    return out;
}

inline void write_manifest(const fs::path& path, const RunManifest& m) {
    const auto base = fs::absolute(path).parent_path();
    nlohmann::ordered_json j;
    j["version"] = kManifestVersion;
    j["tool_version"] = kToolVersion;
    j["stage"] = m.stage;
    j["seed"] = m.seed;
    j["config"] = m.config;
    j["config_sha256"] = sha256_hex(m.config.dump());
    j["inputs"] = digests(m.inputs, base);
    j["outputs"] = digests(m.outputs, base);
    j["summary"] = m.summary;
    std::ofstream out(path, std::ios::binary);
    out << j.dump(2) << '\n';
    if (!out) {
        fail(ErrorKind::Io, "cannot write " + path.string());
    }
}

/// Recomputes every recorded digest. Returns the number of files checked.
inline std::size_t verify_manifest(const fs::path& path) {
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
    if (j.value("version", -1) != kManifestVersion) {
        fail(ErrorKind::VersionMismatch, path.string() + ": run manifest version is not " +
                                             std::to_string(kManifestVersion));
    }
    const auto base = fs::absolute(path).parent_path();
    std::size_t checked = 0;
    for (const char* side : {"inputs", "outputs"}) {
        for (const auto& entry : j.at(side)) {
            const auto file = base / entry.at("path").get<std::string>();
            if (!fs::exists(file)) {
                fail(ErrorKind::Io, path.string() + ": recorded file " + file.string() + " is missing");
            }
            if (sha256_file(file) != entry.at("sha256").get<std::string>()) {
                fail(ErrorKind::SchemaViolation,
                     path.string() + ": digest of " + entry.at("path").get<std::string>() + " does not match");
            }
            ++checked;
        }
    }
    return checked;
}

}  // namespace speechdx::cli
