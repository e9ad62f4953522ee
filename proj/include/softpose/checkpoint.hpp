#pragma once

// Checkpoint persistence: a text manifest (key=value lines: format version,
// element type, endianness, config fields, then per-array name/shape/byte
// offset) plus a flat little-endian binary blob holding every parameter and
// batch-norm running-statistic array in manifest order.  Save -> load -> save
// reproduces both files byte-identically.

#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "softpose/model.hpp"

namespace softpose {
namespace detail {

inline bool little_endian() {
    const uint16_t probe = 1;
    uint8_t first;
    std::memcpy(&first, &probe, 1);
    return first == 1;
}

/// Shortest decimal form that round-trips the value exactly.
inline std::string real_str(real v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", static_cast<double>(v));
    return buf;
}

struct ManifestArray {
    std::string name;
    Shape shape;
    int64_t offset = 0; // bytes into the blob
};

struct Manifest {
    std::vector<std::pair<std::string, std::string>> header;
    std::vector<ManifestArray> arrays;

    std::string value(const std::string& key) const {
        for (const auto& [k, v] : header)
            if (k == key) return v;
        throw ConfigError("checkpoint manifest is missing key '" + key + "'");
    }
};

inline void write_manifest_blob(const std::string& base, Manifest manifest,
                                const std::vector<const std::vector<real>*>& data) {
    detail::check(manifest.arrays.size() == data.size(),
                  "write_manifest_blob: array metadata/data mismatch");
    if (!little_endian())
        throw ConfigError("checkpoints are little-endian; this platform is not supported");

    int64_t offset = 0;
    for (size_t i = 0; i < manifest.arrays.size(); ++i) {
        manifest.arrays[i].offset = offset;
        offset += static_cast<int64_t>(data[i]->size() * sizeof(real));
    }

    std::ostringstream text;
    for (const auto& [k, v] : manifest.header) text << k << "=" << v << "\n";
    text << "arrays=" << manifest.arrays.size() << "\n";
    for (size_t i = 0; i < manifest.arrays.size(); ++i) {
        const auto& a = manifest.arrays[i];
        text << "array." << i << ".name=" << a.name << "\n";
        text << "array." << i << ".shape=";
        for (size_t d = 0; d < a.shape.size(); ++d) text << (d ? "," : "") << a.shape[d];
        text << "\n";
        text << "array." << i << ".offset=" << a.offset << "\n";
    }
    text << "blob_bytes=" << offset << "\n";

    {
        std::ofstream mf(base + ".manifest", std::ios::binary | std::ios::trunc);
        if (!mf) throw ConfigError("cannot write " + base + ".manifest");
        mf << text.str();
    }
    std::ofstream bf(base + ".blob", std::ios::binary | std::ios::trunc);
    if (!bf) throw ConfigError("cannot write " + base + ".blob");
    for (const auto* arr : data)
        bf.write(reinterpret_cast<const char*>(arr->data()),
                 static_cast<std::streamsize>(arr->size() * sizeof(real)));
    if (!bf) throw ConfigError("failed writing " + base + ".blob");
}

struct LoadedArrays {
    Manifest manifest;
    std::vector<std::vector<real>> data;
};

inline LoadedArrays read_manifest_blob(const std::string& base) {
    if (!little_endian())
        throw ConfigError("checkpoints are little-endian; this platform is not supported");
    std::ifstream mf(base + ".manifest", std::ios::binary);
    if (!mf) throw ConfigError("cannot open " + base + ".manifest");

    LoadedArrays out;
    std::map<std::string, std::string> kv;
    std::string line;
    int lineno = 0;
    while (std::getline(mf, line)) {
        ++lineno;
        if (line.empty()) continue;
        const size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(base + ".manifest:" + std::to_string(lineno) +
                              ": expected key=value");
        const std::string key = line.substr(0, eq);
        const std::string val = line.substr(eq + 1);
        kv[key] = val;
        if (key.rfind("array.", 0) != 0 && key != "arrays" && key != "blob_bytes")
            out.manifest.header.emplace_back(key, val);
    }
    auto need = [&](const std::string& key) {
        auto it = kv.find(key);
        if (it == kv.end())
            throw ConfigError(base + ".manifest: missing key '" + key + "'");
        return it->second;
    };
    const long n_arrays = std::stol(need("arrays"));
    for (long i = 0; i < n_arrays; ++i) {
        const std::string p = "array." + std::to_string(i) + ".";
        ManifestArray a;
        a.name = need(p + "name");
        std::stringstream ss(need(p + "shape"));
        std::string tok;
        while (std::getline(ss, tok, ',')) a.shape.push_back(std::stoi(tok));
        a.offset = std::stoll(need(p + "offset"));
        out.manifest.arrays.push_back(std::move(a));
    }
    if (need("elem_type") != (sizeof(real) == 8 ? "f64" : "f32"))
        throw ConfigError(base + ": element type does not match this build");
    if (need("endianness") != "little")
        throw ConfigError(base + ": unsupported endianness");

    std::ifstream bf(base + ".blob", std::ios::binary);
    if (!bf) throw ConfigError("cannot open " + base + ".blob");
    for (const auto& a : out.manifest.arrays) {
        std::vector<real> v(static_cast<size_t>(numel(a.shape)));
        bf.seekg(a.offset);
        bf.read(reinterpret_cast<char*>(v.data()),
                static_cast<std::streamsize>(v.size() * sizeof(real)));
        if (!bf) throw ConfigError(base + ".blob: truncated while reading " + a.name);
        out.data.push_back(std::move(v));
    }
    return out;
}

inline std::vector<std::pair<std::string, std::string>> config_header(const ModelConfig& cfg) {
    return {
        {"softpose_checkpoint", "1"},
        {"elem_type", sizeof(real) == 8 ? "f64" : "f32"},
        {"endianness", "little"},
        {"config.K", std::to_string(cfg.K)},
        {"config.n_joints", std::to_string(cfg.n_joints)},
        {"config.n_context", std::to_string(cfg.n_context)},
        {"config.alpha", real_str(cfg.alpha)},
        {"config.input_size", std::to_string(cfg.input_size)},
        {"config.base_resolution", std::to_string(cfg.base_resolution)},
        {"config.width_multiplier", real_str(cfg.width_multiplier)},
        {"config.num_resolutions", std::to_string(cfg.num_resolutions)},
        {"config.growth", std::to_string(cfg.growth)},
        {"config.batch_norm", std::to_string(cfg.batch_norm ? 1 : 0)},
        {"config.seed", std::to_string(cfg.seed)},
    };
}

inline ModelConfig config_from_header(const Manifest& m) {
    ModelConfig cfg;
    cfg.K = std::stoi(m.value("config.K"));
    cfg.n_joints = std::stoi(m.value("config.n_joints"));
    cfg.n_context = std::stoi(m.value("config.n_context"));
    cfg.alpha = static_cast<real>(std::stod(m.value("config.alpha")));
    cfg.input_size = std::stoi(m.value("config.input_size"));
    cfg.base_resolution = std::stoi(m.value("config.base_resolution"));
    cfg.width_multiplier = static_cast<real>(std::stod(m.value("config.width_multiplier")));
    cfg.num_resolutions = std::stoi(m.value("config.num_resolutions"));
    cfg.growth = std::stoi(m.value("config.growth"));
    cfg.batch_norm = m.value("config.batch_norm") == "1";
    cfg.seed = std::stoull(m.value("config.seed"));
    return cfg;
}

} // namespace detail

/// Write model config, parameters and batch-norm buffers to
/// <base>.manifest + <base>.blob.
inline void save_checkpoint(const std::string& base, PoseModel& model) {
    detail::Manifest m;
    m.header = detail::config_header(model.config());
    std::vector<const std::vector<real>*> data;
    auto push = [&](ParamList& list) {
        for (auto& nt : list) {
            m.arrays.push_back({nt.name, nt.tensor.shape(), 0});
            data.push_back(&nt.tensor.node()->value);
        }
    };
    push(model.parameters());
    push(model.buffers());
    detail::write_manifest_blob(base, std::move(m), data);
}

/// Rebuild a model from <base>.manifest + <base>.blob.
inline PoseModel load_checkpoint(const std::string& base) {
    detail::LoadedArrays loaded = detail::read_manifest_blob(base);
    if (loaded.manifest.value("softpose_checkpoint") != "1")
        throw ConfigError(base + ": unsupported checkpoint format version");
    PoseModel model(detail::config_from_header(loaded.manifest));

    std::map<std::string, Tensor> by_name;
    for (auto& nt : model.parameters()) by_name.emplace(nt.name, nt.tensor);
    for (auto& nt : model.buffers()) by_name.emplace(nt.name, nt.tensor);
    if (by_name.size() != loaded.manifest.arrays.size())
        throw ConfigError(base + ": checkpoint array count does not match the model");
    for (size_t i = 0; i < loaded.manifest.arrays.size(); ++i) {
        const auto& a = loaded.manifest.arrays[i];
        auto it = by_name.find(a.name);
        if (it == by_name.end())
            throw ConfigError(base + ": unknown array '" + a.name + "'");
        if (it->second.shape() != a.shape)
            throw ConfigError(base + ": shape mismatch for '" + a.name + "'");
        std::copy(loaded.data[i].begin(), loaded.data[i].end(), it->second.data());
    }
    return model;
}

} // namespace softpose
