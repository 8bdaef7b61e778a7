#pragma once

// Versioned binary checkpoint: magic "UFL1", config digest, then
// (name, shape, little-endian float32 values) per parameter.

#include <cstring>
#include <fstream>

#include "uflow/optim.hpp"

namespace uflow {

inline uint64_t fnv1a(const std::string& s) {
    uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

namespace detail {
template <class T>
void write_pod(std::ostream& os, const T& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
template <class T>
void read_pod(std::istream& is, T& v) {
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
}
}  // namespace detail

inline void save_checkpoint(const std::string& path, const ParamStore& params,
                            uint64_t config_digest) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("checkpoint: cannot open for writing: " + path);
    os.write("UFL1", 4);
    detail::write_pod(os, config_digest);
    uint32_t count = static_cast<uint32_t>(params.items.size());
    detail::write_pod(os, count);
    for (const auto& p : params.items) {
        uint32_t nlen = static_cast<uint32_t>(p.name.size());
        detail::write_pod(os, nlen);
        os.write(p.name.data(), nlen);
        uint32_t ndim = static_cast<uint32_t>(p.value.shape.size());
        detail::write_pod(os, ndim);
        for (int d : p.value.shape) detail::write_pod(os, static_cast<uint32_t>(d));
        os.write(reinterpret_cast<const char*>(p.value.data.data()),
                 static_cast<std::streamsize>(p.value.data.size() * sizeof(float)));
    }
    if (!os) throw std::runtime_error("checkpoint: write failed: " + path);
}

// Loads values into an existing store; shapes and names must match.
inline uint64_t load_checkpoint(const std::string& path, ParamStore& params) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("checkpoint: cannot open: " + path);
    char magic[4];
    is.read(magic, 4);
    if (std::memcmp(magic, "UFL1", 4) != 0)
        throw std::runtime_error("checkpoint: bad magic in " + path);
    uint64_t digest = 0;
    detail::read_pod(is, digest);
    uint32_t count = 0;
    detail::read_pod(is, count);
    for (uint32_t i = 0; i < count; ++i) {
        uint32_t nlen = 0;
        detail::read_pod(is, nlen);
        std::string name(nlen, '\0');
        is.read(name.data(), nlen);
        uint32_t ndim = 0;
        detail::read_pod(is, ndim);
        std::vector<int> shape(ndim);
        for (auto& d : shape) {
            uint32_t u = 0;
            detail::read_pod(is, u);
            d = static_cast<int>(u);
        }
        Parameter* p = params.find(name);
        if (!p) throw std::runtime_error("checkpoint: unknown parameter " + name);
        if (p->value.shape != shape)
            throw std::runtime_error("checkpoint: shape mismatch for " + name);
        is.read(reinterpret_cast<char*>(p->value.data.data()),
                static_cast<std::streamsize>(p->value.data.size() * sizeof(float)));
    }
    if (!is) throw std::runtime_error("checkpoint: truncated file: " + path);
    return digest;
}

}  // namespace uflow
