#pragma once

// Named trainable-parameter store and the "SFCK" checkpoint container.
//
// SFCK layout: ASCII magic "SFCK", little-endian u32 tensor count, then per
// tensor — u16 name length, name bytes, u8 rank, u32 extents, little-endian
// f64 payload. An optional trailing text block (u32 length + bytes) carries a
// config snapshot for training checkpoints; plain model checkpoints omit it.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>

#include "sfrf/autodiff.hpp"

namespace sfrf {

struct ParamStore {
    // Ordered by name so iteration (optimizer steps, serialization) is
    // deterministic regardless of construction order.
    std::map<std::string, ad::Var> items;

    // Fan-in-scaled normal init: conv kernels use Ci*k*k, matrices the
    // trailing extent, everything else 1.
    ad::Var create(const std::string& name, const Shape& shape, Rng& rng) {
        std::size_t fan_in = 1;
        if (shape.size() == 4)
            fan_in = shape[1] * shape[2] * shape[3];
        else if (shape.size() >= 2)
            fan_in = shape.back();
        const double stddev = 1.0 / std::sqrt(static_cast<double>(fan_in));
        return insert(name, Tensor::random_normal(shape, rng, stddev));
    }

    ad::Var create_zero(const std::string& name, const Shape& shape) {
        return insert(name, Tensor(shape));
    }

    ad::Var insert(const std::string& name, Tensor value) {
        if (items.count(name))
            throw std::invalid_argument("duplicate parameter name: " + name);
        ad::Var v = ad::param(std::move(value));
        items.emplace(name, v);
        return v;
    }

    ad::Var at(const std::string& name) const {
        auto it = items.find(name);
        if (it == items.end()) throw std::out_of_range("no parameter named " + name);
        return it->second;
    }

    std::map<std::string, Tensor> snapshot() const {
        std::map<std::string, Tensor> out;
        for (const auto& [name, v] : items) out.emplace(name, v->value);
        return out;
    }

    // Overwrites every stored parameter from the map; throws on missing
    // names or shape drift so a stale checkpoint cannot half-load.
    void restore(const std::map<std::string, Tensor>& tensors) {
        for (auto& [name, v] : items) {
            auto it = tensors.find(name);
            if (it == tensors.end())
                throw std::runtime_error("checkpoint missing parameter " + name);
            if (it->second.shape != v->value.shape)
                throw std::runtime_error("checkpoint shape mismatch for " + name);
            v->value = it->second;
        }
    }
};

namespace sfck_detail {

inline void put_u32(std::ostream& out, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 24)};
    out.write(reinterpret_cast<char*>(b), 4);
}

inline std::uint32_t get_u32(std::istream& in) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline void put_f64(std::ostream& out, double v) {
    std::uint64_t u;
    std::memcpy(&u, &v, 8);
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(u >> (8 * i));
    out.write(reinterpret_cast<char*>(b), 8);
}

inline double get_f64(std::istream& in) {
    unsigned char b[8];
    in.read(reinterpret_cast<char*>(b), 8);
    std::uint64_t u = 0;
    for (int i = 0; i < 8; ++i) u |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    double v;
    std::memcpy(&v, &u, 8);
    return v;
}

}  // namespace sfck_detail

struct CheckpointData {
    std::map<std::string, Tensor> tensors;
    std::string config;  // empty when the file carries no text block
};

inline void save_checkpoint(const std::map<std::string, Tensor>& tensors,
                            const std::string& path, const std::string& config = "") {
    using namespace sfck_detail;
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    out.write("SFCK", 4);
    put_u32(out, static_cast<std::uint32_t>(tensors.size()));
    for (const auto& [name, t] : tensors) {
        if (name.size() > 0xffff) throw std::invalid_argument("parameter name too long");
        const std::uint16_t len = static_cast<std::uint16_t>(name.size());
        unsigned char lb[2] = {static_cast<unsigned char>(len),
                               static_cast<unsigned char>(len >> 8)};
        out.write(reinterpret_cast<char*>(lb), 2);
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        const unsigned char rank = static_cast<unsigned char>(t.rank());
        out.write(reinterpret_cast<const char*>(&rank), 1);
        for (std::size_t e : t.shape) put_u32(out, static_cast<std::uint32_t>(e));
        for (double v : t.data) put_f64(out, v);
    }
    if (!config.empty()) {
        put_u32(out, static_cast<std::uint32_t>(config.size()));
        out.write(config.data(), static_cast<std::streamsize>(config.size()));
    }
    if (!out) throw std::runtime_error("short write to " + path);
}

inline CheckpointData load_checkpoint(const std::string& path) {
    using namespace sfck_detail;
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "SFCK", 4) != 0)
        throw std::runtime_error(path + ": bad SFCK magic");
    const std::uint32_t count = get_u32(in);
    CheckpointData data;
    for (std::uint32_t i = 0; i < count; ++i) {
        unsigned char lb[2];
        in.read(reinterpret_cast<char*>(lb), 2);
        const std::size_t len = static_cast<std::size_t>(lb[0]) |
                                (static_cast<std::size_t>(lb[1]) << 8);
        std::string name(len, '\0');
        in.read(name.data(), static_cast<std::streamsize>(len));
        unsigned char rank;
        in.read(reinterpret_cast<char*>(&rank), 1);
        if (!in) throw std::runtime_error(path + ": truncated SFCK entry header");
        Shape shape(rank);
        for (auto& e : shape) e = get_u32(in);
        Tensor t(shape);
        for (auto& v : t.data) v = get_f64(in);
        if (!in) throw std::runtime_error(path + ": truncated SFCK payload for " + name);
        data.tensors.emplace(std::move(name), std::move(t));
    }
    if (in.peek() != EOF) {
        const std::uint32_t len = get_u32(in);
        data.config.resize(len);
        in.read(data.config.data(), static_cast<std::streamsize>(len));
        if (!in) throw std::runtime_error(path + ": truncated SFCK config block");
    }
    return data;
}

}  // namespace sfrf
