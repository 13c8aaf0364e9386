// Binary parameter checkpoints. Little-endian, fixed layout:
//   "SDCF" u32_version model_config(6 x u32) u64_group_count
//   per group: u32 name_len, name bytes, u8 decay, u8 norm_gain,
//              u64 rows, u64 cols, rows*cols x u16 bf16 bits
#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>

#include "sdcforge/model.hpp"

namespace sdcforge {

inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

template <typename T>
void put(std::ofstream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::ifstream& in, const std::string& path) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw std::runtime_error("checkpoint: truncated file " + path);
    return v;
}

}  // namespace detail

inline void save_params(const std::string& path, const ParameterSet& params) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("checkpoint: cannot open " + path);
    out.write("SDCF", 4);
    detail::put<std::uint32_t>(out, kCheckpointVersion);
    detail::put<std::uint32_t>(out, params.config.vocab_size);
    detail::put<std::uint32_t>(out, params.config.d_model);
    detail::put<std::uint32_t>(out, params.config.n_heads);
    detail::put<std::uint32_t>(out, params.config.n_layers);
    detail::put<std::uint32_t>(out, params.config.seq_len);
    detail::put<std::uint32_t>(out, params.config.ffn_mult);
    detail::put<std::uint64_t>(out, params.groups.size());
    for (const auto& g : params.groups) {
        detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(g.name.size()));
        out.write(g.name.data(), static_cast<std::streamsize>(g.name.size()));
        detail::put<std::uint8_t>(out, g.decay ? 1 : 0);
        detail::put<std::uint8_t>(out, g.norm_gain ? 1 : 0);
        detail::put<std::uint64_t>(out, g.w.rows);
        detail::put<std::uint64_t>(out, g.w.cols);
        out.write(reinterpret_cast<const char*>(g.w.data.data()),
                  static_cast<std::streamsize>(g.w.data.size() * sizeof(Bf16)));
    }
    if (!out) throw std::runtime_error("checkpoint: write failed for " + path);
}

inline ParameterSet load_params(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("checkpoint: cannot open " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "SDCF", 4) != 0) {
        throw std::runtime_error("checkpoint: bad magic in " + path);
    }
    const auto version = detail::get<std::uint32_t>(in, path);
    if (version != kCheckpointVersion) {
        throw std::runtime_error("checkpoint: unsupported version in " + path);
    }
    ParameterSet ps;
    ps.config.vocab_size = detail::get<std::uint32_t>(in, path);
    ps.config.d_model = detail::get<std::uint32_t>(in, path);
    ps.config.n_heads = detail::get<std::uint32_t>(in, path);
    ps.config.n_layers = detail::get<std::uint32_t>(in, path);
    ps.config.seq_len = detail::get<std::uint32_t>(in, path);
    ps.config.ffn_mult = detail::get<std::uint32_t>(in, path);
    const auto n_groups = detail::get<std::uint64_t>(in, path);
    ps.groups.resize(n_groups);
    for (auto& g : ps.groups) {
        const auto name_len = detail::get<std::uint32_t>(in, path);
        g.name.resize(name_len);
        in.read(g.name.data(), name_len);
        g.decay = detail::get<std::uint8_t>(in, path) != 0;
        g.norm_gain = detail::get<std::uint8_t>(in, path) != 0;
        const auto rows = detail::get<std::uint64_t>(in, path);
        const auto cols = detail::get<std::uint64_t>(in, path);
        g.w = Bf16Matrix(rows, cols);
        in.read(reinterpret_cast<char*>(g.w.data.data()),
                static_cast<std::streamsize>(g.w.data.size() * sizeof(Bf16)));
        if (!in) throw std::runtime_error("checkpoint: truncated file " + path);
    }
    return ps;
}

}  // namespace sdcforge
