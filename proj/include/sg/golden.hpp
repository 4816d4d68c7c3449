#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>

#include "sg/error.hpp"
#include "sg/linalg.hpp"

namespace sg {

// Golden logit files: an 8-byte header holding V as a little-endian unsigned
// 64-bit integer, followed by V little-endian 64-bit floats.

namespace detail {

inline std::uint64_t to_little_endian(std::uint64_t v) noexcept {
    if constexpr (std::endian::native == std::endian::little) return v;
    std::uint64_t out = 0;
    for (int i = 0; i < 8; ++i) out = (out << 8) | ((v >> (8 * i)) & 0xFFU);
    return out;
}

} // namespace detail

inline void write_golden_logits(const std::filesystem::path& path, const Vec& logits) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw SchemaError("cannot open golden file for writing: " + path.string());
    std::uint64_t header = detail::to_little_endian(static_cast<std::uint64_t>(logits.size()));
    out.write(reinterpret_cast<const char*>(&header), sizeof(header));
    for (double value : logits) {
        std::uint64_t bits;
        std::memcpy(&bits, &value, sizeof(bits));
        bits = detail::to_little_endian(bits);
        out.write(reinterpret_cast<const char*>(&bits), sizeof(bits));
    }
    if (!out) throw SchemaError("short write to golden file: " + path.string());
}

inline Vec read_golden_logits(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw SchemaError("cannot open golden file: " + path.string());
    std::uint64_t header = 0;
    in.read(reinterpret_cast<char*>(&header), sizeof(header));
    if (!in) throw SchemaError("golden file too short for header: " + path.string());
    const std::uint64_t count = detail::to_little_endian(header);
    Vec logits(count);
    for (std::uint64_t i = 0; i < count; ++i) {
        std::uint64_t bits = 0;
        in.read(reinterpret_cast<char*>(&bits), sizeof(bits));
        if (!in) throw SchemaError("golden file truncated at entry " + std::to_string(i));
        bits = detail::to_little_endian(bits);
        double value;
        std::memcpy(&value, &bits, sizeof(value));
        logits[i] = value;
    }
    return logits;
}

} // namespace sg
