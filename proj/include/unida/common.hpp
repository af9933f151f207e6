#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace unida {

using Rng = std::mt19937_64;

/// Raised when a loss, gradient or parameter becomes NaN/Inf during training.
class TrainingDiverged : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Independent generator for a (seed, tag...) lineage. Tags separate streams
/// such as per-class rendering, batching and initialization.
inline Rng derive_rng(std::uint64_t seed, std::initializer_list<std::uint64_t> tags = {}) {
    std::vector<std::uint32_t> words;
    words.reserve(2 + 2 * tags.size());
    auto push = [&](std::uint64_t v) {
        words.push_back(static_cast<std::uint32_t>(v & 0xffffffffu));
        words.push_back(static_cast<std::uint32_t>(v >> 32));
    };
    push(seed);
    for (auto t : tags) push(t);
    std::seed_seq seq(words.begin(), words.end());
    return Rng(seq);
}

inline bool all_finite(std::span<const double> values) {
    for (double v : values)
        if (!std::isfinite(v)) return false;
    return true;
}

// Little-endian float64 streams. Byte order is fixed regardless of host.

inline void write_f64_le(std::ostream& out, std::span<const double> values) {
    std::vector<unsigned char> buf(values.size() * 8);
    for (std::size_t i = 0; i < values.size(); ++i) {
        auto bits = std::bit_cast<std::uint64_t>(values[i]);
        for (int b = 0; b < 8; ++b)
            buf[i * 8 + b] = static_cast<unsigned char>((bits >> (8 * b)) & 0xffu);
    }
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!out) throw std::runtime_error("write failed");
}

inline std::vector<double> read_f64_le(std::istream& in, std::size_t count) {
    std::vector<unsigned char> buf(count * 8);
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (static_cast<std::size_t>(in.gcount()) != buf.size())
        throw std::runtime_error("binary file truncated: expected " + std::to_string(count) + " float64 values");
    std::vector<double> out(count);
    for (std::size_t i = 0; i < count; ++i) {
        std::uint64_t bits = 0;
        for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(buf[i * 8 + b]) << (8 * b);
        out[i] = std::bit_cast<double>(bits);
    }
    return out;
}

inline std::ofstream open_for_write(const std::filesystem::path& path, bool binary = false) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, binary ? std::ios::binary | std::ios::trunc : std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
    return out;
}

inline std::ifstream open_for_read(const std::filesystem::path& path, bool binary = false) {
    std::ifstream in(path, binary ? std::ios::binary : std::ios::in);
    if (!in) throw std::runtime_error("cannot open for reading: " + path.string());
    return in;
}

}  // namespace unida
