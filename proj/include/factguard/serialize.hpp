#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <string_view>

#include "factguard/errors.hpp"
#include "factguard/matrix.hpp"

namespace factguard {

inline std::uint64_t fnv1a64(std::string_view bytes) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

inline std::string hex64(std::uint64_t v) {
    std::ostringstream out;
    out << std::hex << std::setfill('0') << std::setw(16) << v;
    return out.str();
}

inline void write_u32_le(std::ostream& out, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 24)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t read_u32_le(std::istream& in) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (!in) throw ParseError("unexpected end of binary stream reading u32");
    return std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) | (std::uint32_t(b[2]) << 16) |
           (std::uint32_t(b[3]) << 24);
}

inline void write_f64_le(std::ostream& out, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(bits >> (8 * i));
    out.write(reinterpret_cast<const char*>(b), 8);
}

inline double read_f64_le(std::istream& in) {
    unsigned char b[8];
    in.read(reinterpret_cast<char*>(b), 8);
    if (!in) throw ParseError("unexpected end of binary stream reading f64");
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= std::uint64_t(b[i]) << (8 * i);
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
}

// Tensor on disk: u32 rows, u32 cols, then rows*cols little-endian float64
// values in row-major order.
inline void write_tensor(std::ostream& out, const RealMatrix& m) {
    write_u32_le(out, static_cast<std::uint32_t>(m.rows()));
    write_u32_le(out, static_cast<std::uint32_t>(m.cols()));
    for (std::size_t i = 0; i < m.size(); ++i) write_f64_le(out, static_cast<double>(m[i]));
}

inline RealMatrix read_tensor(std::istream& in) {
    const std::uint32_t rows = read_u32_le(in);
    const std::uint32_t cols = read_u32_le(in);
    RealMatrix m(rows, cols);
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = static_cast<Real>(read_f64_le(in));
    return m;
}

inline std::string tensor_bytes(const RealMatrix& m) {
    std::ostringstream out(std::ios::binary);
    write_tensor(out, m);
    return out.str();
}

// Stable content hash of a parameter set, used for freeze checks and
// checkpoint integrity. Names participate so renamed tensors change the hash.
inline std::uint64_t params_hash(const ParamList& params) {
    std::uint64_t h = 1469598103934665603ull;
    auto mix = [&h](std::string_view bytes) {
        for (unsigned char c : bytes) {
            h ^= c;
            h *= 1099511628211ull;
        }
    };
    for (const ParamRef& p : params) {
        mix(p.name);
        mix("\x1f");
        mix(tensor_bytes(*p.tensor));
    }
    return h;
}

} // namespace factguard
