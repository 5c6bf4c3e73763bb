#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "rat/error.hpp"

namespace rat::io {

// Fixed-layout binary primitives: little-endian integers, IEEE-754 doubles
// written bit-for-bit, length-prefixed strings. Shared by the index and
// checkpoint formats so reloads are bit-exact.

inline void write_u64(std::ostream& out, std::uint64_t v) {
    unsigned char buf[8];
    for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFF);
    out.write(reinterpret_cast<const char*>(buf), 8);
}

inline std::uint64_t read_u64(std::istream& in) {
    unsigned char buf[8];
    in.read(reinterpret_cast<char*>(buf), 8);
    if (!in) throw IoError("binary read: truncated u64");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
    return v;
}

inline void write_f64(std::ostream& out, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    write_u64(out, bits);
}

inline double read_f64(std::istream& in) {
    const std::uint64_t bits = read_u64(in);
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
}

inline void write_string(std::ostream& out, const std::string& s) {
    write_u64(out, s.size());
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string read_string(std::istream& in) {
    const std::uint64_t n = read_u64(in);
    std::string s(n, '\0');
    in.read(s.data(), static_cast<std::streamsize>(n));
    if (!in) throw IoError("binary read: truncated string");
    return s;
}

inline void write_f64_vec(std::ostream& out, const std::vector<double>& v) {
    write_u64(out, v.size());
    for (double x : v) write_f64(out, x);
}

inline std::vector<double> read_f64_vec(std::istream& in) {
    const std::uint64_t n = read_u64(in);
    std::vector<double> v(n);
    for (auto& x : v) x = read_f64(in);
    return v;
}

/// FNV-1a 64-bit content hash, as a fixed-width hex string. Used to fingerprint
/// artifacts in run manifests; not cryptographic.
inline std::string fnv1a64_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError(concat("hash: cannot open ", path));
    std::uint64_t h = 1469598103934665603ull;
    char buf[4096];
    while (in.read(buf, sizeof buf) || in.gcount() > 0) {
        const std::streamsize n = in.gcount();
        for (std::streamsize i = 0; i < n; ++i) {
            h ^= static_cast<unsigned char>(buf[i]);
            h *= 1099511628211ull;
        }
    }
    static const char* digits = "0123456789abcdef";
    std::string hex(16, '0');
    for (int i = 15; i >= 0; --i) {
        hex[static_cast<std::size_t>(i)] = digits[h & 0xF];
        h >>= 4;
    }
    return hex;
}

inline void write_magic(std::ostream& out, const char (&magic)[9]) { out.write(magic, 8); }

inline void check_magic(std::istream& in, const char (&magic)[9], const std::string& path) {
    char buf[8];
    in.read(buf, 8);
    if (!in || std::memcmp(buf, magic, 8) != 0)
        throw IoError(concat(path, ": bad magic, expected ", magic));
}

}  // namespace rat::io
