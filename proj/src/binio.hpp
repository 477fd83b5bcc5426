#pragma once

// Little-endian binary encode/decode helpers shared by the archive and
// checkpoint writers. Byte order is explicit so files are portable.

#include <bit>
#include <cstdint>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "pfr/errors.hpp"

namespace pfr::binio {

inline void write_bytes(std::ostream& os, const void* p, std::size_t n) {
    os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
    if (!os) throw IoError("write failed");
}

inline void write_u16(std::ostream& os, std::uint16_t v) {
    unsigned char b[2] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff)};
    write_bytes(os, b, 2);
}

inline void write_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    write_bytes(os, b, 4);
}

inline void write_u64(std::ostream& os, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    write_bytes(os, b, 8);
}

inline void write_f64(std::ostream& os, double v) {
    write_u64(os, std::bit_cast<std::uint64_t>(v));
}

inline void write_f64_block(std::ostream& os, const std::vector<double>& vals) {
    std::vector<unsigned char> buf(vals.size() * 8);
    for (std::size_t i = 0; i < vals.size(); ++i) {
        const std::uint64_t u = std::bit_cast<std::uint64_t>(vals[i]);
        for (int j = 0; j < 8; ++j) buf[i * 8 + j] = static_cast<unsigned char>((u >> (8 * j)) & 0xff);
    }
    if (!buf.empty()) write_bytes(os, buf.data(), buf.size());
}

inline void read_bytes(std::istream& is, void* p, std::size_t n, const char* what) {
    is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(is.gcount()) != n) {
        throw FormatError(std::string("truncated file while reading ") + what);
    }
}

inline std::uint16_t read_u16(std::istream& is, const char* what) {
    unsigned char b[2];
    read_bytes(is, b, 2, what);
    return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}

inline std::uint32_t read_u32(std::istream& is, const char* what) {
    unsigned char b[4];
    read_bytes(is, b, 4, what);
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | b[i];
    return v;
}

inline std::uint64_t read_u64(std::istream& is, const char* what) {
    unsigned char b[8];
    read_bytes(is, b, 8, what);
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
    return v;
}

inline double read_f64(std::istream& is, const char* what) {
    return std::bit_cast<double>(read_u64(is, what));
}

inline std::vector<double> read_f64_block(std::istream& is, std::size_t count, const char* what) {
    std::vector<unsigned char> buf(count * 8);
    if (count > 0) read_bytes(is, buf.data(), buf.size(), what);
    std::vector<double> vals(count);
    for (std::size_t i = 0; i < count; ++i) {
        std::uint64_t u = 0;
        for (int j = 7; j >= 0; --j) u = (u << 8) | buf[i * 8 + j];
        vals[i] = std::bit_cast<double>(u);
    }
    return vals;
}

}  // namespace pfr::binio
