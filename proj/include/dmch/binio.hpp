#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>

#include "dmch/errors.hpp"

// Little-endian scalar I/O shared by the DMCHCKPT / DMCHGRID / DMCHCODE
// file formats.

namespace dmch {

namespace detail {

template <typename T>
inline T byteswap_if_big(T v) {
    if constexpr (std::endian::native == std::endian::little) {
        return v;
    } else {
        T out;
        auto* src = reinterpret_cast<const unsigned char*>(&v);
        auto* dst = reinterpret_cast<unsigned char*>(&out);
        for (std::size_t i = 0; i < sizeof(T); ++i) dst[i] = src[sizeof(T) - 1 - i];
        return out;
    }
}

} // namespace detail

template <typename T>
inline void write_le(std::ostream& os, T v) {
    static_assert(std::is_trivially_copyable_v<T>);
    T le = detail::byteswap_if_big(v);
    os.write(reinterpret_cast<const char*>(&le), sizeof(T));
}

inline void write_f64(std::ostream& os, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof(bits));
    write_le(os, bits);
}

template <typename T>
inline T read_le(std::istream& is, const char* what) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw format_error(std::string("truncated file while reading ") + what);
    return detail::byteswap_if_big(v);
}

inline double read_f64(std::istream& is, const char* what) {
    std::uint64_t bits = read_le<std::uint64_t>(is, what);
    double v;
    std::memcpy(&v, &bits, sizeof(v));
    return v;
}

inline void write_string(std::ostream& os, const std::string& s) {
    if (s.size() > 0xFFFF) throw argument_error("string too long for u16 length prefix");
    write_le<std::uint16_t>(os, static_cast<std::uint16_t>(s.size()));
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string read_string(std::istream& is, const char* what) {
    std::uint16_t len = read_le<std::uint16_t>(is, what);
    std::string s(len, '\0');
    is.read(s.data(), len);
    if (!is) throw format_error(std::string("truncated file while reading ") + what);
    return s;
}

inline void expect_magic(std::istream& is, const char* magic, const char* what) {
    char buf[16] = {};
    std::size_t n = std::strlen(magic);
    is.read(buf, static_cast<std::streamsize>(n));
    if (!is || std::memcmp(buf, magic, n) != 0)
        throw format_error(std::string("bad magic for ") + what + " (expected " + magic + ")");
}

} // namespace dmch
