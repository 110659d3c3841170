#pragma once

#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "zeggs/errors.hpp"

// Little-endian binary IO helpers shared by the cache ("ZEGM") and
// checkpoint ("ZEGC") containers.
namespace zeggs::binio {

inline void write_bytes(std::ostream& os, const void* p, std::size_t n) {
    os.write(static_cast<const char*>(p), std::streamsize(n));
}

inline void read_bytes(std::istream& is, void* p, std::size_t n) {
    is.read(static_cast<char*>(p), std::streamsize(n));
    if (std::size_t(is.gcount()) != n) fail(Errc::format, "unexpected end of file");
}

template <typename T>
void write_le(std::ostream& os, T v) {
    static_assert(std::is_arithmetic_v<T>);
    unsigned char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
#if defined(__BYTE_ORDER__) && __BYTE_ORDER__ == __ORDER_BIG_ENDIAN__
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(buf[i], buf[sizeof(T) - 1 - i]);
#endif
    write_bytes(os, buf, sizeof(T));
}

template <typename T>
T read_le(std::istream& is) {
    unsigned char buf[sizeof(T)];
    read_bytes(is, buf, sizeof(T));
#if defined(__BYTE_ORDER__) && __BYTE_ORDER__ == __ORDER_BIG_ENDIAN__
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(buf[i], buf[sizeof(T) - 1 - i]);
#endif
    T v;
    std::memcpy(&v, buf, sizeof(T));
    return v;
}

inline void write_string(std::ostream& os, const std::string& s) {
    write_le<std::uint32_t>(os, std::uint32_t(s.size()));
    write_bytes(os, s.data(), s.size());
}

inline std::string read_string(std::istream& is) {
    auto n = read_le<std::uint32_t>(is);
    std::string s(n, '\0');
    if (n) read_bytes(is, s.data(), n);
    return s;
}

template <typename T>
void write_vector(std::ostream& os, const std::vector<T>& v) {
    write_le<std::uint64_t>(os, v.size());
    for (const T& x : v) write_le<T>(os, x);
}

template <typename T>
std::vector<T> read_vector(std::istream& is) {
    auto n = read_le<std::uint64_t>(is);
    std::vector<T> v(n);
    for (auto& x : v) x = read_le<T>(is);
    return v;
}

inline void expect_magic(std::istream& is, const char magic[4], const std::string& what) {
    char buf[4];
    read_bytes(is, buf, 4);
    if (std::memcmp(buf, magic, 4) != 0)
        fail(Errc::format, what + ": bad magic (expected \"" + std::string(magic, 4) + "\")");
}

}  // namespace zeggs::binio
