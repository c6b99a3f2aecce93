#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>

#include "odmixer/errors.hpp"

// Little-endian primitives for the ODDS1 and ODMX1 formats.
namespace odmixer::binary {

namespace detail {

inline std::uint32_t to_le(std::uint32_t v)
{
    if constexpr (std::endian::native == std::endian::little) return v;
    return ((v & 0xFFu) << 24) | ((v & 0xFF00u) << 8) | ((v >> 8) & 0xFF00u) | (v >> 24);
}

} // namespace detail

inline void write_u32(std::ostream& os, std::uint32_t v)
{
    const std::uint32_t le = detail::to_le(v);
    os.write(reinterpret_cast<const char*>(&le), sizeof le);
}

inline void write_f32(std::ostream& os, float v)
{
    write_u32(os, std::bit_cast<std::uint32_t>(v));
}

inline void write_bytes(std::ostream& os, const std::string& s)
{
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::uint32_t read_u32(std::istream& is)
{
    std::uint32_t raw = 0;
    if (!is.read(reinterpret_cast<char*>(&raw), sizeof raw)) throw DataError("unexpected end of file");
    return detail::to_le(raw);
}

inline float read_f32(std::istream& is)
{
    return std::bit_cast<float>(read_u32(is));
}

inline std::string read_bytes(std::istream& is, std::size_t n)
{
    std::string s(n, '\0');
    if (n && !is.read(s.data(), static_cast<std::streamsize>(n))) throw DataError("unexpected end of file");
    return s;
}

inline void expect_magic(std::istream& is, const std::string& magic)
{
    if (read_bytes(is, magic.size()) != magic) throw DataError("bad magic, expected " + magic);
}

} // namespace odmixer::binary
