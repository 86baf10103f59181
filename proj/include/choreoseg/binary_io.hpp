#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <istream>
#include <ostream>
#include <string>
#include <string_view>

#include "choreoseg/error.hpp"

// Little-endian primitives shared by the binary cache and checkpoint formats.
namespace choreoseg::binary {

inline void write_u32(std::ostream& out, std::uint32_t v) {
  const std::array<char, 4> b = {static_cast<char>(v & 0xFF), static_cast<char>((v >> 8) & 0xFF),
                                 static_cast<char>((v >> 16) & 0xFF),
                                 static_cast<char>((v >> 24) & 0xFF)};
  out.write(b.data(), 4);
}

inline void write_u16(std::ostream& out, std::uint16_t v) {
  const std::array<char, 2> b = {static_cast<char>(v & 0xFF), static_cast<char>((v >> 8) & 0xFF)};
  out.write(b.data(), 2);
}

inline void write_f32(std::ostream& out, float v) { write_u32(out, std::bit_cast<std::uint32_t>(v)); }

inline void write_bytes(std::ostream& out, std::string_view s) {
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline void read_exact(std::istream& in, char* dst, std::size_t n, std::string_view what) {
  in.read(dst, static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(in.gcount()) != n) {
    throw ParseError("truncated " + std::string(what));
  }
}

inline std::uint32_t read_u32(std::istream& in, std::string_view what) {
  std::array<unsigned char, 4> b{};
  read_exact(in, reinterpret_cast<char*>(b.data()), 4, what);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline std::uint16_t read_u16(std::istream& in, std::string_view what) {
  std::array<unsigned char, 2> b{};
  read_exact(in, reinterpret_cast<char*>(b.data()), 2, what);
  return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}

inline float read_f32(std::istream& in, std::string_view what) {
  return std::bit_cast<float>(read_u32(in, what));
}

inline std::string read_string(std::istream& in, std::size_t n, std::string_view what) {
  std::string s(n, '\0');
  read_exact(in, s.data(), n, what);
  return s;
}

}  // namespace choreoseg::binary
