#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "rnas/error.hpp"

// Little-endian primitives shared by the tensor, checkpoint and ensemble
// containers.
namespace rnas::io {

template <typename U>
void write_uint(std::ostream& out, U value) {
  char bytes[sizeof(U)];
  for (std::size_t i = 0; i < sizeof(U); ++i) bytes[i] = char((value >> (8 * i)) & 0xFF);
  out.write(bytes, sizeof(U));
}

template <typename U>
U read_uint(std::istream& in, const char* what) {
  unsigned char bytes[sizeof(U)];
  if (!in.read(reinterpret_cast<char*>(bytes), sizeof(U))) {
    throw DataError(std::string("truncated file while reading ") + what);
  }
  U value = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) value |= U(bytes[i]) << (8 * i);
  return value;
}

inline void write_string(std::ostream& out, const std::string& s) {
  write_uint<std::uint32_t>(out, std::uint32_t(s.size()));
  out.write(s.data(), std::streamsize(s.size()));
}

inline std::string read_string(std::istream& in, const char* what, std::size_t max_len = 1u << 24) {
  const auto n = read_uint<std::uint32_t>(in, what);
  if (n > max_len) throw DataError(std::string("implausible length ") + std::to_string(n) + " for " + what);
  std::string s(n, '\0');
  if (n && !in.read(s.data(), n)) throw DataError(std::string("truncated file while reading ") + what);
  return s;
}

inline void expect_magic(std::istream& in, const char (&magic)[5], const char* what) {
  char got[4];
  if (!in.read(got, 4)) throw DataError(std::string("truncated file while reading ") + what + " magic");
  if (std::memcmp(got, magic, 4) != 0) {
    throw DataError(std::string("bad magic for ") + what + ": expected '" + magic + "', found '" +
                    std::string(got, 4) + "'");
  }
}

template <typename F>
void write_floats(std::ostream& out, std::span<const F> values) {
  using U = std::conditional_t<sizeof(F) == 4, std::uint32_t, std::uint64_t>;
  if constexpr (std::endian::native == std::endian::little) {
    out.write(reinterpret_cast<const char*>(values.data()), std::streamsize(values.size_bytes()));
  } else {
    for (F v : values) write_uint<U>(out, std::bit_cast<U>(v));
  }
}

template <typename F>
void read_floats(std::istream& in, std::span<F> values, const char* what) {
  using U = std::conditional_t<sizeof(F) == 4, std::uint32_t, std::uint64_t>;
  if constexpr (std::endian::native == std::endian::little) {
    if (!in.read(reinterpret_cast<char*>(values.data()), std::streamsize(values.size_bytes()))) {
      throw DataError(std::string("truncated file while reading ") + what);
    }
  } else {
    for (F& v : values) v = std::bit_cast<F>(read_uint<U>(in, what));
  }
}

/// Writes to `path + ".tmp"` then renames over `path`.
void write_file_atomic(const std::string& path, const std::string& bytes);
std::string read_file(const std::string& path);

}  // namespace rnas::io
