#pragma once
// Little-endian scalar I/O for the checkpoint formats.

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <span>
#include <string>

#include "mpt/errors.hpp"

namespace mpt::binio {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
void put_span(std::ostream& out, std::span<const T> v) {
  out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size_bytes()));
}

inline void read_bytes(std::istream& in, void* dst, std::size_t n, std::uint64_t& offset, const char* what) {
  in.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
  const auto got = static_cast<std::size_t>(in.gcount());
  if (got != n) {
    throw FormatError(std::string("truncated ") + what + ": expected " + std::to_string(n) + " bytes, got " +
                          std::to_string(got),
                      offset + got);
  }
  offset += n;
}

template <typename T>
T get(std::istream& in, std::uint64_t& offset, const char* what) {
  T v{};
  read_bytes(in, &v, sizeof(T), offset, what);
  return v;
}

template <typename T>
void get_span(std::istream& in, std::span<T> dst, std::uint64_t& offset, const char* what) {
  read_bytes(in, dst.data(), dst.size_bytes(), offset, what);
}

}  // namespace mpt::binio
