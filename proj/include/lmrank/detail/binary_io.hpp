#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <string_view>

#include "lmrank/error.hpp"

namespace lmrank::detail {

// Little-endian primitives shared by the EMB1 and QTX1 containers.

template <typename T>
T byteswap_if_big(T value) {
  if constexpr (std::endian::native == std::endian::big) {
    std::array<unsigned char, sizeof(T)> bytes{};
    std::memcpy(bytes.data(), &value, sizeof(T));
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(bytes[i], bytes[sizeof(T) - 1 - i]);
    std::memcpy(&value, bytes.data(), sizeof(T));
  }
  return value;
}

template <typename T>
void write_le(std::ostream& out, T value) {
  value = byteswap_if_big(value);
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

inline void write_floats_le(std::ostream& out, std::span<const float> values) {
  if constexpr (std::endian::native == std::endian::little) {
    out.write(reinterpret_cast<const char*>(values.data()),
              static_cast<std::streamsize>(values.size_bytes()));
  } else {
    for (float v : values) write_le(out, v);
  }
}

template <typename T>
T read_le(std::istream& in, std::string_view what) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (in.gcount() != static_cast<std::streamsize>(sizeof(T))) {
    throw ValidationError("truncated file while reading " + std::string(what));
  }
  return byteswap_if_big(value);
}

inline void read_floats_le(std::istream& in, std::span<float> values, std::string_view what) {
  in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(values.size_bytes()));
  if (in.gcount() != static_cast<std::streamsize>(values.size_bytes())) {
    throw ValidationError("truncated file while reading " + std::string(what));
  }
  if constexpr (std::endian::native == std::endian::big) {
    for (float& v : values) v = byteswap_if_big(v);
  }
}

inline void expect_magic(std::istream& in, std::string_view magic, const std::string& path) {
  std::array<char, 4> got{};
  in.read(got.data(), 4);
  if (in.gcount() != 4 || std::string_view(got.data(), 4) != magic) {
    throw ValidationError(path + ": bad header, expected magic '" + std::string(magic) + "'");
  }
}

}  // namespace lmrank::detail
