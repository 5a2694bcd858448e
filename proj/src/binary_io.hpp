#pragma once

// Little-endian scalar I/O shared by the binary formats.

#include <algorithm>
#include <array>
#include <bit>
#include <istream>
#include <ostream>

namespace probekit::detail {

template <typename T>
T byteswap_if_big(T value) {
  if constexpr (std::endian::native == std::endian::big) {
    auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(value);
    std::reverse(bytes.begin(), bytes.end());
    return std::bit_cast<T>(bytes);
  } else {
    return value;
  }
}

template <typename T>
void put(std::ostream& out, T value) {
  value = byteswap_if_big(value);
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
bool get(std::istream& in, T& value) {
  if (!in.read(reinterpret_cast<char*>(&value), sizeof(T))) return false;
  value = byteswap_if_big(value);
  return true;
}

}  // namespace probekit::detail
