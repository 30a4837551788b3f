#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tsr/error.hpp"

namespace tsr {

using Bytes = std::vector<std::uint8_t>;
using ByteView = std::span<const std::uint8_t>;

inline Bytes to_bytes(std::string_view s) {
  return Bytes(s.begin(), s.end());
}

inline std::string to_string(ByteView b) {
  return std::string(b.begin(), b.end());
}

inline void append(Bytes& dst, ByteView src) {
  dst.insert(dst.end(), src.begin(), src.end());
}

inline void append(Bytes& dst, std::string_view src) {
  dst.insert(dst.end(), src.begin(), src.end());
}

inline std::string to_hex(ByteView data) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out;
  out.reserve(data.size() * 2);
  for (std::uint8_t b : data) {
    out.push_back(kDigits[b >> 4]);
    out.push_back(kDigits[b & 0xf]);
  }
  return out;
}

inline Bytes from_hex(std::string_view hex) {
  auto nibble = [](char c) -> int {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    if (c >= 'A' && c <= 'F') return c - 'A' + 10;
    return -1;
  };
  if (hex.size() % 2 != 0) fail(ErrorCode::IoError, "hex string has odd length");
  Bytes out;
  out.reserve(hex.size() / 2);
  for (std::size_t i = 0; i < hex.size(); i += 2) {
    int hi = nibble(hex[i]);
    int lo = nibble(hex[i + 1]);
    if (hi < 0 || lo < 0) fail(ErrorCode::IoError, "invalid hex digit");
    out.push_back(static_cast<std::uint8_t>(hi << 4 | lo));
  }
  return out;
}

namespace detail {
inline constexpr char kBase64Alphabet[] =
    "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
}

inline std::string base64_encode(ByteView data) {
  std::string out;
  out.reserve((data.size() + 2) / 3 * 4);
  std::size_t i = 0;
  for (; i + 3 <= data.size(); i += 3) {
    std::uint32_t n = data[i] << 16 | data[i + 1] << 8 | data[i + 2];
    out.push_back(detail::kBase64Alphabet[n >> 18]);
    out.push_back(detail::kBase64Alphabet[(n >> 12) & 0x3f]);
    out.push_back(detail::kBase64Alphabet[(n >> 6) & 0x3f]);
    out.push_back(detail::kBase64Alphabet[n & 0x3f]);
  }
  if (i + 1 == data.size()) {
    std::uint32_t n = data[i] << 16;
    out.push_back(detail::kBase64Alphabet[n >> 18]);
    out.push_back(detail::kBase64Alphabet[(n >> 12) & 0x3f]);
    out.append("==");
  } else if (i + 2 == data.size()) {
    std::uint32_t n = data[i] << 16 | data[i + 1] << 8;
    out.push_back(detail::kBase64Alphabet[n >> 18]);
    out.push_back(detail::kBase64Alphabet[(n >> 12) & 0x3f]);
    out.push_back(detail::kBase64Alphabet[(n >> 6) & 0x3f]);
    out.push_back('=');
  }
  return out;
}

inline Bytes base64_decode(std::string_view text) {
  auto value = [](char c) -> int {
    if (c >= 'A' && c <= 'Z') return c - 'A';
    if (c >= 'a' && c <= 'z') return c - 'a' + 26;
    if (c >= '0' && c <= '9') return c - '0' + 52;
    if (c == '+') return 62;
    if (c == '/') return 63;
    return -1;
  };
  if (text.size() % 4 != 0) fail(ErrorCode::IoError, "base64 length not a multiple of 4");
  Bytes out;
  out.reserve(text.size() / 4 * 3);
  for (std::size_t i = 0; i < text.size(); i += 4) {
    int pad = 0;
    std::uint32_t n = 0;
    for (std::size_t j = 0; j < 4; ++j) {
      char c = text[i + j];
      if (c == '=') {
        if (i + 4 != text.size() || j < 2) fail(ErrorCode::IoError, "misplaced base64 padding");
        ++pad;
        n <<= 6;
      } else {
        if (pad > 0) fail(ErrorCode::IoError, "base64 data after padding");
        int v = value(c);
        if (v < 0) fail(ErrorCode::IoError, "invalid base64 character");
        n = n << 6 | static_cast<std::uint32_t>(v);
      }
    }
    out.push_back(static_cast<std::uint8_t>(n >> 16));
    if (pad < 2) out.push_back(static_cast<std::uint8_t>(n >> 8));
    if (pad < 1) out.push_back(static_cast<std::uint8_t>(n));
  }
  return out;
}

}  // namespace tsr
