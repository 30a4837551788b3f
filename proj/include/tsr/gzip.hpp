#pragma once

#include <zlib.h>

#include <cstddef>
#include <string>
#include <vector>

#include "tsr/bytes.hpp"
#include "tsr/error.hpp"

namespace tsr {

// One gzip member of a (possibly concatenated) multistream file.
struct GzipSegment {
  Bytes compressed;
  Bytes decompressed;
  std::size_t begin = 0;  // offset of the member in the containing file
  std::size_t end = 0;    // one past the last byte of the member

  bool operator==(const GzipSegment&) const = default;
};

// Emitted streams always use level 9 so identical inputs produce identical bytes.
inline constexpr int kGzipLevel = 9;

inline Bytes gzip_compress(ByteView data, int level = kGzipLevel) {
  z_stream strm{};
  // 16 + MAX_WBITS selects the gzip wrapper; zlib writes mtime=0 by default.
  if (deflateInit2(&strm, level, Z_DEFLATED, 16 + MAX_WBITS, 8,
                   Z_DEFAULT_STRATEGY) != Z_OK) {
    fail(ErrorCode::IoError, "deflateInit2 failed");
  }
  Bytes out(deflateBound(&strm, static_cast<uLong>(data.size())) + 32);
  strm.next_in = const_cast<Bytef*>(data.data());
  strm.avail_in = static_cast<uInt>(data.size());
  strm.next_out = out.data();
  strm.avail_out = static_cast<uInt>(out.size());
  int rc = deflate(&strm, Z_FINISH);
  std::size_t produced = strm.total_out;
  deflateEnd(&strm);
  if (rc != Z_STREAM_END) fail(ErrorCode::IoError, "deflate did not finish");
  out.resize(produced);
  return out;
}

namespace detail {

// Inflates a single gzip member starting at `offset`. Returns the number of
// compressed bytes consumed and appends the plaintext to `out`.
inline std::size_t inflate_member(ByteView data, std::size_t offset, Bytes& out) {
  if (offset + 2 > data.size() || data[offset] != 0x1f || data[offset + 1] != 0x8b) {
    fail(ErrorCode::MalformedGzip,
         "no gzip magic at offset " + std::to_string(offset));
  }
  z_stream strm{};
  if (inflateInit2(&strm, 16 + MAX_WBITS) != Z_OK) {
    fail(ErrorCode::IoError, "inflateInit2 failed");
  }
  strm.next_in = const_cast<Bytef*>(data.data() + offset);
  strm.avail_in = static_cast<uInt>(data.size() - offset);
  std::uint8_t buf[16384];
  int rc = Z_OK;
  while (rc != Z_STREAM_END) {
    strm.next_out = buf;
    strm.avail_out = sizeof(buf);
    rc = inflate(&strm, Z_NO_FLUSH);
    if (rc != Z_OK && rc != Z_STREAM_END && rc != Z_BUF_ERROR) {
      std::size_t at = offset + strm.total_in;
      inflateEnd(&strm);
      fail(ErrorCode::MalformedGzip, "corrupt stream near offset " + std::to_string(at));
    }
    out.insert(out.end(), buf, buf + (sizeof(buf) - strm.avail_out));
    if (rc == Z_BUF_ERROR || (rc == Z_OK && strm.avail_in == 0 && strm.avail_out != 0)) {
      std::size_t at = offset + strm.total_in;
      inflateEnd(&strm);
      fail(ErrorCode::MalformedGzip, "truncated stream at offset " + std::to_string(at));
    }
  }
  std::size_t consumed = strm.total_in;
  inflateEnd(&strm);
  return consumed;
}

}  // namespace detail

// Splits a concatenated gzip file into its members. Concatenating the
// segments' compressed bytes reproduces the input exactly; anything left over
// after the last well-formed member is an error.
inline std::vector<GzipSegment> split_gzip_streams(ByteView data) {
  std::vector<GzipSegment> segments;
  std::size_t offset = 0;
  if (data.empty()) fail(ErrorCode::MalformedGzip, "empty input");
  while (offset < data.size()) {
    GzipSegment seg;
    seg.begin = offset;
    std::size_t consumed = detail::inflate_member(data, offset, seg.decompressed);
    seg.end = offset + consumed;
    seg.compressed.assign(data.begin() + static_cast<std::ptrdiff_t>(seg.begin),
                          data.begin() + static_cast<std::ptrdiff_t>(seg.end));
    segments.push_back(std::move(seg));
    offset += consumed;
  }
  return segments;
}

// Decompresses exactly one gzip member; trailing bytes are rejected.
inline Bytes gzip_decompress(ByteView data) {
  Bytes out;
  std::size_t consumed = detail::inflate_member(data, 0, out);
  if (consumed != data.size()) {
    fail(ErrorCode::MalformedGzip,
         "trailing bytes after gzip stream at offset " + std::to_string(consumed));
  }
  return out;
}

}  // namespace tsr
