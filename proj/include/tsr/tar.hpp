#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <optional>
#include <string>
#include <vector>

#include "tsr/bytes.hpp"
#include "tsr/error.hpp"

namespace tsr {

enum class TarEntryType { Regular, Directory, Symlink, Hardlink };

// A single POSIX pax extended-header record. Values may be binary.
struct PaxRecord {
  std::string key;
  Bytes value;

  bool operator==(const PaxRecord&) const = default;
};

struct TarEntry {
  std::string path;
  std::uint32_t mode = 0644;
  std::uint64_t uid = 0;
  std::uint64_t gid = 0;
  TarEntryType type = TarEntryType::Regular;
  std::string link_target;         // symlink/hardlink targets only
  std::uint64_t mtime = 0;         // seconds since epoch
  Bytes content;                   // regular entries only
  std::vector<PaxRecord> pax_records;  // non-structural keys, original order

  std::uint64_t size() const { return content.size(); }

  const PaxRecord* find_pax(std::string_view key) const {
    for (const auto& r : pax_records) {
      if (r.key == key) return &r;
    }
    return nullptr;
  }

  // Replaces any existing record under `key`, keeping its position.
  void set_pax(std::string_view key, Bytes value) {
    for (auto& r : pax_records) {
      if (r.key == key) {
        r.value = std::move(value);
        return;
      }
    }
    pax_records.push_back({std::string(key), std::move(value)});
  }

  bool operator==(const TarEntry&) const = default;
};

// Serialized form is "<len> <key>=<value>\n" where <len> counts the whole
// record including its own digits.
inline Bytes serialize_pax_record(const PaxRecord& record) {
  std::size_t base = 1 + record.key.size() + 1 + record.value.size() + 1;
  std::size_t len = 0;
  for (std::size_t digits = 1; digits <= 20; ++digits) {
    std::size_t candidate = base + digits;
    if (std::to_string(candidate).size() == digits) {
      len = candidate;
      break;
    }
  }
  Bytes out;
  out.reserve(len);
  append(out, std::to_string(len));
  out.push_back(' ');
  append(out, record.key);
  out.push_back('=');
  append(out, record.value);
  out.push_back('\n');
  return out;
}

namespace tar_detail {

inline constexpr std::size_t kBlockSize = 512;
inline constexpr std::size_t kNameLen = 100;
inline constexpr std::uint64_t kMaxOctal11 = 077777777777ULL;  // size/mtime fields
inline constexpr std::uint64_t kMaxOctal7 = 07777777ULL;       // uid/gid fields

// Keys absorbed into TarEntry fields rather than kept in pax_records.
inline bool is_structural_pax_key(std::string_view key) {
  return key == "path" || key == "linkpath" || key == "size" || key == "uid" ||
         key == "gid" || key == "mtime";
}

inline void write_octal(char* field, std::size_t width, std::uint64_t value) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%0*llo", static_cast<int>(width - 1),
                static_cast<unsigned long long>(value));
  std::memcpy(field, buf, width - 1);
  field[width - 1] = '\0';
}

inline std::uint64_t parse_octal(const char* field, std::size_t width) {
  std::uint64_t value = 0;
  std::size_t i = 0;
  while (i < width && (field[i] == ' ' || field[i] == '0')) ++i;
  for (; i < width && field[i] != '\0' && field[i] != ' '; ++i) {
    if (field[i] < '0' || field[i] > '7') {
      fail(ErrorCode::MalformedTar, "bad octal digit in header field");
    }
    value = value << 3 | static_cast<std::uint64_t>(field[i] - '0');
  }
  return value;
}

struct RawHeader {
  char name[100];
  char mode[8];
  char uid[8];
  char gid[8];
  char size[12];
  char mtime[12];
  char chksum[8];
  char typeflag;
  char linkname[100];
  char magic[6];
  char version[2];
  char uname[32];
  char gname[32];
  char devmajor[8];
  char devminor[8];
  char prefix[155];
  char pad[12];
};
static_assert(sizeof(RawHeader) == kBlockSize);

inline unsigned header_checksum(const RawHeader& h) {
  const auto* p = reinterpret_cast<const unsigned char*>(&h);
  unsigned sum = 0;
  for (std::size_t i = 0; i < kBlockSize; ++i) {
    sum += (i >= 148 && i < 156) ? ' ' : p[i];
  }
  return sum;
}

inline bool is_zero_block(ByteView data, std::size_t offset) {
  for (std::size_t i = 0; i < kBlockSize; ++i) {
    if (data[offset + i] != 0) return false;
  }
  return true;
}

inline void emit_header(Bytes& out, const std::string& name, std::uint32_t mode,
                        std::uint64_t uid, std::uint64_t gid, std::uint64_t size,
                        std::uint64_t mtime, char typeflag,
                        const std::string& linkname) {
  RawHeader h;
  std::memset(&h, 0, sizeof(h));
  std::memcpy(h.name, name.data(), std::min(name.size(), kNameLen));
  write_octal(h.mode, sizeof(h.mode), mode & 07777);
  write_octal(h.uid, sizeof(h.uid), std::min(uid, kMaxOctal7));
  write_octal(h.gid, sizeof(h.gid), std::min(gid, kMaxOctal7));
  write_octal(h.size, sizeof(h.size), std::min(size, kMaxOctal11));
  write_octal(h.mtime, sizeof(h.mtime), std::min(mtime, kMaxOctal11));
  h.typeflag = typeflag;
  std::memcpy(h.linkname, linkname.data(), std::min(linkname.size(), kNameLen));
  std::memcpy(h.magic, "ustar", 6);
  h.version[0] = '0';
  h.version[1] = '0';
  unsigned sum = header_checksum(h);
  char buf[8];
  std::snprintf(buf, sizeof(buf), "%06o", sum);
  std::memcpy(h.chksum, buf, 6);
  h.chksum[6] = '\0';
  h.chksum[7] = ' ';
  const auto* p = reinterpret_cast<const std::uint8_t*>(&h);
  out.insert(out.end(), p, p + kBlockSize);
}

inline void emit_padded(Bytes& out, ByteView data) {
  append(out, data);
  std::size_t rem = data.size() % kBlockSize;
  if (rem != 0) out.insert(out.end(), kBlockSize - rem, 0);
}

// Parses one pax extended-header payload. Later records win for a repeated key.
inline std::vector<PaxRecord> parse_pax_payload(ByteView data) {
  std::vector<PaxRecord> records;
  std::size_t pos = 0;
  while (pos < data.size()) {
    std::size_t len = 0;
    std::size_t p = pos;
    while (p < data.size() && data[p] >= '0' && data[p] <= '9') {
      len = len * 10 + (data[p] - '0');
      ++p;
    }
    if (p == pos || p >= data.size() || data[p] != ' ' || len == 0) {
      fail(ErrorCode::MalformedTar, "bad pax record length");
    }
    if (pos + len > data.size() || data[pos + len - 1] != '\n') {
      fail(ErrorCode::MalformedTar, "pax record overruns payload");
    }
    ++p;  // the space
    std::size_t eq = p;
    while (eq < pos + len - 1 && data[eq] != '=') ++eq;
    if (eq == pos + len - 1) fail(ErrorCode::MalformedTar, "pax record missing '='");
    PaxRecord rec;
    rec.key.assign(data.begin() + static_cast<std::ptrdiff_t>(p),
                   data.begin() + static_cast<std::ptrdiff_t>(eq));
    rec.value.assign(data.begin() + static_cast<std::ptrdiff_t>(eq + 1),
                     data.begin() + static_cast<std::ptrdiff_t>(pos + len - 1));
    std::erase_if(records, [&](const PaxRecord& r) { return r.key == rec.key; });
    records.push_back(std::move(rec));
    pos += len;
  }
  return records;
}

inline void validate_entry(const TarEntry& e) {
  if (e.path.empty()) fail(ErrorCode::MalformedTar, "entry path is empty");
  if (e.path.find('\0') != std::string::npos) {
    fail(ErrorCode::MalformedTar, "entry path contains NUL");
  }
  if (e.type != TarEntryType::Regular && !e.content.empty()) {
    fail(ErrorCode::MalformedTar, "non-regular entry has content: " + e.path);
  }
  for (std::size_t i = 0; i < e.pax_records.size(); ++i) {
    if (is_structural_pax_key(e.pax_records[i].key)) {
      fail(ErrorCode::MalformedTar,
           "structural pax key not allowed in pax_records: " + e.pax_records[i].key);
    }
    for (std::size_t j = i + 1; j < e.pax_records.size(); ++j) {
      if (e.pax_records[i].key == e.pax_records[j].key) {
        fail(ErrorCode::MalformedTar, "duplicate pax key: " + e.pax_records[i].key);
      }
    }
  }
}

}  // namespace tar_detail

inline char tar_typeflag(TarEntryType t) {
  switch (t) {
    case TarEntryType::Regular: return '0';
    case TarEntryType::Directory: return '5';
    case TarEntryType::Symlink: return '2';
    case TarEntryType::Hardlink: return '1';
  }
  return '0';
}

// Serializes entries as USTAR with pax extended headers where the fixed
// fields cannot hold a value. `include_trailer` controls the two 512-byte
// zero blocks; apk signature/control segments omit them.
inline Bytes write_tar(const std::vector<TarEntry>& entries, bool include_trailer) {
  using namespace tar_detail;
  Bytes out;
  for (const auto& e : entries) {
    validate_entry(e);

    std::vector<PaxRecord> pax;
    if (e.path.size() > kNameLen) pax.push_back({"path", to_bytes(e.path)});
    if (e.link_target.size() > kNameLen) {
      pax.push_back({"linkpath", to_bytes(e.link_target)});
    }
    if (e.size() > kMaxOctal11) {
      pax.push_back({"size", to_bytes(std::to_string(e.size()))});
    }
    if (e.uid > kMaxOctal7) pax.push_back({"uid", to_bytes(std::to_string(e.uid))});
    if (e.gid > kMaxOctal7) pax.push_back({"gid", to_bytes(std::to_string(e.gid))});
    if (e.mtime > kMaxOctal11) {
      pax.push_back({"mtime", to_bytes(std::to_string(e.mtime))});
    }
    pax.insert(pax.end(), e.pax_records.begin(), e.pax_records.end());

    if (!pax.empty()) {
      Bytes payload;
      for (const auto& r : pax) append(payload, serialize_pax_record(r));
      std::string pax_name = "PaxHeaders/" + e.path.substr(0, kNameLen - 11);
      emit_header(out, pax_name, 0644, 0, 0, payload.size(), e.mtime, 'x', "");
      emit_padded(out, payload);
    }

    emit_header(out, e.path.substr(0, kNameLen), e.mode, e.uid, e.gid, e.size(),
                e.mtime, tar_typeflag(e.type), e.link_target.substr(0, kNameLen));
    if (e.type == TarEntryType::Regular && !e.content.empty()) {
      emit_padded(out, e.content);
    }
  }
  if (include_trailer) out.insert(out.end(), 2 * tar_detail::kBlockSize, 0);
  return out;
}

// Parses a USTAR/PAX stream. Structural pax keys (path, size, ...) override
// the header fields and are absorbed; all other keys are retained verbatim in
// entry order. With `allow_missing_trailer` the stream may end at any entry
// boundary without the two zero blocks.
inline std::vector<TarEntry> read_tar(ByteView data, bool allow_missing_trailer = false) {
  using namespace tar_detail;
  std::vector<TarEntry> entries;
  std::vector<PaxRecord> pending_pax;
  std::size_t offset = 0;
  bool saw_trailer = false;

  while (offset + kBlockSize <= data.size()) {
    if (is_zero_block(data, offset)) {
      if (offset + 2 * kBlockSize > data.size() ||
          !is_zero_block(data, offset + kBlockSize)) {
        fail(ErrorCode::MalformedTar, "lone zero block at offset " + std::to_string(offset));
      }
      offset += 2 * kBlockSize;
      // Tolerate additional zero padding up to a blocking boundary.
      while (offset + kBlockSize <= data.size() && is_zero_block(data, offset)) {
        offset += kBlockSize;
      }
      saw_trailer = true;
      break;
    }

    RawHeader h;
    std::memcpy(&h, data.data() + offset, kBlockSize);
    if (std::memcmp(h.magic, "ustar", 5) != 0) {
      fail(ErrorCode::MalformedTar, "bad magic at offset " + std::to_string(offset));
    }
    unsigned stored = static_cast<unsigned>(parse_octal(h.chksum, sizeof(h.chksum)));
    if (stored != header_checksum(h)) {
      fail(ErrorCode::MalformedTar, "header checksum mismatch at offset " +
                                        std::to_string(offset));
    }
    offset += kBlockSize;

    std::uint64_t size = parse_octal(h.size, sizeof(h.size));
    std::size_t data_blocks = static_cast<std::size_t>((size + kBlockSize - 1) / kBlockSize);

    if (h.typeflag == 'x' || h.typeflag == 'g') {
      if (offset + data_blocks * kBlockSize > data.size()) {
        fail(ErrorCode::MalformedTar, "truncated pax payload");
      }
      if (h.typeflag == 'x') {
        auto records = parse_pax_payload(data.subspan(offset, size));
        for (auto& r : records) {
          std::erase_if(pending_pax, [&](const PaxRecord& p) { return p.key == r.key; });
          pending_pax.push_back(std::move(r));
        }
      }
      offset += data_blocks * kBlockSize;
      continue;
    }

    TarEntry e;
    std::string name(h.name, strnlen(h.name, sizeof(h.name)));
    std::string prefix(h.prefix, strnlen(h.prefix, sizeof(h.prefix)));
    e.path = prefix.empty() ? name : prefix + "/" + name;
    e.mode = static_cast<std::uint32_t>(parse_octal(h.mode, sizeof(h.mode)));
    e.uid = parse_octal(h.uid, sizeof(h.uid));
    e.gid = parse_octal(h.gid, sizeof(h.gid));
    e.mtime = parse_octal(h.mtime, sizeof(h.mtime));
    e.link_target.assign(h.linkname, strnlen(h.linkname, sizeof(h.linkname)));
    switch (h.typeflag) {
      case '0':
      case '\0': e.type = TarEntryType::Regular; break;
      case '5': e.type = TarEntryType::Directory; break;
      case '2': e.type = TarEntryType::Symlink; break;
      case '1': e.type = TarEntryType::Hardlink; break;
      default:
        fail(ErrorCode::MalformedTar,
             std::string("unsupported typeflag '") + h.typeflag + "'");
    }

    for (auto& r : pending_pax) {
      std::string text = to_string(r.value);
      if (r.key == "path") {
        e.path = text;
      } else if (r.key == "linkpath") {
        e.link_target = text;
      } else if (r.key == "size") {
        size = std::stoull(text);
        data_blocks = static_cast<std::size_t>((size + kBlockSize - 1) / kBlockSize);
      } else if (r.key == "uid") {
        e.uid = std::stoull(text);
      } else if (r.key == "gid") {
        e.gid = std::stoull(text);
      } else if (r.key == "mtime") {
        e.mtime = std::stoull(text);
      } else {
        e.pax_records.push_back(std::move(r));
      }
    }
    pending_pax.clear();

    if (e.type == TarEntryType::Regular && size > 0) {
      if (offset + data_blocks * kBlockSize > data.size()) {
        fail(ErrorCode::MalformedTar, "short read of entry content: " + e.path);
      }
      e.content.assign(data.begin() + static_cast<std::ptrdiff_t>(offset),
                       data.begin() + static_cast<std::ptrdiff_t>(offset + size));
      offset += data_blocks * kBlockSize;
    } else if (size > 0) {
      fail(ErrorCode::MalformedTar, "non-regular entry with payload: " + e.path);
    }

    if (e.path.empty()) fail(ErrorCode::MalformedTar, "entry with empty path");
    entries.push_back(std::move(e));
  }

  if (!saw_trailer) {
    if (!allow_missing_trailer) {
      fail(ErrorCode::MalformedTar, "missing end-of-archive trailer");
    }
    if (offset != data.size()) {
      fail(ErrorCode::MalformedTar, "trailing partial block");
    }
  } else if (offset != data.size()) {
    fail(ErrorCode::MalformedTar, "garbage after end-of-archive trailer");
  }
  return entries;
}

}  // namespace tsr
