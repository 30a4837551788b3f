#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "tsr/bytes.hpp"
#include "tsr/error.hpp"
#include "tsr/gzip.hpp"
#include "tsr/keystore.hpp"
#include "tsr/package.hpp"
#include "tsr/tar.hpp"

namespace tsr {

// One stanza of the metadata index. The pull checksum is the SHA-1 of the
// package's compressed control segment, which is what clients use to verify
// a downloaded package against the signed index.
struct IndexEntry {
  Bytes checksum;  // 20 bytes
  std::string name;
  std::string version;
  std::string arch;
  std::uint64_t package_size = 0;    // whole .apk file
  std::uint64_t installed_size = 0;  // unpacked size from the control data
  std::vector<std::string> depends;
  std::vector<std::string> extra_lines;  // unrecognized stanza lines, verbatim

  bool operator==(const IndexEntry&) const = default;
};

struct MetadataIndex {
  std::vector<IndexEntry> entries;  // sorted by (name, version)
  std::string description;
  SignatureEnvelope signature;  // over the serialized index body stream
  Bytes content_hash;           // SHA-256 of the serialized body stream

  const IndexEntry* find(const std::string& name, const std::string& version) const {
    for (const auto& e : entries) {
      if (e.name == name && e.version == version) return &e;
    }
    return nullptr;
  }
};

struct ChangeSet {
  std::vector<IndexEntry> added;    // from the new index
  std::vector<IndexEntry> removed;  // from the old index
  std::vector<IndexEntry> changed;  // new-side entries

  bool empty() const { return added.empty() && removed.empty() && changed.empty(); }
};

namespace index_detail {

inline void sort_entries(std::vector<IndexEntry>& entries) {
  std::sort(entries.begin(), entries.end(),
            [](const IndexEntry& a, const IndexEntry& b) {
              if (a.name != b.name) return a.name < b.name;
              return a.version < b.version;
            });
}

inline std::string serialize_stanza(const IndexEntry& e) {
  std::string out;
  out += "C:Q1" + base64_encode(e.checksum) + "\n";
  out += "P:" + e.name + "\n";
  out += "V:" + e.version + "\n";
  out += "A:" + e.arch + "\n";
  out += "S:" + std::to_string(e.package_size) + "\n";
  out += "I:" + std::to_string(e.installed_size) + "\n";
  if (!e.depends.empty()) {
    out += "D:";
    for (std::size_t i = 0; i < e.depends.size(); ++i) {
      if (i) out += ' ';
      out += e.depends[i];
    }
    out += '\n';
  }
  for (const auto& line : e.extra_lines) out += line + "\n";
  return out;
}

inline std::vector<std::string> split_lines(const std::string& text) {
  std::vector<std::string> lines;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t eol = text.find('\n', pos);
    if (eol == std::string::npos) eol = text.size();
    lines.push_back(text.substr(pos, eol - pos));
    pos = eol + 1;
  }
  return lines;
}

inline std::vector<IndexEntry> parse_index_body(const std::string& text) {
  std::vector<IndexEntry> entries;
  IndexEntry current;
  bool in_stanza = false;
  bool have_checksum = false, have_name = false, have_version = false,
       have_arch = false, have_size = false, have_installed = false;

  auto flush = [&] {
    if (!in_stanza) return;
    if (!have_checksum || !have_name || !have_version || !have_arch ||
        !have_size || !have_installed) {
      fail(ErrorCode::MalformedIndex,
           "incomplete stanza" + (have_name ? " for " + current.name : std::string()));
    }
    if (current.package_size == 0) {
      fail(ErrorCode::MalformedIndex, "zero package size for " + current.name);
    }
    entries.push_back(std::move(current));
    current = IndexEntry{};
    in_stanza = false;
    have_checksum = have_name = have_version = have_arch = have_size =
        have_installed = false;
  };

  for (const std::string& line : split_lines(text)) {
    if (line.empty()) {
      flush();
      continue;
    }
    in_stanza = true;
    if (line.size() < 2 || line[1] != ':') {
      fail(ErrorCode::MalformedIndex, "unparseable line: " + line);
    }
    std::string value = line.substr(2);
    switch (line[0]) {
      case 'C': {
        if (value.rfind("Q1", 0) != 0) {
          fail(ErrorCode::MalformedIndex, "unsupported checksum encoding: " + line);
        }
        current.checksum = base64_decode(value.substr(2));
        if (current.checksum.size() != 20) {
          fail(ErrorCode::MalformedIndex, "checksum is not 20 bytes");
        }
        have_checksum = true;
        break;
      }
      case 'P': current.name = value; have_name = true; break;
      case 'V': current.version = value; have_version = true; break;
      case 'A': current.arch = value; have_arch = true; break;
      case 'S':
        current.package_size = std::strtoull(value.c_str(), nullptr, 10);
        have_size = true;
        break;
      case 'I':
        current.installed_size = std::strtoull(value.c_str(), nullptr, 10);
        have_installed = true;
        break;
      case 'D': {
        std::size_t pos = 0;
        while (pos < value.size()) {
          std::size_t sp = value.find(' ', pos);
          if (sp == std::string::npos) sp = value.size();
          if (sp > pos) current.depends.push_back(value.substr(pos, sp - pos));
          pos = sp + 1;
        }
        break;
      }
      default:
        current.extra_lines.push_back(line);
        break;
    }
  }
  flush();
  return entries;
}

inline void check_unique(const std::vector<IndexEntry>& entries) {
  std::map<std::tuple<std::string, std::string, std::string>, int> seen;
  for (const auto& e : entries) {
    if (++seen[{e.name, e.version, e.arch}] > 1) {
      fail(ErrorCode::MalformedIndex,
           "duplicate stanza for " + e.name + "-" + e.version + " " + e.arch);
    }
  }
}

}  // namespace index_detail

inline std::string serialize_index_body(std::vector<IndexEntry> entries) {
  index_detail::sort_entries(entries);
  index_detail::check_unique(entries);
  std::string out;
  for (const auto& e : entries) {
    out += index_detail::serialize_stanza(e);
    out += "\n";
  }
  return out;
}

inline IndexEntry index_entry_for(const ApkPackage& pkg, std::uint64_t file_size) {
  IndexEntry e;
  e.checksum = sha1(pkg.control_segment_bytes);
  e.name = pkg.pkginfo.pkgname;
  e.version = pkg.pkginfo.pkgver;
  e.arch = pkg.pkginfo.arch;
  e.package_size = file_size;
  e.installed_size = pkg.pkginfo.size;
  e.depends = pkg.pkginfo.depends;
  return e;
}

// On-wire layout mirrors the package convention: a cut signature tar in its
// own gzip stream, then a full tar holding DESCRIPTION and APKINDEX. The
// signature covers the second stream's compressed bytes exactly.
inline Bytes generate_index_from_entries(std::vector<IndexEntry> entries,
                                         const SigningKeypair& signer,
                                         const std::string& description) {
  std::string body = serialize_index_body(std::move(entries));

  TarEntry desc;
  desc.path = "DESCRIPTION";
  desc.mode = 0644;
  desc.content = to_bytes(description);
  TarEntry apkindex;
  apkindex.path = "APKINDEX";
  apkindex.mode = 0644;
  apkindex.content = to_bytes(body);
  Bytes body_segment = gzip_compress(write_tar({desc, apkindex}, true));

  TarEntry sig;
  sig.path = signature_entry_name(signer.algorithm(), signer.key_id());
  sig.mode = 0644;
  sig.content = sign_raw(signer, body_segment);
  Bytes out = gzip_compress(write_tar({sig}, false));
  append(out, body_segment);
  return out;
}

struct IndexInput {
  const ApkPackage* package;
  std::uint64_t file_size;
};

inline Bytes generate_index(const std::vector<IndexInput>& packages,
                            const SigningKeypair& signer,
                            const std::string& description) {
  std::vector<IndexEntry> entries;
  entries.reserve(packages.size());
  for (const auto& in : packages) {
    entries.push_back(index_entry_for(*in.package, in.file_size));
  }
  return generate_index_from_entries(std::move(entries), signer, description);
}

inline MetadataIndex parse_index(ByteView bytes,
                                 const std::vector<PublicKey>& trusted_keys) {
  std::vector<GzipSegment> segments = split_gzip_streams(bytes);
  if (segments.size() != 2) {
    fail(ErrorCode::MalformedIndex,
         "expected 2 gzip segments, found " + std::to_string(segments.size()));
  }

  // The signature is checked before any stanza is looked at.
  std::vector<TarEntry> sig_entries = read_tar(segments[0].decompressed, true);
  bool key_matched = false;
  SignatureEnvelope envelope;
  for (const TarEntry& entry : sig_entries) {
    auto name = pkg_detail::parse_signature_name(entry.path);
    if (!name) continue;
    for (const PublicKey& key : trusted_keys) {
      if (key.algorithm() != name->algorithm) continue;
      if (key.key_id_hex() != name->key_name) continue;
      key_matched = true;
      if (verify_raw(key, entry.content, segments[1].compressed)) {
        envelope.algorithm = key.algorithm();
        envelope.key_id = key.key_id();
        envelope.signature = entry.content;
        goto verified;
      }
    }
  }
  if (!key_matched) {
    fail(ErrorCode::UntrustedSigner, "index signature names no trusted key");
  }
  fail(ErrorCode::SignatureInvalid, "index signature did not verify");

verified:
  MetadataIndex index;
  index.signature = envelope;
  index.content_hash = sha256(segments[1].compressed);

  std::string body;
  bool have_body = false;
  for (const TarEntry& entry : read_tar(segments[1].decompressed, false)) {
    if (entry.path == "APKINDEX") {
      body = to_string(entry.content);
      have_body = true;
    } else if (entry.path == "DESCRIPTION") {
      index.description = to_string(entry.content);
    }
  }
  if (!have_body) {
    fail(ErrorCode::MalformedIndex, "no APKINDEX entry in body segment");
  }
  index.entries = index_detail::parse_index_body(body);
  index_detail::check_unique(index.entries);
  index_detail::sort_entries(index.entries);
  return index;
}

inline ChangeSet diff_indexes(const MetadataIndex& old_index,
                              const MetadataIndex& new_index) {
  using Key = std::pair<std::string, std::string>;  // (name, arch)
  std::map<Key, const IndexEntry*> old_by_key, new_by_key;
  for (const auto& e : old_index.entries) old_by_key[{e.name, e.arch}] = &e;
  for (const auto& e : new_index.entries) new_by_key[{e.name, e.arch}] = &e;

  ChangeSet out;
  for (const auto& [key, entry] : new_by_key) {
    auto it = old_by_key.find(key);
    if (it == old_by_key.end()) {
      out.added.push_back(*entry);
    } else if (it->second->version != entry->version ||
               it->second->checksum != entry->checksum) {
      out.changed.push_back(*entry);
    }
  }
  for (const auto& [key, entry] : old_by_key) {
    if (!new_by_key.count(key)) out.removed.push_back(*entry);
  }
  return out;
}

}  // namespace tsr
