#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "tsr/bytes.hpp"
#include "tsr/error.hpp"
#include "tsr/gzip.hpp"
#include "tsr/keystore.hpp"
#include "tsr/tar.hpp"

namespace tsr {

// Installation hook points, in the fixed order they serialize in.
enum class ScriptKind {
  PreInstall,
  PostInstall,
  PreUpgrade,
  PostUpgrade,
  PreDeinstall,
  PostDeinstall,
  Trigger,
};

inline constexpr ScriptKind kAllScriptKinds[] = {
    ScriptKind::PreInstall,   ScriptKind::PostInstall,  ScriptKind::PreUpgrade,
    ScriptKind::PostUpgrade,  ScriptKind::PreDeinstall, ScriptKind::PostDeinstall,
    ScriptKind::Trigger,
};

inline std::string script_file_name(ScriptKind kind) {
  switch (kind) {
    case ScriptKind::PreInstall: return ".pre-install";
    case ScriptKind::PostInstall: return ".post-install";
    case ScriptKind::PreUpgrade: return ".pre-upgrade";
    case ScriptKind::PostUpgrade: return ".post-upgrade";
    case ScriptKind::PreDeinstall: return ".pre-deinstall";
    case ScriptKind::PostDeinstall: return ".post-deinstall";
    case ScriptKind::Trigger: return ".trigger";
  }
  return "";
}

inline std::optional<ScriptKind> script_kind_from_name(const std::string& name) {
  for (ScriptKind kind : kAllScriptKinds) {
    if (script_file_name(kind) == name) return kind;
  }
  return std::nullopt;
}

// One control-segment metadata field; an empty key carries a raw line
// (comments and the like) reproduced verbatim.
struct PkgInfoField {
  std::string key;
  std::string value;
  bool operator==(const PkgInfoField&) const = default;
};

struct PkgInfo {
  std::string pkgname;
  std::string pkgver;
  std::string arch;
  std::uint64_t size = 0;  // installed size
  std::string datahash;    // SHA-256 hex of the compressed data segment
  std::vector<std::string> depends;
  std::vector<PkgInfoField> extra_fields;

  bool operator==(const PkgInfo&) const = default;
};

namespace pkg_detail {

inline bool valid_pkgname(const std::string& name) {
  if (name.empty()) return false;
  return std::all_of(name.begin(), name.end(), [](unsigned char c) {
    return (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '.' ||
           c == '_' || c == '+' || c == '-';
  });
}

inline bool valid_datahash(const std::string& hash) {
  if (hash.size() != 64) return false;
  return std::all_of(hash.begin(), hash.end(), [](unsigned char c) {
    return (c >= '0' && c <= '9') || (c >= 'a' && c <= 'f');
  });
}

}  // namespace pkg_detail

inline std::string serialize_pkginfo(const PkgInfo& info) {
  std::string out;
  out += "pkgname = " + info.pkgname + "\n";
  out += "pkgver = " + info.pkgver + "\n";
  out += "arch = " + info.arch + "\n";
  out += "size = " + std::to_string(info.size) + "\n";
  out += "datahash = " + info.datahash + "\n";
  for (const auto& dep : info.depends) out += "depend = " + dep + "\n";
  for (const auto& f : info.extra_fields) {
    if (f.key.empty()) {
      out += f.value + "\n";
    } else {
      out += f.key + " = " + f.value + "\n";
    }
  }
  return out;
}

inline PkgInfo parse_pkginfo(const std::string& text) {
  PkgInfo info;
  bool have_size = false;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t eol = text.find('\n', pos);
    if (eol == std::string::npos) eol = text.size();
    std::string line = text.substr(pos, eol - pos);
    pos = eol + 1;
    if (line.empty()) continue;

    std::size_t sep = line.find(" = ");
    if (sep == std::string::npos) {
      info.extra_fields.push_back({"", line});
      continue;
    }
    std::string key = line.substr(0, sep);
    std::string value = line.substr(sep + 3);
    if (key == "pkgname") {
      info.pkgname = value;
    } else if (key == "pkgver") {
      info.pkgver = value;
    } else if (key == "arch") {
      info.arch = value;
    } else if (key == "size") {
      info.size = std::strtoull(value.c_str(), nullptr, 10);
      have_size = true;
    } else if (key == "datahash") {
      info.datahash = value;
    } else if (key == "depend") {
      info.depends.push_back(value);
    } else {
      info.extra_fields.push_back({key, value});
    }
  }
  if (!pkg_detail::valid_pkgname(info.pkgname)) {
    fail(ErrorCode::MalformedPackage, "invalid or missing pkgname");
  }
  if (info.pkgver.empty()) fail(ErrorCode::MalformedPackage, "missing pkgver");
  if (!have_size) fail(ErrorCode::MalformedPackage, "missing size");
  if (!pkg_detail::valid_datahash(info.datahash)) {
    fail(ErrorCode::MalformedPackage, "invalid datahash");
  }
  return info;
}

// Fully parsed three-segment package. The compressed segment bytes are kept
// exactly as on the wire: the control bytes are the signed message and the
// data bytes feed the datahash, so re-encoding them would break both.
struct ApkPackage {
  std::vector<TarEntry> signature_entries;
  PkgInfo pkginfo;
  std::map<ScriptKind, std::string> scripts;
  std::vector<TarEntry> script_entries;  // same scripts, with pax records
  std::vector<TarEntry> extra_control_entries;
  std::vector<TarEntry> data_entries;
  Bytes signature_segment_bytes;
  Bytes control_segment_bytes;
  Bytes data_segment_bytes;

  Bytes serialize() const {
    Bytes out = signature_segment_bytes;
    append(out, control_segment_bytes);
    append(out, data_segment_bytes);
    return out;
  }
};

struct VerificationResult {
  KeyId signer_key_id{};
  SignAlgorithm algorithm = SignAlgorithm::Rsa2048Sha256;
};

inline std::string signature_entry_name(SignAlgorithm alg, const KeyId& id) {
  return ".SIGN." + algorithm_name(alg) + "." + to_hex(id) + ".pub";
}

namespace pkg_detail {

struct SignatureName {
  SignAlgorithm algorithm;
  std::string key_name;
};

inline std::optional<SignatureName> parse_signature_name(const std::string& name) {
  if (name.rfind(".SIGN.", 0) != 0) return std::nullopt;
  std::string rest = name.substr(6);
  auto dot = rest.find('.');
  if (dot == std::string::npos) return std::nullopt;
  std::string alg = rest.substr(0, dot);
  std::string key = rest.substr(dot + 1);
  if (key.size() > 4 && key.compare(key.size() - 4, 4, ".pub") == 0) {
    key = key.substr(0, key.size() - 4);
  }
  if (alg == "RSA") return SignatureName{SignAlgorithm::Rsa2048Sha256, key};
  if (alg == "ED25519") return SignatureName{SignAlgorithm::Ed25519, key};
  return std::nullopt;
}

}  // namespace pkg_detail

inline ApkPackage parse_apk(ByteView bytes) {
  std::vector<GzipSegment> segments = split_gzip_streams(bytes);
  if (segments.size() != 3) {
    fail(ErrorCode::MalformedPackage,
         "expected 3 gzip segments, found " + std::to_string(segments.size()));
  }

  ApkPackage pkg;
  pkg.signature_segment_bytes = segments[0].compressed;
  pkg.control_segment_bytes = segments[1].compressed;
  pkg.data_segment_bytes = segments[2].compressed;

  pkg.signature_entries = read_tar(segments[0].decompressed, true);
  std::vector<TarEntry> control = read_tar(segments[1].decompressed, true);
  pkg.data_entries = read_tar(segments[2].decompressed, false);

  bool have_pkginfo = false;
  for (auto& entry : control) {
    if (entry.path == ".PKGINFO") {
      pkg.pkginfo = parse_pkginfo(to_string(entry.content));
      have_pkginfo = true;
    } else if (auto kind = script_kind_from_name(entry.path)) {
      pkg.scripts[*kind] = to_string(entry.content);
      pkg.script_entries.push_back(entry);
    } else {
      pkg.extra_control_entries.push_back(entry);
    }
  }
  if (!have_pkginfo) fail(ErrorCode::MissingPkgInfo, "control segment lacks .PKGINFO");

  std::string actual = to_hex(sha256(pkg.data_segment_bytes));
  if (actual != pkg.pkginfo.datahash) {
    fail(ErrorCode::DatahashMismatch,
         "datahash " + pkg.pkginfo.datahash + " != " + actual);
  }
  return pkg;
}

inline VerificationResult verify_package(const ApkPackage& pkg,
                                         const std::vector<PublicKey>& trusted_signers) {
  std::string actual = to_hex(sha256(pkg.data_segment_bytes));
  if (actual != pkg.pkginfo.datahash) {
    fail(ErrorCode::DatahashMismatch,
         "datahash " + pkg.pkginfo.datahash + " != " + actual);
  }

  bool key_matched = false;
  for (const TarEntry& entry : pkg.signature_entries) {
    auto name = pkg_detail::parse_signature_name(entry.path);
    if (!name) continue;
    for (const PublicKey& key : trusted_signers) {
      if (key.algorithm() != name->algorithm) continue;
      if (key.key_id_hex() != name->key_name) continue;
      key_matched = true;
      if (verify_raw(key, entry.content, pkg.control_segment_bytes)) {
        return VerificationResult{key.key_id(), key.algorithm()};
      }
    }
  }
  if (!key_matched) {
    fail(ErrorCode::UntrustedSigner,
         "no signature entry names a trusted key (" + pkg.pkginfo.pkgname + ")");
  }
  fail(ErrorCode::SignatureInvalid,
       "signature did not verify over the control segment (" +
           pkg.pkginfo.pkgname + ")");
}

// Core assembler: control entries arrive fully formed (pax records included),
// .PKGINFO is prepended here with the datahash recomputed over the freshly
// compressed data segment.
inline Bytes build_apk_from_entries(PkgInfo pkginfo,
                                    const std::vector<TarEntry>& control_entries,
                                    const std::vector<TarEntry>& data_entries,
                                    const SigningKeypair& signer) {
  Bytes data_segment = gzip_compress(write_tar(data_entries, true));
  pkginfo.datahash = to_hex(sha256(data_segment));

  TarEntry pkginfo_entry;
  pkginfo_entry.path = ".PKGINFO";
  pkginfo_entry.mode = 0644;
  pkginfo_entry.content = to_bytes(serialize_pkginfo(pkginfo));

  std::vector<TarEntry> control{pkginfo_entry};
  control.insert(control.end(), control_entries.begin(), control_entries.end());
  Bytes control_segment = gzip_compress(write_tar(control, false));

  TarEntry sig_entry;
  sig_entry.path = signature_entry_name(signer.algorithm(), signer.key_id());
  sig_entry.mode = 0644;
  sig_entry.content = sign_raw(signer, control_segment);
  Bytes signature_segment = gzip_compress(write_tar({sig_entry}, false));

  Bytes out = std::move(signature_segment);
  append(out, control_segment);
  append(out, data_segment);
  return out;
}

inline Bytes build_apk(const PkgInfo& pkginfo,
                       const std::map<ScriptKind, std::string>& scripts,
                       const std::vector<TarEntry>& data_entries,
                       const SigningKeypair& signer,
                       const std::vector<TarEntry>& extra_control_entries = {}) {
  std::vector<TarEntry> control;
  for (ScriptKind kind : kAllScriptKinds) {
    auto it = scripts.find(kind);
    if (it == scripts.end()) continue;
    TarEntry entry;
    entry.path = script_file_name(kind);
    entry.mode = 0755;
    entry.content = to_bytes(it->second);
    control.push_back(std::move(entry));
  }
  control.insert(control.end(), extra_control_entries.begin(),
                 extra_control_entries.end());
  return build_apk_from_entries(pkginfo, control, data_entries, signer);
}

}  // namespace tsr
