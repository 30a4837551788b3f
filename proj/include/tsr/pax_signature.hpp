#pragma once

#include <optional>
#include <string>

#include "tsr/error.hpp"
#include "tsr/keystore.hpp"
#include "tsr/tar.hpp"

namespace tsr {

// Per-file signatures travel in the same extended-header slot the kernel's
// integrity subsystem reads appraisal material from.
inline constexpr const char* kSecurityImaPaxKey = "SCHILY.xattr.security.ima";

inline TarEntry attach_signature_record(const TarEntry& entry,
                                        const SignatureEnvelope& envelope) {
  if (entry.type != TarEntryType::Regular) {
    fail(ErrorCode::NotARegularFile,
         "cannot attach signature to non-regular entry: " + entry.path);
  }
  TarEntry out = entry;
  out.set_pax(kSecurityImaPaxKey, envelope.serialize());
  return out;
}

inline TarEntry sign_entry(const TarEntry& entry, const SigningKeypair& key) {
  return attach_signature_record(entry, sign_content(key, entry.content));
}

inline std::optional<SignatureEnvelope> entry_signature(const TarEntry& entry) {
  const PaxRecord* raw = entry.find_pax(kSecurityImaPaxKey);
  if (raw == nullptr) return std::nullopt;
  return SignatureEnvelope::deserialize(raw->value);
}

// True only when the entry carries an envelope that verifies over its
// content under the given key.
inline bool entry_signature_valid(const TarEntry& entry, const PublicKey& key) {
  auto env = entry_signature(entry);
  if (!env) return false;
  return verify_envelope(key, *env, entry.content);
}

}  // namespace tsr
