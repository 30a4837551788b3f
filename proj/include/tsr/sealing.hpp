#pragma once

#include <openssl/evp.h>

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <string>

#include "tsr/bytes.hpp"
#include "tsr/error.hpp"
#include "tsr/keystore.hpp"

namespace tsr {

// Rollback protection: every seal stamps the blob with a fresh counter
// value, and unseal refuses blobs whose stamp is not the current value.
class MonotonicCounter {
 public:
  virtual ~MonotonicCounter() = default;
  virtual std::uint64_t read() = 0;
  virtual std::uint64_t increment() = 0;
};

class InMemoryCounter : public MonotonicCounter {
 public:
  explicit InMemoryCounter(std::uint64_t start = 0) : value_(start) {}
  std::uint64_t read() override {
    std::lock_guard lock(mu_);
    return value_;
  }
  std::uint64_t increment() override {
    std::lock_guard lock(mu_);
    return ++value_;
  }

 private:
  std::mutex mu_;
  std::uint64_t value_;
};

namespace seal_detail {

inline constexpr char kCounterMagic[] = "TSRCTR1";  // 7 bytes, no NUL on disk
inline constexpr char kSealMagic[] = "TSRSEAL1";    // 8 bytes
inline constexpr std::size_t kNonceLen = 12;
inline constexpr std::size_t kTagLen = 16;

inline void put_u64_be(Bytes& out, std::uint64_t v) {
  for (int shift = 56; shift >= 0; shift -= 8) {
    out.push_back(static_cast<std::uint8_t>(v >> shift));
  }
}

inline std::uint64_t get_u64_be(ByteView data, std::size_t offset) {
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < 8; ++i) v = (v << 8) | data[offset + i];
  return v;
}

}  // namespace seal_detail

// Tamper-evident counter file: magic | value(8, BE) | HMAC-SHA256(magic|value).
// A missing file reads as zero so a fresh deployment can start counting; a
// corrupt or forged file is CounterFailure.
class FileCounter : public MonotonicCounter {
 public:
  FileCounter(std::filesystem::path path, Bytes mac_key)
      : path_(std::move(path)), mac_key_(std::move(mac_key)) {}

  std::uint64_t read() override {
    std::lock_guard lock(mu_);
    return read_locked();
  }

  std::uint64_t increment() override {
    std::lock_guard lock(mu_);
    std::uint64_t next = read_locked() + 1;
    write_locked(next);
    return next;
  }

 private:
  std::uint64_t read_locked() {
    std::ifstream in(path_, std::ios::binary);
    if (!in) return 0;
    Bytes data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    const std::size_t magic_len = sizeof(seal_detail::kCounterMagic) - 1;
    if (data.size() != magic_len + 8 + 32 ||
        !std::equal(data.begin(), data.begin() + magic_len,
                    seal_detail::kCounterMagic)) {
      fail(ErrorCode::CounterFailure, "counter file malformed: " + path_.string());
    }
    ByteView body(data.data(), magic_len + 8);
    Bytes mac = hmac_sha256(mac_key_, body);
    if (!std::equal(mac.begin(), mac.end(), data.begin() + magic_len + 8)) {
      fail(ErrorCode::CounterFailure, "counter file MAC mismatch: " + path_.string());
    }
    return seal_detail::get_u64_be(data, magic_len);
  }

  void write_locked(std::uint64_t value) {
    Bytes body(seal_detail::kCounterMagic,
               seal_detail::kCounterMagic + sizeof(seal_detail::kCounterMagic) - 1);
    seal_detail::put_u64_be(body, value);
    Bytes mac = hmac_sha256(mac_key_, body);
    append(body, mac);
    std::filesystem::path tmp = path_;
    tmp += ".tmp";
    {
      std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
      if (!out) fail(ErrorCode::CounterFailure, "cannot write counter: " + tmp.string());
      out.write(reinterpret_cast<const char*>(body.data()),
                static_cast<std::streamsize>(body.size()));
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path_, ec);
    if (ec) fail(ErrorCode::CounterFailure, "cannot replace counter: " + ec.message());
  }

  std::mutex mu_;
  std::filesystem::path path_;
  Bytes mac_key_;
};

// magic | nonce(12) | counter_value(8, BE) | AES-256-GCM ciphertext+tag.
// The counter value rides as associated data, so editing the stamp breaks
// authentication rather than merely tripping the staleness check.
struct SealedBlob {
  std::array<std::uint8_t, seal_detail::kNonceLen> nonce{};
  std::uint64_t counter_value = 0;
  Bytes ciphertext;

  Bytes serialize() const {
    Bytes out(seal_detail::kSealMagic,
              seal_detail::kSealMagic + sizeof(seal_detail::kSealMagic) - 1);
    out.insert(out.end(), nonce.begin(), nonce.end());
    seal_detail::put_u64_be(out, counter_value);
    append(out, ciphertext);
    return out;
  }

  static SealedBlob deserialize(ByteView data) {
    const std::size_t magic_len = sizeof(seal_detail::kSealMagic) - 1;
    const std::size_t header = magic_len + seal_detail::kNonceLen + 8;
    if (data.size() < header + seal_detail::kTagLen ||
        !std::equal(data.begin(), data.begin() + magic_len, seal_detail::kSealMagic)) {
      fail(ErrorCode::AuthenticationFailure, "sealed blob malformed");
    }
    SealedBlob blob;
    std::copy(data.begin() + magic_len,
              data.begin() + magic_len + seal_detail::kNonceLen, blob.nonce.begin());
    blob.counter_value = seal_detail::get_u64_be(data, magic_len + seal_detail::kNonceLen);
    blob.ciphertext.assign(data.begin() + header, data.end());
    return blob;
  }

  bool operator==(const SealedBlob&) const = default;
};

namespace seal_detail {

inline Bytes gcm_aad(std::uint64_t counter_value) {
  Bytes aad(kSealMagic, kSealMagic + sizeof(kSealMagic) - 1);
  put_u64_be(aad, counter_value);
  return aad;
}

inline Bytes derive_aes_key(ByteView sealing_secret) {
  return hmac_sha256(sealing_secret, to_bytes("tsr-sealing-aes-key"));
}

}  // namespace seal_detail

inline SealedBlob seal(ByteView plaintext, MonotonicCounter& counter,
                       ByteView sealing_secret) {
  SealedBlob blob;
  blob.counter_value = counter.increment();
  Bytes nonce = random_bytes(seal_detail::kNonceLen);
  std::copy(nonce.begin(), nonce.end(), blob.nonce.begin());
  Bytes key = seal_detail::derive_aes_key(sealing_secret);
  Bytes aad = seal_detail::gcm_aad(blob.counter_value);

  EVP_CIPHER_CTX* ctx = EVP_CIPHER_CTX_new();
  Bytes out(plaintext.size() + seal_detail::kTagLen);
  int len = 0;
  int total = 0;
  bool ok = EVP_EncryptInit_ex(ctx, EVP_aes_256_gcm(), nullptr, key.data(),
                               blob.nonce.data()) == 1 &&
            EVP_EncryptUpdate(ctx, nullptr, &len, aad.data(),
                              static_cast<int>(aad.size())) == 1;
  if (ok && !plaintext.empty()) {
    ok = EVP_EncryptUpdate(ctx, out.data(), &len, plaintext.data(),
                           static_cast<int>(plaintext.size())) == 1;
    total = len;
  }
  ok = ok && EVP_EncryptFinal_ex(ctx, out.data() + total, &len) == 1;
  total += len;
  ok = ok && EVP_CIPHER_CTX_ctrl(ctx, EVP_CTRL_GCM_GET_TAG,
                                 seal_detail::kTagLen, out.data() + total) == 1;
  EVP_CIPHER_CTX_free(ctx);
  if (!ok) fail(ErrorCode::IoError, "GCM encryption failed");
  out.resize(static_cast<std::size_t>(total) + seal_detail::kTagLen);
  blob.ciphertext = std::move(out);
  return blob;
}

inline Bytes unseal(const SealedBlob& blob, MonotonicCounter& counter,
                    ByteView sealing_secret) {
  if (blob.ciphertext.size() < seal_detail::kTagLen) {
    fail(ErrorCode::AuthenticationFailure, "sealed blob truncated");
  }
  Bytes key = seal_detail::derive_aes_key(sealing_secret);
  Bytes aad = seal_detail::gcm_aad(blob.counter_value);
  const std::size_t body_len = blob.ciphertext.size() - seal_detail::kTagLen;

  EVP_CIPHER_CTX* ctx = EVP_CIPHER_CTX_new();
  Bytes out(body_len);
  int len = 0;
  int total = 0;
  Bytes tag(blob.ciphertext.end() - seal_detail::kTagLen, blob.ciphertext.end());
  bool ok = EVP_DecryptInit_ex(ctx, EVP_aes_256_gcm(), nullptr, key.data(),
                               blob.nonce.data()) == 1 &&
            EVP_DecryptUpdate(ctx, nullptr, &len, aad.data(),
                              static_cast<int>(aad.size())) == 1;
  if (ok && body_len > 0) {
    ok = EVP_DecryptUpdate(ctx, out.data(), &len, blob.ciphertext.data(),
                           static_cast<int>(body_len)) == 1;
    total = len;
  }
  ok = ok && EVP_CIPHER_CTX_ctrl(ctx, EVP_CTRL_GCM_SET_TAG, seal_detail::kTagLen,
                                 tag.data()) == 1 &&
       EVP_DecryptFinal_ex(ctx, out.data() + total, &len) == 1;
  EVP_CIPHER_CTX_free(ctx);
  if (!ok) fail(ErrorCode::AuthenticationFailure, "sealed blob failed authentication");

  // Authentication before staleness: a forged stamp must not be reported as
  // mere staleness.
  if (blob.counter_value != counter.read()) {
    fail(ErrorCode::StaleSeal, "sealed state is stale (counter " +
                                   std::to_string(blob.counter_value) + " vs " +
                                   std::to_string(counter.read()) + ")");
  }
  out.resize(static_cast<std::size_t>(total));
  return out;
}

}  // namespace tsr
