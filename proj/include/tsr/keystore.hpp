#pragma once

#include <openssl/bio.h>
#include <openssl/evp.h>
#include <openssl/hmac.h>
#include <openssl/pem.h>
#include <openssl/rand.h>

#include <array>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "tsr/bytes.hpp"
#include "tsr/error.hpp"

namespace tsr {

// Signature scheme identifiers as they appear in envelope byte 1.
enum class SignAlgorithm : std::uint8_t {
  Rsa2048Sha256 = 0x01,
  Ed25519 = 0x02,
};

inline std::string algorithm_name(SignAlgorithm a) {
  return a == SignAlgorithm::Rsa2048Sha256 ? "RSA" : "ED25519";
}

inline std::size_t signature_length(SignAlgorithm a) {
  return a == SignAlgorithm::Rsa2048Sha256 ? 256 : 64;
}

using KeyId = std::array<std::uint8_t, 4>;

namespace crypto_detail {

using EvpPkeyPtr = std::shared_ptr<EVP_PKEY>;

inline EvpPkeyPtr wrap(EVP_PKEY* p) {
  if (p == nullptr) fail(ErrorCode::IoError, "null EVP_PKEY");
  return EvpPkeyPtr(p, EVP_PKEY_free);
}

inline Bytes digest(const EVP_MD* md, ByteView data) {
  Bytes out(EVP_MAX_MD_SIZE);
  unsigned len = 0;
  if (EVP_Digest(data.data(), data.size(), out.data(), &len, md, nullptr) != 1) {
    fail(ErrorCode::IoError, "digest failed");
  }
  out.resize(len);
  return out;
}

}  // namespace crypto_detail

inline Bytes sha256(ByteView data) { return crypto_detail::digest(EVP_sha256(), data); }
inline Bytes sha1(ByteView data) { return crypto_detail::digest(EVP_sha1(), data); }

inline Bytes hmac_sha256(ByteView key, ByteView data) {
  Bytes out(EVP_MAX_MD_SIZE);
  unsigned len = 0;
  if (HMAC(EVP_sha256(), key.data(), static_cast<int>(key.size()), data.data(),
           data.size(), out.data(), &len) == nullptr) {
    fail(ErrorCode::IoError, "HMAC failed");
  }
  out.resize(len);
  return out;
}

inline Bytes random_bytes(std::size_t n) {
  Bytes out(n);
  if (n > 0 && RAND_bytes(out.data(), static_cast<int>(n)) != 1) {
    fail(ErrorCode::EntropyUnavailable, "RAND_bytes failed");
  }
  return out;
}

inline KeyId key_id_from_public_der(ByteView der) {
  Bytes h = sha256(der);
  return {h[0], h[1], h[2], h[3]};
}

// Verification half of a signing key: SubjectPublicKeyInfo DER plus the
// derived 4-byte key id.
class PublicKey {
 public:
  PublicKey() = default;

  static PublicKey from_der(SignAlgorithm algorithm, Bytes der) {
    const std::uint8_t* p = der.data();
    EVP_PKEY* key = d2i_PUBKEY(nullptr, &p, static_cast<long>(der.size()));
    if (key == nullptr) fail(ErrorCode::IoError, "cannot parse public key DER");
    PublicKey out;
    out.algorithm_ = algorithm;
    out.der_ = std::move(der);
    out.key_ = crypto_detail::wrap(key);
    out.key_id_ = key_id_from_public_der(out.der_);
    return out;
  }

  static PublicKey from_pem(const std::string& pem) {
    BIO* bio = BIO_new_mem_buf(pem.data(), static_cast<int>(pem.size()));
    EVP_PKEY* key = PEM_read_bio_PUBKEY(bio, nullptr, nullptr, nullptr);
    BIO_free(bio);
    if (key == nullptr) fail(ErrorCode::IoError, "cannot parse public key PEM");
    auto holder = crypto_detail::wrap(key);
    SignAlgorithm alg = EVP_PKEY_base_id(key) == EVP_PKEY_ED25519
                            ? SignAlgorithm::Ed25519
                            : SignAlgorithm::Rsa2048Sha256;
    int len = i2d_PUBKEY(key, nullptr);
    if (len <= 0) fail(ErrorCode::IoError, "cannot encode public key");
    Bytes der(static_cast<std::size_t>(len));
    std::uint8_t* out = der.data();
    i2d_PUBKEY(key, &out);
    PublicKey pk;
    pk.algorithm_ = alg;
    pk.der_ = std::move(der);
    pk.key_ = holder;
    pk.key_id_ = key_id_from_public_der(pk.der_);
    return pk;
  }

  std::string to_pem() const {
    BIO* bio = BIO_new(BIO_s_mem());
    PEM_write_bio_PUBKEY(bio, key_.get());
    char* data = nullptr;
    long len = BIO_get_mem_data(bio, &data);
    std::string pem(data, static_cast<std::size_t>(len));
    BIO_free(bio);
    return pem;
  }

  SignAlgorithm algorithm() const { return algorithm_; }
  const Bytes& der() const { return der_; }
  const KeyId& key_id() const { return key_id_; }
  std::string key_id_hex() const { return to_hex(key_id_); }
  EVP_PKEY* handle() const { return key_.get(); }

  bool operator==(const PublicKey& o) const { return der_ == o.der_; }

 private:
  SignAlgorithm algorithm_ = SignAlgorithm::Rsa2048Sha256;
  Bytes der_;
  KeyId key_id_{};
  crypto_detail::EvpPkeyPtr key_;
};

// version(1) | algorithm(1) | key_id(4) | signature. 262 bytes for RSA-2048,
// 70 for Ed25519.
struct SignatureEnvelope {
  std::uint8_t version = 0x01;
  SignAlgorithm algorithm = SignAlgorithm::Rsa2048Sha256;
  KeyId key_id{};
  Bytes signature;

  Bytes serialize() const {
    Bytes out;
    out.reserve(6 + signature.size());
    out.push_back(version);
    out.push_back(static_cast<std::uint8_t>(algorithm));
    out.insert(out.end(), key_id.begin(), key_id.end());
    append(out, signature);
    return out;
  }

  static SignatureEnvelope deserialize(ByteView data) {
    if (data.size() < 6) fail(ErrorCode::SignatureInvalid, "envelope too short");
    SignatureEnvelope env;
    env.version = data[0];
    if (env.version != 0x01) fail(ErrorCode::SignatureInvalid, "unknown envelope version");
    if (data[1] != 0x01 && data[1] != 0x02) {
      fail(ErrorCode::SignatureInvalid, "unknown envelope algorithm");
    }
    env.algorithm = static_cast<SignAlgorithm>(data[1]);
    std::copy(data.begin() + 2, data.begin() + 6, env.key_id.begin());
    env.signature.assign(data.begin() + 6, data.end());
    if (env.signature.size() != signature_length(env.algorithm)) {
      fail(ErrorCode::SignatureInvalid, "envelope signature length mismatch");
    }
    return env;
  }

  bool operator==(const SignatureEnvelope&) const = default;
};

// Private material never leaves this type except via private_key_pem(),
// whose only callers are the sealed-state serializer and the keygen tool.
class SigningKeypair {
 public:
  SigningKeypair() = default;

  static SigningKeypair generate(SignAlgorithm algorithm) {
    EVP_PKEY_CTX* ctx = EVP_PKEY_CTX_new_id(
        algorithm == SignAlgorithm::Rsa2048Sha256 ? EVP_PKEY_RSA : EVP_PKEY_ED25519,
        nullptr);
    if (ctx == nullptr) fail(ErrorCode::EntropyUnavailable, "keygen ctx failed");
    EVP_PKEY* key = nullptr;
    if (EVP_PKEY_keygen_init(ctx) != 1 ||
        (algorithm == SignAlgorithm::Rsa2048Sha256 &&
         EVP_PKEY_CTX_set_rsa_keygen_bits(ctx, 2048) != 1) ||
        EVP_PKEY_keygen(ctx, &key) != 1) {
      EVP_PKEY_CTX_free(ctx);
      fail(ErrorCode::EntropyUnavailable, "key generation failed");
    }
    EVP_PKEY_CTX_free(ctx);
    return from_handle(algorithm, crypto_detail::wrap(key));
  }

  static SigningKeypair from_private_pem(const std::string& pem) {
    BIO* bio = BIO_new_mem_buf(pem.data(), static_cast<int>(pem.size()));
    EVP_PKEY* key = PEM_read_bio_PrivateKey(bio, nullptr, nullptr, nullptr);
    BIO_free(bio);
    if (key == nullptr) fail(ErrorCode::IoError, "cannot parse private key PEM");
    auto holder = crypto_detail::wrap(key);
    SignAlgorithm alg = EVP_PKEY_base_id(key) == EVP_PKEY_ED25519
                            ? SignAlgorithm::Ed25519
                            : SignAlgorithm::Rsa2048Sha256;
    return from_handle(alg, holder);
  }

  std::string private_key_pem() const {
    BIO* bio = BIO_new(BIO_s_mem());
    PEM_write_bio_PKCS8PrivateKey(bio, key_.get(), nullptr, nullptr, 0, nullptr,
                                  nullptr);
    char* data = nullptr;
    long len = BIO_get_mem_data(bio, &data);
    std::string pem(data, static_cast<std::size_t>(len));
    BIO_free(bio);
    return pem;
  }

  SignAlgorithm algorithm() const { return algorithm_; }
  const PublicKey& public_key() const { return public_; }
  const KeyId& key_id() const { return public_.key_id(); }
  std::string key_id_hex() const { return public_.key_id_hex(); }
  EVP_PKEY* handle() const { return key_.get(); }
  bool valid() const { return key_ != nullptr; }

 private:
  static SigningKeypair from_handle(SignAlgorithm algorithm,
                                    crypto_detail::EvpPkeyPtr key) {
    int len = i2d_PUBKEY(key.get(), nullptr);
    if (len <= 0) fail(ErrorCode::IoError, "cannot encode public key");
    Bytes der(static_cast<std::size_t>(len));
    std::uint8_t* out = der.data();
    i2d_PUBKEY(key.get(), &out);
    SigningKeypair kp;
    kp.algorithm_ = algorithm;
    kp.key_ = std::move(key);
    kp.public_ = PublicKey::from_der(algorithm, std::move(der));
    return kp;
  }

  SignAlgorithm algorithm_ = SignAlgorithm::Rsa2048Sha256;
  crypto_detail::EvpPkeyPtr key_;
  PublicKey public_;
};

namespace crypto_detail {

// RSA signs SHA-256(content) via PKCS#1 v1.5; Ed25519 signs the SHA-256
// digest as its message. Both bind the envelope to SHA-256(content).
inline Bytes raw_sign(const SigningKeypair& key, ByteView content) {
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  const bool rsa = key.algorithm() == SignAlgorithm::Rsa2048Sha256;
  Bytes digest_msg;
  ByteView msg = content;
  if (!rsa) {
    digest_msg = sha256(content);
    msg = digest_msg;
  }
  if (EVP_DigestSignInit(ctx, nullptr, rsa ? EVP_sha256() : nullptr, nullptr,
                         key.handle()) != 1) {
    EVP_MD_CTX_free(ctx);
    fail(ErrorCode::IoError, "DigestSignInit failed");
  }
  std::size_t len = 0;
  if (EVP_DigestSign(ctx, nullptr, &len, msg.data(), msg.size()) != 1) {
    EVP_MD_CTX_free(ctx);
    fail(ErrorCode::IoError, "DigestSign sizing failed");
  }
  Bytes sig(len);
  if (EVP_DigestSign(ctx, sig.data(), &len, msg.data(), msg.size()) != 1) {
    EVP_MD_CTX_free(ctx);
    fail(ErrorCode::IoError, "DigestSign failed");
  }
  EVP_MD_CTX_free(ctx);
  sig.resize(len);
  return sig;
}

inline bool raw_verify(const PublicKey& key, ByteView signature, ByteView content) {
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  const bool rsa = key.algorithm() == SignAlgorithm::Rsa2048Sha256;
  Bytes digest_msg;
  ByteView msg = content;
  if (!rsa) {
    digest_msg = sha256(content);
    msg = digest_msg;
  }
  if (EVP_DigestVerifyInit(ctx, nullptr, rsa ? EVP_sha256() : nullptr, nullptr,
                           key.handle()) != 1) {
    EVP_MD_CTX_free(ctx);
    return false;
  }
  int rc = EVP_DigestVerify(ctx, signature.data(), signature.size(), msg.data(),
                            msg.size());
  EVP_MD_CTX_free(ctx);
  return rc == 1;
}

}  // namespace crypto_detail

inline SignatureEnvelope sign_content(const SigningKeypair& key, ByteView content) {
  SignatureEnvelope env;
  env.algorithm = key.algorithm();
  env.key_id = key.key_id();
  env.signature = crypto_detail::raw_sign(key, content);
  return env;
}

inline bool verify_envelope(const PublicKey& key, const SignatureEnvelope& env,
                            ByteView content) {
  if (env.algorithm != key.algorithm()) return false;
  if (env.key_id != key.key_id()) return false;
  return crypto_detail::raw_verify(key, env.signature, content);
}

// Raw detached signature, used for package and index segment signatures
// where the on-wire convention carries algorithm and key id in the entry name.
inline Bytes sign_raw(const SigningKeypair& key, ByteView content) {
  return crypto_detail::raw_sign(key, content);
}

inline bool verify_raw(const PublicKey& key, ByteView signature, ByteView content) {
  return crypto_detail::raw_verify(key, signature, content);
}

}  // namespace tsr
