#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace tsr {

enum class ErrorCode {
  // archive
  MalformedGzip,
  MalformedTar,
  PathTooLong,
  NotARegularFile,
  // package
  MalformedPackage,
  DatahashMismatch,
  MissingPkgInfo,
  UntrustedSigner,
  SignatureInvalid,
  // index
  MalformedIndex,
  // sanitizer
  ConflictingIdentity,
  UidExhaustion,
  RewriteUnsupported,
  // keystore
  EntropyUnavailable,
  CounterFailure,
  AuthenticationFailure,
  StaleSeal,
  // mirrors
  QuorumUnreachable,
  InsufficientMirrors,
  PackageUnavailable,
  SizeMismatch,
  // repository
  InvalidPolicy,
  UpstreamSignatureInvalid,
  NotYetInitialized,
  UnknownPackage,
  CacheCorrupted,
  UnknownRepository,
  // gateway / tooling
  InvalidSpec,
  BindFailure,
  RestoreFailure,
  IoError,
};

inline std::string_view error_code_name(ErrorCode c) {
  switch (c) {
    case ErrorCode::MalformedGzip: return "MalformedGzip";
    case ErrorCode::MalformedTar: return "MalformedTar";
    case ErrorCode::PathTooLong: return "PathTooLong";
    case ErrorCode::NotARegularFile: return "NotARegularFile";
    case ErrorCode::MalformedPackage: return "MalformedPackage";
    case ErrorCode::DatahashMismatch: return "DatahashMismatch";
    case ErrorCode::MissingPkgInfo: return "MissingPkgInfo";
    case ErrorCode::UntrustedSigner: return "UntrustedSigner";
    case ErrorCode::SignatureInvalid: return "SignatureInvalid";
    case ErrorCode::MalformedIndex: return "MalformedIndex";
    case ErrorCode::ConflictingIdentity: return "ConflictingIdentity";
    case ErrorCode::UidExhaustion: return "UidExhaustion";
    case ErrorCode::RewriteUnsupported: return "RewriteUnsupported";
    case ErrorCode::EntropyUnavailable: return "EntropyUnavailable";
    case ErrorCode::CounterFailure: return "CounterFailure";
    case ErrorCode::AuthenticationFailure: return "AuthenticationFailure";
    case ErrorCode::StaleSeal: return "StaleSeal";
    case ErrorCode::QuorumUnreachable: return "QuorumUnreachable";
    case ErrorCode::InsufficientMirrors: return "InsufficientMirrors";
    case ErrorCode::PackageUnavailable: return "PackageUnavailable";
    case ErrorCode::SizeMismatch: return "SizeMismatch";
    case ErrorCode::InvalidPolicy: return "InvalidPolicy";
    case ErrorCode::UpstreamSignatureInvalid: return "UpstreamSignatureInvalid";
    case ErrorCode::NotYetInitialized: return "NotYetInitialized";
    case ErrorCode::UnknownPackage: return "UnknownPackage";
    case ErrorCode::CacheCorrupted: return "CacheCorrupted";
    case ErrorCode::UnknownRepository: return "UnknownRepository";
    case ErrorCode::InvalidSpec: return "InvalidSpec";
    case ErrorCode::BindFailure: return "BindFailure";
    case ErrorCode::RestoreFailure: return "RestoreFailure";
    case ErrorCode::IoError: return "IoError";
  }
  return "UnknownError";
}

class TsrError : public std::runtime_error {
 public:
  TsrError(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(error_code_name(code)) + ": " + message),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw TsrError(code, message);
}

}  // namespace tsr
