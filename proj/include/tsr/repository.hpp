#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <shared_mutex>
#include <string>
#include <vector>

#include <json.hpp>

#include "tsr/bytes.hpp"
#include "tsr/error.hpp"
#include "tsr/index.hpp"
#include "tsr/keystore.hpp"
#include "tsr/mirrors.hpp"
#include "tsr/package.hpp"
#include "tsr/policy.hpp"
#include "tsr/sanitizer.hpp"
#include "tsr/sealing.hpp"

namespace tsr {

struct RefreshReport {
  bool upstream_changed = false;
  std::size_t packages_sanitized = 0;  // ran through sanitization, accepted
  std::size_t packages_rejected = 0;   // ran through sanitization, rejected
  Bytes index_version_hash;            // SHA-256 of the served index bytes
  std::vector<std::string> package_errors;
  std::vector<SanitizationReport> reports;
};

struct RepositoryStatus {
  std::string repository_id;
  std::string key_id;
  std::string algorithm;
  std::string architecture;
  bool initialized = false;
  std::size_t package_count = 0;
  std::size_t rejected_count = 0;
  std::string index_hash;     // hex, empty before first refresh
  std::string upstream_hash;  // hex, empty before first refresh
  std::size_t mirror_count = 0;
};

namespace repo_detail {

namespace fs = std::filesystem;

inline Bytes read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::IoError, "cannot open " + path.string());
  Bytes out((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return out;
}

inline void write_file_atomic(const fs::path& path, ByteView data) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorCode::IoError, "cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(data.data()),
              static_cast<std::streamsize>(data.size()));
    if (!out) fail(ErrorCode::IoError, "short write to " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) fail(ErrorCode::IoError, "cannot move " + tmp.string() + ": " + ec.message());
}

inline Bytes counter_mac_key(ByteView sealing_secret) {
  return hmac_sha256(sealing_secret, to_bytes(std::string("tsr-counter-mac-key")));
}

inline nlohmann::json user_to_json(const UserSpec& u) {
  nlohmann::json j{{"name", u.name},
                   {"group", u.primary_group},
                   {"gecos", u.gecos},
                   {"home", u.home},
                   {"shell", u.shell},
                   {"system", u.system_account},
                   {"password", u.password_field}};
  if (u.explicit_uid) j["uid"] = *u.explicit_uid;
  return j;
}

inline UserSpec user_from_json(const nlohmann::json& j) {
  UserSpec u;
  u.name = j.at("name").get<std::string>();
  u.primary_group = j.at("group").get<std::string>();
  u.gecos = j.at("gecos").get<std::string>();
  u.home = j.at("home").get<std::string>();
  u.shell = j.at("shell").get<std::string>();
  u.system_account = j.at("system").get<bool>();
  u.password_field = j.at("password").get<std::string>();
  if (j.contains("uid")) u.explicit_uid = j.at("uid").get<std::uint32_t>();
  return u;
}

inline nlohmann::json group_to_json(const GroupSpec& g) {
  nlohmann::json j{{"name", g.name}, {"members", g.members}};
  if (g.explicit_gid) j["gid"] = *g.explicit_gid;
  return j;
}

inline GroupSpec group_from_json(const nlohmann::json& j) {
  GroupSpec g;
  g.name = j.at("name").get<std::string>();
  g.members = j.at("members").get<std::vector<std::string>>();
  if (j.contains("gid")) g.explicit_gid = j.at("gid").get<std::uint32_t>();
  return g;
}

}  // namespace repo_detail

// One logical repository: a deployed policy, its signing key, the trusted
// in-memory sanitized index, an untrusted on-disk package cache, and a
// sealed-state file bound to a monotonic counter for rollback detection.
class Repository {
 public:
  Repository(const Repository&) = delete;
  Repository& operator=(const Repository&) = delete;

  // deploy: fresh identifier and signing key, state sealed immediately.
  static std::unique_ptr<Repository> create(SecurityPolicy policy,
                                            const std::filesystem::path& state_dir,
                                            const std::filesystem::path& cache_root,
                                            ByteView sealing_secret) {
    validate_policy(policy);
    auto repo = std::unique_ptr<Repository>(new Repository(state_dir, cache_root,
                                                           sealing_secret));
    repo->repository_id_ = to_hex(random_bytes(16));
    repo->policy_ = std::move(policy);
    repo->signing_key_ = SigningKeypair::generate(repo->policy_.signing_algorithm);
    repo->open_counter();
    repo->seal_state();
    return repo;
  }

  // restore: unseal one repository's state; throws on authentication
  // failure or staleness (the caller records and quarantines).
  static std::unique_ptr<Repository> restore(const std::filesystem::path& seal_path,
                                             const std::filesystem::path& state_dir,
                                             const std::filesystem::path& cache_root,
                                             ByteView sealing_secret) {
    auto repo = std::unique_ptr<Repository>(new Repository(state_dir, cache_root,
                                                           sealing_secret));
    repo->repository_id_ = seal_path.stem().string();
    repo->open_counter();
    SealedBlob blob = SealedBlob::deserialize(repo_detail::read_file(seal_path));
    Bytes plain = unseal(blob, *repo->counter_, sealing_secret);
    repo->load_state(plain);
    return repo;
  }

  const std::string& id() const { return repository_id_; }

  std::string public_key_pem() const {
    std::shared_lock lock(mu_);
    return signing_key_.public_key().to_pem();
  }

  PublicKey public_key() const {
    std::shared_lock lock(mu_);
    return signing_key_.public_key();
  }

  RepositoryStatus status() const {
    std::shared_lock lock(mu_);
    RepositoryStatus s;
    s.repository_id = repository_id_;
    s.key_id = signing_key_.key_id_hex();
    s.algorithm = policy_.signing_algorithm == SignAlgorithm::Ed25519
                      ? "ed25519"
                      : "rsa-2048";
    s.architecture = policy_.architecture;
    s.initialized = initialized_;
    s.package_count = sanitized_index_.entries.size();
    s.rejected_count = rejected_.size();
    if (initialized_) {
      s.index_hash = to_hex(sha256(sanitized_index_bytes_));
      s.upstream_hash = to_hex(upstream_index_hash_);
    }
    s.mirror_count = policy_.mirrors.size();
    return s;
  }

  PredictedConfig predicted_config() const {
    std::shared_lock lock(mu_);
    if (!initialized_) {
      fail(ErrorCode::NotYetInitialized, "repository has not refreshed yet");
    }
    return predicted_;
  }

  SecurityPolicy policy() const {
    std::shared_lock lock(mu_);
    return policy_;
  }

  Bytes get_index() const {
    std::shared_lock lock(mu_);
    if (!initialized_) {
      fail(ErrorCode::NotYetInitialized, "repository has not refreshed yet");
    }
    return sanitized_index_bytes_;
  }

  // Resolve a mirror-shaped "<name>-<version>.apk" request against the index.
  std::optional<std::pair<std::string, std::string>> find_package_file(
      const std::string& file) const {
    std::shared_lock lock(mu_);
    for (const IndexEntry& e : sanitized_index_.entries) {
      if (package_file_name(e.name, e.version) == file) return {{e.name, e.version}};
    }
    return std::nullopt;
  }

  // Serve one sanitized package from the on-disk cache, re-verified against
  // the trusted in-memory index before a single byte leaves the process.
  Bytes get_package(const std::string& name, const std::string& version) {
    std::shared_lock lock(mu_);
    if (!initialized_) {
      fail(ErrorCode::NotYetInitialized, "repository has not refreshed yet");
    }
    const IndexEntry* entry = sanitized_index_.find(name, version);
    if (!entry) {
      fail(ErrorCode::UnknownPackage, name + "-" + version + " not in index");
    }
    std::filesystem::path path = sanitized_path(name, version);
    Bytes bytes;
    try {
      bytes = repo_detail::read_file(path);
    } catch (const TsrError&) {
      fail(ErrorCode::CacheCorrupted,
           name + "-" + version + ": cache file missing; refresh required");
    }
    std::string problem;
    if (bytes.size() != entry->package_size) {
      problem = "size " + std::to_string(bytes.size()) + " != " +
                std::to_string(entry->package_size);
    } else {
      try {
        ApkPackage pkg = parse_apk(bytes);
        if (sha1(pkg.control_segment_bytes) != entry->checksum) {
          problem = "control checksum mismatch";
        }
      } catch (const TsrError& e) {
        problem = e.what();
      }
    }
    if (!problem.empty()) {
      std::error_code ec;
      std::filesystem::remove(path, ec);  // discard; next refresh re-sanitizes
      fail(ErrorCode::CacheCorrupted, name + "-" + version + ": " + problem);
    }
    return bytes;
  }

  // Full refresh cycle: quorum read → upstream signature check → diff →
  // download/verify/sanitize what changed → recompute identities over the
  // whole corpus → regenerate and re-sign the index → seal.
  RefreshReport refresh(MirrorTransport& transport) {
    std::unique_lock lock(mu_);
    RefreshReport report;

    QuorumConfig cfg;
    for (const std::string& url : policy_.mirrors) cfg.mirrors.push_back({url});
    cfg.architecture = policy_.architecture;
    cfg = measure_latencies(cfg, transport);
    QuorumResult quorum = fetch_index_quorum(cfg, transport);

    if (initialized_ && quorum.content_hash == upstream_index_hash_) {
      // Upstream unchanged: served bytes stay put, but cache entries that
      // were discarded after tampering are rebuilt (deterministically, so
      // the signed index still matches what the files now contain).
      repair_cache(cfg, transport, report);
      report.index_version_hash = sha256(sanitized_index_bytes_);
      return report;
    }
    report.upstream_changed = true;

    MetadataIndex upstream;
    try {
      upstream = parse_index(quorum.index_bytes, trusted_signer_keys(policy_));
    } catch (const TsrError& e) {
      if (e.code() == ErrorCode::UntrustedSigner ||
          e.code() == ErrorCode::SignatureInvalid) {
        fail(ErrorCode::UpstreamSignatureInvalid,
             std::string("quorum index rejected: ") + e.what());
      }
      throw;
    }

    MetadataIndex wanted;
    for (const IndexEntry& e : upstream.entries) {
      if (package_allowed(policy_, e.name)) wanted.entries.push_back(e);
    }

    MetadataIndex previous;
    if (!upstream_index_bytes_.empty()) {
      MetadataIndex old = parse_index(upstream_index_bytes_, trusted_signer_keys(policy_));
      for (const IndexEntry& e : old.entries) {
        if (package_allowed(policy_, e.name)) previous.entries.push_back(e);
      }
    }
    ChangeSet diff = diff_indexes(previous, wanted);

    for (const IndexEntry& e : diff.removed) {
      std::error_code ec;
      std::filesystem::remove(original_path(e.name, e.version), ec);
      std::filesystem::remove(sanitized_path(e.name, e.version), ec);
      rejected_.erase({e.name, e.version});
    }
    std::set<std::pair<std::string, std::string>> dirty;
    for (const IndexEntry& e : diff.added) dirty.insert({e.name, e.version});
    for (const IndexEntry& e : diff.changed) {
      dirty.insert({e.name, e.version});
      rejected_.erase({e.name, e.version});
    }

    // Assemble the corpus: download what changed, reuse cached originals
    // for the rest (re-fetching if the cache was lost or tampered with).
    struct CorpusEntry {
      IndexEntry entry;
      ApkPackage package;
      bool needs_sanitize = false;
    };
    std::vector<CorpusEntry> corpus;
    for (const IndexEntry& e : wanted.entries) {
      auto key = std::make_pair(e.name, e.version);
      if (rejected_.count(key) && !dirty.count(key)) continue;
      std::filesystem::path opath = original_path(e.name, e.version);
      bool have = false;
      Bytes bytes;
      if (!dirty.count(key) && std::filesystem::exists(opath)) {
        try {
          bytes = repo_detail::read_file(opath);
          ApkPackage pkg = parse_apk(bytes);
          if (sha1(pkg.control_segment_bytes) == e.checksum) have = true;
        } catch (const TsrError&) {
        }
      }
      if (!have) {
        try {
          bytes = fetch_package(cfg, transport, e);
          ApkPackage pkg = parse_apk(bytes);
          verify_package(pkg, trusted_signer_keys(policy_));
          std::filesystem::create_directories(opath.parent_path());
          repo_detail::write_file_atomic(opath, bytes);
        } catch (const TsrError& err) {
          report.package_errors.push_back(e.name + "-" + e.version + ": " +
                                          err.what());
          continue;
        }
        dirty.insert(key);
      }
      CorpusEntry ce;
      ce.entry = e;
      ce.package = parse_apk(bytes);
      ce.needs_sanitize = dirty.count(key) != 0;
      corpus.push_back(std::move(ce));
    }

    std::vector<const ApkPackage*> corpus_ptrs;
    corpus_ptrs.reserve(corpus.size());
    for (const CorpusEntry& ce : corpus) corpus_ptrs.push_back(&ce.package);
    auto [users, groups] =
        collect_identities(corpus_ptrs, policy_.initial_users, policy_.initial_groups);
    PredictedConfig predicted = predict_config(users, groups);

    // A changed identity set invalidates every rewritten preamble.
    bool identity_changed = initialized_ && !(predicted == predicted_);
    SanitizationContext ctx = make_sanitization_context(predicted, signing_key_);

    std::vector<IndexInput> inputs;
    std::vector<ApkPackage> sanitized_packages;
    sanitized_packages.reserve(corpus.size());
    std::vector<std::pair<std::filesystem::path, Bytes>> pending_writes;

    for (CorpusEntry& ce : corpus) {
      std::filesystem::path spath = sanitized_path(ce.entry.name, ce.entry.version);
      bool resanitize = ce.needs_sanitize;
      if (identity_changed) {
        for (const auto& [kind, text] : ce.package.scripts) {
          if (classify_script(text).count(ScriptClass::UserGroupCreation)) {
            resanitize = true;
            break;
          }
        }
      }
      if (!resanitize && std::filesystem::exists(spath)) {
        try {
          Bytes bytes = repo_detail::read_file(spath);
          ApkPackage pkg = parse_apk(bytes);
          verify_package(pkg, {signing_key_.public_key()});
          sanitized_packages.push_back(std::move(pkg));
          inputs.push_back({&sanitized_packages.back(), bytes.size()});
          continue;
        } catch (const TsrError&) {
          resanitize = true;  // cache unusable, rebuild from the original
        }
      }

      SanitizedPackage result = sanitize_package(ce.package, ctx);
      if (result.report.outcome == SanitizeOutcome::Rejected) {
        ++report.packages_rejected;
        rejected_[{ce.entry.name, ce.entry.version}] =
            result.report.reject_reason.value_or("rejected");
        report.reports.push_back(std::move(result.report));
        std::error_code ec;
        std::filesystem::remove(spath, ec);
        continue;
      }
      ++report.packages_sanitized;
      pending_writes.emplace_back(spath, result.bytes);
      sanitized_packages.push_back(std::move(result.package));
      inputs.push_back({&sanitized_packages.back(), result.bytes.size()});
      report.reports.push_back(std::move(result.report));
    }

    Bytes new_index =
        generate_index(inputs, signing_key_, "tsr:" + repository_id_);

    for (auto& [path, bytes] : pending_writes) {
      std::filesystem::create_directories(path.parent_path());
      repo_detail::write_file_atomic(path, bytes);
    }

    sanitized_index_bytes_ = std::move(new_index);
    sanitized_index_ = parse_index(sanitized_index_bytes_, {signing_key_.public_key()});
    upstream_index_hash_ = quorum.content_hash;
    upstream_index_bytes_ = quorum.index_bytes;
    users_ = std::move(users);
    groups_ = std::move(groups);
    predicted_ = std::move(predicted);
    initialized_ = true;
    seal_state();

    report.index_version_hash = sha256(sanitized_index_bytes_);
    return report;
  }

 private:
  bool sanitized_cache_healthy(const IndexEntry& entry) const {
    std::filesystem::path spath = sanitized_path(entry.name, entry.version);
    try {
      Bytes bytes = repo_detail::read_file(spath);
      if (bytes.size() != entry.package_size) return false;
      ApkPackage pkg = parse_apk(bytes);
      return sha1(pkg.control_segment_bytes) == entry.checksum;
    } catch (const TsrError&) {
      return false;
    }
  }

  void repair_cache(const QuorumConfig& cfg, MirrorTransport& transport,
                    RefreshReport& report) {
    std::map<std::string, const IndexEntry*> upstream_by_name;
    std::optional<MetadataIndex> upstream;  // parsed lazily, only if needed
    SanitizationContext ctx = make_sanitization_context(predicted_, signing_key_);

    for (const IndexEntry& entry : sanitized_index_.entries) {
      if (sanitized_cache_healthy(entry)) continue;
      try {
        if (!upstream) {
          upstream = parse_index(upstream_index_bytes_, trusted_signer_keys(policy_));
          for (const IndexEntry& e : upstream->entries) upstream_by_name[e.name] = &e;
        }
        auto it = upstream_by_name.find(entry.name);
        if (it == upstream_by_name.end() || it->second->version != entry.version) {
          fail(ErrorCode::CacheCorrupted, "no upstream entry to rebuild from");
        }
        const IndexEntry& orig_entry = *it->second;
        std::filesystem::path opath = original_path(entry.name, entry.version);
        Bytes original;
        bool have = false;
        try {
          original = repo_detail::read_file(opath);
          ApkPackage pkg = parse_apk(original);
          if (sha1(pkg.control_segment_bytes) == orig_entry.checksum) have = true;
        } catch (const TsrError&) {
        }
        if (!have) {
          original = fetch_package(cfg, transport, orig_entry);
          ApkPackage pkg = parse_apk(original);
          verify_package(pkg, trusted_signer_keys(policy_));
          std::filesystem::create_directories(opath.parent_path());
          repo_detail::write_file_atomic(opath, original);
        }
        SanitizedPackage result = sanitize_package(parse_apk(original), ctx);
        if (result.report.outcome == SanitizeOutcome::Rejected ||
            result.bytes.size() != entry.package_size ||
            sha1(result.package.control_segment_bytes) != entry.checksum) {
          fail(ErrorCode::CacheCorrupted,
               "rebuilt package no longer matches the signed index");
        }
        std::filesystem::path spath = sanitized_path(entry.name, entry.version);
        std::filesystem::create_directories(spath.parent_path());
        repo_detail::write_file_atomic(spath, result.bytes);
        ++report.packages_sanitized;
      } catch (const TsrError& e) {
        report.package_errors.push_back(entry.name + "-" + entry.version + ": " +
                                        e.what());
      }
    }
  }

  Repository(std::filesystem::path state_dir, std::filesystem::path cache_root,
             ByteView sealing_secret)
      : state_dir_(std::move(state_dir)),
        cache_root_(std::move(cache_root)),
        sealing_secret_(sealing_secret.begin(), sealing_secret.end()) {
    std::filesystem::create_directories(state_dir_);
    std::filesystem::create_directories(cache_root_);
  }

  void open_counter() {
    counter_ = std::make_unique<FileCounter>(
        state_dir_ / (repository_id_ + ".counter"),
        repo_detail::counter_mac_key(sealing_secret_));
  }

  std::filesystem::path seal_path() const {
    return state_dir_ / (repository_id_ + ".seal");
  }
  std::filesystem::path original_path(const std::string& name,
                                      const std::string& version) const {
    return cache_root_ / repository_id_ / "original" /
           package_file_name(name, version);
  }
  std::filesystem::path sanitized_path(const std::string& name,
                                       const std::string& version) const {
    return cache_root_ / repository_id_ / "sanitized" /
           package_file_name(name, version);
  }

  // State round-trip. The sealed JSON holds everything needed to serve and
  // to diff the next refresh; the caches hold only re-verifiable bytes.
  Bytes save_state() const {
    nlohmann::json j;
    j["repository_id"] = repository_id_;
    j["policy_yaml"] = policy_to_yaml(policy_);
    j["signing_key_pem"] = signing_key_.private_key_pem();
    j["initialized"] = initialized_;
    j["upstream_index_hash"] = to_hex(upstream_index_hash_);
    j["upstream_index_b64"] = base64_encode(upstream_index_bytes_);
    j["sanitized_index_b64"] = base64_encode(sanitized_index_bytes_);
    nlohmann::json users = nlohmann::json::array();
    for (const UserSpec& u : users_) users.push_back(repo_detail::user_to_json(u));
    j["users"] = std::move(users);
    nlohmann::json groups = nlohmann::json::array();
    for (const GroupSpec& g : groups_) groups.push_back(repo_detail::group_to_json(g));
    j["groups"] = std::move(groups);
    nlohmann::json rejected = nlohmann::json::array();
    for (const auto& [key, reason] : rejected_) {
      rejected.push_back({{"name", key.first}, {"version", key.second},
                          {"reason", reason}});
    }
    j["rejected"] = std::move(rejected);
    std::string text = j.dump();
    return to_bytes(text);
  }

  void load_state(ByteView plain) {
    nlohmann::json j = nlohmann::json::parse(to_string(plain));
    std::string stored_id = j.at("repository_id").get<std::string>();
    if (stored_id != repository_id_) {
      fail(ErrorCode::AuthenticationFailure,
           "sealed state belongs to repository " + stored_id);
    }
    policy_ = parse_policy(j.at("policy_yaml").get<std::string>());
    signing_key_ =
        SigningKeypair::from_private_pem(j.at("signing_key_pem").get<std::string>());
    initialized_ = j.at("initialized").get<bool>();
    upstream_index_hash_ = from_hex(j.at("upstream_index_hash").get<std::string>());
    upstream_index_bytes_ = base64_decode(j.at("upstream_index_b64").get<std::string>());
    sanitized_index_bytes_ =
        base64_decode(j.at("sanitized_index_b64").get<std::string>());
    users_.clear();
    for (const auto& u : j.at("users")) {
      users_.push_back(repo_detail::user_from_json(u));
    }
    groups_.clear();
    for (const auto& g : j.at("groups")) {
      groups_.push_back(repo_detail::group_from_json(g));
    }
    rejected_.clear();
    for (const auto& r : j.at("rejected")) {
      rejected_[{r.at("name").get<std::string>(),
                 r.at("version").get<std::string>()}] =
          r.at("reason").get<std::string>();
    }
    if (initialized_) {
      // The invariant the sealed state certifies: the index verifies under
      // our own key, and the predicted config re-derives deterministically.
      sanitized_index_ =
          parse_index(sanitized_index_bytes_, {signing_key_.public_key()});
      predicted_ = predict_config(users_, groups_);
    }
  }

  void seal_state() {
    SealedBlob blob = seal(save_state(), *counter_, sealing_secret_);
    repo_detail::write_file_atomic(seal_path(), blob.serialize());
  }

  std::filesystem::path state_dir_;
  std::filesystem::path cache_root_;
  Bytes sealing_secret_;
  std::unique_ptr<FileCounter> counter_;

  std::string repository_id_;
  SecurityPolicy policy_;
  SigningKeypair signing_key_;
  bool initialized_ = false;
  Bytes upstream_index_hash_;
  Bytes upstream_index_bytes_;
  Bytes sanitized_index_bytes_;
  MetadataIndex sanitized_index_;
  std::vector<UserSpec> users_;
  std::vector<GroupSpec> groups_;
  PredictedConfig predicted_;
  std::map<std::pair<std::string, std::string>, std::string> rejected_;

  mutable std::shared_mutex mu_;
};

// The set of repositories one service instance hosts. Thread-safe: lookups
// take a shared map lock; each repository serializes its own mutations.
class RepositoryManager {
 public:
  RepositoryManager(std::filesystem::path state_dir, std::filesystem::path cache_root,
                    Bytes sealing_secret)
      : state_dir_(std::move(state_dir)),
        cache_root_(std::move(cache_root)),
        sealing_secret_(std::move(sealing_secret)) {}

  struct RestoreFailure {
    std::string repository_id;
    ErrorCode code;
    std::string message;
  };

  // Load every sealed repository found in the state directory. Failures
  // are collected, never thrown; stale-sealed repositories are quarantined
  // (present on disk, refusing service) rather than silently dropped.
  std::vector<RestoreFailure> restore_all() {
    std::vector<RestoreFailure> failures;
    std::unique_lock lock(mu_);
    namespace fs = std::filesystem;
    if (!fs::exists(state_dir_)) return failures;
    for (const auto& entry : fs::directory_iterator(state_dir_)) {
      if (entry.path().extension() != ".seal") continue;
      std::string id = entry.path().stem().string();
      try {
        auto repo = Repository::restore(entry.path(), state_dir_, cache_root_,
                                        sealing_secret_);
        repos_[id] = std::move(repo);
      } catch (const TsrError& e) {
        failures.push_back({id, e.code(), e.what()});
        quarantined_[id] = e.code();
      }
    }
    return failures;
  }

  std::pair<std::string, std::string> deploy(const SecurityPolicy& policy) {
    auto repo = Repository::create(policy, state_dir_, cache_root_, sealing_secret_);
    std::string id = repo->id();
    std::string pem = repo->public_key_pem();
    std::unique_lock lock(mu_);
    repos_[id] = std::move(repo);
    return {id, pem};
  }

  Repository& get(const std::string& id) {
    std::shared_lock lock(mu_);
    auto it = repos_.find(id);
    if (it == repos_.end()) {
      auto q = quarantined_.find(id);
      if (q != quarantined_.end()) {
        fail(q->second, "repository " + id + " failed restore and is quarantined");
      }
      fail(ErrorCode::UnknownRepository, "no repository " + id);
    }
    return *it->second;
  }

  std::vector<std::string> ids() const {
    std::shared_lock lock(mu_);
    std::vector<std::string> out;
    out.reserve(repos_.size());
    for (const auto& [id, repo] : repos_) out.push_back(id);
    return out;
  }

  std::size_t size() const {
    std::shared_lock lock(mu_);
    return repos_.size();
  }

 private:
  std::filesystem::path state_dir_;
  std::filesystem::path cache_root_;
  Bytes sealing_secret_;
  std::map<std::string, std::unique_ptr<Repository>> repos_;
  std::map<std::string, ErrorCode> quarantined_;
  mutable std::shared_mutex mu_;
};

}  // namespace tsr
