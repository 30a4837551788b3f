#pragma once

#include <algorithm>
#include <chrono>
#include <future>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "tsr/bytes.hpp"
#include "tsr/error.hpp"
#include "tsr/index.hpp"
#include "tsr/keystore.hpp"
#include "tsr/package.hpp"

namespace tsr {

enum class MirrorStatus { Unknown, Healthy, Failed };

struct MirrorEndpoint {
  std::string url;  // base URL, no trailing slash
  std::optional<double> measured_latency_ms;
  MirrorStatus status = MirrorStatus::Unknown;
};

struct QuorumConfig {
  std::vector<MirrorEndpoint> mirrors;
  std::string architecture = "x86_64";
  int per_request_timeout_ms = 5000;

  std::size_t f() const {
    return mirrors.empty() ? 0 : (mirrors.size() - 1) / 2;
  }
};

struct QuorumResult {
  Bytes index_bytes;
  std::vector<std::string> agreeing_mirrors;
  std::size_t contacted = 0;
  Bytes content_hash;  // SHA-256 of index_bytes
};

struct HeadResult {
  bool ok = false;
  double latency_ms = 0;
};

struct GetResult {
  bool ok = false;  // false on error, timeout, or byte-cap overflow
  Bytes body;
};

// Transport seam: the production implementation speaks HTTP(S); tests use a
// scripted one with configurable behaviors and latencies.
class MirrorTransport {
 public:
  virtual ~MirrorTransport() = default;
  virtual HeadResult head(const std::string& url, int timeout_ms) = 0;
  virtual GetResult get(const std::string& url, int timeout_ms,
                        std::size_t max_bytes) = 0;
};

// Bound on how large a fetched metadata index may be; mirrors serving more
// are treated as faulty.
inline constexpr std::size_t kMaxIndexBytes = 64u << 20;

inline std::string index_url(const std::string& base, const std::string& arch) {
  return base + "/" + arch + "/APKINDEX.tar.gz";
}

inline std::string package_file_name(const std::string& name,
                                     const std::string& version) {
  return name + "-" + version + ".apk";
}

inline std::string package_url(const std::string& base, const std::string& arch,
                               const std::string& name, const std::string& version) {
  return base + "/" + arch + "/" + package_file_name(name, version);
}

// Probe every mirror once with a HEAD on the index path, recording latency
// or marking it Failed. Never throws: a dead network yields all-Failed.
inline QuorumConfig measure_latencies(QuorumConfig cfg, MirrorTransport& transport) {
  std::vector<std::future<HeadResult>> probes;
  probes.reserve(cfg.mirrors.size());
  for (const MirrorEndpoint& mirror : cfg.mirrors) {
    probes.push_back(std::async(std::launch::async, [&transport, &cfg, &mirror] {
      return transport.head(index_url(mirror.url, cfg.architecture),
                            cfg.per_request_timeout_ms);
    }));
  }
  for (std::size_t i = 0; i < cfg.mirrors.size(); ++i) {
    HeadResult result = probes[i].get();
    if (result.ok) {
      cfg.mirrors[i].status = MirrorStatus::Healthy;
      cfg.mirrors[i].measured_latency_ms = result.latency_ms;
    } else {
      cfg.mirrors[i].status = MirrorStatus::Failed;
      cfg.mirrors[i].measured_latency_ms.reset();
    }
  }
  return cfg;
}

// Quorum read of the metadata index: fetch from the fastest f+1 healthy
// mirrors in parallel, group responses by content hash, and escalate one
// more mirror per round until some group reaches f+1 holders.
inline QuorumResult fetch_index_quorum(const QuorumConfig& cfg,
                                       MirrorTransport& transport) {
  const std::size_t quorum = cfg.f() + 1;
  if (cfg.mirrors.empty()) {
    fail(ErrorCode::InsufficientMirrors, "no mirrors configured");
  }

  std::vector<const MirrorEndpoint*> healthy;
  for (const MirrorEndpoint& m : cfg.mirrors) {
    if (m.status == MirrorStatus::Healthy) healthy.push_back(&m);
  }
  std::stable_sort(healthy.begin(), healthy.end(),
                   [](const MirrorEndpoint* a, const MirrorEndpoint* b) {
                     return a->measured_latency_ms.value_or(1e18) <
                            b->measured_latency_ms.value_or(1e18);
                   });
  if (healthy.size() < quorum) {
    fail(ErrorCode::InsufficientMirrors,
         "need " + std::to_string(quorum) + " reachable mirrors, have " +
             std::to_string(healthy.size()));
  }

  struct Response {
    const MirrorEndpoint* mirror;
    GetResult result;
  };
  std::vector<Response> responses;
  std::size_t next = 0;

  auto fetch_batch = [&](std::size_t count) {
    std::vector<std::pair<const MirrorEndpoint*, std::future<GetResult>>> batch;
    for (std::size_t i = 0; i < count && next < healthy.size(); ++i, ++next) {
      const MirrorEndpoint* mirror = healthy[next];
      batch.emplace_back(mirror,
                         std::async(std::launch::async, [&transport, &cfg, mirror] {
                           return transport.get(
                               index_url(mirror->url, cfg.architecture),
                               cfg.per_request_timeout_ms, kMaxIndexBytes);
                         }));
    }
    for (auto& [mirror, future] : batch) {
      responses.push_back({mirror, future.get()});
    }
  };

  fetch_batch(quorum);
  while (true) {
    std::map<Bytes, std::vector<const MirrorEndpoint*>> by_hash;
    for (const Response& r : responses) {
      if (!r.result.ok) continue;
      by_hash[sha256(r.result.body)].push_back(r.mirror);
    }
    for (auto& [hash, holders] : by_hash) {
      if (holders.size() >= quorum) {
        QuorumResult out;
        for (const Response& r : responses) {
          if (r.result.ok && sha256(r.result.body) == hash) {
            out.index_bytes = r.result.body;
            break;
          }
        }
        for (const MirrorEndpoint* m : holders) out.agreeing_mirrors.push_back(m->url);
        out.contacted = responses.size();
        out.content_hash = hash;
        return out;
      }
    }
    if (next >= healthy.size()) break;
    fetch_batch(1);  // disagreement: escalate one more mirror
  }
  fail(ErrorCode::QuorumUnreachable,
       "no index version held by " + std::to_string(quorum) + " of " +
           std::to_string(responses.size()) + " contacted mirrors");
}

// Download one package from any single healthy mirror, fastest first. The
// index entry pins both the exact size (endless-data defense: the transport
// aborts past the cap) and the control-segment checksum.
inline Bytes fetch_package(const QuorumConfig& cfg, MirrorTransport& transport,
                           const IndexEntry& entry) {
  std::vector<const MirrorEndpoint*> healthy;
  for (const MirrorEndpoint& m : cfg.mirrors) {
    if (m.status == MirrorStatus::Healthy) healthy.push_back(&m);
  }
  std::stable_sort(healthy.begin(), healthy.end(),
                   [](const MirrorEndpoint* a, const MirrorEndpoint* b) {
                     return a->measured_latency_ms.value_or(1e18) <
                            b->measured_latency_ms.value_or(1e18);
                   });
  if (healthy.empty()) {
    fail(ErrorCode::PackageUnavailable,
         "no reachable mirror for " + entry.name + "-" + entry.version);
  }

  std::string notes;
  for (const MirrorEndpoint* mirror : healthy) {
    GetResult r = transport.get(
        package_url(mirror->url, cfg.architecture, entry.name, entry.version),
        cfg.per_request_timeout_ms, entry.package_size);
    if (!r.ok) {
      notes += " [" + mirror->url + ": transfer failed or exceeded " +
               std::to_string(entry.package_size) + " bytes]";
      continue;
    }
    if (r.body.size() != entry.package_size) {
      notes += " [" + mirror->url + ": SizeMismatch got " +
               std::to_string(r.body.size()) + " want " +
               std::to_string(entry.package_size) + "]";
      continue;
    }
    try {
      ApkPackage pkg = parse_apk(r.body);
      if (sha1(pkg.control_segment_bytes) !=
          Bytes(entry.checksum.begin(), entry.checksum.end())) {
        notes += " [" + mirror->url + ": control checksum mismatch]";
        continue;
      }
    } catch (const TsrError& e) {
      notes += " [" + mirror->url + ": " + e.what() + "]";
      continue;
    }
    return r.body;
  }
  fail(ErrorCode::PackageUnavailable,
       entry.name + "-" + entry.version + " unavailable:" + notes);
}

// ---- Scripted transport for tests ---------------------------------------

// Serves configured bytes with configured behaviors. Latencies are numbers
// fed to the HEAD probe, not real waits, unless real_delay is set (used by
// timing-sensitive benchmarks).
class ScriptedTransport : public MirrorTransport {
 public:
  struct Mirror {
    Bytes index;
    std::map<std::string, Bytes> packages;  // file name → bytes
    double latency_ms = 10;
    bool down = false;
    bool endless = false;  // every GET floods past any byte cap
  };

  Mirror& add_mirror(const std::string& base_url) { return mirrors_[base_url]; }

  void set_real_delay(bool on) { real_delay_ = on; }

  std::size_t head_count() const { return head_count_; }
  std::size_t get_count() const { return get_count_; }
  std::size_t get_count_for(const std::string& base_url) const {
    auto it = per_mirror_gets_.find(base_url);
    return it == per_mirror_gets_.end() ? 0 : it->second;
  }
  void reset_counts() {
    head_count_ = 0;
    get_count_ = 0;
    per_mirror_gets_.clear();
  }

  HeadResult head(const std::string& url, int timeout_ms) override {
    std::lock_guard<std::mutex> lock(mu_);
    ++head_count_;
    const Mirror* m = find(url);
    if (!m || m->down) return {false, 0};
    if (m->latency_ms > timeout_ms) return {false, 0};
    return {true, m->latency_ms};
  }

  GetResult get(const std::string& url, int timeout_ms,
                std::size_t max_bytes) override {
    bool endless = false;
    double latency = 0;
    Bytes body;
    bool have_body = false;
    {
      std::lock_guard<std::mutex> lock(mu_);
      ++get_count_;
      std::string base;
      const Mirror* m = find(url, &base);
      if (!m || m->down) return {false, {}};
      if (m->latency_ms > timeout_ms) return {false, {}};
      ++per_mirror_gets_[base];
      endless = m->endless;
      latency = m->latency_ms;
      std::string rest = url.substr(base.size() + 1);
      if (rest.size() >= 15 &&
          rest.compare(rest.size() - 15, 15, "APKINDEX.tar.gz") == 0) {
        body = m->index;
        have_body = true;
      } else {
        auto slash = rest.rfind('/');
        std::string file = slash == std::string::npos ? rest : rest.substr(slash + 1);
        auto it = m->packages.find(file);
        if (it != m->packages.end()) {
          body = it->second;
          have_body = true;
        }
      }
    }
    if (real_delay_) {
      std::this_thread::sleep_for(
          std::chrono::microseconds(static_cast<long>(latency * 1000)));
    }
    if (endless) return {false, {}};  // reader aborts at the cap
    if (!have_body) return {false, {}};
    if (body.size() > max_bytes) return {false, {}};  // cap enforced mid-stream
    return {true, std::move(body)};
  }

 private:
  const Mirror* find(const std::string& url, std::string* base_out = nullptr) const {
    for (const auto& [base, mirror] : mirrors_) {
      if (url.rfind(base + "/", 0) == 0) {
        if (base_out) *base_out = base;
        return &mirror;
      }
    }
    return nullptr;
  }

  std::map<std::string, Mirror> mirrors_;
  std::size_t head_count_ = 0;
  std::size_t get_count_ = 0;
  std::map<std::string, std::size_t> per_mirror_gets_;
  mutable std::mutex mu_;
  bool real_delay_ = false;
};

}  // namespace tsr
