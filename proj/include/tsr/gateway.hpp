#pragma once

#include <atomic>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <utility>

#include <httplib.h>
#include <json.hpp>

#include "tsr/error.hpp"
#include "tsr/http_transport.hpp"
#include "tsr/policy.hpp"
#include "tsr/repository.hpp"

namespace tsr {

struct ServiceConfig {
  std::string listen_address = "127.0.0.1:8080";
  std::string tls_cert;  // both set → HTTPS; both empty → needs insecure_http
  std::string tls_key;
  bool insecure_http = false;  // explicit opt-out, for tests and loopback use
  std::filesystem::path state_dir = "state";
  std::filesystem::path cache_dir = "cache";
  std::string sealing_key_source;  // "env:NAME", "file:PATH", or a bare path
  int refresh_ttl_seconds = 300;
  std::string log_level = "info";
};

namespace gateway_detail {

inline Bytes resolve_sealing_secret(const std::string& source) {
  if (source.empty()) {
    fail(ErrorCode::InvalidPolicy, "sealing key source not configured");
  }
  if (source.rfind("env:", 0) == 0) {
    const char* value = std::getenv(source.substr(4).c_str());
    if (value == nullptr || *value == '\0') {
      fail(ErrorCode::IoError, "sealing key env var unset: " + source.substr(4));
    }
    return to_bytes(std::string(value));
  }
  std::string path = source.rfind("file:", 0) == 0 ? source.substr(5) : source;
  return repo_detail::read_file(path);
}

inline std::pair<std::string, int> split_listen_address(const std::string& addr) {
  auto colon = addr.rfind(':');
  if (colon == std::string::npos || colon + 1 >= addr.size()) {
    fail(ErrorCode::BindFailure, "listen address needs host:port: " + addr);
  }
  std::string host = addr.substr(0, colon);
  int port = 0;
  try {
    port = std::stoi(addr.substr(colon + 1));
  } catch (const std::exception&) {
    fail(ErrorCode::BindFailure, "bad port in listen address: " + addr);
  }
  if (host.size() >= 2 && host.front() == '[' && host.back() == ']') {
    host = host.substr(1, host.size() - 2);
  }
  return {host, port};
}

inline int http_status(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidPolicy:
    case ErrorCode::InvalidSpec:
      return 400;
    case ErrorCode::UnknownRepository:
    case ErrorCode::UnknownPackage:
      return 404;
    case ErrorCode::QuorumUnreachable:
    case ErrorCode::InsufficientMirrors:
    case ErrorCode::PackageUnavailable:
    case ErrorCode::UpstreamSignatureInvalid:
    case ErrorCode::CacheCorrupted:
      return 502;
    case ErrorCode::NotYetInitialized:
    case ErrorCode::StaleSeal:
    case ErrorCode::AuthenticationFailure:
      return 503;
    default:
      return 500;
  }
}

inline nlohmann::json refresh_report_json(const RefreshReport& report) {
  nlohmann::json j;
  j["upstream_changed"] = report.upstream_changed;
  j["packages_sanitized"] = report.packages_sanitized;
  j["packages_rejected"] = report.packages_rejected;
  j["index_version_hash"] = to_hex(report.index_version_hash);
  j["package_errors"] = report.package_errors;
  nlohmann::json rejected = nlohmann::json::array();
  for (const SanitizationReport& r : report.reports) {
    if (r.outcome != SanitizeOutcome::Rejected) continue;
    rejected.push_back({{"name", r.name},
                        {"version", r.version},
                        {"reason", r.reject_reason.value_or("")}});
  }
  j["rejected"] = std::move(rejected);
  return j;
}

inline nlohmann::json status_json(const RepositoryStatus& s) {
  return nlohmann::json{{"repository_id", s.repository_id},
                        {"key_id", s.key_id},
                        {"algorithm", s.algorithm},
                        {"architecture", s.architecture},
                        {"initialized", s.initialized},
                        {"package_count", s.package_count},
                        {"rejected_count", s.rejected_count},
                        {"index_hash", s.index_hash},
                        {"upstream_hash", s.upstream_hash},
                        {"mirror_count", s.mirror_count}};
}

}  // namespace gateway_detail

// The HTTP face of the service. Owns the repository manager and a mirror
// transport; every handler stays within the repositories' reader/writer
// contract, so requests against different repositories never serialize.
class Gateway {
 public:
  explicit Gateway(ServiceConfig config,
                   std::shared_ptr<MirrorTransport> transport = nullptr)
      : config_(std::move(config)),
        transport_(transport ? std::move(transport)
                             : std::make_shared<HttpTransport>()),
        manager_(config_.state_dir, config_.cache_dir,
                 gateway_detail::resolve_sealing_secret(config_.sealing_key_source)) {
    restore_failures_ = manager_.restore_all();
    for (const auto& f : restore_failures_) {
      log("warn", "restore failed for " + f.repository_id + ": " + f.message);
    }
    if (!config_.tls_cert.empty() != !config_.tls_key.empty()) {
      fail(ErrorCode::BindFailure, "tls_cert and tls_key must be set together");
    }
    if (config_.tls_cert.empty() && !config_.insecure_http) {
      fail(ErrorCode::BindFailure,
           "refusing plain HTTP without explicit insecure_http");
    }
#ifdef CPPHTTPLIB_OPENSSL_SUPPORT
    if (!config_.tls_cert.empty()) {
      ssl_server_ = std::make_unique<httplib::SSLServer>(config_.tls_cert.c_str(),
                                                         config_.tls_key.c_str());
      if (!ssl_server_->is_valid()) {
        fail(ErrorCode::BindFailure, "cannot load TLS certificate or key");
      }
      server_ = ssl_server_.get();
    }
#endif
    if (server_ == nullptr) {
      plain_server_ = std::make_unique<httplib::Server>();
      server_ = plain_server_.get();
    }
    install_routes();
  }

  const std::vector<RepositoryManager::RestoreFailure>& restore_failures() const {
    return restore_failures_;
  }

  RepositoryManager& manager() { return manager_; }
  MirrorTransport& transport() { return *transport_; }

  // Blocks until stop(). Throws BindFailure if the address cannot be taken.
  void serve() {
    auto [host, port] = gateway_detail::split_listen_address(config_.listen_address);
    if (!server_->bind_to_port(host, port)) {
      fail(ErrorCode::BindFailure, "cannot bind " + config_.listen_address);
    }
    bound_port_ = port;
    log("info", "listening on " + config_.listen_address);
    server_->listen_after_bind();
  }

  // Test entry: bind an ephemeral port, serve on a background thread.
  int start_background() {
    auto [host, port] = gateway_detail::split_listen_address(config_.listen_address);
    int bound = server_->bind_to_any_port(host);
    if (bound <= 0) fail(ErrorCode::BindFailure, "cannot bind " + host);
    bound_port_ = bound;
    thread_ = std::thread([this] { server_->listen_after_bind(); });
    server_->wait_until_ready();
    return bound;
  }

  void stop() {
    server_->stop();
    if (thread_.joinable()) thread_.join();
  }

  ~Gateway() {
    if (server_ != nullptr) stop();
  }

  int bound_port() const { return bound_port_; }

 private:
  void log(const std::string& level, const std::string& message) const {
    static const std::map<std::string, int> rank{
        {"debug", 0}, {"info", 1}, {"warn", 2}, {"error", 3}};
    auto want = rank.find(config_.log_level);
    auto have = rank.find(level);
    int threshold = want == rank.end() ? 1 : want->second;
    if (have != rank.end() && have->second >= threshold) {
      std::cerr << "tsr[" << level << "] " << message << "\n";
    }
  }

  static void send_json(httplib::Response& res, int status, const nlohmann::json& j) {
    res.status = status;
    res.set_content(j.dump(), "application/json");
  }

  static void send_error(httplib::Response& res, const TsrError& e) {
    send_json(res, gateway_detail::http_status(e.code()),
              nlohmann::json{{"error", std::string(error_code_name(e.code()))},
                             {"detail", e.what()}});
  }

  template <typename Fn>
  static void guarded(httplib::Response& res, Fn&& fn) {
    try {
      fn();
    } catch (const TsrError& e) {
      send_error(res, e);
    } catch (const std::exception& e) {
      send_json(res, 500,
                nlohmann::json{{"error", "InternalError"}, {"detail", e.what()}});
    }
  }

  // Lazy pull model: the index is re-pulled from the mirrors when a client
  // asks for it and the last successful pull is older than the TTL. Serving
  // never blocks on an unreachable upstream once a refresh has succeeded.
  void maybe_refresh(Repository& repo) {
    const auto now = std::chrono::steady_clock::now();
    {
      std::lock_guard lock(ttl_mu_);
      auto it = last_refresh_.find(repo.id());
      if (it != last_refresh_.end() &&
          now - it->second < std::chrono::seconds(config_.refresh_ttl_seconds)) {
        return;
      }
    }
    bool initialized = repo.status().initialized;
    try {
      repo.refresh(*transport_);
      std::lock_guard lock(ttl_mu_);
      last_refresh_[repo.id()] = now;
    } catch (const TsrError& e) {
      log("warn", "refresh " + repo.id() + " failed: " + e.what());
      std::lock_guard lock(ttl_mu_);
      last_refresh_[repo.id()] = now;  // back off until the TTL lapses again
      if (!initialized) throw;         // nothing to serve yet
    }
  }

  void note_refreshed(const std::string& id) {
    std::lock_guard lock(ttl_mu_);
    last_refresh_[id] = std::chrono::steady_clock::now();
  }

  void install_routes() {
    httplib::Server& s = *server_;

    s.Post("/v1/policies", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        SecurityPolicy policy = parse_policy(req.body);
        auto [id, pem] = manager_.deploy(policy);
        log("info", "deployed policy as repository " + id);
        send_json(res, 201,
                  nlohmann::json{{"repository_id", id}, {"public_key_pem", pem}});
      });
    });

    s.Get("/healthz", [this](const httplib::Request&, httplib::Response& res) {
      send_json(res, 200,
                nlohmann::json{{"status", "ok"},
                               {"repositories", manager_.size()}});
    });

    s.Get("/v1/attestation", [](const httplib::Request&, httplib::Response& res) {
      send_json(res, 200, nlohmann::json{{"mode", "simulated"}});
    });

    s.Get(R"(/v1/repos/([0-9a-f]{32})/([^/]+)/APKINDEX\.tar\.gz)",
          [this](const httplib::Request& req, httplib::Response& res) {
            guarded(res, [&] {
              Repository& repo = manager_.get(req.matches[1]);
              if (repo.policy().architecture != req.matches[2].str()) {
                fail(ErrorCode::UnknownPackage,
                     "architecture " + req.matches[2].str() + " not served");
              }
              maybe_refresh(repo);
              Bytes index = repo.get_index();
              res.status = 200;
              res.set_content(std::string(index.begin(), index.end()),
                              "application/octet-stream");
            });
          });

    s.Get(R"(/v1/repos/([0-9a-f]{32})/([^/]+)/([^/]+\.apk))",
          [this](const httplib::Request& req, httplib::Response& res) {
            guarded(res, [&] {
              Repository& repo = manager_.get(req.matches[1]);
              if (repo.policy().architecture != req.matches[2].str()) {
                fail(ErrorCode::UnknownPackage,
                     "architecture " + req.matches[2].str() + " not served");
              }
              if (!repo.status().initialized) maybe_refresh(repo);
              std::string file = req.matches[3];
              auto located = repo.find_package_file(file);
              if (!located) {
                fail(ErrorCode::UnknownPackage, file + " not in index");
              }
              Bytes bytes = repo.get_package(located->first, located->second);
              res.status = 200;
              res.set_content(std::string(bytes.begin(), bytes.end()),
                              "application/octet-stream");
            });
          });

    s.Get(R"(/v1/repos/([0-9a-f]{32})/key)",
          [this](const httplib::Request& req, httplib::Response& res) {
            guarded(res, [&] {
              Repository& repo = manager_.get(req.matches[1]);
              RepositoryStatus st = repo.status();
              send_json(res, 200,
                        nlohmann::json{{"repository_id", repo.id()},
                                       {"public_key_pem", repo.public_key_pem()},
                                       {"key_id", st.key_id},
                                       {"algorithm", st.algorithm}});
            });
          });

    s.Get(R"(/v1/repos/([0-9a-f]{32})/predicted-config)",
          [this](const httplib::Request& req, httplib::Response& res) {
            guarded(res, [&] {
              Repository& repo = manager_.get(req.matches[1]);
              PredictedConfig p = repo.predicted_config();
              send_json(res, 200,
                        nlohmann::json{{"passwd", p.passwd_content},
                                       {"group", p.group_content},
                                       {"shadow", p.shadow_content},
                                       {"uid_assignment", p.uid_assignment},
                                       {"gid_assignment", p.gid_assignment}});
            });
          });

    s.Post(R"(/v1/repos/([0-9a-f]{32})/refresh)",
           [this](const httplib::Request& req, httplib::Response& res) {
             guarded(res, [&] {
               Repository& repo = manager_.get(req.matches[1]);
               RefreshReport report = repo.refresh(*transport_);
               note_refreshed(repo.id());
               send_json(res, 200, gateway_detail::refresh_report_json(report));
             });
           });

    s.Get(R"(/v1/repos/([0-9a-f]{32}))",
          [this](const httplib::Request& req, httplib::Response& res) {
            guarded(res, [&] {
              Repository& repo = manager_.get(req.matches[1]);
              send_json(res, 200, gateway_detail::status_json(repo.status()));
            });
          });
  }

  ServiceConfig config_;
  std::shared_ptr<MirrorTransport> transport_;
  RepositoryManager manager_;
  std::vector<RepositoryManager::RestoreFailure> restore_failures_;

  std::unique_ptr<httplib::Server> plain_server_;
#ifdef CPPHTTPLIB_OPENSSL_SUPPORT
  std::unique_ptr<httplib::SSLServer> ssl_server_;
#endif
  httplib::Server* server_ = nullptr;
  std::thread thread_;
  int bound_port_ = 0;

  std::mutex ttl_mu_;
  std::map<std::string, std::chrono::steady_clock::time_point> last_refresh_;
};

}  // namespace tsr
