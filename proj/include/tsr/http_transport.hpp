#pragma once

#include <chrono>
#include <memory>
#include <string>

#include <httplib.h>

#include "tsr/mirrors.hpp"
#include "tsr/policy.hpp"

namespace tsr {

// MirrorTransport speaking HTTP(S) via cpp-httplib. One short-lived client
// per request keeps the transport stateless and safe to share.
class HttpTransport : public MirrorTransport {
 public:
  HeadResult head(const std::string& url, int timeout_ms) override {
    auto [client, path] = make_client(url, timeout_ms);
    auto start = std::chrono::steady_clock::now();
    httplib::Result res = client->Head(path);
    auto elapsed = std::chrono::duration<double, std::milli>(
                       std::chrono::steady_clock::now() - start)
                       .count();
    if (!res || res->status >= 400) return {false, 0};
    return {true, elapsed};
  }

  GetResult get(const std::string& url, int timeout_ms,
                std::size_t max_bytes) override {
    auto [client, path] = make_client(url, timeout_ms);
    GetResult out;
    bool overflow = false;
    httplib::Result res = client->Get(
        path, [&](const char* data, std::size_t len) {
          if (out.body.size() + len > max_bytes) {
            overflow = true;
            return false;  // abort the transfer at the byte cap
          }
          out.body.insert(out.body.end(), reinterpret_cast<const uint8_t*>(data),
                          reinterpret_cast<const uint8_t*>(data) + len);
          return true;
        });
    if (overflow || !res || res->status != 200) return {false, {}};
    out.ok = true;
    return out;
  }

 private:
  static std::pair<std::unique_ptr<httplib::Client>, std::string> make_client(
      const std::string& url, int timeout_ms) {
    policy_detail::ParsedUrl u = policy_detail::parse_url(url);
    auto client = std::make_unique<httplib::Client>(
        u.scheme + "://" + u.host + ":" + std::to_string(u.port));
    client->set_connection_timeout(std::chrono::milliseconds(timeout_ms));
    client->set_read_timeout(std::chrono::milliseconds(timeout_ms));
    client->set_write_timeout(std::chrono::milliseconds(timeout_ms));
    client->enable_server_certificate_verification(false);  // test certs
    std::string path = u.path.empty() ? "/" : u.path;
    return {std::move(client), path};
  }
};

}  // namespace tsr
