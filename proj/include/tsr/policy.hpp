#pragma once

#include <algorithm>
#include <cstdlib>
#include <optional>
#include <string>
#include <vector>

#include <yaml-cpp/yaml.h>

#include "tsr/error.hpp"
#include "tsr/keystore.hpp"
#include "tsr/sanitizer.hpp"

namespace tsr {

// Client-supplied contract for one logical repository. Accepted as YAML or
// JSON (JSON being a YAML subset, one parser covers both).
struct SecurityPolicy {
  std::vector<std::string> mirrors;
  std::vector<std::string> signers_keys;  // PEM public keys of upstream signers
  std::vector<UserSpec> initial_users;
  std::vector<GroupSpec> initial_groups;
  std::string architecture = "x86_64";
  std::vector<std::string> allowlist;  // package-name patterns; empty = absent
  std::vector<std::string> blocklist;
  SignAlgorithm signing_algorithm = SignAlgorithm::Rsa2048Sha256;

  bool operator==(const SecurityPolicy&) const = default;
};

namespace policy_detail {

struct ParsedUrl {
  std::string scheme;
  std::string host;
  int port = 0;
  std::string path;  // prefix, no trailing slash
};

inline ParsedUrl parse_url(const std::string& url) {
  ParsedUrl out;
  auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) {
    fail(ErrorCode::InvalidPolicy, "mirror url missing scheme: " + url);
  }
  out.scheme = url.substr(0, scheme_end);
  std::string rest = url.substr(scheme_end + 3);
  auto path_start = rest.find('/');
  std::string authority = rest.substr(0, path_start);
  if (path_start != std::string::npos) {
    out.path = rest.substr(path_start);
    while (!out.path.empty() && out.path.back() == '/') out.path.pop_back();
  }
  if (!authority.empty() && authority.front() == '[') {
    auto close = authority.find(']');
    if (close == std::string::npos) {
      fail(ErrorCode::InvalidPolicy, "mirror url bad ipv6 literal: " + url);
    }
    out.host = authority.substr(1, close - 1);
    if (close + 1 < authority.size() && authority[close + 1] == ':') {
      out.port = std::atoi(authority.substr(close + 2).c_str());
    }
  } else {
    auto colon = authority.rfind(':');
    if (colon != std::string::npos) {
      out.host = authority.substr(0, colon);
      out.port = std::atoi(authority.substr(colon + 1).c_str());
    } else {
      out.host = authority;
    }
  }
  if (out.port == 0) out.port = out.scheme == "https" ? 443 : 80;
  if (out.host.empty()) {
    fail(ErrorCode::InvalidPolicy, "mirror url missing host: " + url);
  }
  return out;
}

inline bool loopback_host(const std::string& host) {
  return host == "localhost" || host == "::1" || host.rfind("127.", 0) == 0;
}

// Mirrors must speak TLS; plain http is tolerated only toward loopback,
// which the test harness uses for its in-process mirrors.
inline void check_mirror_url(const std::string& url) {
  ParsedUrl u = parse_url(url);
  if (u.scheme == "https") return;
  if (u.scheme == "http" && loopback_host(u.host)) return;
  fail(ErrorCode::InvalidPolicy,
       "mirrors: url must use https (plain http only toward loopback): " + url);
}

// Minimal glob: '*' any run, '?' any one character.
inline bool glob_match(const std::string& pattern, const std::string& text) {
  std::size_t p = 0, t = 0, star_p = std::string::npos, star_t = 0;
  while (t < text.size()) {
    if (p < pattern.size() && (pattern[p] == text[t] || pattern[p] == '?')) {
      ++p;
      ++t;
    } else if (p < pattern.size() && pattern[p] == '*') {
      star_p = p++;
      star_t = t;
    } else if (star_p != std::string::npos) {
      p = star_p + 1;
      t = ++star_t;
    } else {
      return false;
    }
  }
  while (p < pattern.size() && pattern[p] == '*') ++p;
  return p == pattern.size();
}

inline UserSpec parse_user_node(const YAML::Node& node) {
  if (!node.IsMap()) {
    fail(ErrorCode::InvalidPolicy, "initial_users: entries must be maps");
  }
  UserSpec u;
  if (!node["name"]) fail(ErrorCode::InvalidPolicy, "initial_users: name required");
  u.name = node["name"].as<std::string>();
  if (node["uid"]) u.explicit_uid = node["uid"].as<std::uint32_t>();
  if (node["group"]) u.primary_group = node["group"].as<std::string>();
  if (node["gecos"]) u.gecos = node["gecos"].as<std::string>();
  if (node["home"]) u.home = node["home"].as<std::string>();
  if (node["shell"]) u.shell = node["shell"].as<std::string>();
  if (node["system"]) u.system_account = node["system"].as<bool>();
  if (node["password"]) u.password_field = node["password"].as<std::string>();
  return normalize_user_spec(std::move(u));
}

inline GroupSpec parse_group_node(const YAML::Node& node) {
  if (!node.IsMap()) {
    fail(ErrorCode::InvalidPolicy, "initial_groups: entries must be maps");
  }
  GroupSpec g;
  if (!node["name"]) fail(ErrorCode::InvalidPolicy, "initial_groups: name required");
  g.name = node["name"].as<std::string>();
  if (node["gid"]) g.explicit_gid = node["gid"].as<std::uint32_t>();
  if (node["members"]) {
    for (const auto& m : node["members"]) g.members.push_back(m.as<std::string>());
  }
  return g;
}

}  // namespace policy_detail

inline void validate_policy(const SecurityPolicy& policy) {
  if (policy.mirrors.empty()) {
    fail(ErrorCode::InvalidPolicy, "mirrors: must be a non-empty list");
  }
  for (const std::string& url : policy.mirrors) {
    policy_detail::check_mirror_url(url);
  }
  if (policy.signers_keys.empty()) {
    fail(ErrorCode::InvalidPolicy, "signers_keys: must be a non-empty list");
  }
  for (const std::string& pem : policy.signers_keys) {
    try {
      (void)PublicKey::from_pem(pem);
    } catch (const TsrError& e) {
      fail(ErrorCode::InvalidPolicy,
           std::string("signers_keys: unparseable key: ") + e.what());
    }
  }
  if (!policy.allowlist.empty() && !policy.blocklist.empty()) {
    fail(ErrorCode::InvalidPolicy, "allowlist and blocklist are mutually exclusive");
  }
  if (policy.architecture.empty()) {
    fail(ErrorCode::InvalidPolicy, "architecture: must be non-empty");
  }
  for (const UserSpec& u : policy.initial_users) {
    if (!valid_identity_name(u.name)) {
      fail(ErrorCode::InvalidPolicy, "initial_users: invalid name: " + u.name);
    }
  }
  for (const GroupSpec& g : policy.initial_groups) {
    if (!valid_identity_name(g.name)) {
      fail(ErrorCode::InvalidPolicy, "initial_groups: invalid name: " + g.name);
    }
  }
}

inline SecurityPolicy parse_policy(const std::string& text) {
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::Exception& e) {
    fail(ErrorCode::InvalidPolicy, std::string("unparseable document: ") + e.what());
  }
  if (!root.IsMap()) {
    fail(ErrorCode::InvalidPolicy, "policy document must be a mapping");
  }
  static const std::vector<std::string> known = {
      "mirrors",      "signers_keys", "initial_users", "initial_groups",
      "architecture", "allowlist",    "blocklist",     "signing_algorithm"};
  for (const auto& kv : root) {
    std::string key = kv.first.as<std::string>();
    if (std::find(known.begin(), known.end(), key) == known.end()) {
      fail(ErrorCode::InvalidPolicy, "unknown policy key: " + key);
    }
  }

  SecurityPolicy policy;
  try {
    if (root["mirrors"]) {
      for (const auto& m : root["mirrors"]) {
        policy.mirrors.push_back(m.as<std::string>());
      }
    }
    if (root["signers_keys"]) {
      for (const auto& k : root["signers_keys"]) {
        policy.signers_keys.push_back(k.as<std::string>());
      }
    }
    if (root["initial_users"]) {
      for (const auto& u : root["initial_users"]) {
        policy.initial_users.push_back(policy_detail::parse_user_node(u));
      }
    }
    if (root["initial_groups"]) {
      for (const auto& g : root["initial_groups"]) {
        policy.initial_groups.push_back(policy_detail::parse_group_node(g));
      }
    }
    if (root["architecture"]) {
      policy.architecture = root["architecture"].as<std::string>();
    }
    if (root["allowlist"]) {
      for (const auto& p : root["allowlist"]) {
        policy.allowlist.push_back(p.as<std::string>());
      }
    }
    if (root["blocklist"]) {
      for (const auto& p : root["blocklist"]) {
        policy.blocklist.push_back(p.as<std::string>());
      }
    }
    if (root["signing_algorithm"]) {
      std::string alg = root["signing_algorithm"].as<std::string>();
      if (alg == "rsa-2048") {
        policy.signing_algorithm = SignAlgorithm::Rsa2048Sha256;
      } else if (alg == "ed25519") {
        policy.signing_algorithm = SignAlgorithm::Ed25519;
      } else {
        fail(ErrorCode::InvalidPolicy, "signing_algorithm: unknown value: " + alg);
      }
    }
  } catch (const YAML::Exception& e) {
    fail(ErrorCode::InvalidPolicy, std::string("ill-typed policy field: ") + e.what());
  }
  validate_policy(policy);
  return policy;
}

inline std::string policy_to_yaml(const SecurityPolicy& policy) {
  YAML::Node root;
  for (const auto& m : policy.mirrors) root["mirrors"].push_back(m);
  for (const auto& k : policy.signers_keys) root["signers_keys"].push_back(k);
  for (const UserSpec& u : policy.initial_users) {
    YAML::Node n;
    n["name"] = u.name;
    if (u.explicit_uid) n["uid"] = *u.explicit_uid;
    n["group"] = u.primary_group;
    if (!u.gecos.empty()) n["gecos"] = u.gecos;
    n["home"] = u.home;
    n["shell"] = u.shell;
    n["system"] = u.system_account;
    n["password"] = u.password_field;
    root["initial_users"].push_back(n);
  }
  for (const GroupSpec& g : policy.initial_groups) {
    YAML::Node n;
    n["name"] = g.name;
    if (g.explicit_gid) n["gid"] = *g.explicit_gid;
    for (const auto& m : g.members) n["members"].push_back(m);
    root["initial_groups"].push_back(n);
  }
  root["architecture"] = policy.architecture;
  for (const auto& p : policy.allowlist) root["allowlist"].push_back(p);
  for (const auto& p : policy.blocklist) root["blocklist"].push_back(p);
  root["signing_algorithm"] = policy.signing_algorithm == SignAlgorithm::Ed25519
                                  ? "ed25519"
                                  : "rsa-2048";
  YAML::Emitter out;
  out << root;
  return std::string(out.c_str()) + "\n";
}

inline std::vector<PublicKey> trusted_signer_keys(const SecurityPolicy& policy) {
  std::vector<PublicKey> keys;
  keys.reserve(policy.signers_keys.size());
  for (const std::string& pem : policy.signers_keys) {
    keys.push_back(PublicKey::from_pem(pem));
  }
  return keys;
}

inline bool package_allowed(const SecurityPolicy& policy, const std::string& name) {
  if (!policy.allowlist.empty()) {
    return std::any_of(policy.allowlist.begin(), policy.allowlist.end(),
                       [&](const std::string& pattern) {
                         return policy_detail::glob_match(pattern, name);
                       });
  }
  return std::none_of(policy.blocklist.begin(), policy.blocklist.end(),
                      [&](const std::string& pattern) {
                        return policy_detail::glob_match(pattern, name);
                      });
}

}  // namespace tsr
