#pragma once

// Shared test scaffolding: a scriptable upstream repository whose index and
// packages are built with the real format writers, so every byte a test feeds
// the system could have come from a genuine mirror.

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "tsr/index.hpp"
#include "tsr/keystore.hpp"
#include "tsr/mirrors.hpp"
#include "tsr/package.hpp"

namespace tsrtest {

using namespace tsr;

struct UpstreamPackage {
  PkgInfo info;
  std::map<ScriptKind, std::string> scripts;
  std::vector<TarEntry> data_entries;
  Bytes bytes;
};

inline TarEntry data_file(std::string path, std::string content, std::uint32_t mode = 0644) {
  TarEntry e;
  e.path = std::move(path);
  e.mode = mode;
  e.content = to_bytes(content);
  return e;
}

class UpstreamRepo {
 public:
  explicit UpstreamRepo(SignAlgorithm algorithm = SignAlgorithm::Ed25519,
                        std::string architecture = "x86_64")
      : key(SigningKeypair::generate(algorithm)), arch(std::move(architecture)) {}

  UpstreamPackage& add_package(const std::string& name, const std::string& version,
                               std::map<ScriptKind, std::string> scripts = {},
                               std::vector<TarEntry> files = {}) {
    if (files.empty()) {
      files.push_back(data_file("usr/share/" + name + "/payload.txt",
                                name + " " + version + " payload\n"));
    }
    UpstreamPackage pkg;
    pkg.info.pkgname = name;
    pkg.info.pkgver = version;
    pkg.info.arch = arch;
    std::uint64_t total = 0;
    for (const TarEntry& f : files) total += f.content.size();
    pkg.info.size = total;
    pkg.scripts = std::move(scripts);
    pkg.data_entries = std::move(files);
    pkg.bytes = build_apk(pkg.info, pkg.scripts, pkg.data_entries, key);
    auto [it, _] = packages.insert_or_assign(name, std::move(pkg));
    return it->second;
  }

  void remove_package(const std::string& name) { packages.erase(name); }

  Bytes index_bytes() const {
    std::vector<ApkPackage> parsed;
    parsed.reserve(packages.size());
    for (const auto& [name, pkg] : packages) parsed.push_back(parse_apk(pkg.bytes));
    std::vector<IndexInput> inputs;
    std::vector<std::uint64_t> sizes;
    for (const auto& [name, pkg] : packages) sizes.push_back(pkg.bytes.size());
    std::size_t i = 0;
    for (const auto& p : parsed) inputs.push_back({&p, sizes[i++]});
    return generate_index(inputs, key, "upstream fixture");
  }

  // A fresh, honest mirror serving the current index and package set.
  ScriptedTransport::Mirror mirror(std::uint32_t latency_ms = 10) const {
    ScriptedTransport::Mirror m;
    m.index = index_bytes();
    for (const auto& [name, pkg] : packages) {
      m.packages[package_file_name(pkg.info.pkgname, pkg.info.pkgver)] = pkg.bytes;
    }
    m.latency_ms = latency_ms;
    return m;
  }

  std::string key_pem() const { return key.public_key().to_pem(); }

  SigningKeypair key;
  std::string arch;
  std::map<std::string, UpstreamPackage> packages;
};

// ---------------------------------------------------------------------------
// Synthetic full-distribution corpus. Category sizes mirror a survey of two
// real package branches: most packages carry no scripts at all, and the
// scripted minority falls into a handful of behavioral buckets, two of which
// (persistent config edits, login-shell activation) are unsupportable.

struct CorpusCounts {
  std::size_t scriptless_main = 5531;
  std::size_t scriptless_community = 5772;
  std::size_t filesystem = 45;
  std::size_t empty_script = 22;
  std::size_t text_processing = 36;
  std::size_t config_change = 18;
  std::size_t empty_file = 1;
  std::size_t user_group = 201;
  std::size_t shell_activation = 10;

  std::size_t total() const {
    return scriptless_main + scriptless_community + filesystem + empty_script +
           text_processing + config_change + empty_file + user_group +
           shell_activation;
  }
  std::size_t rejected() const { return config_change + shell_activation; }
};

struct AcceptanceCorpus {
  CorpusCounts counts;
  std::vector<std::string> user_group_names;               // sanitize-rewritten
  std::set<std::pair<std::string, std::string>> rejected;  // (name, version)
};

inline std::string zero_pad(std::size_t n, int width) {
  std::string s = std::to_string(n);
  while (static_cast<int>(s.size()) < width) s.insert(s.begin(), '0');
  return s;
}

inline AcceptanceCorpus build_acceptance_corpus(UpstreamRepo& repo,
                                                const CorpusCounts& counts = {}) {
  AcceptanceCorpus out;
  out.counts = counts;
  const std::string ver = "1.0-r0";

  auto add = [&](const std::string& name,
                 std::map<ScriptKind, std::string> scripts = {}) {
    repo.add_package(name, ver, std::move(scripts));
  };

  for (std::size_t i = 1; i <= counts.scriptless_main; ++i) add("m" + zero_pad(i, 4));
  for (std::size_t i = 1; i <= counts.scriptless_community; ++i) {
    add("c" + zero_pad(i, 4));
  }

  for (std::size_t i = 1; i <= counts.filesystem; ++i) {
    std::string n = "fsp" + zero_pad(i, 3);
    add(n, {{ScriptKind::PostInstall,
             "mkdir -p /var/lib/" + n + "\nchown root:root /var/lib/" + n + "\n"}});
  }

  for (std::size_t i = 1; i <= counts.empty_script; ++i) {
    std::string body = i % 2 ? "# placeholder hook\nexit 0\n" : "true\n";
    add("nop" + zero_pad(i, 3), {{ScriptKind::PostInstall, body}});
  }

  for (std::size_t i = 1; i <= counts.text_processing; ++i) {
    add("txt" + zero_pad(i, 3),
        {{ScriptKind::PostInstall, "grep -q root /etc/passwd\n"}});
  }

  for (std::size_t i = 1; i <= counts.config_change; ++i) {
    std::string n = "cfg" + zero_pad(i, 3);
    std::string body = i % 2 ? "echo enabled >> /etc/conf.d/" + n + "\n"
                             : "sed -i s/a/b/ /etc/" + n + ".conf\n";
    add(n, {{ScriptKind::PostInstall, body}});
    out.rejected.insert({n, ver});
  }

  for (std::size_t i = 1; i <= counts.empty_file; ++i) {
    std::string n = "efc" + zero_pad(i, 3);
    add(n, {{ScriptKind::PostInstall, "touch /var/log/" + n + ".log\n"}});
  }

  for (std::size_t i = 1; i <= counts.user_group; ++i) {
    std::string n = "ugc" + zero_pad(i, 3);
    std::string user = "svc" + zero_pad(i, 3);
    std::string group = "grp" + zero_pad(i, 3);
    std::string body;
    switch (i % 3) {
      case 0:
        body = "addgroup -S " + group + "\nadduser -S -G " + group +
               " -h /var/lib/" + user + " -s /sbin/nologin " + user + "\n";
        break;
      case 1:
        body = "groupadd -r " + group + "\nuseradd -r -g " + group +
               " -d /var/lib/" + user + " -s /sbin/nologin " + user + "\n";
        break;
      default:
        body = "adduser -S " + user + "\naddgroup " + user + " " + group + "\n" +
               "addgroup -S " + group + "\n";
        break;
    }
    add(n, {{ScriptKind::PostInstall, body}});
    out.user_group_names.push_back(n);
  }

  for (std::size_t i = 1; i <= counts.shell_activation; ++i) {
    std::string n = "shl" + zero_pad(i, 3);
    add(n, {{ScriptKind::PostInstall, "add-shell /usr/bin/" + n + "\n"}});
    out.rejected.insert({n, ver});
  }

  return out;
}

}  // namespace tsrtest
