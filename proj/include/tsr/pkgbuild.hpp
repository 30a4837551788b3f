#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include <yaml-cpp/yaml.h>

#include "tsr/bytes.hpp"
#include "tsr/error.hpp"
#include "tsr/package.hpp"

namespace tsr {

// Declarative description of an upstream-style package, read from YAML.
struct PackageSpec {
  PkgInfo info;
  std::map<ScriptKind, std::string> scripts;
  std::vector<TarEntry> files;
};

namespace pkgbuild_detail {

inline std::optional<ScriptKind> script_kind_from_key(const std::string& key) {
  for (ScriptKind kind : kAllScriptKinds) {
    if (script_file_name(kind) == "." + key) return kind;
  }
  return std::nullopt;
}

}  // namespace pkgbuild_detail

inline PackageSpec parse_package_spec(const std::string& text) {
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::Exception& e) {
    fail(ErrorCode::InvalidSpec, std::string("unparseable spec: ") + e.what());
  }
  if (!root.IsMap()) fail(ErrorCode::InvalidSpec, "spec must be a mapping");

  PackageSpec spec;
  try {
    if (!root["name"]) fail(ErrorCode::InvalidSpec, "name required");
    spec.info.pkgname = root["name"].as<std::string>();
    if (!root["version"]) fail(ErrorCode::InvalidSpec, "version required");
    spec.info.pkgver = root["version"].as<std::string>();
    spec.info.arch = root["arch"] ? root["arch"].as<std::string>() : "x86_64";
    if (root["depends"]) {
      for (const auto& d : root["depends"]) {
        spec.info.depends.push_back(d.as<std::string>());
      }
    }
    if (root["scripts"]) {
      if (!root["scripts"].IsMap()) {
        fail(ErrorCode::InvalidSpec, "scripts must map kind to text");
      }
      for (const auto& kv : root["scripts"]) {
        std::string key = kv.first.as<std::string>();
        auto kind = pkgbuild_detail::script_kind_from_key(key);
        if (!kind) fail(ErrorCode::InvalidSpec, "unknown script kind: " + key);
        spec.scripts[*kind] = kv.second.as<std::string>();
      }
    }
    if (root["files"]) {
      for (const auto& f : root["files"]) {
        if (!f.IsMap() || !f["path"]) {
          fail(ErrorCode::InvalidSpec, "files entries need a path");
        }
        TarEntry entry;
        entry.path = f["path"].as<std::string>();
        if (entry.path.empty() || entry.path.front() == '/') {
          fail(ErrorCode::InvalidSpec, "file paths must be relative: " + entry.path);
        }
        if (f["content"] && f["content_base64"]) {
          fail(ErrorCode::InvalidSpec,
               "file " + entry.path + ": content and content_base64 conflict");
        }
        if (f["content_base64"]) {
          entry.content = base64_decode(f["content_base64"].as<std::string>());
        } else if (f["content"]) {
          entry.content = to_bytes(f["content"].as<std::string>());
        }
        if (f["mode"]) {
          entry.mode = static_cast<std::uint32_t>(
              std::stoul(f["mode"].as<std::string>(), nullptr, 8));
        }
        spec.info.size += entry.content.size();
        spec.files.push_back(std::move(entry));
      }
    }
  } catch (const YAML::Exception& e) {
    fail(ErrorCode::InvalidSpec, std::string("ill-typed spec field: ") + e.what());
  }
  if (!pkg_detail::valid_pkgname(spec.info.pkgname)) {
    fail(ErrorCode::InvalidSpec, "invalid package name: " + spec.info.pkgname);
  }
  if (spec.files.empty()) {
    fail(ErrorCode::InvalidSpec, "at least one file entry required");
  }
  return spec;
}

inline Bytes build_package(const PackageSpec& spec, const SigningKeypair& signer) {
  return build_apk(spec.info, spec.scripts, spec.files, signer);
}

}  // namespace tsr
