#pragma once

#include <string>
#include <vector>

#include "tsr/keystore.hpp"
#include "tsr/sanitizer.hpp"
#include "tsr/simulator.hpp"

namespace tsr {

struct InstallVerdict {
  std::size_t files_checked = 0;
  std::vector<std::string> signature_failures;  // paths, sorted
  bool config_match = true;

  bool trusted() const { return signature_failures.empty() && config_match; }
};

// Post-installation audit: every file on the modeled filesystem must carry
// a signature from the repository key that matches its content, and any
// identity files present must equal the repository's predicted versions.
inline InstallVerdict verify_install(const SimFs& fs, const PublicKey& key,
                                     const PredictedConfig* predicted = nullptr) {
  InstallVerdict verdict;
  for (const auto& [path, file] : fs.files) {
    ++verdict.files_checked;
    bool ok = file.envelope.has_value();
    if (ok) {
      try {
        ok = verify_envelope(key, *file.envelope, file.content);
      } catch (const TsrError&) {
        ok = false;
      }
    }
    if (!ok) verdict.signature_failures.push_back(path);
  }
  if (predicted) {
    auto check = [&](const std::string& path, const std::string& want) {
      auto it = fs.files.find(path);
      if (it == fs.files.end()) return;  // never produced, nothing to compare
      if (to_string(it->second.content) != want) verdict.config_match = false;
    };
    check("/etc/passwd", predicted->passwd_content);
    check("/etc/group", predicted->group_content);
    check("/etc/shadow", predicted->shadow_content);
  }
  return verdict;
}

}  // namespace tsr
