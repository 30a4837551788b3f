#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <cstdlib>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "tsr/bytes.hpp"
#include "tsr/error.hpp"
#include "tsr/keystore.hpp"
#include "tsr/package.hpp"
#include "tsr/pax_signature.hpp"
#include "tsr/script.hpp"

namespace tsr {

enum class ScriptClass {
  FilesystemChange,
  EmptyScript,
  TextProcessing,
  ConfigurationChange,
  EmptyFileCreation,
  UserGroupCreation,
  ShellActivation,
  Unknown,
};

using ClassSet = std::set<ScriptClass>;

inline std::string script_class_name(ScriptClass c) {
  switch (c) {
    case ScriptClass::FilesystemChange: return "FilesystemChange";
    case ScriptClass::EmptyScript: return "EmptyScript";
    case ScriptClass::TextProcessing: return "TextProcessing";
    case ScriptClass::ConfigurationChange: return "ConfigurationChange";
    case ScriptClass::EmptyFileCreation: return "EmptyFileCreation";
    case ScriptClass::UserGroupCreation: return "UserGroupCreation";
    case ScriptClass::ShellActivation: return "ShellActivation";
    case ScriptClass::Unknown: return "Unknown";
  }
  return "Unknown";
}

// Classes whose presence makes a package unsupportable: their effects cannot
// be predicted and signed ahead of installation.
inline bool is_rejection_class(ScriptClass c) {
  return c == ScriptClass::ConfigurationChange || c == ScriptClass::ShellActivation ||
         c == ScriptClass::Unknown;
}

inline constexpr const char* kSanitizedMarker = "# TSR-SANITIZED v1";
inline constexpr const char* kInstallConfigCommand = "tsr-install-config";

namespace sanitize_detail {

inline std::string command_basename(const std::string& word) {
  auto slash = word.rfind('/');
  return slash == std::string::npos ? word : word.substr(slash + 1);
}

inline bool has_flag(const ShCommand& cmd, const std::string& flag) {
  for (std::size_t i = 1; i < cmd.argv.size(); ++i) {
    if (cmd.argv[i].rfind(flag, 0) == 0) return true;
  }
  return false;
}

}  // namespace sanitize_detail

// The command table. Each simple command maps to exactly one class; a write
// redirection into an absolute path overrides the command's own class.
inline ScriptClass classify_command(const ShCommand& cmd) {
  if (cmd.tainted) return ScriptClass::Unknown;

  for (const ShRedirect& r : cmd.redirects) {
    if (r.op != ">" && r.op != ">>") continue;
    if (r.target.empty() || r.target == "/dev/null") continue;
    if (r.target.front() == '/') return ScriptClass::ConfigurationChange;
    return ScriptClass::Unknown;  // relative write target: unpredictable cwd
  }
  if (cmd.argv.empty()) return ScriptClass::Unknown;

  const std::string name = sanitize_detail::command_basename(cmd.argv[0]);
  if (name == "mkdir" || name == "rmdir" || name == "rm" || name == "mv" ||
      name == "cp" || name == "ln" || name == "chmod" || name == "chown" ||
      name == "install") {
    return ScriptClass::FilesystemChange;
  }
  if (name == ":" || name == "true" || name == "echo" || name == "test" ||
      name == "[") {
    return ScriptClass::EmptyScript;
  }
  if (name == "exit" && (cmd.argv.size() == 1 ||
                         (cmd.argv.size() == 2 && cmd.argv[1] == "0"))) {
    return ScriptClass::EmptyScript;
  }
  if (name == "grep" || name == "awk" || name == "cut" || name == "tr") {
    return ScriptClass::TextProcessing;
  }
  if (name == "sed") {
    return sanitize_detail::has_flag(cmd, "-i") ? ScriptClass::ConfigurationChange
                                                : ScriptClass::TextProcessing;
  }
  if (name == "update-ca-certificates" || name == kInstallConfigCommand) {
    return ScriptClass::ConfigurationChange;
  }
  if (name == "touch") return ScriptClass::EmptyFileCreation;
  if (name == "adduser" || name == "addgroup" || name == "useradd" ||
      name == "groupadd") {
    return ScriptClass::UserGroupCreation;
  }
  if (name == "add-shell") return ScriptClass::ShellActivation;
  return ScriptClass::Unknown;
}

inline ClassSet classify_script(const std::string& text) {
  ParsedScript parsed = parse_script(text);
  if (!parsed.ok) return {ScriptClass::Unknown};
  if (parsed.commands.empty()) return {ScriptClass::EmptyScript};
  ClassSet classes;
  for (const ShCommand& cmd : parsed.commands) {
    classes.insert(classify_command(cmd));
  }
  return classes;
}

// ---- Identity model ---------------------------------------------------

struct UserSpec {
  std::string name;
  std::optional<std::uint32_t> explicit_uid;
  std::string primary_group;  // defaults to the user's own name
  std::string gecos;
  std::string home;   // defaults to /home/<name>
  std::string shell;  // defaults by system_account
  bool system_account = false;
  std::string password_field = "!";

  bool operator==(const UserSpec&) const = default;
};

struct GroupSpec {
  std::string name;
  std::optional<std::uint32_t> explicit_gid;
  std::vector<std::string> members;  // supplementary members only

  bool operator==(const GroupSpec&) const = default;
};

inline bool valid_identity_name(const std::string& name) {
  if (name.empty()) return false;
  char c0 = name[0];
  if (!((c0 >= 'a' && c0 <= 'z') || c0 == '_')) return false;
  return std::all_of(name.begin() + 1, name.end(), [](char c) {
    return (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '_' || c == '-';
  });
}

inline UserSpec normalize_user_spec(UserSpec u) {
  if (u.primary_group.empty()) u.primary_group = u.name;
  if (u.home.empty()) u.home = "/home/" + u.name;
  if (u.shell.empty()) u.shell = u.system_account ? "/sbin/nologin" : "/bin/sh";
  if (u.password_field.empty()) u.password_field = "!";
  return u;
}

// Actions gleaned from one script: declared users/groups plus supplementary
// memberships ("addgroup USER GROUP" form).
struct IdentityActions {
  std::vector<UserSpec> users;
  std::vector<GroupSpec> groups;
  std::vector<std::pair<std::string, std::string>> memberships;  // user, group
  std::vector<std::string> warnings;
};

namespace sanitize_detail {

inline std::optional<std::uint32_t> parse_id(const std::string& s) {
  if (s.empty() || !std::all_of(s.begin(), s.end(), [](unsigned char c) {
        return c >= '0' && c <= '9';
      })) {
    return std::nullopt;
  }
  return static_cast<std::uint32_t>(std::strtoull(s.c_str(), nullptr, 10));
}

inline bool interactive_shell(const std::string& shell) {
  return shell != "/sbin/nologin" && shell != "/bin/false" && shell != "/usr/bin/nologin";
}

// adduser/addgroup follow the busybox applets; useradd/groupadd the shadow
// tools. Only the flags that influence the predicted configuration are
// interpreted; the rest are accepted and ignored.
inline void extract_identity_actions(const ShCommand& cmd, IdentityActions& out) {
  if (cmd.argv.empty()) return;
  const std::string name = command_basename(cmd.argv[0]);
  const auto& a = cmd.argv;

  auto value_of = [&](std::size_t& i) -> std::string {
    if (i + 1 < a.size()) return a[++i];
    return "";
  };

  if (name == "adduser") {
    UserSpec user;
    bool empty_password = false;
    bool explicit_shell = false;
    std::vector<std::string> positionals;
    for (std::size_t i = 1; i < a.size(); ++i) {
      const std::string& arg = a[i];
      if (arg == "-S") {
        user.system_account = true;
      } else if (arg == "-D") {
        empty_password = true;
      } else if (arg == "-H" || arg == "-T") {
        // no home creation; irrelevant to prediction
      } else if (arg == "-h") {
        user.home = value_of(i);
      } else if (arg == "-g") {
        user.gecos = value_of(i);
      } else if (arg == "-s") {
        user.shell = value_of(i);
        explicit_shell = true;
      } else if (arg == "-G") {
        user.primary_group = value_of(i);
      } else if (arg == "-u") {
        user.explicit_uid = parse_id(value_of(i));
      } else if (arg == "-k") {
        value_of(i);
      } else if (!arg.empty() && arg[0] == '-') {
        // unrecognized flag, ignored
      } else {
        positionals.push_back(arg);
      }
    }
    if (positionals.size() == 2) {
      out.memberships.emplace_back(positionals[0], positionals[1]);
      return;
    }
    if (positionals.size() != 1) return;
    user.name = positionals[0];
    if (empty_password) {
      out.warnings.push_back("adduser " + user.name +
                             " requests an empty password (-D)");
    }
    if (explicit_shell && interactive_shell(user.shell)) {
      out.warnings.push_back("adduser " + user.name + " sets login shell " +
                             user.shell);
    }
    out.users.push_back(normalize_user_spec(std::move(user)));
    return;
  }

  if (name == "useradd") {
    UserSpec user;
    bool explicit_shell = false;
    std::vector<std::string> positionals;
    for (std::size_t i = 1; i < a.size(); ++i) {
      const std::string& arg = a[i];
      if (arg == "-r") {
        user.system_account = true;
      } else if (arg == "-u") {
        user.explicit_uid = parse_id(value_of(i));
      } else if (arg == "-g") {
        user.primary_group = value_of(i);
      } else if (arg == "-c") {
        user.gecos = value_of(i);
      } else if (arg == "-d") {
        user.home = value_of(i);
      } else if (arg == "-s") {
        user.shell = value_of(i);
        explicit_shell = true;
      } else if (arg == "-G" || arg == "-k" || arg == "-K" || arg == "-p" ||
                 arg == "-e" || arg == "-f") {
        value_of(i);
      } else if (!arg.empty() && arg[0] == '-') {
        // boolean flag (-m, -M, -N, -U, -l), ignored
      } else {
        positionals.push_back(arg);
      }
    }
    if (positionals.size() != 1) return;
    user.name = positionals[0];
    if (explicit_shell && interactive_shell(user.shell)) {
      out.warnings.push_back("useradd " + user.name + " sets login shell " +
                             user.shell);
    }
    out.users.push_back(normalize_user_spec(std::move(user)));
    return;
  }

  if (name == "addgroup") {
    GroupSpec group;
    std::vector<std::string> positionals;
    for (std::size_t i = 1; i < a.size(); ++i) {
      const std::string& arg = a[i];
      if (arg == "-S") {
        // system group; gid range is handled by the allocator anyway
      } else if (arg == "-g") {
        group.explicit_gid = parse_id(value_of(i));
      } else if (!arg.empty() && arg[0] == '-') {
        // ignored
      } else {
        positionals.push_back(arg);
      }
    }
    if (positionals.size() == 2) {
      out.memberships.emplace_back(positionals[0], positionals[1]);
      return;
    }
    if (positionals.size() != 1) return;
    group.name = positionals[0];
    out.groups.push_back(std::move(group));
    return;
  }

  if (name == "groupadd") {
    GroupSpec group;
    std::vector<std::string> positionals;
    for (std::size_t i = 1; i < a.size(); ++i) {
      const std::string& arg = a[i];
      if (arg == "-g") {
        group.explicit_gid = parse_id(value_of(i));
      } else if (arg == "-r" || arg == "-f") {
        // ignored
      } else if (!arg.empty() && arg[0] == '-') {
        // ignored
      } else {
        positionals.push_back(arg);
      }
    }
    if (positionals.size() != 1) return;
    group.name = positionals[0];
    out.groups.push_back(std::move(group));
    return;
  }
}

inline IdentityActions extract_script_identities(const std::string& text) {
  IdentityActions out;
  ParsedScript parsed = parse_script(text);
  if (!parsed.ok) return out;
  for (const ShCommand& cmd : parsed.commands) {
    if (classify_command(cmd) == ScriptClass::UserGroupCreation) {
      extract_identity_actions(cmd, out);
    }
  }
  return out;
}

}  // namespace sanitize_detail

// ---- Corpus-wide identity collection -----------------------------------

// Policy identities first, in policy order; corpus-discovered identities
// follow sorted by name. The result is a pure function of the identity
// *set*, never of package enumeration order.
inline std::pair<std::vector<UserSpec>, std::vector<GroupSpec>> collect_identities(
    const std::vector<const ApkPackage*>& corpus,
    const std::vector<UserSpec>& policy_users,
    const std::vector<GroupSpec>& policy_groups) {
  std::vector<UserSpec> users;
  std::vector<GroupSpec> groups;
  std::map<std::string, std::size_t> user_at;
  std::map<std::string, std::size_t> group_at;
  std::set<std::string> policy_owned;

  auto add_user = [&](const UserSpec& raw, bool from_policy) {
    UserSpec spec = normalize_user_spec(raw);
    if (!valid_identity_name(spec.name)) {
      fail(ErrorCode::ConflictingIdentity, "invalid user name: " + spec.name);
    }
    if (from_policy) policy_owned.insert(spec.name);
    auto it = user_at.find(spec.name);
    if (it == user_at.end()) {
      user_at[spec.name] = users.size();
      users.push_back(spec);
      return;
    }
    UserSpec& existing = users[it->second];
    if (spec.explicit_uid && existing.explicit_uid &&
        *spec.explicit_uid != *existing.explicit_uid) {
      fail(ErrorCode::ConflictingIdentity,
           "user " + spec.name + " declared with uids " +
               std::to_string(*existing.explicit_uid) + " and " +
               std::to_string(*spec.explicit_uid));
    }
    if (spec.explicit_uid && !existing.explicit_uid) {
      existing.explicit_uid = spec.explicit_uid;
    }
    // A policy definition owns every other attribute; corpus redeclarations
    // of a corpus-declared user must agree exactly (uid handled above).
    if (!policy_owned.count(spec.name)) {
      UserSpec lhs = existing, rhs = spec;
      lhs.explicit_uid.reset();
      rhs.explicit_uid.reset();
      if (!(lhs == rhs)) {
        fail(ErrorCode::ConflictingIdentity,
             "user " + spec.name + " declared twice with different attributes");
      }
    }
  };

  auto add_group = [&](const GroupSpec& raw, bool from_policy) {
    if (!valid_identity_name(raw.name)) {
      fail(ErrorCode::ConflictingIdentity, "invalid group name: " + raw.name);
    }
    auto it = group_at.find(raw.name);
    if (it == group_at.end()) {
      group_at[raw.name] = groups.size();
      groups.push_back(raw);
      return;
    }
    GroupSpec& existing = groups[it->second];
    if (raw.explicit_gid && existing.explicit_gid &&
        *raw.explicit_gid != *existing.explicit_gid) {
      fail(ErrorCode::ConflictingIdentity,
           "group " + raw.name + " declared with gids " +
               std::to_string(*existing.explicit_gid) + " and " +
               std::to_string(*raw.explicit_gid));
    }
    if (raw.explicit_gid && !existing.explicit_gid) {
      existing.explicit_gid = raw.explicit_gid;
    }
    for (const auto& m : raw.members) {
      if (std::find(existing.members.begin(), existing.members.end(), m) ==
          existing.members.end()) {
        existing.members.push_back(m);
      }
    }
    (void)from_policy;
  };

  for (const UserSpec& u : policy_users) add_user(u, true);
  for (const GroupSpec& g : policy_groups) add_group(g, true);

  // Gather corpus actions into name-sorted buckets so insertion order (and
  // with it uid/gid allocation) cannot depend on package enumeration order.
  std::map<std::string, std::vector<UserSpec>> corpus_users;
  std::map<std::string, std::vector<GroupSpec>> corpus_groups;
  std::map<std::string, std::set<std::string>> memberships;
  for (const ApkPackage* pkg : corpus) {
    ClassSet all_classes;
    for (const auto& [kind, text] : pkg->scripts) {
      ClassSet c = classify_script(text);
      all_classes.insert(c.begin(), c.end());
    }
    if (std::any_of(all_classes.begin(), all_classes.end(), is_rejection_class)) {
      continue;  // rejected packages contribute no identities
    }
    for (const auto& [kind, text] : pkg->scripts) {
      IdentityActions actions = sanitize_detail::extract_script_identities(text);
      for (auto& u : actions.users) corpus_users[u.name].push_back(std::move(u));
      for (auto& g : actions.groups) corpus_groups[g.name].push_back(std::move(g));
      for (auto& [user, group] : actions.memberships) memberships[group].insert(user);
    }
  }

  for (auto& [name, specs] : corpus_users) {
    for (const UserSpec& u : specs) add_user(u, false);
  }
  for (auto& [name, specs] : corpus_groups) {
    for (const GroupSpec& g : specs) add_group(g, false);
  }

  // Primary groups referenced but never declared exist implicitly, and
  // supplementary memberships may also name new groups.
  std::set<std::string> implicit;
  for (const UserSpec& u : users) {
    if (!group_at.count(u.primary_group)) implicit.insert(u.primary_group);
  }
  for (const auto& [group, members] : memberships) {
    if (!group_at.count(group)) implicit.insert(group);
  }
  for (const std::string& name : implicit) {
    GroupSpec g;
    g.name = name;
    add_group(g, false);
  }
  for (const auto& [group, members] : memberships) {
    GroupSpec g;
    g.name = group;
    g.members.assign(members.begin(), members.end());
    add_group(g, false);
  }

  return {std::move(users), std::move(groups)};
}

// ---- Deterministic configuration prediction ----------------------------

struct PredictedConfig {
  std::string passwd_content;
  std::string group_content;
  std::string shadow_content;
  std::map<std::string, std::uint32_t> uid_assignment;
  std::map<std::string, std::uint32_t> gid_assignment;

  bool operator==(const PredictedConfig&) const = default;
};

namespace sanitize_detail {

inline constexpr std::uint32_t kIdBase = 100;
inline constexpr std::uint32_t kIdLimit = 65533;

// Explicit ids are honored; the rest are assigned ascending from the base,
// skipping every id that is explicitly taken anywhere in the list. With the
// list itself deterministic, assignment is too.
template <typename Spec, typename GetId>
std::map<std::string, std::uint32_t> assign_ids(const std::vector<Spec>& specs,
                                                GetId get_id, const char* kind) {
  std::set<std::uint32_t> taken;
  for (const Spec& s : specs) {
    if (auto id = get_id(s)) {
      if (!taken.insert(*id).second) {
        fail(ErrorCode::ConflictingIdentity,
             std::string(kind) + " id " + std::to_string(*id) + " assigned twice");
      }
    }
  }
  std::map<std::string, std::uint32_t> out;
  std::uint32_t next = kIdBase;
  for (const Spec& s : specs) {
    if (out.count(s.name)) {
      fail(ErrorCode::ConflictingIdentity, "duplicate name: " + s.name);
    }
    std::uint32_t id;
    if (auto explicit_id = get_id(s)) {
      id = *explicit_id;
    } else {
      while (taken.count(next)) ++next;
      if (next > kIdLimit) {
        fail(ErrorCode::UidExhaustion,
             std::string(kind) + " allocation exceeded " + std::to_string(kIdLimit));
      }
      id = next;
      taken.insert(id);
    }
    out[s.name] = id;
  }
  return out;
}

}  // namespace sanitize_detail

inline PredictedConfig predict_config(const std::vector<UserSpec>& users,
                                      const std::vector<GroupSpec>& groups) {
  PredictedConfig out;
  out.gid_assignment = sanitize_detail::assign_ids(
      groups, [](const GroupSpec& g) { return g.explicit_gid; }, "group");
  out.uid_assignment = sanitize_detail::assign_ids(
      users, [](const UserSpec& u) { return u.explicit_uid; }, "user");

  for (const GroupSpec& g : groups) {
    std::vector<std::string> members = g.members;
    std::sort(members.begin(), members.end());
    members.erase(std::unique(members.begin(), members.end()), members.end());
    std::string joined;
    for (std::size_t i = 0; i < members.size(); ++i) {
      if (i) joined += ',';
      joined += members[i];
    }
    out.group_content += g.name + ":x:" + std::to_string(out.gid_assignment[g.name]) +
                         ":" + joined + "\n";
  }
  for (const UserSpec& raw : users) {
    UserSpec u = normalize_user_spec(raw);
    auto gid = out.gid_assignment.find(u.primary_group);
    if (gid == out.gid_assignment.end()) {
      fail(ErrorCode::ConflictingIdentity,
           "user " + u.name + " references unknown group " + u.primary_group);
    }
    out.passwd_content += u.name + ":x:" + std::to_string(out.uid_assignment[u.name]) +
                          ":" + std::to_string(gid->second) + ":" + u.gecos + ":" +
                          u.home + ":" + u.shell + "\n";
    out.shadow_content += u.name + ":" + u.password_field + ":0:0:99999:7:::\n";
  }
  return out;
}

// ---- Script rewriting ---------------------------------------------------

// Signatures the rewritten preamble installs: one per predicted config file
// plus the shared empty-content envelope used for touch rewrites.
struct ConfigEnvelopes {
  SignatureEnvelope passwd;
  SignatureEnvelope group;
  SignatureEnvelope shadow;
  SignatureEnvelope empty_file;
};

inline ConfigEnvelopes make_config_envelopes(const PredictedConfig& predicted,
                                             const SigningKeypair& signer) {
  ConfigEnvelopes out;
  out.passwd = sign_content(signer, to_bytes(predicted.passwd_content));
  out.group = sign_content(signer, to_bytes(predicted.group_content));
  out.shadow = sign_content(signer, to_bytes(predicted.shadow_content));
  out.empty_file = sign_content(signer, Bytes{});
  return out;
}

namespace sanitize_detail {

inline std::string quote_path(const std::string& path) {
  bool plain = !path.empty() && std::all_of(path.begin(), path.end(), [](char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '/' || c == '.' ||
           c == '_' || c == '-' || c == '+';
  });
  if (plain) return path;
  std::string quoted = "'";
  for (char c : path) {
    if (c == '\'') {
      quoted += "'\\''";
    } else {
      quoted += c;
    }
  }
  quoted += "'";
  return quoted;
}

inline std::string install_config_line(const std::string& path,
                                       const std::string& content,
                                       const SignatureEnvelope& envelope) {
  std::string b64 = content.empty() ? "-" : base64_encode(to_bytes(content));
  return std::string(kInstallConfigCommand) + " " + quote_path(path) + " " + b64 +
         " " + base64_encode(envelope.serialize());
}

inline std::string touch_replacement(const ShCommand& cmd,
                                     const SignatureEnvelope& empty_envelope) {
  std::vector<std::string> paths;
  for (std::size_t i = 1; i < cmd.argv.size(); ++i) {
    if (!cmd.argv[i].empty() && cmd.argv[i][0] == '-') continue;
    paths.push_back(cmd.argv[i]);
  }
  if (paths.empty()) return ":";
  std::string out;
  for (std::size_t i = 0; i < paths.size(); ++i) {
    if (i) out += " && ";
    out += install_config_line(paths[i], "", empty_envelope);
  }
  return out;
}

}  // namespace sanitize_detail

// Rewrites a script whose classes are all supported: user/group creation is
// replaced by the canonical preamble writing the predicted configuration,
// and touch commands become signed empty-file installs. Safe commands stay
// untouched, byte for byte.
inline std::string rewrite_script(const std::string& text,
                                  const PredictedConfig& predicted,
                                  const ClassSet& classes,
                                  const ConfigEnvelopes& envelopes) {
  for (ScriptClass c : classes) {
    if (is_rejection_class(c)) {
      fail(ErrorCode::RewriteUnsupported,
           "cannot rewrite script classified " + script_class_name(c));
    }
  }
  if (!classes.count(ScriptClass::UserGroupCreation) &&
      !classes.count(ScriptClass::EmptyFileCreation)) {
    return text;  // nothing to rewrite, no preamble added
  }

  ParsedScript parsed = parse_script(text);
  if (!parsed.ok) {
    fail(ErrorCode::RewriteUnsupported, "unparseable script: " + parsed.failure);
  }

  // Replacements per line, spliced right to left to keep offsets valid.
  struct Splice {
    std::size_t begin, end;
    std::string replacement;
  };
  std::map<std::size_t, std::vector<Splice>> by_line;
  for (const ShCommand& cmd : parsed.commands) {
    ScriptClass c = classify_command(cmd);
    if (c == ScriptClass::UserGroupCreation) {
      by_line[cmd.line].push_back({cmd.begin, cmd.end, ":"});
    } else if (c == ScriptClass::EmptyFileCreation) {
      by_line[cmd.line].push_back(
          {cmd.begin, cmd.end,
           sanitize_detail::touch_replacement(cmd, envelopes.empty_file)});
    }
  }

  std::vector<std::string> lines = parsed.lines;
  for (auto& [line_idx, splices] : by_line) {
    std::sort(splices.begin(), splices.end(),
              [](const Splice& a, const Splice& b) { return a.begin > b.begin; });
    for (const Splice& s : splices) {
      lines[line_idx].replace(s.begin, s.end - s.begin, s.replacement);
    }
  }

  std::string out = std::string(kSanitizedMarker) + "\n";
  if (classes.count(ScriptClass::UserGroupCreation)) {
    out += sanitize_detail::install_config_line("/etc/passwd",
                                                predicted.passwd_content,
                                                envelopes.passwd) + "\n";
    out += sanitize_detail::install_config_line("/etc/group",
                                                predicted.group_content,
                                                envelopes.group) + "\n";
    out += sanitize_detail::install_config_line("/etc/shadow",
                                                predicted.shadow_content,
                                                envelopes.shadow) + "\n";
  }
  for (const std::string& line : lines) out += line + "\n";
  return out;
}

// ---- Whole-package sanitization -----------------------------------------

enum class SanitizeOutcome { SanitizedClean, SanitizedRewritten, Rejected };

inline std::string sanitize_outcome_name(SanitizeOutcome o) {
  switch (o) {
    case SanitizeOutcome::SanitizedClean: return "SanitizedClean";
    case SanitizeOutcome::SanitizedRewritten: return "SanitizedRewritten";
    case SanitizeOutcome::Rejected: return "Rejected";
  }
  return "Rejected";
}

struct SanitizationReport {
  std::string name;
  std::string version;
  SanitizeOutcome outcome = SanitizeOutcome::Rejected;
  ClassSet classes_found;
  std::optional<std::string> reject_reason;
  std::vector<std::string> warnings;
};

struct SanitizationContext {
  const PredictedConfig* predicted = nullptr;
  const SigningKeypair* signer = nullptr;
  ConfigEnvelopes envelopes;
};

inline SanitizationContext make_sanitization_context(const PredictedConfig& predicted,
                                                     const SigningKeypair& signer) {
  SanitizationContext ctx;
  ctx.predicted = &predicted;
  ctx.signer = &signer;
  ctx.envelopes = make_config_envelopes(predicted, signer);
  return ctx;
}

struct SanitizedPackage {
  Bytes bytes;
  ApkPackage package;
  SanitizationReport report;
};

inline SanitizedPackage sanitize_package(const ApkPackage& pkg,
                                         const SanitizationContext& ctx) {
  SanitizedPackage out;
  out.report.name = pkg.pkginfo.pkgname;
  out.report.version = pkg.pkginfo.pkgver;

  for (const auto& [kind, text] : pkg.scripts) {
    ClassSet classes = classify_script(text);
    out.report.classes_found.insert(classes.begin(), classes.end());
    IdentityActions actions = sanitize_detail::extract_script_identities(text);
    out.report.warnings.insert(out.report.warnings.end(), actions.warnings.begin(),
                               actions.warnings.end());
  }
  if (pkg.scripts.empty()) {
    out.report.classes_found.insert(ScriptClass::EmptyScript);
  }

  std::vector<std::string> rejection_classes;
  for (ScriptClass c : out.report.classes_found) {
    if (is_rejection_class(c)) rejection_classes.push_back(script_class_name(c));
  }
  if (!rejection_classes.empty()) {
    out.report.outcome = SanitizeOutcome::Rejected;
    std::string reason;
    for (std::size_t i = 0; i < rejection_classes.size(); ++i) {
      if (i) reason += ", ";
      reason += rejection_classes[i];
    }
    out.report.reject_reason = reason;
    out.package = pkg;
    out.bytes = pkg.serialize();
    return out;
  }

  bool rewritten = false;
  std::vector<TarEntry> control_entries;
  for (ScriptKind kind : kAllScriptKinds) {
    auto it = pkg.scripts.find(kind);
    if (it == pkg.scripts.end()) continue;
    ClassSet classes = classify_script(it->second);
    std::string new_text =
        rewrite_script(it->second, *ctx.predicted, classes, ctx.envelopes);
    if (new_text != it->second) rewritten = true;

    TarEntry entry;
    entry.path = script_file_name(kind);
    entry.mode = 0755;
    entry.content = to_bytes(new_text);
    control_entries.push_back(sign_entry(entry, *ctx.signer));
  }
  control_entries.insert(control_entries.end(), pkg.extra_control_entries.begin(),
                         pkg.extra_control_entries.end());

  std::vector<TarEntry> data_entries;
  data_entries.reserve(pkg.data_entries.size());
  for (const TarEntry& entry : pkg.data_entries) {
    if (entry.type == TarEntryType::Regular) {
      data_entries.push_back(sign_entry(entry, *ctx.signer));
    } else {
      data_entries.push_back(entry);
    }
  }

  out.bytes = build_apk_from_entries(pkg.pkginfo, control_entries, data_entries,
                                     *ctx.signer);
  out.package = parse_apk(out.bytes);
  out.report.outcome = rewritten ? SanitizeOutcome::SanitizedRewritten
                                 : SanitizeOutcome::SanitizedClean;
  return out;
}

}  // namespace tsr
