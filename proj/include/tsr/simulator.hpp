#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "tsr/bytes.hpp"
#include "tsr/error.hpp"
#include "tsr/package.hpp"
#include "tsr/pax_signature.hpp"
#include "tsr/sanitizer.hpp"
#include "tsr/script.hpp"

namespace tsr {

// In-memory model of the target filesystem. Files carry the signature
// envelope that would live in their security.ima attribute; copies and
// moves preserve it the way attribute-preserving tooling would.
struct SimFile {
  Bytes content;
  std::optional<SignatureEnvelope> envelope;

  bool operator==(const SimFile&) const = default;
};

struct SimFs {
  std::map<std::string, SimFile> files;
  std::set<std::string> dirs{"/"};

  bool operator==(const SimFs&) const = default;
};

namespace sim_detail {

inline std::string normalize_path(const std::string& raw) {
  std::vector<std::string> parts;
  std::string cur;
  auto flush = [&] {
    if (cur.empty() || cur == ".") {
      cur.clear();
      return;
    }
    if (cur == "..") {
      if (parts.empty()) fail(ErrorCode::IoError, "path escapes root: " + raw);
      parts.pop_back();
    } else {
      parts.push_back(cur);
    }
    cur.clear();
  };
  for (char c : raw) {
    if (c == '/') {
      flush();
    } else {
      cur += c;
    }
  }
  flush();
  std::string out;
  for (const std::string& p : parts) out += "/" + p;
  return out.empty() ? "/" : out;
}

inline std::string parent_dir(const std::string& path) {
  auto slash = path.rfind('/');
  if (slash == std::string::npos || slash == 0) return "/";
  return path.substr(0, slash);
}

inline std::string base_name(const std::string& path) {
  auto slash = path.rfind('/');
  return slash == std::string::npos ? path : path.substr(slash + 1);
}

inline void make_dirs(SimFs& fs, const std::string& path) {
  std::string p = normalize_path(path);
  while (p != "/") {
    fs.dirs.insert(p);
    p = parent_dir(p);
  }
}

}  // namespace sim_detail

inline void sim_write_file(SimFs& fs, const std::string& path, SimFile file) {
  std::string p = sim_detail::normalize_path(path);
  sim_detail::make_dirs(fs, sim_detail::parent_dir(p));
  fs.files[p] = std::move(file);
}

namespace sim_detail {

// Resolve a command argument to the path a file operation would act on.
// Relative arguments are interpreted against the filesystem root, which is
// where installation scripts run.
inline std::string arg_path(const std::string& arg) {
  if (arg.empty()) return "/";
  return normalize_path(arg.front() == '/' ? arg : "/" + arg);
}

inline std::vector<std::string> non_flag_args(const ShCommand& cmd) {
  std::vector<std::string> out;
  for (std::size_t i = 1; i < cmd.argv.size(); ++i) {
    if (!cmd.argv[i].empty() && cmd.argv[i][0] == '-') continue;
    out.push_back(cmd.argv[i]);
  }
  return out;
}

inline void append_line(SimFs& fs, const std::string& path, const std::string& line) {
  std::string p = normalize_path(path);
  make_dirs(fs, parent_dir(p));
  SimFile& f = fs.files[p];
  append(f.content, to_bytes(line + "\n"));
  f.envelope.reset();  // mutated in place: any prior signature no longer applies
}

// The historical in-place identity commands. Their result depends on the
// ids already present, which is exactly the order dependence sanitization
// removes; the model reproduces it faithfully for comparison tests.
inline std::uint32_t next_free_id(const std::string& content, std::size_t id_field) {
  std::set<std::uint32_t> taken;
  std::istringstream in(content);
  std::string line;
  while (std::getline(in, line)) {
    std::size_t field = 0, start = 0;
    for (std::size_t i = 0; i <= line.size(); ++i) {
      if (i == line.size() || line[i] == ':') {
        if (field == id_field) {
          taken.insert(static_cast<std::uint32_t>(
              std::strtoull(line.substr(start, i - start).c_str(), nullptr, 10)));
          break;
        }
        ++field;
        start = i + 1;
      }
    }
  }
  std::uint32_t id = 100;
  while (taken.count(id)) ++id;
  return id;
}

inline std::string file_text(const SimFs& fs, const std::string& path) {
  auto it = fs.files.find(normalize_path(path));
  return it == fs.files.end() ? std::string() : to_string(it->second.content);
}

inline void legacy_identity_command(SimFs& fs, const ShCommand& cmd) {
  IdentityActions actions;
  sanitize_detail::extract_identity_actions(cmd, actions);
  for (const GroupSpec& g : actions.groups) {
    std::uint32_t gid =
        g.explicit_gid ? *g.explicit_gid : next_free_id(file_text(fs, "/etc/group"), 2);
    append_line(fs, "/etc/group", g.name + ":x:" + std::to_string(gid) + ":");
  }
  for (const UserSpec& raw : actions.users) {
    UserSpec u = normalize_user_spec(raw);
    std::string group_content = file_text(fs, "/etc/group");
    std::uint32_t gid;
    bool group_exists = false;
    {
      std::istringstream in(group_content);
      std::string line;
      gid = 0;
      while (std::getline(in, line)) {
        if (line.rfind(u.primary_group + ":", 0) == 0) {
          std::size_t a = line.find(':', 0);
          std::size_t b = line.find(':', a + 1);
          std::size_t c = line.find(':', b + 1);
          gid = static_cast<std::uint32_t>(
              std::strtoull(line.substr(b + 1, c - b - 1).c_str(), nullptr, 10));
          group_exists = true;
          break;
        }
      }
    }
    if (!group_exists) {
      gid = next_free_id(group_content, 2);
      append_line(fs, "/etc/group", u.primary_group + ":x:" + std::to_string(gid) + ":");
    }
    std::uint32_t uid =
        u.explicit_uid ? *u.explicit_uid : next_free_id(file_text(fs, "/etc/passwd"), 2);
    append_line(fs, "/etc/passwd",
                u.name + ":x:" + std::to_string(uid) + ":" + std::to_string(gid) + ":" +
                    u.gecos + ":" + u.home + ":" + u.shell);
    append_line(fs, "/etc/shadow", u.name + ":" + u.password_field + ":0:0:99999:7:::");
  }
  for (const auto& [user, group] : actions.memberships) {
    std::string content = file_text(fs, "/etc/group");
    std::istringstream in(content);
    std::string line, rebuilt;
    bool found = false;
    while (std::getline(in, line)) {
      if (line.rfind(group + ":", 0) == 0) {
        found = true;
        if (line.back() != ':') line += ',';
        line += user;
      }
      rebuilt += line + "\n";
    }
    if (!found) {
      std::uint32_t gid = next_free_id(content, 2);
      rebuilt += group + ":x:" + std::to_string(gid) + ":" + user + "\n";
    }
    SimFile f;
    f.content = to_bytes(rebuilt);
    sim_write_file(fs, "/etc/group", std::move(f));
  }
}

inline void remove_tree(SimFs& fs, const std::string& path) {
  std::string p = normalize_path(path);
  fs.files.erase(p);
  fs.dirs.erase(p);
  std::string prefix = p + "/";
  for (auto it = fs.files.begin(); it != fs.files.end();) {
    it = it->first.rfind(prefix, 0) == 0 ? fs.files.erase(it) : std::next(it);
  }
  for (auto it = fs.dirs.begin(); it != fs.dirs.end();) {
    it = it->rfind(prefix, 0) == 0 ? fs.dirs.erase(it) : std::next(it);
  }
}

inline std::string copy_target(const SimFs& fs, const std::string& src,
                               const std::string& dst) {
  std::string d = arg_path(dst);
  if (fs.dirs.count(d)) return normalize_path(d + "/" + base_name(arg_path(src)));
  return d;
}

}  // namespace sim_detail

// Executes one sanitized-profile script against the model. Commands the
// sanitizer would have rejected are reported as errors rather than guessed
// at. Returns human-readable problems; empty means clean execution.
inline std::vector<std::string> run_script(SimFs& fs, const std::string& text) {
  std::vector<std::string> errors;
  ParsedScript parsed = parse_script(text);
  if (!parsed.ok) {
    errors.push_back("unparseable script: " + parsed.failure);
    return errors;
  }
  using sim_detail::arg_path;
  using sim_detail::non_flag_args;

  for (const ShCommand& cmd : parsed.commands) {
    // A redirect that writes a file is modeled for echo (used by tests);
    // other output redirects have no observable effect here.
    std::optional<std::string> write_target;
    bool append_mode = false;
    for (const ShRedirect& r : cmd.redirects) {
      if (r.op == ">" || r.op == ">>") {
        write_target = r.target;
        append_mode = r.op == ">>";
      }
    }
    if (cmd.argv.empty()) {
      if (write_target && *write_target != "/dev/null") {
        SimFile f;
        sim_write_file(fs, arg_path(*write_target), std::move(f));
      }
      continue;
    }
    const std::string name = sanitize_detail::command_basename(cmd.argv[0]);

    if (name == kInstallConfigCommand) {
      if (cmd.argv.size() != 4) {
        errors.push_back("tsr-install-config expects 3 arguments");
        continue;
      }
      SimFile f;
      if (cmd.argv[2] != "-") f.content = base64_decode(cmd.argv[2]);
      f.envelope = SignatureEnvelope::deserialize(base64_decode(cmd.argv[3]));
      sim_write_file(fs, arg_path(cmd.argv[1]), std::move(f));
    } else if (name == "touch") {
      for (const std::string& p : non_flag_args(cmd)) {
        std::string path = arg_path(p);
        if (!fs.files.count(path)) sim_write_file(fs, path, SimFile{});
      }
    } else if (name == "mkdir") {
      for (const std::string& p : non_flag_args(cmd)) {
        sim_detail::make_dirs(fs, arg_path(p));
      }
    } else if (name == "rmdir") {
      for (const std::string& p : non_flag_args(cmd)) fs.dirs.erase(arg_path(p));
    } else if (name == "rm") {
      bool recursive = false;
      for (std::size_t i = 1; i < cmd.argv.size(); ++i) {
        const std::string& arg = cmd.argv[i];
        if (!arg.empty() && arg[0] == '-' && arg.find('r') != std::string::npos) {
          recursive = true;
        } else if (!arg.empty() && arg[0] == '-' &&
                   arg.find('R') != std::string::npos) {
          recursive = true;
        }
      }
      for (const std::string& p : non_flag_args(cmd)) {
        if (recursive) {
          sim_detail::remove_tree(fs, arg_path(p));
        } else {
          fs.files.erase(arg_path(p));
        }
      }
    } else if (name == "mv") {
      auto args = non_flag_args(cmd);
      if (args.size() == 2) {
        std::string src = arg_path(args[0]);
        std::string dst = sim_detail::copy_target(fs, args[0], args[1]);
        auto it = fs.files.find(src);
        if (it != fs.files.end()) {
          SimFile moved = std::move(it->second);
          fs.files.erase(it);
          sim_write_file(fs, dst, std::move(moved));
        }
      }
    } else if (name == "cp" || name == "install") {
      std::vector<std::string> args;
      for (std::size_t i = 1; i < cmd.argv.size(); ++i) {
        const std::string& arg = cmd.argv[i];
        if (!arg.empty() && arg[0] == '-') {
          if (name == "install" &&
              (arg == "-m" || arg == "-o" || arg == "-g" || arg == "-t")) {
            ++i;  // flag value
          }
          continue;
        }
        args.push_back(arg);
      }
      if (args.size() >= 2) {
        std::string dst_arg = args.back();
        for (std::size_t i = 0; i + 1 < args.size(); ++i) {
          std::string src = arg_path(args[i]);
          auto it = fs.files.find(src);
          if (it == fs.files.end()) continue;
          SimFile copy = it->second;
          sim_write_file(fs, sim_detail::copy_target(fs, args[i], dst_arg),
                         std::move(copy));
        }
      }
    } else if (name == "ln") {
      auto args = non_flag_args(cmd);
      if (args.size() == 2) {
        std::string src = arg_path(args[0]);
        auto it = fs.files.find(src);
        if (it != fs.files.end()) {
          SimFile link = it->second;  // content-addressed view of a link
          sim_write_file(fs, sim_detail::copy_target(fs, args[0], args[1]),
                         std::move(link));
        }
      }
    } else if (name == "chmod" || name == "chown" || name == "chgrp") {
      // ownership/mode are outside the content model
    } else if (name == "echo") {
      if (write_target && *write_target != "/dev/null") {
        std::string joined;
        for (std::size_t i = 1; i < cmd.argv.size(); ++i) {
          if (i > 1) joined += ' ';
          joined += cmd.argv[i];
        }
        std::string path = arg_path(*write_target);
        if (append_mode) {
          sim_detail::make_dirs(fs, sim_detail::parent_dir(path));
          SimFile& f = fs.files[path];
          append(f.content, to_bytes(joined + "\n"));
          f.envelope.reset();
        } else {
          SimFile f;
          f.content = to_bytes(joined + "\n");
          sim_write_file(fs, path, std::move(f));
        }
      }
    } else if (name == ":" || name == "true" || name == "test" || name == "[" ||
               name == "exit" || name == "grep" || name == "awk" || name == "cut" ||
               name == "tr" || name == "sed") {
      // read-only or no-op within the model
    } else if (name == "adduser" || name == "addgroup" || name == "useradd" ||
               name == "groupadd") {
      sim_detail::legacy_identity_command(fs, cmd);
    } else if (name == "add-shell") {
      auto args = non_flag_args(cmd);
      for (const std::string& p : args) sim_detail::append_line(fs, "/etc/shells", p);
    } else {
      errors.push_back("unsupported command: " + cmd.argv[0]);
    }
  }
  return errors;
}

// Unpacks a package's data entries and runs its installation scripts, the
// way the package manager would. Regular files inherit the signature stored
// in their archive attribute record.
inline std::vector<std::string> install_package(SimFs& fs, const ApkPackage& pkg) {
  for (const TarEntry& entry : pkg.data_entries) {
    std::string path = sim_detail::normalize_path("/" + entry.path);
    switch (entry.type) {
      case TarEntryType::Directory:
        sim_detail::make_dirs(fs, path);
        break;
      case TarEntryType::Regular: {
        SimFile f;
        f.content = entry.content;
        f.envelope = entry_signature(entry);
        sim_write_file(fs, path, std::move(f));
        break;
      }
      case TarEntryType::Symlink: {
        std::string target = entry.link_target.empty()
                                 ? std::string()
                                 : (entry.link_target.front() == '/'
                                        ? entry.link_target
                                        : sim_detail::parent_dir(path) + "/" +
                                              entry.link_target);
        auto it = fs.files.find(sim_detail::normalize_path(target));
        if (it != fs.files.end()) {
          SimFile link = it->second;
          sim_write_file(fs, path, std::move(link));
        }
        break;
      }
      case TarEntryType::Hardlink: {
        auto it = fs.files.find(sim_detail::normalize_path("/" + entry.link_target));
        if (it != fs.files.end()) {
          SimFile link = it->second;
          sim_write_file(fs, path, std::move(link));
        }
        break;
      }
    }
  }
  std::vector<std::string> errors;
  for (ScriptKind kind : {ScriptKind::PreInstall, ScriptKind::PostInstall}) {
    auto it = pkg.scripts.find(kind);
    if (it == pkg.scripts.end()) continue;
    auto errs = run_script(fs, it->second);
    errors.insert(errors.end(), errs.begin(), errs.end());
  }
  return errors;
}

}  // namespace tsr
