#include <algorithm>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <catch2/catch_amalgamated.hpp>

#include "tsr/install_verify.hpp"
#include "tsr/package.hpp"
#include "tsr/sanitizer.hpp"
#include "tsr/script.hpp"
#include "tsr/simulator.hpp"

using namespace tsr;

namespace {

const SigningKeypair& test_key() {
  static SigningKeypair key = SigningKeypair::generate(SignAlgorithm::Ed25519);
  return key;
}

ClassSet classes_of(const std::string& text) { return classify_script(text); }

ApkPackage make_package(const std::string& name,
                        const std::map<ScriptKind, std::string>& scripts,
                        const std::vector<std::pair<std::string, std::string>>& files,
                        const SigningKeypair& signer) {
  PkgInfo info;
  info.pkgname = name;
  info.pkgver = "1.0-r0";
  info.arch = "x86_64";
  info.size = 1024;
  std::vector<TarEntry> data;
  for (const auto& [path, content] : files) {
    TarEntry e;
    e.path = path;
    e.content = to_bytes(content);
    data.push_back(e);
  }
  return parse_apk(build_apk(info, scripts, data, signer));
}

}  // namespace

TEST_CASE("shell parser splits commands and tracks spans") {
  SECTION("single command") {
    ParsedScript p = parse_script("adduser -S postgres\n");
    REQUIRE(p.ok);
    REQUIRE(p.commands.size() == 1);
    CHECK(p.commands[0].argv ==
          std::vector<std::string>{"adduser", "-S", "postgres"});
    CHECK(p.commands[0].line == 0);
    CHECK(p.lines[0].substr(p.commands[0].begin,
                            p.commands[0].end - p.commands[0].begin) ==
          "adduser -S postgres");
  }
  SECTION("operators separate commands") {
    ParsedScript p = parse_script("mkdir -p /var/lib/x && addgroup nginx; rm -f /y\n");
    REQUIRE(p.ok);
    REQUIRE(p.commands.size() == 3);
    CHECK(p.commands[0].argv[0] == "mkdir");
    CHECK(p.commands[1].argv[0] == "addgroup");
    CHECK(p.commands[2].argv[0] == "rm");
    const std::string& line = p.lines[0];
    CHECK(line.substr(p.commands[1].begin, p.commands[1].end - p.commands[1].begin) ==
          "addgroup nginx");
  }
  SECTION("quotes and escapes") {
    ParsedScript p = parse_script("echo 'a b' \"c d\" e\\ f\n");
    REQUIRE(p.ok);
    REQUIRE(p.commands.size() == 1);
    CHECK(p.commands[0].argv ==
          std::vector<std::string>{"echo", "a b", "c d", "e f"});
    CHECK_FALSE(p.commands[0].tainted);
  }
  SECTION("dollar expansion taints") {
    ParsedScript p = parse_script("echo $HOME\n");
    REQUIRE(p.ok);
    REQUIRE(p.commands.size() == 1);
    CHECK(p.commands[0].tainted);

    ParsedScript q = parse_script("echo \"$HOME\"\n");
    REQUIRE(q.ok);
    CHECK(q.commands[0].tainted);

    ParsedScript r = parse_script("echo '$HOME'\n");
    REQUIRE(r.ok);
    CHECK_FALSE(r.commands[0].tainted);
  }
  SECTION("redirects bind to targets") {
    ParsedScript p = parse_script("echo hi > /etc/motd 2>/dev/null\n");
    REQUIRE(p.ok);
    REQUIRE(p.commands.size() == 1);
    REQUIRE(p.commands[0].redirects.size() == 2);
    CHECK(p.commands[0].redirects[0].op == ">");
    CHECK(p.commands[0].redirects[0].target == "/etc/motd");
    CHECK(p.commands[0].redirects[1].op == ">");
    CHECK(p.commands[0].redirects[1].target == "/dev/null");
    CHECK(p.commands[0].argv == std::vector<std::string>{"echo", "hi"});
  }
  SECTION("fd duplication is not a file write") {
    ParsedScript p = parse_script("grep -q x /etc/os-release 2>&1\n");
    REQUIRE(p.ok);
    REQUIRE(p.commands[0].redirects.size() == 1);
    CHECK(p.commands[0].redirects[0].op == ">&1");
  }
  SECTION("comments and blank lines are skipped") {
    ParsedScript p = parse_script("# header\n\n: # trailing\n");
    REQUIRE(p.ok);
    REQUIRE(p.commands.size() == 1);
    CHECK(p.commands[0].argv == std::vector<std::string>{":"});
  }
  SECTION("conditional keywords pass through") {
    ParsedScript p = parse_script("if [ -f /x ]; then rm /x; fi\n");
    REQUIRE(p.ok);
    REQUIRE(p.commands.size() == 2);
    CHECK(p.commands[0].argv[0] == "[");
    CHECK(p.commands[1].argv == std::vector<std::string>{"rm", "/x"});
  }
  SECTION("loops are not parseable") {
    CHECK_FALSE(parse_script("for f in *; do rm $f; done\n").ok);
    CHECK_FALSE(parse_script("while true; do :; done\n").ok);
    CHECK_FALSE(parse_script("case $1 in *) : ;; esac\n").ok);
  }
  SECTION("substitution syntax is not parseable") {
    CHECK_FALSE(parse_script("echo $(id)\n").ok);
    CHECK_FALSE(parse_script("echo `id`\n").ok);
    CHECK_FALSE(parse_script("(cd /tmp && rm x)\n").ok);
  }
  SECTION("unterminated quote is not parseable") {
    CHECK_FALSE(parse_script("echo 'oops\n").ok);
  }
}

TEST_CASE("command classification table") {
  const std::vector<std::pair<std::string, ScriptClass>> table = {
      {"mkdir -p /var/lib/pgsql", ScriptClass::FilesystemChange},
      {"rmdir /tmp/x", ScriptClass::FilesystemChange},
      {"rm -rf /var/cache/apk", ScriptClass::FilesystemChange},
      {"mv /a /b", ScriptClass::FilesystemChange},
      {"cp -a /src /dst", ScriptClass::FilesystemChange},
      {"ln -sf /usr/bin/x /usr/local/bin/x", ScriptClass::FilesystemChange},
      {"chmod 755 /usr/bin/tool", ScriptClass::FilesystemChange},
      {"chown root:root /etc/thing", ScriptClass::FilesystemChange},
      {"install -m 0644 /src /dst", ScriptClass::FilesystemChange},
      {":", ScriptClass::EmptyScript},
      {"true", ScriptClass::EmptyScript},
      {"echo done", ScriptClass::EmptyScript},
      {"exit 0", ScriptClass::EmptyScript},
      {"test -d /var", ScriptClass::EmptyScript},
      {"[ -f /etc/passwd ]", ScriptClass::EmptyScript},
      {"grep -q wheel /etc/group", ScriptClass::TextProcessing},
      {"awk -F: /x/", ScriptClass::TextProcessing},
      {"cut -d: -f1 /etc/passwd", ScriptClass::TextProcessing},
      {"tr a-z A-Z", ScriptClass::TextProcessing},
      {"sed s/a/b/ /etc/motd", ScriptClass::TextProcessing},
      {"sed -i s/a/b/ /etc/inittab", ScriptClass::ConfigurationChange},
      {"update-ca-certificates", ScriptClass::ConfigurationChange},
      {"touch /var/log/app.log", ScriptClass::EmptyFileCreation},
      {"adduser -S -D postgres", ScriptClass::UserGroupCreation},
      {"addgroup -S nginx", ScriptClass::UserGroupCreation},
      {"useradd -r redis", ScriptClass::UserGroupCreation},
      {"groupadd -r docker", ScriptClass::UserGroupCreation},
      {"add-shell /bin/zsh", ScriptClass::ShellActivation},
      {"frobnicate --now", ScriptClass::Unknown},
      {"exit 1", ScriptClass::Unknown},
      {"/usr/sbin/adduser -S ntp", ScriptClass::UserGroupCreation},
  };
  for (const auto& [line, want] : table) {
    CAPTURE(line);
    ParsedScript p = parse_script(line + "\n");
    REQUIRE(p.ok);
    REQUIRE(p.commands.size() == 1);
    CHECK(classify_command(p.commands[0]) == want);
  }
}

TEST_CASE("write redirections override the command class") {
  auto one = [](const std::string& line) {
    ParsedScript p = parse_script(line + "\n");
    REQUIRE(p.ok);
    REQUIRE(p.commands.size() == 1);
    return classify_command(p.commands[0]);
  };
  CHECK(one("echo net.ipv4.ip_forward=1 > /etc/sysctl.d/fwd.conf") ==
        ScriptClass::ConfigurationChange);
  CHECK(one("grep -v x /etc/shells > /etc/shells.new") ==
        ScriptClass::ConfigurationChange);
  CHECK(one("echo done >> /var/log/install.log") == ScriptClass::ConfigurationChange);
  CHECK(one("echo quiet > /dev/null") == ScriptClass::EmptyScript);
  CHECK(one("echo x > relative.txt") == ScriptClass::Unknown);
  CHECK(one("grep -q x /etc/group 2>&1") == ScriptClass::TextProcessing);
}

TEST_CASE("script classification aggregates per command") {
  CHECK(classes_of("adduser -S -D postgres\n") ==
        ClassSet{ScriptClass::UserGroupCreation});
  CHECK(classes_of("mkdir -p /var/lib/x && addgroup nginx && frobnicate\n") ==
        ClassSet{ScriptClass::FilesystemChange, ScriptClass::UserGroupCreation,
                 ScriptClass::Unknown});
  CHECK(classes_of("") == ClassSet{ScriptClass::EmptyScript});
  CHECK(classes_of("# nothing but comments\n") == ClassSet{ScriptClass::EmptyScript});
  CHECK(classes_of("for i in 1 2; do :; done\n") == ClassSet{ScriptClass::Unknown});
  CHECK(classes_of("echo $PATH\n") == ClassSet{ScriptClass::Unknown});
}

TEST_CASE("rejection requires a disallowed class") {
  auto rejected = [](const ClassSet& classes) {
    return std::any_of(classes.begin(), classes.end(), is_rejection_class);
  };
  CHECK_FALSE(rejected(classes_of("mkdir /x && adduser y && touch /z\n")));
  CHECK(rejected(classes_of("add-shell /bin/fish\n")));
  CHECK(rejected(classes_of("sed -i s/a/b/ /etc/conf\n")));
  CHECK(rejected(classes_of("mkdir /x && unknowncmd\n")));
  CHECK_FALSE(rejected(classes_of("grep x /etc/passwd | cut -d: -f1\n")));
}

TEST_CASE("identity extraction understands the creation commands") {
  auto extract = [](const std::string& line) {
    return sanitize_detail::extract_script_identities(line + "\n");
  };
  SECTION("busybox adduser") {
    IdentityActions a =
        extract("adduser -S -H -h /var/lib/postgresql -s /bin/false -G postgres "
                "-g PostgreSQL postgres");
    REQUIRE(a.users.size() == 1);
    const UserSpec& u = a.users[0];
    CHECK(u.name == "postgres");
    CHECK(u.system_account);
    CHECK(u.home == "/var/lib/postgresql");
    CHECK(u.shell == "/bin/false");
    CHECK(u.primary_group == "postgres");
    CHECK(u.gecos == "PostgreSQL");
    CHECK_FALSE(u.explicit_uid.has_value());
    CHECK(a.warnings.empty());
  }
  SECTION("defaults are filled") {
    IdentityActions a = extract("adduser -S ntp");
    REQUIRE(a.users.size() == 1);
    CHECK(a.users[0].primary_group == "ntp");
    CHECK(a.users[0].home == "/home/ntp");
    CHECK(a.users[0].shell == "/sbin/nologin");

    IdentityActions b = extract("adduser guest");
    REQUIRE(b.users.size() == 1);
    CHECK(b.users[0].shell == "/bin/sh");
  }
  SECTION("explicit uid") {
    IdentityActions a = extract("adduser -S -u 70 postgres");
    REQUIRE(a.users.size() == 1);
    REQUIRE(a.users[0].explicit_uid.has_value());
    CHECK(*a.users[0].explicit_uid == 70);
  }
  SECTION("membership form creates no user") {
    IdentityActions a = extract("adduser postgres wheel");
    CHECK(a.users.empty());
    REQUIRE(a.memberships.size() == 1);
    CHECK(a.memberships[0] == std::make_pair(std::string("postgres"),
                                             std::string("wheel")));
    IdentityActions b = extract("addgroup nginx www-data");
    CHECK(b.groups.empty());
    REQUIRE(b.memberships.size() == 1);
  }
  SECTION("shadow-utils forms") {
    IdentityActions a = extract("useradd -r -u 999 -g redis -s /sbin/nologin redis");
    REQUIRE(a.users.size() == 1);
    CHECK(a.users[0].system_account);
    CHECK(*a.users[0].explicit_uid == 999);
    CHECK(a.users[0].primary_group == "redis");

    IdentityActions b = extract("groupadd -r -g 999 redis");
    REQUIRE(b.groups.size() == 1);
    CHECK(*b.groups[0].explicit_gid == 999);
  }
  SECTION("risky requests are flagged") {
    IdentityActions a = extract("adduser -S -D postgres");
    REQUIRE(a.warnings.size() == 1);
    CHECK(a.warnings[0].find("empty password") != std::string::npos);

    IdentityActions b = extract("adduser -S -s /bin/sh backdoor");
    REQUIRE(b.warnings.size() == 1);
    CHECK(b.warnings[0].find("login shell") != std::string::npos);

    IdentityActions c = extract("adduser -S -s /sbin/nologin clean");
    CHECK(c.warnings.empty());
  }
}

TEST_CASE("identity collection is order independent") {
  const SigningKeypair& key = test_key();
  std::vector<ApkPackage> pkgs;
  pkgs.push_back(make_package(
      "postgresql", {{ScriptKind::PostInstall, "addgroup -S postgres\nadduser -S -G postgres postgres\n"}},
      {{"usr/bin/postgres", "pg"}}, key));
  pkgs.push_back(make_package(
      "nginx", {{ScriptKind::PreInstall, "adduser -S -H nginx\n"}},
      {{"usr/sbin/nginx", "ng"}}, key));
  pkgs.push_back(make_package(
      "redis", {{ScriptKind::PostInstall, "adduser -S -u 999 redis\nadduser redis postgres\n"}},
      {{"usr/bin/redis", "rd"}}, key));
  pkgs.push_back(make_package("plain", {}, {{"usr/bin/plain", "pl"}}, key));

  std::vector<const ApkPackage*> order{&pkgs[0], &pkgs[1], &pkgs[2], &pkgs[3]};
  auto [users0, groups0] = collect_identities(order, {}, {});
  PredictedConfig base = predict_config(users0, groups0);

  std::mt19937 rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    std::shuffle(order.begin(), order.end(), rng);
    auto [users, groups] = collect_identities(order, {}, {});
    PredictedConfig cfg = predict_config(users, groups);
    REQUIRE(cfg == base);
  }

  // Names come out sorted, so nginx precedes postgres and redis.
  CHECK(base.uid_assignment.at("nginx") == 100);
  CHECK(base.uid_assignment.at("postgres") == 101);
  CHECK(base.uid_assignment.at("redis") == 999);
  CHECK(base.group_content.find("postgres:x:") != std::string::npos);
  // redis joined postgres as a supplementary member
  CHECK(base.group_content.find(":redis") != std::string::npos);
}

TEST_CASE("rejected packages contribute no identities") {
  const SigningKeypair& key = test_key();
  ApkPackage good = make_package(
      "good", {{ScriptKind::PostInstall, "adduser -S alpha\n"}}, {{"f", "x"}}, key);
  ApkPackage bad = make_package(
      "bad", {{ScriptKind::PostInstall, "adduser -S beta\nadd-shell /bin/evil\n"}},
      {{"g", "y"}}, key);
  auto [users, groups] = collect_identities({&good, &bad}, {}, {});
  REQUIRE(users.size() == 1);
  CHECK(users[0].name == "alpha");
}

TEST_CASE("policy identities precede corpus identities") {
  UserSpec op;
  op.name = "operator_";
  GroupSpec admins;
  admins.name = "admins";
  const SigningKeypair& key = test_key();
  ApkPackage pkg = make_package(
      "app", {{ScriptKind::PostInstall, "adduser -S appuser\n"}}, {{"f", "x"}}, key);
  auto [users, groups] = collect_identities({&pkg}, {op}, {admins});
  REQUIRE(users.size() == 2);
  CHECK(users[0].name == "operator_");  // policy entry allocated first
  CHECK(users[1].name == "appuser");
  PredictedConfig cfg = predict_config(users, groups);
  CHECK(cfg.uid_assignment.at("operator_") == 100);
  CHECK(cfg.uid_assignment.at("appuser") == 101);
  CHECK(cfg.gid_assignment.at("admins") == 100);
}

TEST_CASE("id allocation honors explicit values and fills gaps") {
  SECTION("explicit id is skipped by the allocator") {
    std::vector<GroupSpec> groups(3);
    groups[0].name = "a";
    groups[1].name = "b";
    groups[1].explicit_gid = 100;
    groups[2].name = "c";
    PredictedConfig cfg = predict_config({}, groups);
    CHECK(cfg.gid_assignment.at("a") == 101);
    CHECK(cfg.gid_assignment.at("b") == 100);
    CHECK(cfg.gid_assignment.at("c") == 102);
  }
  SECTION("allocation property oracle") {
    std::mt19937 rng(11);
    for (int trial = 0; trial < 50; ++trial) {
      std::vector<GroupSpec> groups;
      std::set<std::uint32_t> explicit_ids;
      int n = 1 + static_cast<int>(rng() % 12);
      for (int i = 0; i < n; ++i) {
        GroupSpec g;
        g.name = "g" + std::to_string(i);
        if (rng() % 3 == 0) {
          std::uint32_t id = 90 + rng() % 30;
          if (explicit_ids.insert(id).second) g.explicit_gid = id;
        }
        groups.push_back(g);
      }
      PredictedConfig cfg = predict_config({}, groups);
      std::set<std::uint32_t> seen;
      std::uint32_t prev_auto = 0;
      for (const GroupSpec& g : groups) {
        std::uint32_t id = cfg.gid_assignment.at(g.name);
        REQUIRE(seen.insert(id).second);  // injective
        if (g.explicit_gid) {
          REQUIRE(id == *g.explicit_gid);
          continue;
        }
        REQUIRE(id >= 100);
        REQUIRE_FALSE(explicit_ids.count(id));
        REQUIRE(id > prev_auto);  // ascending in declaration order
        // minimality: everything below was unavailable
        for (std::uint32_t k = std::max<std::uint32_t>(100, prev_auto + 1); k < id;
             ++k) {
          REQUIRE((explicit_ids.count(k) || seen.count(k)));
        }
        prev_auto = id;
      }
    }
  }
  SECTION("exhaustion above the id ceiling") {
    // Occupy every allocatable gid (100..65533), then ask for one more.
    std::vector<GroupSpec> groups;
    for (std::uint32_t id = 100; id <= 65533; ++id) {
      GroupSpec g;
      g.name = "g" + std::to_string(id);
      g.explicit_gid = id;
      groups.push_back(std::move(g));
    }
    GroupSpec extra;
    extra.name = "overflow";
    groups.push_back(extra);
    CHECK_THROWS_MATCHES(predict_config({}, groups), TsrError,
                         Catch::Matchers::Predicate<TsrError>([](const TsrError& e) {
                           return e.code() == ErrorCode::UidExhaustion;
                         }));
  }
  SECTION("conflicting explicit ids") {
    std::vector<GroupSpec> groups(2);
    groups[0].name = "a";
    groups[0].explicit_gid = 200;
    groups[1].name = "b";
    groups[1].explicit_gid = 200;
    CHECK_THROWS_MATCHES(predict_config({}, groups), TsrError,
                         Catch::Matchers::Predicate<TsrError>([](const TsrError& e) {
                           return e.code() == ErrorCode::ConflictingIdentity;
                         }));
  }
  SECTION("conflicting user attributes") {
    const SigningKeypair& key = test_key();
    ApkPackage p1 = make_package(
        "p1", {{ScriptKind::PostInstall, "adduser -S -u 50 svc\n"}}, {{"a", "1"}}, key);
    ApkPackage p2 = make_package(
        "p2", {{ScriptKind::PostInstall, "adduser -S -u 60 svc\n"}}, {{"b", "2"}}, key);
    CHECK_THROWS_MATCHES(collect_identities({&p1, &p2}, {}, {}), TsrError,
                         Catch::Matchers::Predicate<TsrError>([](const TsrError& e) {
                           return e.code() == ErrorCode::ConflictingIdentity;
                         }));
  }
}

TEST_CASE("predicted config renders canonical passwd group shadow") {
  std::vector<UserSpec> users(2);
  users[0].name = "nginx";
  users[0].system_account = true;
  users[0].home = "/var/lib/nginx";
  users[1].name = "postgres";
  users[1].system_account = true;
  users[1].gecos = "PostgreSQL";
  std::vector<GroupSpec> groups(2);
  groups[0].name = "nginx";
  groups[1].name = "postgres";
  groups[1].members = {"www", "backup", "www"};

  PredictedConfig cfg = predict_config(
      {normalize_user_spec(users[0]), normalize_user_spec(users[1])}, groups);
  CHECK(cfg.passwd_content ==
        "nginx:x:100:100::/var/lib/nginx:/sbin/nologin\n"
        "postgres:x:101:101:PostgreSQL:/home/postgres:/sbin/nologin\n");
  CHECK(cfg.group_content ==
        "nginx:x:100:\n"
        "postgres:x:101:backup,www\n");
  CHECK(cfg.shadow_content ==
        "nginx:!:0:0:99999:7:::\n"
        "postgres:!:0:0:99999:7:::\n");
}

TEST_CASE("user with unknown primary group is rejected") {
  UserSpec u;
  u.name = "svc";
  u.primary_group = "ghost";
  CHECK_THROWS_MATCHES(predict_config({normalize_user_spec(u)}, {}), TsrError,
                       Catch::Matchers::Predicate<TsrError>([](const TsrError& e) {
                         return e.code() == ErrorCode::ConflictingIdentity;
                       }));
}

TEST_CASE("script rewriting") {
  const SigningKeypair& key = test_key();
  std::vector<UserSpec> users(1);
  users[0].name = "svc";
  users[0].system_account = true;
  auto [all_users, all_groups] = collect_identities({}, users, {});
  PredictedConfig cfg = predict_config(all_users, all_groups);
  ConfigEnvelopes env = make_config_envelopes(cfg, key);

  SECTION("user creation becomes the config preamble") {
    std::string text = "adduser -S svc\n";
    std::string out = rewrite_script(text, cfg, classes_of(text), env);
    std::istringstream in(out);
    std::string line;
    std::getline(in, line);
    CHECK(line == "# TSR-SANITIZED v1");
    std::getline(in, line);
    CHECK(line.rfind("tsr-install-config /etc/passwd ", 0) == 0);
    std::getline(in, line);
    CHECK(line.rfind("tsr-install-config /etc/group ", 0) == 0);
    std::getline(in, line);
    CHECK(line.rfind("tsr-install-config /etc/shadow ", 0) == 0);
    std::getline(in, line);
    CHECK(line == ":");
    CHECK_FALSE(std::getline(in, line));
  }
  SECTION("surrounding commands survive byte for byte") {
    std::string text = "mkdir -p /var/lib/svc && adduser -S svc && chown svc /var/lib/svc\n";
    std::string out = rewrite_script(text, cfg, classes_of(text), env);
    CHECK(out.find("mkdir -p /var/lib/svc && : && chown svc /var/lib/svc\n") !=
          std::string::npos);
  }
  SECTION("touch becomes a signed empty install without preamble") {
    std::string text = "touch /var/log/svc.log\n";
    std::string out = rewrite_script(text, cfg, classes_of(text), env);
    CHECK(out.find("tsr-install-config /etc/passwd") == std::string::npos);
    std::string expected = "tsr-install-config /var/log/svc.log - " +
                           base64_encode(env.empty_file.serialize());
    CHECK(out.find(expected) != std::string::npos);
    CHECK(out.rfind("# TSR-SANITIZED v1\n", 0) == 0);
  }
  SECTION("multiple touch paths chain") {
    std::string text = "touch /a /b\n";
    std::string out = rewrite_script(text, cfg, classes_of(text), env);
    std::string e = base64_encode(env.empty_file.serialize());
    CHECK(out.find("tsr-install-config /a - " + e + " && tsr-install-config /b - " + e) !=
          std::string::npos);
  }
  SECTION("scripts without rewritable commands pass through unchanged") {
    std::string text = "mkdir -p /etc/svc\nrm -f /tmp/stale\n";
    CHECK(rewrite_script(text, cfg, classes_of(text), env) == text);
  }
  SECTION("rewriting a rejected class refuses") {
    std::string text = "add-shell /bin/zsh\n";
    CHECK_THROWS_MATCHES(rewrite_script(text, cfg, classes_of(text), env), TsrError,
                         Catch::Matchers::Predicate<TsrError>([](const TsrError& e) {
                           return e.code() == ErrorCode::RewriteUnsupported;
                         }));
  }
  SECTION("rewritten output is itself rejected on reclassification") {
    std::string text = "adduser -S svc\n";
    std::string out = rewrite_script(text, cfg, classes_of(text), env);
    ClassSet again = classes_of(out);
    CHECK(again.count(ScriptClass::ConfigurationChange) == 1);
    CHECK(std::any_of(again.begin(), again.end(), is_rejection_class));
  }
}

TEST_CASE("simulator applies scripts to the filesystem model") {
  SECTION("config install writes content and envelope") {
    const SigningKeypair& key = test_key();
    SignatureEnvelope e = sign_content(key, to_bytes(std::string("hello\n")));
    SimFs fs;
    std::string script = "tsr-install-config /etc/motd " +
                         base64_encode(to_bytes(std::string("hello\n"))) + " " +
                         base64_encode(e.serialize()) + "\n";
    auto errors = run_script(fs, script);
    CHECK(errors.empty());
    REQUIRE(fs.files.count("/etc/motd"));
    CHECK(to_string(fs.files["/etc/motd"].content) == "hello\n");
    REQUIRE(fs.files["/etc/motd"].envelope.has_value());
    CHECK(verify_envelope(key.public_key(), *fs.files["/etc/motd"].envelope,
                          fs.files["/etc/motd"].content));
  }
  SECTION("filesystem commands") {
    SimFs fs;
    fs.files["/a"] = {to_bytes(std::string("one")), std::nullopt};
    auto errors = run_script(fs,
                             "mkdir -p /var/lib/app\n"
                             "cp /a /var/lib/app\n"
                             "mv /a /b\n"
                             "touch /c\n"
                             "rm /c\n");
    CHECK(errors.empty());
    CHECK(fs.dirs.count("/var/lib/app"));
    CHECK(fs.dirs.count("/var/lib"));
    CHECK(fs.files.count("/var/lib/app/a"));
    CHECK(fs.files.count("/b"));
    CHECK_FALSE(fs.files.count("/a"));
    CHECK_FALSE(fs.files.count("/c"));
  }
  SECTION("copies preserve the signature attribute") {
    const SigningKeypair& key = test_key();
    SimFs fs;
    Bytes content = to_bytes(std::string("payload"));
    fs.files["/src"] = {content, sign_content(key, content)};
    run_script(fs, "cp /src /dst\n");
    REQUIRE(fs.files.count("/dst"));
    REQUIRE(fs.files["/dst"].envelope.has_value());
    CHECK(verify_envelope(key.public_key(), *fs.files["/dst"].envelope,
                          fs.files["/dst"].content));
  }
  SECTION("unsupported commands are reported") {
    SimFs fs;
    auto errors = run_script(fs, "frobnicate --all\n");
    REQUIRE(errors.size() == 1);
    CHECK(errors[0].find("frobnicate") != std::string::npos);
  }
  SECTION("legacy identity commands depend on installation order") {
    SimFs a, b;
    run_script(a, "adduser -S alpha\n");
    run_script(a, "adduser -S beta\n");
    run_script(b, "adduser -S beta\n");
    run_script(b, "adduser -S alpha\n");
    CHECK(sim_detail::file_text(a, "/etc/passwd") !=
          sim_detail::file_text(b, "/etc/passwd"));
  }
}

TEST_CASE("package sanitization end to end") {
  const SigningKeypair upstream = SigningKeypair::generate(SignAlgorithm::Ed25519);
  const SigningKeypair& repo_key = test_key();

  ApkPackage pkg = make_package(
      "svc",
      {{ScriptKind::PreInstall, "adduser -S -D svc\n"},
       {ScriptKind::PostInstall, "mkdir -p /var/lib/svc\ntouch /var/lib/svc/ready\n"}},
      {{"usr/bin/svc", "binary-payload"}, {"etc/svc/defaults", "key=value\n"}},
      upstream);

  auto [users, groups] = collect_identities({&pkg}, {}, {});
  PredictedConfig cfg = predict_config(users, groups);
  SanitizationContext ctx = make_sanitization_context(cfg, repo_key);

  SECTION("rewritten package carries signatures everywhere") {
    SanitizedPackage result = sanitize_package(pkg, ctx);
    CHECK(result.report.outcome == SanitizeOutcome::SanitizedRewritten);
    CHECK(result.report.classes_found ==
          ClassSet{ScriptClass::UserGroupCreation, ScriptClass::FilesystemChange,
                   ScriptClass::EmptyFileCreation});
    REQUIRE(result.report.warnings.size() == 1);
    CHECK(result.report.warnings[0].find("empty password") != std::string::npos);

    // Package signature now comes from the repository key.
    VerificationResult v =
        verify_package(result.package, {repo_key.public_key()});
    CHECK(v.signer_key_id == repo_key.key_id());

    // Every regular data entry carries a verifiable attribute signature.
    for (const TarEntry& entry : result.package.data_entries) {
      if (entry.type != TarEntryType::Regular) continue;
      CAPTURE(entry.path);
      CHECK(entry_signature_valid(entry, repo_key.public_key()));
    }
    // Scripts are themselves signed control entries.
    for (const TarEntry& entry : result.package.script_entries) {
      CAPTURE(entry.path);
      CHECK(entry_signature_valid(entry, repo_key.public_key()));
    }
    // The pre-install script got the marker and preamble.
    const std::string& pre = result.package.scripts.at(ScriptKind::PreInstall);
    CHECK(pre.rfind(kSanitizedMarker, 0) == 0);
    CHECK(pre.find("tsr-install-config /etc/passwd") != std::string::npos);
  }

  SECTION("clean package is re-signed without rewriting") {
    ApkPackage clean = make_package(
        "lib", {{ScriptKind::PostInstall, "mkdir -p /usr/lib/app\nexit 0\n"}},
        {{"usr/lib/libapp.so", "elf"}}, upstream);
    SanitizedPackage result = sanitize_package(clean, ctx);
    CHECK(result.report.outcome == SanitizeOutcome::SanitizedClean);
    CHECK(result.package.scripts.at(ScriptKind::PostInstall) ==
          clean.scripts.at(ScriptKind::PostInstall));
    CHECK_NOTHROW(verify_package(result.package, {repo_key.public_key()}));
  }

  SECTION("scriptless package is clean") {
    ApkPackage plain = make_package("data", {}, {{"share/doc/x", "text"}}, upstream);
    SanitizedPackage result = sanitize_package(plain, ctx);
    CHECK(result.report.outcome == SanitizeOutcome::SanitizedClean);
    CHECK(result.report.classes_found == ClassSet{ScriptClass::EmptyScript});
  }

  SECTION("disallowed class rejects the whole package") {
    ApkPackage bad = make_package(
        "shelly", {{ScriptKind::PostInstall, "add-shell /bin/fish\n"}},
        {{"bin/fish", "sh"}}, upstream);
    SanitizedPackage result = sanitize_package(bad, ctx);
    CHECK(result.report.outcome == SanitizeOutcome::Rejected);
    REQUIRE(result.report.reject_reason.has_value());
    CHECK(result.report.reject_reason->find("ShellActivation") != std::string::npos);
    CHECK(result.bytes == bad.serialize());
  }

  SECTION("sanitized output is rejected if fed back in") {
    SanitizedPackage once = sanitize_package(pkg, ctx);
    SanitizedPackage twice = sanitize_package(once.package, ctx);
    CHECK(twice.report.outcome == SanitizeOutcome::Rejected);
  }
}

TEST_CASE("sanitized installs converge regardless of order") {
  const SigningKeypair upstream = SigningKeypair::generate(SignAlgorithm::Ed25519);
  const SigningKeypair& repo_key = test_key();

  std::vector<ApkPackage> pkgs;
  pkgs.push_back(make_package(
      "alpha", {{ScriptKind::PostInstall, "adduser -S alpha\n"}},
      {{"usr/bin/alpha", "a"}}, upstream));
  pkgs.push_back(make_package(
      "beta", {{ScriptKind::PostInstall, "addgroup -S betagrp\nadduser -S -G betagrp beta\n"}},
      {{"usr/bin/beta", "b"}}, upstream));
  pkgs.push_back(make_package(
      "gamma", {{ScriptKind::PostInstall, "adduser -S gamma\ntouch /var/lib/gamma.state\n"}},
      {{"usr/bin/gamma", "g"}}, upstream));

  std::vector<const ApkPackage*> all{&pkgs[0], &pkgs[1], &pkgs[2]};
  auto [users, groups] = collect_identities(all, {}, {});
  PredictedConfig cfg = predict_config(users, groups);
  SanitizationContext ctx = make_sanitization_context(cfg, repo_key);

  std::vector<ApkPackage> sanitized;
  for (const ApkPackage* p : all) sanitized.push_back(sanitize_package(*p, ctx).package);

  auto install_subset = [&](const std::vector<int>& order) {
    SimFs fs;
    for (int i : order) {
      auto errors = install_package(fs, sanitized[static_cast<std::size_t>(i)]);
      REQUIRE(errors.empty());
    }
    return fs;
  };

  SimFs reference = install_subset({0, 1, 2});
  std::vector<int> order{0, 1, 2};
  std::sort(order.begin(), order.end());
  do {
    SimFs fs = install_subset(order);
    REQUIRE(sim_detail::file_text(fs, "/etc/passwd") ==
            sim_detail::file_text(reference, "/etc/passwd"));
    REQUIRE(sim_detail::file_text(fs, "/etc/group") ==
            sim_detail::file_text(reference, "/etc/group"));
    REQUIRE(sim_detail::file_text(fs, "/etc/shadow") ==
            sim_detail::file_text(reference, "/etc/shadow"));
  } while (std::next_permutation(order.begin(), order.end()));

  // Subsets also agree with the full corpus prediction on shared lines.
  SimFs partial = install_subset({1});
  std::string partial_passwd = sim_detail::file_text(partial, "/etc/passwd");
  CHECK(partial_passwd == cfg.passwd_content);
}

TEST_CASE("install verification") {
  const SigningKeypair upstream = SigningKeypair::generate(SignAlgorithm::Ed25519);
  const SigningKeypair& repo_key = test_key();

  ApkPackage pkg = make_package(
      "svc", {{ScriptKind::PostInstall, "adduser -S svc\ntouch /var/run/svc.pid\n"}},
      {{"usr/bin/svc", "payload"}}, upstream);
  auto [users, groups] = collect_identities({&pkg}, {}, {});
  PredictedConfig cfg = predict_config(users, groups);
  SanitizationContext ctx = make_sanitization_context(cfg, repo_key);
  ApkPackage sanitized = sanitize_package(pkg, ctx).package;

  SimFs fs;
  REQUIRE(install_package(fs, sanitized).empty());

  SECTION("trusted when every file verifies") {
    InstallVerdict v = verify_install(fs, repo_key.public_key(), &cfg);
    CHECK(v.trusted());
    CHECK(v.files_checked == fs.files.size());
    CHECK(v.files_checked >= 5);  // binary + pid file + 3 identity files
    CHECK(v.signature_failures.empty());
    CHECK(v.config_match);
  }
  SECTION("wrong key fails every file") {
    SigningKeypair other = SigningKeypair::generate(SignAlgorithm::Ed25519);
    InstallVerdict v = verify_install(fs, other.public_key(), &cfg);
    CHECK_FALSE(v.trusted());
    CHECK(v.signature_failures.size() == v.files_checked);
  }
  SECTION("tampered file is pinpointed") {
    fs.files["/usr/bin/svc"].content.push_back(0x90);
    InstallVerdict v = verify_install(fs, repo_key.public_key(), &cfg);
    CHECK_FALSE(v.trusted());
    REQUIRE(v.signature_failures.size() == 1);
    CHECK(v.signature_failures[0] == "/usr/bin/svc");
  }
  SECTION("unsigned file fails") {
    fs.files["/etc/rogue"] = {to_bytes(std::string("x")), std::nullopt};
    InstallVerdict v = verify_install(fs, repo_key.public_key(), &cfg);
    CHECK_FALSE(v.trusted());
    REQUIRE(v.signature_failures.size() == 1);
    CHECK(v.signature_failures[0] == "/etc/rogue");
  }
  SECTION("identity drift breaks the config match") {
    SimFile& passwd = fs.files["/etc/passwd"];
    std::string drifted = to_string(passwd.content) + "intruder:x:0:0:::/bin/sh\n";
    passwd.content = to_bytes(drifted);
    // Keep the envelope stale too: both checks must trip.
    InstallVerdict v = verify_install(fs, repo_key.public_key(), &cfg);
    CHECK_FALSE(v.config_match);
    CHECK_FALSE(v.trusted());
  }
}
