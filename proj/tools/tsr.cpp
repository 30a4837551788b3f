// tsr — trusted repository proxy: service daemon plus admin and fixture tools.

#include <csignal>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>
#include <yaml-cpp/yaml.h>

#include "tsr/gateway.hpp"
#include "tsr/install_verify.hpp"
#include "tsr/pkgbuild.hpp"
#include "tsr/repository.hpp"
#include "tsr/simulator.hpp"

namespace {

using namespace tsr;

constexpr int kExitOk = 0;
constexpr int kExitError = 1;
constexpr int kExitUnknownRepository = 2;

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::IoError, "cannot open " + path.string());
  return std::string((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
}

void write_binary_file(const std::filesystem::path& path, ByteView data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::IoError, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(data.data()),
            static_cast<std::streamsize>(data.size()));
  if (!out) fail(ErrorCode::IoError, "short write to " + path.string());
}

// Setting sources, weakest to strongest: environment, config file, flag.
class LayeredSettings {
 public:
  void load_config_file(const std::string& path) {
    YAML::Node root = YAML::LoadFile(path);
    if (!root.IsMap()) fail(ErrorCode::IoError, "config file must be a mapping");
    for (const auto& kv : root) {
      file_[kv.first.as<std::string>()] = kv.second.as<std::string>();
    }
  }

  std::string resolve(const CLI::Option* flag, const std::string& flag_value,
                      const std::string& file_key, const std::string& env_key,
                      const std::string& fallback) const {
    if (flag != nullptr && flag->count() > 0) return flag_value;
    auto it = file_.find(file_key);
    if (it != file_.end()) return it->second;
    if (const char* env = std::getenv(env_key.c_str()); env && *env) return env;
    return fallback;
  }

 private:
  std::map<std::string, std::string> file_;
};

Gateway* g_gateway = nullptr;

void handle_signal(int) {
  if (g_gateway != nullptr) g_gateway->stop();
}

// Remote admin verbs speak to a running service.
struct AdminClient {
  std::string server;

  httplib::Result request(const std::string& method, const std::string& path,
                          const std::string& body = "") {
    httplib::Client client(server);
    client.set_connection_timeout(10, 0);
    client.set_read_timeout(600, 0);  // refresh over a big corpus takes a while
    client.enable_server_certificate_verification(false);
    if (method == "POST") {
      return client.Post(path, body, "application/yaml");
    }
    return client.Get(path);
  }
};

int print_admin_response(const httplib::Result& res, const std::string& server) {
  if (!res) {
    std::cerr << "tsr: cannot reach " << server << "\n";
    return kExitError;
  }
  if (res->status >= 200 && res->status < 300) {
    std::cout << res->body << "\n";
    return kExitOk;
  }
  std::cerr << res->body << "\n";
  try {
    nlohmann::json j = nlohmann::json::parse(res->body);
    if (j.value("error", "") == "UnknownRepository") return kExitUnknownRepository;
  } catch (const nlohmann::json::exception&) {
  }
  return kExitError;
}

nlohmann::json verdict_json(const std::vector<std::pair<std::string, std::string>>& pkgs,
                            const InstallVerdict& verdict) {
  nlohmann::json packages = nlohmann::json::array();
  for (const auto& [name, version] : pkgs) {
    packages.push_back({{"name", name}, {"version", version}});
  }
  return nlohmann::json{
      {"packages", std::move(packages)},
      {"files_checked", verdict.files_checked},
      {"signature_failures", verdict.signature_failures},
      {"config_match", verdict.config_match},
      {"verdict", verdict.trusted() ? "Trusted" : "IntegrityViolation"}};
}

int run(int argc, char** argv) {
  CLI::App app{"tsr — trusted repository proxy"};
  app.require_subcommand(1);

  std::string config_path;
  app.add_option("--config", config_path, "YAML config file");

  LayeredSettings settings;

  // serve ------------------------------------------------------------------
  auto* serve = app.add_subcommand("serve", "run the repository service");
  std::string listen, state_dir, cache_dir, sealing_key, tls_cert, tls_key, log_level;
  int refresh_ttl = -1;
  bool insecure_http = false;
  auto* listen_opt = serve->add_option("--listen", listen, "host:port");
  auto* state_opt = serve->add_option("--state-dir", state_dir, "sealed state dir");
  auto* cache_opt = serve->add_option("--cache-dir", cache_dir, "package cache dir");
  auto* seal_opt = serve->add_option("--sealing-key", sealing_key,
                                     "env:NAME, file:PATH, or a key file path");
  auto* ttl_opt = serve->add_option("--refresh-ttl", refresh_ttl,
                                    "index refresh TTL in seconds");
  auto* cert_opt = serve->add_option("--tls-cert", tls_cert, "TLS certificate file");
  auto* key_opt = serve->add_option("--tls-key", tls_key, "TLS private key file");
  serve->add_flag("--insecure-http", insecure_http,
                  "serve plain HTTP (tests and loopback only)");
  auto* level_opt = serve->add_option("--log-level", log_level,
                                      "debug, info, warn, or error");

  // admin verbs --------------------------------------------------------------
  std::string server_url;
  std::string policy_path;
  std::string repo_id;
  auto* policy = app.add_subcommand("policy", "policy administration");
  auto* deploy = policy->add_subcommand("deploy", "deploy a security policy");
  deploy->add_option("policy_file", policy_path, "policy YAML/JSON")->required();
  auto* deploy_server_opt = deploy->add_option("--server", server_url, "service URL");

  auto* refresh = app.add_subcommand("refresh", "refresh one repository now");
  refresh->add_option("repository_id", repo_id, "repository id")->required();
  auto* refresh_server_opt = refresh->add_option("--server", server_url, "service URL");

  auto* status = app.add_subcommand("status", "inspect one repository");
  status->add_option("repository_id", repo_id, "repository id")->required();
  auto* status_server_opt = status->add_option("--server", server_url, "service URL");

  // verification -------------------------------------------------------------
  std::vector<std::string> key_paths;
  std::vector<std::string> apk_paths;
  std::string predicted_path;
  auto* verify = app.add_subcommand("verify", "verify a package against keys");
  verify->add_option("package", apk_paths, "package file(s)")->required();
  verify->add_option("--key", key_paths, "trusted public key PEM file")->required();

  auto* verify_install = app.add_subcommand(
      "verify-install", "install package(s) in a staging root and attest files");
  verify_install->add_option("package", apk_paths, "package file(s)")->required();
  verify_install->add_option("--key", key_paths, "repository public key PEM")
      ->required()
      ->expected(1);
  verify_install->add_option("--predicted", predicted_path,
                             "predicted config JSON (passwd/group/shadow)");

  // fixture tooling ------------------------------------------------------------
  std::string spec_path, signing_key_path, output_path;
  auto* mkpkg = app.add_subcommand("mkpkg", "build a package from a YAML spec");
  mkpkg->add_option("spec", spec_path, "package spec YAML")->required();
  mkpkg->add_option("--signing-key", signing_key_path,
                    "private key PEM (overrides spec's signing_key)");
  mkpkg->add_option("-o,--output", output_path, "output .apk path");

  std::string algorithm = "ed25519", key_out, pub_out;
  auto* keygen = app.add_subcommand("keygen", "generate a signing keypair");
  keygen->add_option("--algorithm", algorithm, "ed25519 or rsa-2048");
  keygen->add_option("-o,--out", key_out, "private key PEM path")->required();
  keygen->add_option("--pub-out", pub_out, "public key PEM path");

  CLI11_PARSE(app, argc, argv);

  if (!config_path.empty()) settings.load_config_file(config_path);

  auto resolve_server = [&](const CLI::Option* opt) {
    return settings.resolve(opt, server_url, "server", "TSR_SERVER",
                            "http://127.0.0.1:8080");
  };

  if (serve->parsed()) {
    ServiceConfig cfg;
    cfg.listen_address =
        settings.resolve(listen_opt, listen, "listen", "TSR_LISTEN", "127.0.0.1:8080");
    cfg.state_dir =
        settings.resolve(state_opt, state_dir, "state_dir", "TSR_STATE_DIR", "state");
    cfg.cache_dir =
        settings.resolve(cache_opt, cache_dir, "cache_dir", "TSR_CACHE_DIR", "cache");
    cfg.sealing_key_source = settings.resolve(seal_opt, sealing_key, "sealing_key",
                                              "TSR_SEALING_KEY", "");
    cfg.refresh_ttl_seconds = std::stoi(
        settings.resolve(ttl_opt, std::to_string(refresh_ttl), "refresh_ttl",
                         "TSR_REFRESH_TTL", "300"));
    cfg.tls_cert = settings.resolve(cert_opt, tls_cert, "tls_cert", "TSR_TLS_CERT", "");
    cfg.tls_key = settings.resolve(key_opt, tls_key, "tls_key", "TSR_TLS_KEY", "");
    cfg.insecure_http =
        insecure_http ||
        settings.resolve(nullptr, "", "insecure_http", "TSR_INSECURE_HTTP", "") == "true";
    cfg.log_level =
        settings.resolve(level_opt, log_level, "log_level", "TSR_LOG_LEVEL", "info");

    Gateway gateway(cfg);
    g_gateway = &gateway;
    std::signal(SIGINT, handle_signal);
    std::signal(SIGTERM, handle_signal);
    gateway.serve();
    g_gateway = nullptr;
    return kExitOk;
  }

  if (deploy->parsed()) {
    AdminClient client{resolve_server(deploy_server_opt)};
    auto res = client.request("POST", "/v1/policies", read_text_file(policy_path));
    return print_admin_response(res, client.server);
  }
  if (refresh->parsed()) {
    AdminClient client{resolve_server(refresh_server_opt)};
    auto res = client.request("POST", "/v1/repos/" + repo_id + "/refresh");
    return print_admin_response(res, client.server);
  }
  if (status->parsed()) {
    AdminClient client{resolve_server(status_server_opt)};
    auto res = client.request("GET", "/v1/repos/" + repo_id);
    return print_admin_response(res, client.server);
  }

  if (verify->parsed()) {
    std::vector<PublicKey> keys;
    for (const std::string& p : key_paths) {
      keys.push_back(PublicKey::from_pem(read_text_file(p)));
    }
    bool all_ok = true;
    nlohmann::json out = nlohmann::json::array();
    for (const std::string& path : apk_paths) {
      nlohmann::json one{{"package", path}};
      try {
        ApkPackage pkg = parse_apk(repo_detail::read_file(path));
        VerificationResult result = verify_package(pkg, keys);
        one["name"] = pkg.pkginfo.pkgname;
        one["version"] = pkg.pkginfo.pkgver;
        one["signer_key_id"] =
            to_hex(Bytes(result.signer_key_id.begin(), result.signer_key_id.end()));
        one["verdict"] = "verified";
      } catch (const TsrError& e) {
        one["verdict"] = "failed";
        one["error"] = e.what();
        all_ok = false;
      }
      out.push_back(std::move(one));
    }
    std::cout << out.dump(2) << "\n";
    return all_ok ? kExitOk : kExitError;
  }

  if (verify_install->parsed()) {
    PublicKey key = PublicKey::from_pem(read_text_file(key_paths.at(0)));
    std::optional<PredictedConfig> predicted;
    if (!predicted_path.empty()) {
      nlohmann::json j = nlohmann::json::parse(read_text_file(predicted_path));
      PredictedConfig p;
      p.passwd_content = j.value("passwd", "");
      p.group_content = j.value("group", "");
      p.shadow_content = j.value("shadow", "");
      predicted = std::move(p);
    }
    SimFs fs;
    std::vector<std::pair<std::string, std::string>> installed;
    for (const std::string& path : apk_paths) {
      ApkPackage pkg = parse_apk(repo_detail::read_file(path));
      std::vector<std::string> errors = install_package(fs, pkg);
      for (const std::string& e : errors) {
        std::cerr << "tsr: " << pkg.pkginfo.pkgname << ": " << e << "\n";
      }
      installed.emplace_back(pkg.pkginfo.pkgname, pkg.pkginfo.pkgver);
    }
    InstallVerdict verdict =
        tsr::verify_install(fs, key, predicted ? &*predicted : nullptr);
    std::cout << verdict_json(installed, verdict).dump(2) << "\n";
    return verdict.trusted() ? kExitOk : kExitError;
  }

  if (mkpkg->parsed()) {
    std::string spec_text = read_text_file(spec_path);
    PackageSpec spec = parse_package_spec(spec_text);
    std::string key_path = signing_key_path;
    if (key_path.empty()) {
      YAML::Node root = YAML::Load(spec_text);
      if (root["signing_key"]) key_path = root["signing_key"].as<std::string>();
    }
    if (key_path.empty()) {
      fail(ErrorCode::InvalidSpec,
           "no signing key: pass --signing-key or set signing_key in the "
           "package description");
    }
    SigningKeypair signer = SigningKeypair::from_private_pem(read_text_file(key_path));
    Bytes bytes = build_package(spec, signer);
    std::string out_path = output_path.empty()
                               ? spec.info.pkgname + "-" + spec.info.pkgver + ".apk"
                               : output_path;
    write_binary_file(out_path, bytes);
    std::cout << nlohmann::json{{"package", out_path},
                                {"size", bytes.size()},
                                {"name", spec.info.pkgname},
                                {"version", spec.info.pkgver}}
                     .dump(2)
              << "\n";
    return kExitOk;
  }

  if (keygen->parsed()) {
    SignAlgorithm alg;
    if (algorithm == "ed25519") {
      alg = SignAlgorithm::Ed25519;
    } else if (algorithm == "rsa-2048") {
      alg = SignAlgorithm::Rsa2048Sha256;
    } else {
      fail(ErrorCode::InvalidSpec, "unknown algorithm: " + algorithm);
    }
    SigningKeypair key = SigningKeypair::generate(alg);
    write_binary_file(key_out, to_bytes(key.private_key_pem()));
    std::filesystem::permissions(key_out, std::filesystem::perms::owner_read |
                                              std::filesystem::perms::owner_write);
    if (!pub_out.empty()) {
      write_binary_file(pub_out, to_bytes(key.public_key().to_pem()));
    }
    std::cout << nlohmann::json{{"key_id", key.key_id_hex()},
                                {"algorithm", algorithm},
                                {"private_key", key_out}}
                     .dump(2)
              << "\n";
    return kExitOk;
  }

  std::cerr << app.help();
  return kExitError;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const tsr::TsrError& e) {
    std::cerr << "tsr: " << e.what() << "\n";
    return e.code() == tsr::ErrorCode::UnknownRepository ? kExitUnknownRepository
                                                         : kExitError;
  } catch (const std::exception& e) {
    std::cerr << "tsr: " << e.what() << "\n";
    return kExitError;
  }
}
