#pragma once

// Config file shared by the CLI and the service:
//
//   {
//     "session":   { ...SessionConfig fields... },
//     "observer":  { "kind": "IDEAL", "truth": {...}, "rt": {...} },
//     "apparatus": { "backend": "simulator", "fault": "none" },
//     "service":   { "data_dir": "...", "bind": "127.0.0.1:8080", "token": "..." }
//   }
//
// Every section is optional. Unknown keys are rejected.

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>

#include "vibropsi/apparatus.hpp"
#include "vibropsi/observer.hpp"
#include "vibropsi/protocol.hpp"
#include "vibropsi/record.hpp"

namespace vibropsi {

enum class BackendKind { kSimulator, kBridge };

struct BackendConfig {
  BackendKind kind = BackendKind::kSimulator;
  FaultProfile fault = FaultProfile::kNone;
  double force_drift = 0.06;
  std::string host = "127.0.0.1";
  std::uint16_t port = 0;
  bool real_time = false;

  bool operator==(const BackendConfig&) const = default;
};

/// "simulator", "simulator:<fault>", or "bridge:<host>:<port>".
BackendConfig parse_backend_spec(const std::string& spec);
std::string to_spec(const BackendConfig& backend);

BackendConfig backend_from_json(const Json& j, bool strict = true);
Json to_json(const BackendConfig& backend);

struct ServiceSettings {
  std::string data_dir = "data/sessions";
  std::string bind_host = "127.0.0.1";
  std::uint16_t bind_port = 8080;
  /// Shared operator token required on mutating requests when set.
  std::optional<std::string> token;
  BackendConfig backend;
};

/// "host:port"; throws Error(kInvalidArgument) on malformed input.
void parse_bind(const std::string& bind, std::string& host, std::uint16_t& port);

struct ConfigDocument {
  std::optional<SessionConfig> session;
  std::optional<ObserverModel> observer;
  BackendConfig apparatus;
  ServiceSettings service;
};

ConfigDocument parse_config_document(const Json& j);
ConfigDocument load_config_file(const std::filesystem::path& path);

/// Applies VIBROPSI_DATA_DIR, VIBROPSI_BIND and VIBROPSI_APPARATUS.
using EnvLookup = std::function<std::optional<std::string>(const char*)>;
void apply_env_overrides(ServiceSettings& settings, const EnvLookup& env);
EnvLookup process_env();

/// Builds the rig for one session. Simulators draw from `device_seed`.
std::unique_ptr<Apparatus> make_apparatus(const BackendConfig& backend,
                                          const ApparatusConfig& config,
                                          std::uint64_t device_seed, TaskKind task);

}  // namespace vibropsi
