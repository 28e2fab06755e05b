#include "vibropsi/config.hpp"

#include <cstdlib>

#include "vibropsi/bridge.hpp"
#include "vibropsi/error.hpp"

namespace vibropsi {

namespace {

[[noreturn]] void invalid(const std::string& what) { throw Error(ErrorCode::kInvalidArgument, what); }

std::uint16_t parse_port(const std::string& s) {
  if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos || s.size() > 5) {
    invalid("invalid port '" + s + "'");
  }
  const long v = std::stol(s);
  if (v > 65535) invalid("invalid port '" + s + "'");
  return static_cast<std::uint16_t>(v);
}

void reject_unknown(const Json& j, std::initializer_list<const char*> keys, const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool known = false;
    for (const char* k : keys) known = known || it.key() == k;
    if (!known) invalid("unknown field " + where + "." + it.key());
  }
}

}  // namespace

void parse_bind(const std::string& bind, std::string& host, std::uint16_t& port) {
  const auto colon = bind.rfind(':');
  if (colon == std::string::npos || colon == 0) invalid("bind address must be host:port");
  host = bind.substr(0, colon);
  port = parse_port(bind.substr(colon + 1));
}

BackendConfig parse_backend_spec(const std::string& spec) {
  BackendConfig b;
  if (spec == "simulator") return b;
  if (spec.rfind("simulator:", 0) == 0) {
    b.fault = fault_profile_from_string(spec.substr(10));
    return b;
  }
  if (spec.rfind("bridge:", 0) == 0) {
    b.kind = BackendKind::kBridge;
    parse_bind(spec.substr(7), b.host, b.port);
    return b;
  }
  invalid("apparatus backend must be 'simulator', 'simulator:<fault>' or 'bridge:<host>:<port>'");
}

std::string to_spec(const BackendConfig& b) {
  if (b.kind == BackendKind::kBridge) return "bridge:" + b.host + ":" + std::to_string(b.port);
  if (b.fault == FaultProfile::kNone) return "simulator";
  return "simulator:" + std::string(to_string(b.fault));
}

BackendConfig backend_from_json(const Json& j, bool strict) {
  if (j.is_string()) return parse_backend_spec(j.get<std::string>());
  if (!j.is_object()) invalid("apparatus must be an object or a backend string");
  if (strict) {
    reject_unknown(j, {"backend", "fault", "force_drift", "host", "port", "real_time"}, "apparatus");
  }
  BackendConfig b;
  try {
    const std::string kind = j.value("backend", std::string("simulator"));
    if (kind == "simulator") {
      b.kind = BackendKind::kSimulator;
    } else if (kind == "bridge") {
      b.kind = BackendKind::kBridge;
    } else {
      invalid("apparatus.backend must be 'simulator' or 'bridge'");
    }
    b.fault = fault_profile_from_string(j.value("fault", std::string("none")));
    b.force_drift = j.value("force_drift", b.force_drift);
    b.host = j.value("host", b.host);
    const int port = j.value("port", 0);
    if (port < 0 || port > 65535) invalid("apparatus.port out of range");
    b.port = static_cast<std::uint16_t>(port);
    b.real_time = j.value("real_time", false);
  } catch (const Json::exception& e) {
    invalid(std::string("apparatus: ") + e.what());
  }
  if (b.kind == BackendKind::kBridge && b.port == 0) invalid("bridge backend needs a port");
  return b;
}

Json to_json(const BackendConfig& b) {
  Json j;
  j["backend"] = b.kind == BackendKind::kBridge ? "bridge" : "simulator";
  j["fault"] = to_string(b.fault);
  j["force_drift"] = b.force_drift;
  j["host"] = b.host;
  j["port"] = b.port;
  j["real_time"] = b.real_time;
  return j;
}

ConfigDocument parse_config_document(const Json& j) {
  if (!j.is_object()) invalid("config document must be a JSON object");
  reject_unknown(j, {"session", "observer", "apparatus", "service"}, "config");
  ConfigDocument doc;
  if (j.contains("session")) doc.session = session_config_from_json(j.at("session"));
  if (j.contains("observer")) doc.observer = observer_from_json(j.at("observer"));
  if (j.contains("apparatus")) doc.apparatus = backend_from_json(j.at("apparatus"));
  doc.service.backend = doc.apparatus;
  if (j.contains("service")) {
    const Json& s = j.at("service");
    if (!s.is_object()) invalid("service must be an object");
    reject_unknown(s, {"data_dir", "bind", "token"}, "service");
    try {
      if (s.contains("data_dir")) doc.service.data_dir = s.at("data_dir").get<std::string>();
      if (s.contains("bind")) {
        parse_bind(s.at("bind").get<std::string>(), doc.service.bind_host, doc.service.bind_port);
      }
      if (s.contains("token") && !s.at("token").is_null()) {
        doc.service.token = s.at("token").get<std::string>();
      }
    } catch (const Json::exception& e) {
      invalid(std::string("service: ") + e.what());
    }
  }
  return doc;
}

ConfigDocument load_config_file(const std::filesystem::path& path) {
  const std::string text = read_text_file(path);
  Json j;
  try {
    j = Json::parse(text);
  } catch (const Json::exception& e) {
    invalid(path.string() + ": " + e.what());
  }
  return parse_config_document(j);
}

void apply_env_overrides(ServiceSettings& settings, const EnvLookup& env) {
  if (auto v = env("VIBROPSI_DATA_DIR")) settings.data_dir = *v;
  if (auto v = env("VIBROPSI_BIND")) parse_bind(*v, settings.bind_host, settings.bind_port);
  if (auto v = env("VIBROPSI_APPARATUS")) settings.backend = parse_backend_spec(*v);
}

EnvLookup process_env() {
  return [](const char* key) -> std::optional<std::string> {
    if (const char* v = std::getenv(key); v != nullptr && *v != '\0') return std::string(v);
    return std::nullopt;
  };
}

std::unique_ptr<Apparatus> make_apparatus(const BackendConfig& backend,
                                          const ApparatusConfig& config,
                                          std::uint64_t device_seed, TaskKind task) {
  if (backend.kind == BackendKind::kBridge) {
    auto channel = TcpLineChannel::connect(backend.host, backend.port);
    const int slots = task == TaskKind::kVt2pod ? 3 : 2;
    return std::make_unique<BridgeApparatus>(std::move(channel), config, slots);
  }
  SimulatorOptions options;
  options.seed = device_seed;
  options.fault = backend.fault;
  options.force_drift = backend.force_drift;
  options.real_time = backend.real_time;
  return std::make_unique<SimulatedApparatus>(config, options);
}

}  // namespace vibropsi
