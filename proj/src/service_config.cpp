#include <cstdlib>
#include <fstream>

#include "cet/api_json.hpp"
#include "cet/service.hpp"

namespace cet::service {
namespace {

json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  try {
    return json::parse(in, nullptr, true, true);
  } catch (const json::exception& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  const std::filesystem::path path(p);
  return path.is_absolute() || base.empty() ? path : base / path;
}

void parse_listen(const std::string& text, ServiceConfig& config) {
  const auto colon = text.rfind(':');
  if (colon == std::string::npos) throw std::runtime_error("listen address must be host:port, got '" + text + "'");
  config.host = text.substr(0, colon);
  config.port = std::stoi(text.substr(colon + 1));
  if (config.port < 0 || config.port > 65535) throw std::runtime_error("listen port out of range");
}

ChannelSettings parse_channel(const json& j) {
  ChannelSettings s;
  s.ledger.id = j.at("id").get<std::string>();
  s.ledger.operator_peer = j.value("operator", s.ledger.operator_peer);
  s.ledger.homes = j.at("homes").get<std::vector<std::string>>();
  s.ledger.quorum = j.value("quorum", std::size_t{0});
  s.ledger.price_cap = units::price_round(j.value("price_cap", 1.0));
  s.ledger.max_block_txs = j.value("max_block_txs", s.ledger.max_block_txs);
  const auto cadence = j.value("cadence", std::string("manual"));
  if (cadence == "manual") {
    s.cadence = Cadence::Manual;
  } else if (cadence == "timed") {
    s.cadence = Cadence::Timed;
  } else {
    throw std::runtime_error("channel '" + s.ledger.id + "': cadence must be manual or timed");
  }
  s.interval_seconds = j.value("interval_seconds", s.interval_seconds);
  if (s.interval_seconds <= 0) throw std::runtime_error("channel '" + s.ledger.id + "': interval_seconds must be positive");
  if (j.contains("tou")) s.tou = api::tou_from_json(j.at("tou"));
  if (j.contains("devices")) s.devices = j.at("devices").get<std::map<std::string, std::vector<std::string>>>();
  try {
    s.ledger.validate();
  } catch (const std::invalid_argument& e) {
    throw std::runtime_error("channel '" + s.ledger.id + "': " + e.what());
  }
  return s;
}

}  // namespace

const char* to_string(Role role) { return role == Role::Operator ? "operator" : "homeowner"; }
const char* to_string(Cadence cadence) { return cadence == Cadence::Timed ? "timed" : "manual"; }

std::map<std::string, ledger::PeerId> load_tokens(const std::filesystem::path& path) {
  const auto j = read_json(path);
  if (!j.is_object()) throw std::runtime_error(path.string() + ": token registry must map tokens to peer ids");
  return j.get<std::map<std::string, ledger::PeerId>>();
}

ServiceConfig parse_service_config(const json& j, const std::filesystem::path& base) {
  ServiceConfig config;
  try {
    if (j.contains("listen")) parse_listen(j.at("listen").get<std::string>(), config);
    if (j.contains("data_dir")) config.data_dir = resolve(base, j.at("data_dir").get<std::string>());
    if (j.contains("static_dir")) config.static_dir = resolve(base, j.at("static_dir").get<std::string>());
    if (j.contains("tokens")) {
      const auto& t = j.at("tokens");
      config.tokens = t.is_object() ? t.get<std::map<std::string, ledger::PeerId>>()
                                    : load_tokens(resolve(base, t.get<std::string>()));
    }
    config.rate_limit_per_minute = j.value("rate_limit_per_minute", config.rate_limit_per_minute);
    config.batch_window = std::chrono::milliseconds(j.value("batch_window_ms", config.batch_window.count()));
    config.feed_history = j.value("feed_history", config.feed_history);
    for (const auto& c : j.value("channels", json::array())) config.channels.push_back(parse_channel(c));
  } catch (const json::exception& e) {
    throw std::runtime_error(std::string("service config: ") + e.what());
  } catch (const api::SchemaError& e) {
    throw std::runtime_error(std::string("service config: ") + e.what());
  }
  return config;
}

ServiceConfig load_service_config(const std::filesystem::path& path) {
  return parse_service_config(read_json(path), path.parent_path());
}

void apply_env(ServiceConfig& config) {
  if (const char* v = std::getenv("CET_LISTEN"); v && *v) parse_listen(v, config);
  if (const char* v = std::getenv("CET_DATA_DIR"); v && *v) config.data_dir = v;
  if (const char* v = std::getenv("CET_TOKENS"); v && *v) config.tokens = load_tokens(v);
  if (const char* v = std::getenv("CET_STATIC_DIR"); v && *v) config.static_dir = v;
}

}  // namespace cet::service
