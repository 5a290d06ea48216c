#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "cet/bidding.hpp"
#include "cet/channel.hpp"

// HTTP+JSON market service over one or more ledger channels.
//
// Every mutation on a channel goes through that channel's writer lock and its
// ledger queue; a per-channel committer cuts batched bids and measurements
// into blocks. The live feed is produced from committed blocks only, so its
// sequence numbers are a pure function of the chain and survive restarts.

namespace cet::service {

using nlohmann::json;

enum class Role { Homeowner, Operator };
enum class Cadence { Manual, Timed };

const char* to_string(Role role);
const char* to_string(Cadence cadence);

struct ChannelSettings {
  ledger::ChannelConfig ledger;
  Cadence cadence = Cadence::Manual;
  std::int64_t interval_seconds = 300;
  bidding::TouSchedule tou = bidding::TouSchedule::default_schedule();
  /// Devices per home. When a home is listed, it may only bid for these.
  std::map<std::string, std::vector<std::string>> devices;
};

struct ServiceConfig {
  std::string host = "127.0.0.1";
  int port = 8080;  // 0 picks a free port
  std::filesystem::path data_dir;  // empty keeps chains in memory
  std::filesystem::path static_dir;
  std::map<std::string, ledger::PeerId> tokens;  // bearer token -> peer
  std::vector<ChannelSettings> channels;
  int rate_limit_per_minute = 600;
  std::chrono::milliseconds batch_window{20};
  std::size_t feed_history = 8192;
  std::ostream* log = nullptr;  // JSON request log lines, none when null
};

/// Token registry file: {"<token>": "<peer id>", ...}.
std::map<std::string, ledger::PeerId> load_tokens(const std::filesystem::path& path);
/// Service config file; relative paths resolve against the file's directory.
ServiceConfig load_service_config(const std::filesystem::path& path);
ServiceConfig parse_service_config(const json& j, const std::filesystem::path& base);
/// CET_LISTEN (host:port), CET_DATA_DIR, CET_TOKENS (registry file) and
/// CET_STATIC_DIR override the file settings.
void apply_env(ServiceConfig& config);

struct FeedEvent {
  std::uint64_t seq = 0;
  std::string kind;
  json payload;
};

/// Bounded in-memory history of feed events with blocking reads.
class Feed {
 public:
  explicit Feed(std::size_t history) : history_(history) {}

  void publish(std::string kind, json payload);
  [[nodiscard]] std::uint64_t last_seq() const;
  /// Events with seq > `after`, waiting up to `wait` when there are none.
  /// `gap` is set when events after `after` have already been evicted.
  std::vector<FeedEvent> read(std::uint64_t after, std::chrono::milliseconds wait, bool& gap);
  void close();
  [[nodiscard]] bool closed() const;

 private:
  std::size_t history_;
  mutable std::mutex mutex_;
  std::condition_variable cv_;
  std::deque<FeedEvent> events_;
  std::uint64_t seq_ = 0;
  bool closed_ = false;
};

/// Feed events produced by one committed block, given the world state after it.
std::vector<std::pair<std::string, json>> block_events(const ledger::Block& block, const ledger::ContractState& state);

class Server {
 public:
  explicit Server(ServiceConfig config);
  ~Server();
  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;

  /// Bind the listen address; returns the bound port.
  int bind();
  /// Serve until stop(). bind() must have succeeded.
  void listen();
  /// bind() and serve on a background thread.
  int start();
  void stop();

  [[nodiscard]] int port() const { return port_; }
  [[nodiscard]] const ledger::Channel& channel(const std::string& id) const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  int port_ = 0;
};

}  // namespace cet::service
