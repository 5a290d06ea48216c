#include "cet/service.hpp"

#include <atomic>
#include <cmath>
#include <thread>

#include <httplib.h>

#include "cet/api_json.hpp"

namespace cet::service {
namespace {

using ledger::ContractError;
using Rule = ContractError::Rule;

constexpr auto kFeedPoll = std::chrono::milliseconds(500);
constexpr int kKeepaliveSeconds = 15;
constexpr std::size_t kDefaultPage = 100;
constexpr std::size_t kMaxPage = 1000;
constexpr std::size_t kIdempotencyEntries = 10000;

/// Aborts a handler with an HTTP status and a JSON error body.
struct ApiError {
  int status;
  std::string code;
  std::string message;
};

int status_for(Rule rule) {
  switch (rule) {
    case Rule::WrongChannel: return 400;
    case Rule::NotMember:
    case Rule::NotOperator:
    case Rule::NotOwner: return 403;
    case Rule::UnknownInterval:  // a mutation on an interval that was never opened is "not open"
    case Rule::IntervalAlreadyOpen:
    case Rule::IntervalNotIncreasing:
    case Rule::PhaseViolation:
    case Rule::DuplicateBid:
    case Rule::ClearingFailed: return 409;
    case Rule::MalformedPayload:
    case Rule::Infeasible: return 422;
  }
  return 400;
}

std::int64_t unix_now() {
  return std::chrono::duration_cast<std::chrono::seconds>(std::chrono::system_clock::now().time_since_epoch()).count();
}

double hour_of_day(std::int64_t unix_s) { return static_cast<double>(((unix_s % 86400) + 86400) % 86400) / 3600.0; }

std::uint64_t parse_u64(const std::string& text, const char* what) {
  std::size_t used = 0;
  unsigned long long v = 0;
  try {
    v = std::stoull(text, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != text.size() || text.front() == '-') {
    throw ApiError{400, "bad-request", std::string(what) + " must be a non-negative integer"};
  }
  return v;
}

std::string sse_frame(const FeedEvent& e) {
  return "id: " + std::to_string(e.seq) + "\nevent: " + e.kind + "\ndata: " + e.payload.dump() + "\n\n";
}

}  // namespace

void Feed::publish(std::string kind, json payload) {
  {
    std::lock_guard lock(mutex_);
    events_.push_back({++seq_, std::move(kind), std::move(payload)});
    while (events_.size() > history_) events_.pop_front();
  }
  cv_.notify_all();
}

std::uint64_t Feed::last_seq() const {
  std::lock_guard lock(mutex_);
  return seq_;
}

std::vector<FeedEvent> Feed::read(std::uint64_t after, std::chrono::milliseconds wait, bool& gap) {
  std::unique_lock lock(mutex_);
  cv_.wait_for(lock, wait, [&] { return closed_ || seq_ > after; });
  gap = false;
  std::vector<FeedEvent> out;
  if (events_.empty() || seq_ <= after) return out;
  if (events_.front().seq > after + 1) gap = true;
  for (const auto& e : events_) {
    if (e.seq > after) out.push_back(e);
  }
  return out;
}

void Feed::close() {
  {
    std::lock_guard lock(mutex_);
    closed_ = true;
  }
  cv_.notify_all();
}

bool Feed::closed() const {
  std::lock_guard lock(mutex_);
  return closed_;
}

std::vector<std::pair<std::string, json>> block_events(const ledger::Block& block, const ledger::ContractState& state) {
  std::vector<std::pair<std::string, json>> out;
  for (const auto& tx : block.txs) {
    const auto id = to_hex(tx.id);
    std::visit(
        [&](const auto& p) {
          using T = std::decay_t<decltype(p)>;
          if constexpr (std::is_same_v<T, ledger::OpenInterval>) {
            out.emplace_back("IntervalOpened", json{{"tx_id", id}, {"spec", api::to_json(p)}});
          } else if constexpr (std::is_same_v<T, BidCurve>) {
            out.emplace_back("BidAccepted", json{{"tx_id", id},
                                                 {"bid_id", p.id},
                                                 {"owner", p.owner},
                                                 {"device", p.device},
                                                 {"interval", p.interval},
                                                 {"side", to_string(p.side)}});
          } else if constexpr (std::is_same_v<T, ledger::Measurement>) {
            out.emplace_back("MeasurementCommitted", json{{"tx_id", id}, {"measurement", api::to_json(p)}});
          } else {
            const auto* record = state.find(p.interval);
            json result = record && record->result ? api::to_json(*record->result) : json(nullptr);
            out.emplace_back("IntervalCleared", json{{"tx_id", id}, {"interval", p.interval}, {"result", result}});
          }
        },
        tx.payload);
  }
  out.emplace_back("BlockCommitted",
                   json{{"height", block.height}, {"hash", to_hex(block.hash)}, {"txs", block.txs.size()}});
  return out;
}

struct Server::Impl {
  struct Host {
    explicit Host(ChannelSettings s, std::size_t history) : settings(std::move(s)), feed(history) {}

    ChannelSettings settings;
    std::unique_ptr<ledger::Channel> channel;
    std::mutex writer;  // serialises every mutation of this channel
    Feed feed;
    std::mutex commit_mutex;
    std::condition_variable commit_cv;
    bool commit_wanted = false;
    std::thread committer;
    std::thread timer;
  };

  struct Session {
    std::string token;
    ledger::PeerId peer;
    Role role = Role::Homeowner;
    Host* host = nullptr;
  };

  struct Reply {
    int status = 200;
    json body;
  };

  struct Cached {
    std::string fingerprint;
    int status;
    std::string body;
  };

  ServiceConfig config;
  std::map<std::string, std::unique_ptr<Host>> hosts;
  httplib::Server http;
  std::atomic<bool> stopping{false};
  std::mutex stop_mutex;
  std::condition_variable stop_cv;
  std::thread listener;

  std::mutex rate_mutex;
  std::map<std::string, std::pair<std::int64_t, int>> rate;  // token -> (minute, count)
  std::mutex idem_mutex;
  std::map<std::string, Cached> idempotency;
  std::mutex log_mutex;

  explicit Impl(ServiceConfig c) : config(std::move(c)) {
    if (!config.data_dir.empty()) std::filesystem::create_directories(config.data_dir);
    for (const auto& settings : config.channels) {
      if (hosts.count(settings.ledger.id)) throw std::runtime_error("duplicate channel '" + settings.ledger.id + "'");
      auto host = std::make_unique<Host>(settings, config.feed_history);
      if (config.data_dir.empty()) {
        host->channel = std::make_unique<ledger::Channel>(settings.ledger);
      } else {
        host->channel =
            std::make_unique<ledger::Channel>(settings.ledger, config.data_dir / (settings.ledger.id + ".chain"));
      }
      // Rebuild the feed from the chain so sequence numbers match a fresh run.
      ledger::ContractState state;
      for (const auto& block : host->channel->blocks(1)) {
        for (const auto& tx : block.txs) state.apply(tx, settings.ledger);
        for (auto& [kind, payload] : block_events(block, state)) host->feed.publish(kind, std::move(payload));
      }
      Host* raw = host.get();
      host->channel->on_commit([raw](const ledger::CommitReport& report, const ledger::ContractState& world) {
        for (auto& [kind, payload] : block_events(report.block, world)) raw->feed.publish(kind, std::move(payload));
      });
      hosts.emplace(settings.ledger.id, std::move(host));
    }
    routes();
  }

  ~Impl() { shutdown(); }

  void start_workers() {
    for (auto& [id, host] : hosts) {
      Host* h = host.get();
      h->committer = std::thread([this, h] { commit_loop(*h); });
      if (h->settings.cadence == Cadence::Timed) h->timer = std::thread([this, h] { timer_loop(*h); });
    }
  }

  void shutdown() {
    if (stopping.exchange(true)) return;
    stop_cv.notify_all();
    for (auto& [id, host] : hosts) {
      {
        std::lock_guard lock(host->commit_mutex);
        host->commit_wanted = true;
      }
      host->commit_cv.notify_all();
      host->feed.close();
    }
    http.stop();
    if (listener.joinable()) listener.join();
    for (auto& [id, host] : hosts) {
      if (host->committer.joinable()) host->committer.join();
      if (host->timer.joinable()) host->timer.join();
      std::lock_guard lock(host->writer);
      flush(*host);
    }
  }

  // Interruptible sleep; false when the service is stopping.
  bool pause(std::chrono::milliseconds d) {
    std::unique_lock lock(stop_mutex);
    return !stop_cv.wait_for(lock, d, [&] { return stopping.load(); });
  }

  static void flush(Host& h) {
    while (h.channel->pending() > 0) h.channel->commit_block();
  }

  void request_commit(Host& h) {
    {
      std::lock_guard lock(h.commit_mutex);
      h.commit_wanted = true;
    }
    h.commit_cv.notify_one();
  }

  void commit_loop(Host& h) {
    while (!stopping) {
      {
        std::unique_lock lock(h.commit_mutex);
        h.commit_cv.wait(lock, [&] { return h.commit_wanted || stopping.load(); });
        h.commit_wanted = false;
      }
      if (stopping) return;
      pause(config.batch_window);
      std::lock_guard lock(h.writer);
      flush(h);
    }
  }

  void timer_loop(Host& h) {
    while (pause(std::chrono::milliseconds(200))) {
      std::lock_guard lock(h.writer);
      const auto now = unix_now();
      const auto open = h.channel->read([](const ledger::ContractState& s) -> std::optional<ledger::OpenInterval> {
        if (auto id = s.open_interval()) return s.find(*id)->spec;
        return std::nullopt;
      });
      try {
        if (open && now >= open->start_s + open->length_s) {
          close_locked(h, open->interval);
        } else if (!open) {
          open_locked(h, json::object(), now);
        }
      } catch (const ApiError&) {
        // A manual close or open raced the timer; the next tick sees the new phase.
      }
    }
  }

  // --- mutations, called with the host's writer lock held ---

  ledger::SubmitResult submit(Host& h, const Session& s, ledger::Payload payload) {
    auto tx = ledger::make_transaction(h.settings.ledger.id, s.peer, std::move(payload));
    auto r = h.channel->submit(std::move(tx));
    if (r.status == ledger::SubmitStatus::Rejected && r.rule) {
      throw ApiError{status_for(*r.rule), ledger::to_string(*r.rule), r.reason};
    }
    if (r.status == ledger::SubmitStatus::NoQuorum) throw ApiError{503, "no-quorum", r.reason};
    return r;
  }

  std::uint64_t commit_now(Host& h, const Digest& tx_id) {
    while (h.channel->pending() > 0) {
      auto report = h.channel->commit_block();
      if (!report) break;
      for (const auto& d : report->dropped) {
        if (d.tx.id == tx_id) throw ApiError{status_for(d.rule), ledger::to_string(d.rule), d.reason};
      }
    }
    const auto height = h.channel->committed_height(tx_id);
    if (!height) throw ApiError{500, "not-committed", "transaction was not committed"};
    return *height;
  }

  Reply open_locked(Host& h, const json& body, std::int64_t now) {
    Session op{"", h.settings.ledger.operator_peer, Role::Operator, &h};
    const auto last = h.channel->read([](const ledger::ContractState& s) { return s.last_interval(); });
    ledger::OpenInterval spec;
    spec.interval = body.contains("interval") ? body.at("interval").get<IntervalId>() : last.value_or(0) + 1;
    spec.start_s = body.value("start_s", now);
    spec.length_s = body.value("length_s", h.settings.interval_seconds);
    if (spec.length_s <= 0) throw ApiError{422, "malformed-payload", "length_s must be positive"};
    const double grid = body.contains("grid_price") ? body.at("grid_price").get<double>()
                                                    : h.settings.tou.price_at(hour_of_day(spec.start_s));
    try {
      spec.grid_price = units::price_round(grid);
    } catch (const std::invalid_argument& e) {
      throw ApiError{422, "malformed-payload", e.what()};
    }
    auto r = submit(h, op, spec);
    if (r.status == ledger::SubmitStatus::Duplicate) {
      throw ApiError{409, "interval-already-open", "interval " + std::to_string(spec.interval) + " was already opened"};
    }
    const auto height = commit_now(h, r.tx_id);
    return {201, {{"interval", spec.interval}, {"spec", api::to_json(spec)}, {"tx_id", to_hex(r.tx_id)}, {"height", height}}};
  }

  Reply close_locked(Host& h, IntervalId id) {
    Session op{"", h.settings.ledger.operator_peer, Role::Operator, &h};
    flush(h);
    auto r = submit(h, op, ledger::CloseInterval{id});
    if (r.status == ledger::SubmitStatus::Duplicate) {
      throw ApiError{409, "phase-violation", "interval " + std::to_string(id) + " is already closed"};
    }
    const auto height = commit_now(h, r.tx_id);
    const auto result = h.channel->read([&](const ledger::ContractState& s) { return *s.find(id)->result; });
    return {200, {{"interval", id}, {"phase", "cleared"}, {"result", api::to_json(result)}, {"tx_id", to_hex(r.tx_id)},
                  {"height", height}}};
  }

  // --- request plumbing ---

  std::optional<std::string> token_of(const httplib::Request& req) const {
    const auto auth = req.get_header_value("Authorization");
    const std::string prefix = "Bearer ";
    if (auth.size() <= prefix.size() || auth.compare(0, prefix.size(), prefix) != 0) return std::nullopt;
    return auth.substr(prefix.size());
  }

  Session authenticate(const httplib::Request& req, const std::string& channel) {
    const auto token = token_of(req);
    if (!token) throw ApiError{401, "unauthenticated", "missing bearer token"};
    const auto it = config.tokens.find(*token);
    if (it == config.tokens.end()) throw ApiError{401, "unauthenticated", "unknown bearer token"};
    rate_check(*token);
    Session s;
    s.token = *token;
    s.peer = it->second;
    if (channel.empty()) return s;
    const auto h = hosts.find(channel);
    if (h == hosts.end()) throw ApiError{404, "unknown-channel", "no channel '" + channel + "'"};
    s.host = h->second.get();
    const auto& cfg = s.host->settings.ledger;
    if (!cfg.is_member(s.peer)) throw ApiError{403, "not-member", s.peer + " is not a member of " + channel};
    s.role = s.peer == cfg.operator_peer ? Role::Operator : Role::Homeowner;
    return s;
  }

  void rate_check(const std::string& token) {
    if (config.rate_limit_per_minute <= 0) return;
    const auto minute = unix_now() / 60;
    std::lock_guard lock(rate_mutex);
    auto& [window, count] = rate[token];
    if (window != minute) {
      window = minute;
      count = 0;
    }
    if (++count > config.rate_limit_per_minute) throw ApiError{429, "rate-limited", "per-token request cap reached"};
  }

  static json body_of(const httplib::Request& req) {
    if (req.body.empty()) return json::object();
    try {
      return json::parse(req.body);
    } catch (const json::exception& e) {
      throw ApiError{400, "bad-json", e.what()};
    }
  }

  static void require_operator(const Session& s) {
    if (s.role != Role::Operator) throw ApiError{403, "not-operator", "operator role required"};
  }

  static IntervalId interval_param(const httplib::Request& req, std::size_t index) {
    return parse_u64(req.matches[index], "interval id");
  }

  static void send(httplib::Response& res, int status, const std::string& body) {
    res.status = status;
    res.set_content(body, "application/json");
  }

  using Handler = std::function<Reply(const httplib::Request&, const Session&)>;

  // Wraps a handler with authentication, error mapping and, for mutations,
  // Idempotency-Key replay.
  httplib::Server::Handler wrap(Handler handler, bool mutating) {
    return [this, handler = std::move(handler), mutating](const httplib::Request& req, httplib::Response& res) {
      std::string idem_key;
      try {
        const std::string channel = req.matches.size() > 1 ? std::string(req.matches[1]) : std::string();
        const auto session = authenticate(req, channel);
        std::string fingerprint;
        if (mutating && req.has_header("Idempotency-Key")) {
          idem_key = session.token + '\n' + req.get_header_value("Idempotency-Key");
          fingerprint = req.method + ' ' + req.path + '\n' + req.body;
          std::lock_guard lock(idem_mutex);
          if (auto it = idempotency.find(idem_key); it != idempotency.end()) {
            if (it->second.fingerprint != fingerprint) {
              throw ApiError{422, "idempotency-key-reused", "Idempotency-Key was used for a different request"};
            }
            res.set_header("Idempotent-Replayed", "true");
            send(res, it->second.status, it->second.body);
            return;
          }
        }
        Reply reply;
        try {
          reply = handler(req, session);
        } catch (const api::SchemaError& e) {
          throw ApiError{422, "malformed-payload", e.what()};
        } catch (const CurveError& e) {
          throw ApiError{422, "malformed-payload", e.what()};
        } catch (const der::ModelError& e) {
          throw ApiError{422, "malformed-payload", e.what()};
        } catch (const json::exception& e) {
          throw ApiError{422, "malformed-payload", e.what()};
        }
        const auto text = reply.body.dump();
        if (!idem_key.empty()) remember(idem_key, {fingerprint, reply.status, text});
        send(res, reply.status, text);
      } catch (const ApiError& e) {
        if (e.status == 429) res.set_header("Retry-After", std::to_string(60 - unix_now() % 60));
        const auto text = json{{"error", e.code}, {"message", e.message}}.dump();
        // Client errors are final for a keyed request; retrying must not change them.
        if (!idem_key.empty() && e.status < 500 && e.status != 429 && e.status != 401) {
          remember(idem_key, {req.method + ' ' + req.path + '\n' + req.body, e.status, text});
        }
        send(res, e.status, text);
      } catch (const std::exception& e) {
        send(res, 500, json{{"error", "internal"}, {"message", e.what()}}.dump());
      }
    };
  }

  void remember(const std::string& key, Cached cached) {
    std::lock_guard lock(idem_mutex);
    if (idempotency.size() >= kIdempotencyEntries) idempotency.clear();
    idempotency.emplace(key, std::move(cached));
  }

  // --- handlers ---

  Reply get_channels(const Session& s) {
    json out = json::array();
    for (const auto& [id, host] : hosts) {
      if (host->settings.ledger.is_member(s.peer)) out.push_back(id);
    }
    return {200, {{"channels", out}}};
  }

  static Reply get_channel(const Session& s) {
    const auto& h = *s.host;
    const auto& cfg = h.settings.ledger;
    const auto [open, last] = h.channel->read([](const ledger::ContractState& st) {
      return std::pair{st.open_interval(), st.last_interval()};
    });
    json devices = json::object();
    for (const auto& [home, list] : h.settings.devices) devices[home] = list;
    return {200,
            {{"id", cfg.id},
             {"operator", cfg.operator_peer},
             {"homes", cfg.homes},
             {"quorum", cfg.effective_quorum()},
             {"price_cap_milli", cfg.price_cap.count()},
             {"cadence", to_string(h.settings.cadence)},
             {"interval_seconds", h.settings.interval_seconds},
             {"devices", devices},
             {"open_interval", open ? json(*open) : json(nullptr)},
             {"last_interval", last ? json(*last) : json(nullptr)},
             {"height", h.channel->height()},
             {"tip_hash", to_hex(h.channel->tip_hash())},
             {"you", {{"peer", s.peer}, {"role", to_string(s.role)}}}}};
  }

  static json interval_json(const ledger::IntervalRecord& r, const Session& s, bool detail) {
    json j = api::to_json(r.spec);
    j["phase"] = ledger::to_string(r.phase);
    j["bid_count"] = r.bids.size();
    if (r.result) {
      j["mcp_milli"] = r.result->mcp ? json(r.result->mcp->count()) : json(nullptr);
      j["cleared_wh"] = r.result->cleared.count();
    }
    if (!detail) return j;
    const bool public_bids = s.role == Role::Operator || r.phase == ledger::Phase::Cleared;
    json bids = json::array();
    for (const auto& [id, bid] : r.bids) {
      if (public_bids || bid.owner == s.peer) bids.push_back(api::to_json(bid));
    }
    j["bids"] = bids;
    json measurements = json::array();
    for (const auto& m : r.measurements) measurements.push_back(api::to_json(m));
    j["measurements"] = measurements;
    j["result"] = r.result ? api::to_json(*r.result) : json(nullptr);
    j["curves"] = public_bids ? api::curves_json(r.bids) : json(nullptr);
    return j;
  }

  static Reply get_intervals(const Session& s) {
    return {200, s.host->channel->read([&](const ledger::ContractState& st) {
              json out = json::array();
              for (const auto& [id, r] : st.intervals()) out.push_back(interval_json(r, s, false));
              return json{{"intervals", out}};
            })};
  }

  static Reply get_interval(const Session& s, IntervalId id) {
    return s.host->channel->read([&](const ledger::ContractState& st) -> Reply {
      const auto* r = st.find(id);
      if (!r) throw ApiError{404, "unknown-interval", "no interval " + std::to_string(id)};
      return {200, interval_json(*r, s, true)};
    });
  }

  static Reply get_chain(const httplib::Request& req, const Session& s) {
    auto& ch = *s.host->channel;
    const auto from = req.has_param("from") ? parse_u64(req.get_param_value("from"), "from") : 0;
    auto limit = req.has_param("limit") ? parse_u64(req.get_param_value("limit"), "limit") : kDefaultPage;
    limit = std::clamp<std::uint64_t>(limit, 1, kMaxPage);
    const auto tip = ch.height();
    if (from > tip) throw ApiError{416, "beyond-tip", "from=" + std::to_string(from) + " is beyond tip " + std::to_string(tip)};
    const auto verdict = ch.verify();
    if (!verdict.ok) throw ApiError{500, "chain-corrupt", verdict.reason};
    auto blocks = ch.blocks(from);
    if (blocks.size() > limit) blocks.resize(limit);
    // Homeowners do not see other homes' bids before the interval clears.
    std::set<IntervalId> cleared;
    if (s.role == Role::Homeowner) {
      ch.read([&](const ledger::ContractState& st) {
        for (const auto& [id, r] : st.intervals()) {
          if (r.phase == ledger::Phase::Cleared) cleared.insert(id);
        }
      });
    }
    json out = json::array();
    for (const auto& b : blocks) {
      auto jb = api::to_json(b);
      if (s.role == Role::Homeowner) {
        for (std::size_t i = 0; i < b.txs.size(); ++i) {
          const auto* bid = std::get_if<BidCurve>(&b.txs[i].payload);
          if (bid && bid->owner != s.peer && !cleared.count(bid->interval)) {
            jb["txs"][i]["payload"] = {{"redacted", true}, {"owner", bid->owner}, {"interval", bid->interval}};
            jb.erase("record");
            jb["redacted"] = true;
          }
        }
      }
      out.push_back(std::move(jb));
    }
    return {200, {{"channel", ch.config().id}, {"tip_height", tip}, {"from", from}, {"verified", true}, {"blocks", out}}};
  }

  static Reply get_timeseries(const httplib::Request& req, const Session& s) {
    std::vector<std::string> names;
    {
      const auto text = req.has_param("series") ? req.get_param_value("series") : std::string("pcc,mcp");
      std::size_t pos = 0;
      while (pos <= text.size()) {
        const auto comma = std::min(text.find(',', pos), text.size());
        if (comma > pos) names.push_back(text.substr(pos, comma - pos));
        pos = comma + 1;
      }
    }
    if (names.empty()) throw ApiError{400, "bad-request", "series must name at least one series"};
    return s.host->channel->read([&](const ledger::ContractState& st) -> Reply {
      json series = json::object();
      for (const auto& name : names) {
        json samples = json::array();
        std::string home = s.host->settings.ledger.operator_peer;
        std::string device = name;
        if (const auto slash = name.find('/'); slash != std::string::npos) {
          home = name.substr(0, slash);
          device = name.substr(slash + 1);
        }
        for (const auto& [id, r] : st.intervals()) {
          json value;
          if (name == "mcp") {
            if (!r.result) continue;
            value = r.result->mcp ? json(units::dollars_per_kwh(*r.result->mcp)) : json(nullptr);
          } else if (name == "cleared") {
            if (!r.result) continue;
            value = units::kwh(r.result->cleared);
          } else if (name == "grid_price") {
            value = units::dollars_per_kwh(r.spec.grid_price);
          } else {
            for (const auto& m : r.measurements) {
              if (m.home == home && m.device == device && m.power_kw) value = *m.power_kw;
            }
            if (value.is_null()) continue;
          }
          samples.push_back({{"interval", id}, {"start_s", r.spec.start_s}, {"value", value}});
        }
        series[name] = samples;
      }
      return {200, {{"channel", s.host->settings.ledger.id}, {"series", series}}};
    });
  }

  static Reply get_tx(const Session& s, const std::string& hex) {
    Digest id{};
    try {
      id = digest_from_hex(hex);
    } catch (const std::invalid_argument& e) {
      throw ApiError{400, "bad-request", e.what()};
    }
    const auto status = s.host->channel->status(id);
    const auto height = s.host->channel->committed_height(id);
    const char* name = status == ledger::TxStatus::Committed ? "committed"
                       : status == ledger::TxStatus::Pending ? "pending"
                                                             : "unknown";
    return {status == ledger::TxStatus::Unknown ? 404 : 200,
            {{"tx_id", hex}, {"status", name}, {"height", height ? json(*height) : json(nullptr)}}};
  }

  Reply post_open(const httplib::Request& req, const Session& s) {
    require_operator(s);
    const auto body = body_of(req);
    std::lock_guard lock(s.host->writer);
    return open_locked(*s.host, body, unix_now());
  }

  Reply post_close(const httplib::Request& req, const Session& s) {
    require_operator(s);
    const auto id = interval_param(req, 2);
    std::lock_guard lock(s.host->writer);
    return close_locked(*s.host, id);
  }

  Reply post_bid(const httplib::Request& req, const Session& s) {
    const auto id = interval_param(req, 2);
    if (s.role == Role::Operator) throw ApiError{403, "not-owner", "the operator has no devices to bid for"};
    const auto body = body_of(req);
    auto bid = api::bid_from_json(body, s.peer, id);
    if (bid.owner != s.peer) throw ApiError{403, "not-owner", s.peer + " may not bid for " + bid.owner + "'s devices"};
    const auto& registry = s.host->settings.devices;
    if (auto it = registry.find(s.peer); it != registry.end() &&
                                         std::find(it->second.begin(), it->second.end(), bid.device) == it->second.end()) {
      throw ApiError{403, "not-owner", "device '" + bid.device + "' is not registered to " + s.peer};
    }
    if (bid.interval != id) throw ApiError{422, "malformed-payload", "bid interval does not match the path"};
    bid.validate(s.host->settings.ledger.price_cap);
    const auto bid_id = bid.id;
    std::lock_guard lock(s.host->writer);
    auto r = submit(*s.host, s, std::move(bid));
    request_commit(*s.host);
    return {202, {{"tx_id", to_hex(r.tx_id)},
                  {"bid_id", bid_id},
                  {"status", r.status == ledger::SubmitStatus::Duplicate ? "duplicate" : "pending"}}};
  }

  Reply post_measurement(const httplib::Request& req, const Session& s) {
    const auto id = interval_param(req, 2);
    const auto body = body_of(req);
    auto m = api::measurement_from_json(body, s.peer, id);
    std::lock_guard lock(s.host->writer);
    auto r = submit(*s.host, s, std::move(m));
    request_commit(*s.host);
    return {202, {{"tx_id", to_hex(r.tx_id)},
                  {"status", r.status == ledger::SubmitStatus::Duplicate ? "duplicate" : "pending"}}};
  }

  static der::BessParams storage_params(const json& p, bool ev) {
    der::BessParams b;
    b.p_max_kw = p.at("p_max_kw").get<double>();
    b.p_min_kw = ev ? 0.0 : p.value("p_min_kw", -b.p_max_kw);
    b.soc_max_kwh = p.at("capacity_kwh").get<double>();
    b.soc_min_kwh = p.value("soc_min_kwh", 0.0);
    b.eta = p.value("eta", 1.0);
    return b;
  }

  static Reply post_preview(const httplib::Request& req, const Session& s) {
    const auto body = body_of(req);
    const auto& h = *s.host;
    const auto [open, last] = h.channel->read([](const ledger::ContractState& st) {
      std::optional<ledger::OpenInterval> spec;
      if (auto id = st.open_interval()) spec = st.find(*id)->spec;
      return std::pair{spec, st.last_interval()};
    });
    const IntervalId interval = body.value("interval", open ? open->interval : last.value_or(0) + 1);
    const double interval_h =
        body.value("interval_minutes", static_cast<double>(open ? open->length_s : h.settings.interval_seconds) / 60.0) /
        60.0;
    const double time_h = body.value("time_h", hour_of_day(open ? open->start_s : unix_now()));
    const auto& window = h.settings.tou.at(time_h);

    const auto ctx_json = body.value("context", json::object());
    bidding::LocalContext ctx;
    ctx.excess_pv_kwh = ctx_json.value("excess_pv_kwh", 0.0);
    ctx.net_load_kwh = ctx_json.value("net_load_kwh", 0.0);
    ctx.tou_period = window.period;
    ctx.tou_price = window.price;
    ctx.price_cap = units::dollars_per_kwh(h.settings.ledger.price_cap);
    ctx.pv_floor_price = ctx_json.value("pv_floor_price", ctx.pv_floor_price);
    ctx.validate();

    const auto type = body.at("device_type").get<std::string>();
    const auto strategy = bidding::parse_strategy(body.value("strategy", std::string("selfish")));
    const bidding::BidTag tag{s.peer, body.value("device", type), interval};
    const auto params = body.value("params", json::object());
    const auto state = body.value("state", json::object());

    std::vector<BidCurve> bids;
    if (type == "bess") {
      bids = bidding::bess_bids(strategy, storage_params(params, false), state.at("soc_kwh").get<double>(), ctx,
                                h.settings.tou, interval_h, tag);
    } else if (type == "ev") {
      der::EvParams ev;
      ev.storage = storage_params(params, true);
      ev.soc_req_kwh = params.at("soc_req_kwh").get<double>();
      ev.t_arr_h = params.at("arrival_h").get<double>();
      ev.t_dep_h = params.at("departure_h").get<double>();
      ev.validate();
      bids.push_back(bidding::ev_bid_curve(strategy, ev, state.at("soc_kwh").get<double>(),
                                           state.value("now_h", ev.t_arr_h), interval_h, ctx, tag));
    } else if (type == "st") {
      der::StParams st;
      st.setpoint_c = params.value("setpoint_c", st.setpoint_c);
      st.deadband_c = params.value("deadband_c", st.deadband_c);
      st.resistance_c_per_kw = params.value("resistance_c_per_kw", st.resistance_c_per_kw);
      st.capacitance_kwh_per_c = params.value("capacitance_kwh_per_c", st.capacitance_kwh_per_c);
      st.hvac_kw = params.value("hvac_kw", st.hvac_kw);
      st.cop = params.value("cop", st.cop);
      st.validate();
      bids.push_back(bidding::st_bid_curve(strategy, st, state.at("indoor_c").get<double>(), ctx, interval_h, tag));
    } else if (type == "pv") {
      bids.push_back(bidding::pv_offer(state.value("forecast_kwh", ctx.excess_pv_kwh), ctx.pv_floor_price, tag));
    } else if (type == "load") {
      bids.push_back(bidding::load_bid(state.value("net_load_kwh", ctx.net_load_kwh), ctx.tou_price, tag));
    } else {
      throw api::SchemaError("device_type must be one of bess, ev, st, pv, load");
    }
    json out = json::array();
    for (const auto& b : bids) {
      if (!b.empty()) out.push_back(api::to_json(b));
    }
    return {200,
            {{"bids", out},
             {"context",
              {{"interval", interval},
               {"interval_minutes", interval_h * 60.0},
               {"tou_period", bidding::to_string(ctx.tou_period)},
               {"tou_price", ctx.tou_price},
               {"price_cap", ctx.price_cap}}}}};
  }

  void get_feed(const httplib::Request& req, httplib::Response& res) {
    Session s;
    try {
      s = authenticate(req, req.matches[1]);
    } catch (const ApiError& e) {
      send(res, e.status, json{{"error", e.code}, {"message", e.message}}.dump());
      return;
    }
    Host* h = s.host;
    std::uint64_t after = h->feed.last_seq();
    try {
      if (req.has_param("since")) {
        after = parse_u64(req.get_param_value("since"), "since");
      } else if (req.has_header("Last-Event-ID")) {
        after = parse_u64(req.get_header_value("Last-Event-ID"), "Last-Event-ID");
      }
    } catch (const ApiError& e) {
      send(res, e.status, json{{"error", e.code}, {"message", e.message}}.dump());
      return;
    }
    res.set_header("Cache-Control", "no-cache");
    res.set_header("X-Accel-Buffering", "no");
    auto cursor = std::make_shared<std::uint64_t>(after);
    auto started = std::make_shared<bool>(false);
    auto idle = std::make_shared<std::chrono::milliseconds>(0);
    res.set_chunked_content_provider("text/event-stream", [this, h, cursor, started, idle](std::size_t,
                                                                                          httplib::DataSink& sink) {
      if (!*started) {
        *started = true;
        const auto hello = "event: ready\ndata: " + json{{"after", *cursor}}.dump() + "\n\n";
        return sink.write(hello.data(), hello.size());
      }
      if (stopping || h->feed.closed()) {
        sink.done();
        return true;
      }
      bool gap = false;
      const auto events = h->feed.read(*cursor, kFeedPoll, gap);
      std::string chunk;
      if (gap && !events.empty()) {
        chunk += "event: gap\ndata: " + json{{"after", *cursor}, {"resume_from", events.front().seq}}.dump() + "\n\n";
      }
      for (const auto& e : events) {
        chunk += sse_frame(e);
        *cursor = e.seq;
      }
      if (events.empty()) {
        *idle += kFeedPoll;
        if (*idle >= std::chrono::seconds(kKeepaliveSeconds)) {
          chunk = ": keepalive\n\n";
          *idle = std::chrono::milliseconds(0);
        }
      } else {
        *idle = std::chrono::milliseconds(0);
      }
      if (chunk.empty()) return sink.is_writable();
      return sink.write(chunk.data(), chunk.size());
    });
  }

  void routes() {
    http.new_task_queue = [] { return new httplib::ThreadPool(64); };
    http.set_read_timeout(30, 0);
    const std::string ch = R"(/channels/([^/]+))";
    const std::string iv = ch + R"(/intervals/([0-9]+))";

    http.Get("/healthz", [this](const httplib::Request&, httplib::Response& res) {
      send(res, 200, json{{"status", stopping ? "stopping" : "ok"}, {"channels", hosts.size()}}.dump());
    });
    http.Get("/channels", wrap([this](const httplib::Request&, const Session& s) { return get_channels(s); }, false));
    http.Get(ch, wrap([](const httplib::Request&, const Session& s) { return get_channel(s); }, false));
    http.Get(ch + "/intervals", wrap([](const httplib::Request&, const Session& s) { return get_intervals(s); }, false));
    http.Get(iv, wrap([](const httplib::Request& req, const Session& s) { return get_interval(s, interval_param(req, 2)); },
                      false));
    http.Get(ch + "/chain", wrap([](const httplib::Request& req, const Session& s) { return get_chain(req, s); }, false));
    http.Get(ch + "/timeseries",
             wrap([](const httplib::Request& req, const Session& s) { return get_timeseries(req, s); }, false));
    http.Get(ch + R"(/txs/([0-9a-fA-F]+))",
             wrap([](const httplib::Request& req, const Session& s) { return get_tx(s, req.matches[2]); }, false));
    http.Get(ch + "/feed", [this](const httplib::Request& req, httplib::Response& res) { get_feed(req, res); });

    http.Post(ch + "/intervals",
              wrap([this](const httplib::Request& req, const Session& s) { return post_open(req, s); }, true));
    http.Post(iv + "/close",
              wrap([this](const httplib::Request& req, const Session& s) { return post_close(req, s); }, true));
    http.Post(iv + "/bids", wrap([this](const httplib::Request& req, const Session& s) { return post_bid(req, s); }, true));
    http.Post(iv + "/measurements",
              wrap([this](const httplib::Request& req, const Session& s) { return post_measurement(req, s); }, true));
    http.Post(ch + "/bid-preview",
              wrap([](const httplib::Request& req, const Session& s) { return post_preview(req, s); }, false));

    if (!config.static_dir.empty()) {
      if (!http.set_mount_point("/", config.static_dir.string())) {
        throw std::runtime_error("static directory " + config.static_dir.string() + " does not exist");
      }
    }
    http.set_logger([this](const httplib::Request& req, const httplib::Response& res) { log(req, res); });
  }

  void log(const httplib::Request& req, const httplib::Response& res) {
    if (!config.log) return;
    json line = {{"ts_ms", std::chrono::duration_cast<std::chrono::milliseconds>(
                               std::chrono::system_clock::now().time_since_epoch())
                               .count()},
                 {"method", req.method},
                 {"path", req.path},
                 {"status", res.status},
                 {"remote", req.remote_addr}};
    if (const auto token = token_of(req)) {
      auto it = config.tokens.find(*token);
      line["peer"] = it == config.tokens.end() ? json(nullptr) : json(it->second);
    }
    std::lock_guard lock(log_mutex);
    *config.log << line.dump() << '\n' << std::flush;
  }
};

Server::Server(ServiceConfig config) : impl_(std::make_unique<Impl>(std::move(config))) {}

Server::~Server() { stop(); }

int Server::bind() {
  auto& c = impl_->config;
  if (c.port == 0) {
    port_ = impl_->http.bind_to_any_port(c.host);
  } else {
    port_ = impl_->http.bind_to_port(c.host, c.port) ? c.port : -1;
  }
  if (port_ <= 0) throw std::runtime_error("cannot bind " + c.host + ":" + std::to_string(c.port));
  impl_->start_workers();
  return port_;
}

void Server::listen() { impl_->http.listen_after_bind(); }

int Server::start() {
  const int port = bind();
  impl_->listener = std::thread([this] { impl_->http.listen_after_bind(); });
  impl_->http.wait_until_ready();
  return port;
}

void Server::stop() {
  if (impl_) impl_->shutdown();
}

const ledger::Channel& Server::channel(const std::string& id) const {
  const auto it = impl_->hosts.find(id);
  if (it == impl_->hosts.end()) throw std::out_of_range("no channel '" + id + "'");
  return *it->second->channel;
}

}  // namespace cet::service
