#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <fstream>

#include "cet/api_json.hpp"
#include "cet/sim.hpp"
#include "support/service_harness.hpp"

using namespace cet;
using namespace cet::testing;

namespace {

struct Running {
  explicit Running(service::ServiceConfig config) : server(std::move(config)), port(server.start()), api(port) {}
  service::Server server;
  int port;
  Api api;
};

std::string interval_path(IntervalId id, const std::string& tail = "") {
  return "/channels/kcm/intervals/" + std::to_string(id) + tail;
}

// The single-step instance with both limits on a 0.01 grid: a seller at 0.05
// and a buyer at 0.11 for 1 kWh each. Uniform price is the midpoint.
constexpr double kSellLimit = 0.05;
constexpr double kBuyLimit = 0.11;

}  // namespace

TEST_SUITE("service") {
  TEST_CASE("interval lifecycle: open, conflict, role, reopen after clearing") {
    Running s(base_config());
    auto r = s.api.post("/channels/kcm/intervals", "h1-token");
    CHECK(r.status == 403);

    r = s.api.post("/channels/kcm/intervals", "op-token", {{"start_s", 1000}, {"length_s", 300}});
    REQUIRE(r.status == 201);
    CHECK(r.body["interval"] == 1);
    CHECK(r.body["spec"]["closes_at_s"] == 1300);
    CHECK(r.body["tx_id"].get<std::string>().size() == 64);

    CHECK(s.api.post("/channels/kcm/intervals", "op-token").status == 409);
    CHECK(s.api.post(interval_path(1, "/close"), "op-token").status == 200);

    r = s.api.post("/channels/kcm/intervals", "op-token");
    CHECK(r.status == 201);
    CHECK(r.body["interval"] == 2);

    auto list = s.api.get("/channels/kcm/intervals", "h3-token");
    REQUIRE(list.status == 200);
    REQUIRE(list.body["intervals"].size() == 2);
    CHECK(list.body["intervals"][0]["phase"] == "cleared");
    CHECK(list.body["intervals"][1]["phase"] == "open");
    CHECK(s.api.get(interval_path(9), "h3-token").status == 404);
  }

  TEST_CASE("authentication and membership") {
    Running s(base_config());
    CHECK(s.api.get("/channels/kcm", "").status == 401);
    CHECK(s.api.get("/channels/kcm", "bogus").status == 401);
    CHECK(s.api.get("/channels/kcm", "x-token").status == 403);
    CHECK(s.api.get("/channels/other", "h1-token").status == 404);

    auto me = s.api.get("/channels/kcm", "h2-token");
    REQUIRE(me.status == 200);
    CHECK(me.body["you"]["role"] == "homeowner");
    CHECK(s.api.get("/channels/kcm", "op-token").body["you"]["role"] == "operator");
    CHECK(s.api.get("/channels", "x-token").body["channels"].empty());
    CHECK(s.api.get("/healthz", "").status == 200);
  }

  TEST_CASE("bid submission: accepted, malformed, foreign and closed") {
    Running s(base_config());
    REQUIRE(s.api.post("/channels/kcm/intervals", "op-token").status == 201);

    // A helpful EV curve from the preview endpoint goes straight back in.
    auto preview = s.api.post("/channels/kcm/bid-preview", "h2-token",
                              {{"device_type", "ev"},
                               {"device", "ev"},
                               {"strategy", "helpful"},
                               {"params",
                                {{"p_max_kw", 7.2},
                                 {"capacity_kwh", 60.0},
                                 {"eta", 0.9},
                                 {"soc_req_kwh", 50.0},
                                 {"arrival_h", 18.0},
                                 {"departure_h", 31.0}}},
                               {"state", {{"soc_kwh", 30.0}, {"now_h", 20.0}}}});
    REQUIRE(preview.status == 200);
    REQUIRE(preview.body["bids"].size() == 1);
    auto ev = s.api.post(interval_path(1, "/bids"), "h2-token", preview.body["bids"][0]);
    CHECK(ev.status == 202);
    CHECK(ev.body["status"] == "pending");

    json rising = {{"device", "load"},
                   {"side", "buy"},
                   {"points", {{{"quantity_kwh", 0.5}, {"price", 0.05}}, {{"quantity_kwh", 1.0}, {"price", 0.10}}}}};
    auto r = s.api.post(interval_path(1, "/bids"), "h3-token", rising);
    CHECK(r.status == 422);
    CHECK(r.body["error"] == "malformed-payload");

    json negative = single_step("load", "buy", 1.0, 0.0);
    negative["points"][0].erase("price");
    negative["points"][0]["price_milli"] = -5;
    CHECK(s.api.post(interval_path(1, "/bids"), "h3-token", negative).status == 422);

    auto foreign = single_step("bess", "sell", 1.0, 0.10);
    foreign["owner"] = "h1";
    CHECK(s.api.post(interval_path(1, "/bids"), "h2-token", foreign).status == 403);
    CHECK(s.api.post(interval_path(1, "/bids"), "h2-token", single_step("bess", "sell", 1.0, 0.10)).status == 403);
    CHECK(s.api.post(interval_path(1, "/bids"), "op-token", single_step("load", "buy", 1.0, 0.10)).status == 403);
    CHECK(s.api.post_raw(interval_path(1, "/bids"), "h3-token", "{not json").status == 400);

    // Re-sending an identical bid is reported, not duplicated.
    auto again = s.api.post(interval_path(1, "/bids"), "h2-token", preview.body["bids"][0]);
    CHECK(again.status == 202);
    CHECK(again.body["tx_id"] == ev.body["tx_id"]);

    REQUIRE(s.api.post(interval_path(1, "/close"), "op-token").status == 200);
    CHECK(s.api.post(interval_path(1, "/bids"), "h3-token", single_step("load", "buy", 1.0, 0.10)).status == 409);
    CHECK(s.api.post(interval_path(5, "/bids"), "h3-token", single_step("load", "buy", 1.0, 0.10)).status == 409);

    auto detail = s.api.get(interval_path(1), "h3-token");
    REQUIRE(detail.status == 200);
    CHECK(detail.body["bids"].size() == 1);
  }

  TEST_CASE("close: no-trade, the two-bid instance, double close and role") {
    Running s(base_config());
    REQUIRE(s.api.post("/channels/kcm/intervals", "op-token").status == 201);
    CHECK(s.api.post(interval_path(1, "/close"), "h1-token").status == 403);
    auto empty = s.api.post(interval_path(1, "/close"), "op-token");
    REQUIRE(empty.status == 200);
    CHECK(empty.body["result"]["traded"] == false);
    CHECK(empty.body["result"]["mcp"].is_null());
    CHECK(empty.body["result"]["awards"].empty());

    REQUIRE(s.api.post("/channels/kcm/intervals", "op-token").status == 201);
    REQUIRE(s.api.post(interval_path(2, "/bids"), "h1-token", single_step("pv", "sell", 1.0, kSellLimit)).status == 202);
    REQUIRE(s.api.post(interval_path(2, "/bids"), "h2-token", single_step("ev", "buy", 1.0, kBuyLimit)).status == 202);

    auto closed = s.api.post(interval_path(2, "/close"), "op-token");
    REQUIRE(closed.status == 200);
    const auto& result = closed.body["result"];
    const auto midpoint_milli = std::llround((kSellLimit + kBuyLimit) / 2.0 * 1000.0);
    CHECK(result["mcp_milli"] == midpoint_milli);
    CHECK(result["mcp"].get<double>() == doctest::Approx(0.08));
    CHECK(result["cleared_wh"] == 1000);
    CHECK(result["awards"].size() == 2);
    CHECK(result["signals"].size() == 2);

    // The response encoding is the exact bytes the ledger holds.
    const auto on_ledger = s.server.channel("kcm").read(
        [](const ledger::ContractState& st) { return *st.find(2)->result; });
    CHECK(result["encoding"] == api::hex(ledger::encode_clearing_result(on_ledger)));

    CHECK(s.api.post(interval_path(2, "/close"), "op-token").status == 409);
    CHECK(s.api.post(interval_path(8, "/close"), "op-token").status == 409);
  }

  TEST_CASE("chain pages: genesis, beyond tip, unknown channel, redaction") {
    Running s(base_config());
    auto fresh = s.api.get("/channels/kcm/chain?from=0", "h1-token");
    REQUIRE(fresh.status == 200);
    REQUIRE(fresh.body["blocks"].size() == 1);
    CHECK(fresh.body["blocks"][0]["height"] == 0);
    CHECK(fresh.body["verified"] == true);
    CHECK(s.api.get("/channels/kcm/chain?from=1", "h1-token").status == 416);
    CHECK(s.api.get("/channels/kcm/chain?from=-1", "h1-token").status == 400);
    CHECK(s.api.get("/channels/nope/chain?from=0", "h1-token").status == 404);

    REQUIRE(s.api.post("/channels/kcm/intervals", "op-token").status == 201);
    auto bid = s.api.post(interval_path(1, "/bids"), "h1-token", single_step("pv", "sell", 1.0, 0.05));
    REQUIRE(bid.status == 202);
    // Wait for the batch to commit.
    for (int i = 0; i < 200 && s.api.get("/channels/kcm/txs/" + bid.body["tx_id"].get<std::string>(), "h1-token")
                                      .body["status"] != "committed";
         ++i) {
      std::this_thread::sleep_for(std::chrono::milliseconds(5));
    }

    auto as_h2 = s.api.get("/channels/kcm/chain?from=2", "h2-token");
    REQUIRE(as_h2.body["blocks"].size() == 1);
    CHECK(as_h2.body["blocks"][0]["txs"][0]["payload"]["redacted"] == true);
    CHECK_FALSE(as_h2.body["blocks"][0].contains("record"));
    auto as_h1 = s.api.get("/channels/kcm/chain?from=2", "h1-token");
    CHECK(as_h1.body["blocks"][0]["txs"][0]["payload"]["device"] == "pv");
    CHECK(as_h1.body["blocks"][0].contains("record"));

    CHECK(s.api.get(interval_path(1), "h2-token").body["bids"].empty());
    CHECK(s.api.get(interval_path(1), "op-token").body["bids"].size() == 1);

    REQUIRE(s.api.post(interval_path(1, "/close"), "op-token").status == 200);
    as_h2 = s.api.get("/channels/kcm/chain?from=2&limit=1", "h2-token");
    CHECK(as_h2.body["blocks"][0]["txs"][0]["payload"]["device"] == "pv");
    CHECK(s.api.get(interval_path(1), "h2-token").body["bids"].size() == 1);
  }

  TEST_CASE("feed: join point, gapless delivery and resume") {
    Running s(base_config());
    REQUIRE(s.api.post("/channels/kcm/intervals", "op-token").status == 201);  // events 1-2 before joining

    FeedReader live(s.port, "/channels/kcm/feed", "h3-token", 6);
    const auto joined = live.wait_ready();
    CHECK(joined == 2);
    REQUIRE(s.api.post(interval_path(1, "/bids"), "h1-token", single_step("pv", "sell", 1.0, 0.05)).status == 202);
    REQUIRE(s.api.post(interval_path(1, "/close"), "op-token").status == 200);
    REQUIRE(s.api.post("/channels/kcm/intervals", "op-token").status == 201);
    const auto events = live.wait_events();
    REQUIRE(events.size() >= 6);
    for (std::size_t i = 0; i < events.size(); ++i) CHECK(*events[i].id == joined + 1 + i);
    CHECK(events[0].kind == "BidAccepted");
    CHECK(events[1].kind == "BlockCommitted");
    CHECK(events[2].kind == "IntervalCleared");
    CHECK(events[2].data["result"]["interval"] == 1);
    CHECK(events[4].kind == "IntervalOpened");

    FeedReader resumed(s.port, "/channels/kcm/feed?since=3", "h3-token", 5);
    const auto tail = resumed.wait_events();
    REQUIRE(tail.size() >= 5);
    CHECK(*tail.front().id == 4);
    CHECK(tail.front().kind == events[1].kind);

    FeedReader by_header(s.port, "/channels/kcm/feed", "h3-token", 2, {{"Last-Event-ID", "6"}});
    CHECK(by_header.wait_ready() == 6);
    const auto after_six = by_header.wait_events();
    REQUIRE(after_six.size() >= 2);
    CHECK(*after_six.front().id == 7);
    CHECK(after_six.front().kind == "IntervalOpened");
  }

  TEST_CASE("feed history eviction is reported as a gap") {
    service::Feed feed(3);
    for (int i = 0; i < 5; ++i) feed.publish("BlockCommitted", {{"height", i}});
    bool gap = false;
    auto events = feed.read(0, std::chrono::milliseconds(0), gap);
    CHECK(gap);
    REQUIRE(events.size() == 3);
    CHECK(events.front().seq == 3);
    events = feed.read(2, std::chrono::milliseconds(0), gap);
    CHECK_FALSE(gap);
    CHECK(events.size() == 3);
    events = feed.read(5, std::chrono::milliseconds(10), gap);
    CHECK(events.empty());
    feed.close();
    CHECK(feed.closed());
  }

  TEST_CASE("idempotency keys replay the first answer") {
    Running s(base_config());
    auto first = s.api.post("/channels/kcm/intervals", "op-token", {{"start_s", 0}}, "open-1");
    REQUIRE(first.status == 201);
    const auto height = s.server.channel("kcm").height();
    auto second = s.api.post("/channels/kcm/intervals", "op-token", {{"start_s", 0}}, "open-1");
    CHECK(second.status == 201);
    CHECK(second.text == first.text);
    CHECK(s.server.channel("kcm").height() == height);
    CHECK(s.api.post("/channels/kcm/intervals", "op-token", {{"start_s", 5}}, "open-1").status == 422);

    auto bid = single_step("pv", "sell", 1.0, 0.05);
    auto b1 = s.api.post(interval_path(1, "/bids"), "h1-token", bid, "bid-1");
    auto b2 = s.api.post(interval_path(1, "/bids"), "h1-token", bid, "bid-1");
    CHECK(b1.text == b2.text);
    auto closed = s.api.post(interval_path(1, "/close"), "op-token", json::object(), "close-1");
    REQUIRE(closed.status == 200);
    CHECK(closed.body["result"]["traded"] == false);  // a lone seller has no counterparty
    CHECK(s.api.get(interval_path(1), "op-token").body["bid_count"] == 1);
    CHECK(s.api.post(interval_path(1, "/close"), "op-token", json::object(), "close-1").text == closed.text);
  }

  TEST_CASE("per-token rate cap answers 429 with Retry-After") {
    auto config = base_config();
    config.rate_limit_per_minute = 5;
    Running s(config);
    int limited = 0;
    std::string retry;
    for (int i = 0; i < 8; ++i) {
      auto r = s.api.get("/channels/kcm", "h1-token");
      if (r.status == 429) {
        ++limited;
        for (const auto& [k, v] : r.headers) {
          if (k == "Retry-After") retry = v;
        }
      }
    }
    // A minute boundary can fall inside the loop and reset the window once.
    CHECK(limited >= 1);
    CHECK_FALSE(retry.empty());
    CHECK(s.api.get("/channels/kcm", "h2-token").status == 200);
  }

  TEST_CASE("restart from the persisted chain answers every GET the same") {
    const auto dir = fresh_dir("restart");
    auto config = base_config();
    config.data_dir = dir;
    const std::vector<std::string> paths = {
        "/channels/kcm",          "/channels/kcm/intervals",       interval_path(1),
        interval_path(2),         "/channels/kcm/chain?from=0",    "/channels/kcm/timeseries?series=mcp,cleared,grid_price,h1/meter",
        "/channels",
    };
    std::map<std::string, std::string> before;
    std::vector<SseEvent> feed_before;
    {
      Running s(config);
      for (IntervalId k = 1; k <= 2; ++k) {
        REQUIRE(s.api.post("/channels/kcm/intervals", "op-token", {{"start_s", 900 * k}, {"grid_price", 0.17}}).status == 201);
        REQUIRE(s.api.post(interval_path(k, "/bids"), "h1-token", single_step("pv", "sell", 1.0, kSellLimit)).status == 202);
        REQUIRE(s.api.post(interval_path(k, "/bids"), "h2-token", single_step("ev", "buy", 0.5, kBuyLimit)).status == 202);
        REQUIRE(s.api.post(interval_path(k, "/close"), "op-token").status == 200);
        REQUIRE(s.api.post(interval_path(k, "/measurements"), "h1-token", {{"device", "meter"}, {"power_kw", 1.5}}).status == 202);
      }
      std::this_thread::sleep_for(std::chrono::milliseconds(100));
      for (const auto& p : paths) before[p] = s.api.get(p, "h1-token").text;
      FeedReader r(s.port, "/channels/kcm/feed?since=0", "h1-token", 1000);
      std::this_thread::sleep_for(std::chrono::milliseconds(300));
      feed_before = r.wait_events(std::chrono::milliseconds(0));
    }
    Running again(config);
    for (const auto& p : paths) CHECK_MESSAGE(again.api.get(p, "h1-token").text == before[p], p);
    FeedReader r(again.port, "/channels/kcm/feed?since=0", "h1-token", feed_before.size());
    const auto feed_after = r.wait_events();
    REQUIRE(feed_after.size() == feed_before.size());
    for (std::size_t i = 0; i < feed_after.size(); ++i) {
      CHECK(feed_after[i].id == feed_before[i].id);
      CHECK(feed_after[i].data == feed_before[i].data);
    }
    std::filesystem::remove_all(dir);
  }

  TEST_CASE("timeseries of the field-test emulation shows the alternating steps") {
    const auto dir = fresh_dir("field");
    const auto cfg = sim::load_scenario(std::string(CET_DATA_DIR) + "/scenarios/kcm_field_test.json");
    sim::RunOptions options;
    options.chain_file = dir / (cfg.name + ".chain");
    (void)sim::emulate_field_test(cfg, options);

    double bess_kw = 0.0;
    for (const auto& h : cfg.homes) {
      if (h.bess) bess_kw = h.bess->params.p_max_kw;
    }
    REQUIRE(bess_kw > 0.0);

    auto config = base_config(cfg.name);
    config.data_dir = dir;
    config.channels[0].devices.clear();
    Running s(config);
    auto r = s.api.get("/channels/" + cfg.name + "/timeseries?series=pcc,mcp", "op-token");
    REQUIRE(r.status == 200);
    const auto& pcc = r.body["series"]["pcc"];
    REQUIRE(pcc.size() == 24);
    int sign = 0;
    for (std::size_t i = 1; i < pcc.size(); ++i) {
      const double step = pcc[i]["value"].get<double>() - pcc[i - 1]["value"].get<double>();
      CHECK(std::abs(std::abs(step) - bess_kw) <= 0.01 * bess_kw);
      const int s_now = step > 0 ? 1 : -1;
      CHECK(s_now != sign);
      sign = s_now;
    }
    CHECK(r.body["series"]["mcp"].size() == 24);
    std::filesystem::remove_all(dir);
  }

  TEST_CASE("static assets are served from the configured directory") {
    const auto dir = fresh_dir("static");
    std::ofstream(dir / "index.html") << "<!doctype html><title>dashboard</title>";
    auto config = base_config();
    config.static_dir = dir;
    Running s(config);
    auto r = s.api.raw().Get("/index.html");
    REQUIRE(r);
    CHECK(r->status == 200);
    CHECK(r->body.find("dashboard") != std::string::npos);
    CHECK(s.api.raw().Get("/")->status == 200);
    std::filesystem::remove_all(dir);

    config.static_dir = dir / "missing";
    CHECK_THROWS(service::Server{config});
  }

  TEST_CASE("bid preview covers every device type and rejects unknown ones") {
    Running s(base_config());
    REQUIRE(s.api.post("/channels/kcm/intervals", "op-token", {{"start_s", 12 * 3600}}).status == 201);
    json bess = {{"device_type", "bess"},
                 {"strategy", "selfish"},
                 {"params", {{"p_max_kw", 5.0}, {"capacity_kwh", 13.5}, {"soc_min_kwh", 1.35}, {"eta", 0.9}}},
                 {"state", {{"soc_kwh", 10.0}}}};
    auto r = s.api.post("/channels/kcm/bid-preview", "h1-token", bess);
    REQUIRE(r.status == 200);
    CHECK(r.body["context"]["tou_period"] == "on_peak");
    REQUIRE(r.body["bids"].size() == 1);
    CHECK(r.body["bids"][0]["side"] == "sell");
    CHECK(r.body["bids"][0]["interval"] == 1);

    json st = {{"device_type", "st"}, {"strategy", "selfish"}, {"state", {{"indoor_c", 23.0}}}};
    r = s.api.post("/channels/kcm/bid-preview", "h3-token", st);
    REQUIRE(r.status == 200);
    CHECK(r.body["bids"][0]["side"] == "buy");

    r = s.api.post("/channels/kcm/bid-preview", "h1-token",
                   {{"device_type", "pv"}, {"state", {{"forecast_kwh", 0.4}}}});
    CHECK(r.body["bids"][0]["points"][0]["quantity_wh"] == 400);
    r = s.api.post("/channels/kcm/bid-preview", "h4-token",
                   {{"device_type", "load"}, {"state", {{"net_load_kwh", 0.3}}}});
    CHECK(r.body["bids"][0]["points"][0]["price"].get<double>() == doctest::Approx(0.17));

    CHECK(s.api.post("/channels/kcm/bid-preview", "h1-token", {{"device_type", "kettle"}}).status == 422);
    CHECK(s.api.post("/channels/kcm/bid-preview", "h1-token", {{"device_type", "bess"}}).status == 422);
  }

  TEST_CASE("timed cadence opens and closes intervals on its own") {
    auto config = base_config();
    config.channels[0].cadence = service::Cadence::Timed;
    config.channels[0].interval_seconds = 1;
    Running s(config);
    bool cleared = false;
    for (int i = 0; i < 60 && !cleared; ++i) {
      std::this_thread::sleep_for(std::chrono::milliseconds(100));
      auto list = s.api.get("/channels/kcm/intervals", "op-token").body["intervals"];
      cleared = !list.empty() && list[0]["phase"] == "cleared";
    }
    CHECK(cleared);
  }

  TEST_CASE("config file and environment overrides") {
    const auto dir = fresh_dir("config");
    std::ofstream(dir / "tokens.json") << R"({"t1": "operator", "t2": "h1"})";
    std::ofstream(dir / "service.json") << R"({
      "listen": "0.0.0.0:9100",
      "data_dir": "chains",
      "tokens": "tokens.json",
      "rate_limit_per_minute": 30,
      "batch_window_ms": 50,
      "channels": [{"id": "c", "homes": ["h1", "h2"], "cadence": "timed", "interval_seconds": 60,
                    "price_cap": 0.5,
                    "tou": [{"start": "00:00", "end": "24:00", "period": "off_peak", "price": 0.1}],
                    "devices": {"h1": ["pv"]}}]
    })";
    auto c = service::load_service_config(dir / "service.json");
    CHECK(c.host == "0.0.0.0");
    CHECK(c.port == 9100);
    CHECK(c.data_dir == dir / "chains");
    CHECK(c.tokens.at("t2") == "h1");
    CHECK(c.rate_limit_per_minute == 30);
    CHECK(c.batch_window == std::chrono::milliseconds(50));
    REQUIRE(c.channels.size() == 1);
    CHECK(c.channels[0].cadence == service::Cadence::Timed);
    CHECK(c.channels[0].ledger.price_cap == Price{500});
    CHECK(c.channels[0].tou.price_at(13.0) == doctest::Approx(0.1));
    CHECK(c.channels[0].devices.at("h1") == std::vector<std::string>{"pv"});

    ::setenv("CET_LISTEN", "127.0.0.1:9200", 1);
    ::setenv("CET_DATA_DIR", "/tmp/elsewhere", 1);
    service::apply_env(c);
    ::unsetenv("CET_LISTEN");
    ::unsetenv("CET_DATA_DIR");
    CHECK(c.host == "127.0.0.1");
    CHECK(c.port == 9200);
    CHECK(c.data_dir == "/tmp/elsewhere");

    CHECK_THROWS(service::parse_service_config(json::parse(R"({"channels": [{"id": "c", "homes": ["h1"],
                                                             "cadence": "hourly"}]})"),
                                               dir));
    CHECK_THROWS(service::parse_service_config(json::parse(R"({"listen": "nope"})"), dir));
    CHECK_THROWS(service::parse_service_config(json::parse(R"({"channels": [{"id": "c", "homes": ["h1", "h1"]}]})"), dir));

    const auto shipped = service::load_service_config(std::string(CET_DATA_DIR) + "/service/service.json");
    CHECK(shipped.channels.size() == 2);
    CHECK(shipped.tokens.count("op-token") == 1);
    std::filesystem::remove_all(dir);
  }
}
