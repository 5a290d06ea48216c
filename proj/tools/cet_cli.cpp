#include <csignal>
#include <chrono>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "cet/api_json.hpp"
#include "cet/channel.hpp"
#include "cet/service.hpp"
#include "cet/sim.hpp"

namespace {

using namespace cet;

int simulate(const std::string& scenario, const std::string& out_dir, const std::string& chain) {
  const auto cfg = sim::load_scenario(scenario);
  sim::RunOptions options;
  if (!chain.empty()) options.chain_file = chain;
  const auto m = sim::run_scenario(cfg, options);
  if (!out_dir.empty()) sim::write_series_csv(m, out_dir);
  std::cout << sim::metrics_json(m) << '\n';
  return m.ev_violations == 0 ? 0 : 3;
}

int sweep(const std::string& scenario, std::optional<std::size_t> k_max) {
  const auto cfg = sim::load_scenario(scenario);
  const auto t0 = std::chrono::steady_clock::now();
  const auto points = k_max ? sim::sweep_helpful_bess(cfg, *k_max) : sim::sweep_helpful_bess(cfg);
  const std::chrono::duration<double> took = std::chrono::steady_clock::now() - t0;
  std::cout << sim::sweep_csv(points);
  std::cerr << "sweep took " << took.count() << " s\n";
  return 0;
}

int rebound(const std::string& scenario, std::size_t helpful, std::size_t selfish) {
  const auto cfg = sim::load_scenario(scenario);
  const auto r = sim::rebound_analysis(cfg, helpful, selfish);
  std::cout << "helpful,selfish,primary_peak_kw,secondary_peak_kw,ev_violations\n"
            << r.helpful << ',' << r.selfish << ',' << r.primary_peak_kw << ',' << r.secondary_peak_kw << ','
            << r.ev_violations << '\n';
  return 0;
}

int field_test(const std::string& scenario, const std::string& out_dir) {
  const auto cfg = sim::load_scenario(scenario);
  const auto m = sim::emulate_field_test(cfg);
  if (!out_dir.empty()) sim::write_series_csv(m, out_dir);
  std::cout << "time_h,pcc_kw,step_kw\n";
  for (std::size_t i = 0; i < m.series.size(); ++i) {
    std::cout << m.series[i].time_h << ',' << m.series[i].pcc_kw << ',';
    if (i > 0) std::cout << m.series[i].pcc_kw - m.series[i - 1].pcc_kw;
    std::cout << '\n';
  }
  return 0;
}

std::vector<ledger::Block> load_blocks(const std::string& chain) {
  const ledger::ChainStore store(chain);
  std::vector<ledger::Block> blocks;
  for (const auto& record : store.load()) blocks.push_back(ledger::decode_block_record(record));
  return blocks;
}

int verify(const std::string& chain) {
  const ledger::ChainStore store(chain);
  std::vector<Bytes> records;
  ledger::VerifyResult r;
  try {
    records = store.load();
    r = ledger::verify_records(records, store.trusted_tip());
  } catch (const ledger::ChainCorrupt& e) {
    r.ok = false;
    r.first_bad_height = e.height();
    r.reason = e.what();
  }
  api::json out = {{"ok", r.ok}, {"blocks", records.size()}};
  if (!r.ok) {
    out["first_bad_height"] = r.first_bad_height;
    out["reason"] = r.reason;
  }
  std::cout << out.dump(2) << '\n';
  return r.ok ? 0 : 2;
}

int replay(const std::string& chain, const std::string& scenario, std::vector<std::string> homes, std::string channel) {
  const auto blocks = load_blocks(chain);
  if (!scenario.empty()) {
    const auto cfg = sim::load_scenario(scenario);
    homes.clear();
    for (const auto& h : cfg.homes) homes.push_back(h.id);
    if (channel.empty()) channel = cfg.name;
  }
  if (homes.empty()) throw std::runtime_error("replay needs --scenario or --homes");
  if (channel.empty()) {
    for (const auto& b : blocks) {
      if (!b.txs.empty()) {
        channel = b.txs.front().channel;
        break;
      }
    }
  }
  ledger::ChannelConfig config;
  config.id = channel;
  config.homes = homes;
  const auto verdict = ledger::verify_chain(blocks, ledger::ChainStore(chain).trusted_tip());
  if (!verdict.ok) {
    std::cerr << "chain fails verification at height " << verdict.first_bad_height << ": " << verdict.reason << '\n';
    return 2;
  }
  const auto state = ledger::replay(blocks, config);
  std::size_t cleared = 0;
  for (const auto& [id, r] : state.intervals()) cleared += r.phase == ledger::Phase::Cleared;
  api::json out = {{"channel", channel},
                   {"height", blocks.empty() ? 0 : blocks.back().height},
                   {"tip_hash", blocks.empty() ? "" : to_hex(blocks.back().hash)},
                   {"intervals", state.intervals().size()},
                   {"cleared", cleared},
                   {"state_digest", to_hex(state.digest())}};
  std::cout << out.dump(2) << '\n';
  return 0;
}

// Input: {"interval": n, "interval_seconds": s, "grid_price": $/kWh (optional),
// "bids": [{owner, device, side, points}]}.
int clear(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  const auto j = api::json::parse(in);
  const IntervalId interval = j.value("interval", IntervalId{1});
  std::vector<BidCurve> bids;
  for (const auto& b : j.at("bids")) {
    if (!b.contains("owner")) throw api::SchemaError("every bid needs an owner");
    auto bid = api::bid_from_json(b, b.at("owner").get<std::string>(), interval);
    bid.validate(units::price_round(j.value("price_cap", 1.0)));
    bids.push_back(std::move(bid));
  }
  std::optional<Price> grid;
  if (j.contains("grid_price")) grid = units::price_round(j.at("grid_price").get<double>());
  const auto result = auction::run_market(bids, interval, j.value("interval_seconds", std::int64_t{300}), grid);
  std::cout << api::to_json(result).dump(2) << '\n';
  return 0;
}

int serve(const std::string& config_path) {
  auto config = config_path.empty() ? service::ServiceConfig{} : service::load_service_config(config_path);
  service::apply_env(config);
  config.log = &std::clog;
  if (config.channels.empty()) throw std::runtime_error("service config defines no channels");

  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);  // before any thread starts

  service::Server server(std::move(config));
  const int port = server.start();
  std::cout << "listening on port " << port << std::endl;
  int sig = 0;
  sigwait(&signals, &sig);
  server.stop();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Community energy trading: simulator, ledger tools and market service"};
  app.require_subcommand(1);
  int rc = 0;

  std::string scenario;
  std::string out_dir;
  std::string chain;
  auto* sim_cmd = app.add_subcommand("simulate", "Run a scenario and print its metrics as JSON");
  sim_cmd->add_option("scenario", scenario, "Scenario JSON")->required()->check(CLI::ExistingFile);
  sim_cmd->add_option("-o,--out", out_dir, "Directory for series.csv, homes.csv and traces.csv");
  sim_cmd->add_option("--chain", chain, "Persist the ledger to this file");
  sim_cmd->callback([&] { rc = simulate(scenario, out_dir, chain); });

  std::optional<std::size_t> k_max;
  auto* sweep_cmd = app.add_subcommand("sweep", "Peak and cost for k = 0..N helpful BESS");
  sweep_cmd->add_option("scenario", scenario, "Scenario JSON")->required()->check(CLI::ExistingFile);
  sweep_cmd->add_option("--k-max", k_max, "Stop the sweep at this k");
  sweep_cmd->callback([&] { rc = sweep(scenario, k_max); });

  std::size_t helpful = 0;
  std::size_t selfish = 0;
  auto* rebound_cmd = app.add_subcommand("rebound", "Primary and overnight peak for an EV strategy mix");
  rebound_cmd->add_option("scenario", scenario, "Scenario JSON")->required()->check(CLI::ExistingFile);
  rebound_cmd->add_option("--helpful", helpful, "Helpful EVs")->required();
  rebound_cmd->add_option("--selfish", selfish, "Selfish EVs")->required();
  rebound_cmd->callback([&] { rc = rebound(scenario, helpful, selfish); });

  auto* field_cmd = app.add_subcommand("field-test", "Emulate the single-BESS field test and print PCC steps");
  field_cmd->add_option("scenario", scenario, "Scenario JSON")->required()->check(CLI::ExistingFile);
  field_cmd->add_option("-o,--out", out_dir, "Directory for CSV output");
  field_cmd->callback([&] { rc = field_test(scenario, out_dir); });

  auto* verify_cmd = app.add_subcommand("verify", "Check every hash and link of a persisted chain");
  verify_cmd->add_option("chain", chain, "Chain file")->required()->check(CLI::ExistingFile);
  verify_cmd->callback([&] { rc = verify(chain); });

  std::vector<std::string> homes;
  std::string channel;
  auto* replay_cmd = app.add_subcommand("replay", "Replay a chain through the contract and print the state digest");
  replay_cmd->add_option("chain", chain, "Chain file")->required()->check(CLI::ExistingFile);
  auto* replay_scenario = replay_cmd->add_option("--scenario", scenario, "Scenario that produced the chain");
  replay_cmd->add_option("--homes", homes, "Channel homes")->delimiter(',')->excludes(replay_scenario);
  replay_cmd->add_option("--channel", channel, "Channel id (default: taken from the chain)");
  replay_cmd->callback([&] { rc = replay(chain, scenario, homes, channel); });

  std::string bids_file;
  auto* clear_cmd = app.add_subcommand("clear", "Clear one interval from a JSON bid file");
  clear_cmd->add_option("bids", bids_file, "Bid file")->required()->check(CLI::ExistingFile);
  clear_cmd->callback([&] { rc = clear(bids_file); });

  std::string config_file;
  auto* serve_cmd = app.add_subcommand("serve", "Run the HTTP market service");
  serve_cmd->add_option("-c,--config", config_file, "Service config JSON")->check(CLI::ExistingFile);
  serve_cmd->callback([&] { rc = serve(config_file); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return rc;
}
