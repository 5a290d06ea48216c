#include "cet/sim.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <random>

#include "cet/channel.hpp"

namespace cet::sim {
namespace {

using bidding::Strategy;
using ledger::Channel;

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
// Departure SoC slack, absorbs float accumulation over a stay.
constexpr double kDepartureSlack = der::kTolerance;
// Temperature excursion tolerated beyond the deadband before it is counted.
constexpr double kComfortSlackC = 1.0;

struct EvSession {
  bool present = false;
  der::EvParams params;  // t_arr_h / t_dep_h are absolute for the current stay
  double soc_kwh = 0.0;
  double next_arrival_h = 0.0;
};

struct HomeRun {
  const HomeConfig* cfg = nullptr;
  double bess_soc = 0.0;
  EvSession ev;
  double st_temp = 0.0;
  HomeMetrics metrics;
  std::size_t trace_bess = 0;
  std::size_t trace_ev = 0;
  std::size_t trace_st = 0;
  std::size_t trace_power = 0;
};

bool in_night(double hod, double start, double end) {
  return start <= end ? (hod >= start && hod < end) : (hod >= start || hod < end);
}

double snap(double hours, double interval_h) { return std::round(hours / interval_h) * interval_h; }

// Arrival for the session starting on `day`, with optional jitter.
double arrival_time(const EvConfig& ev, int day, double interval_h, std::mt19937_64& rng) {
  double t = 24.0 * day + ev.arrival_h;
  if (ev.jitter_minutes > 0.0) {
    std::uniform_real_distribution<double> jitter(-ev.jitter_minutes, ev.jitter_minutes);
    t += jitter(rng) / 60.0;
  }
  return std::max(0.0, snap(t, interval_h));
}

double departure_after(const EvConfig& ev, double arrival_abs_h, double interval_h) {
  const double day_start = 24.0 * std::floor((arrival_abs_h + 1e-9) / 24.0);
  double dep = day_start + ev.departure_h;
  while (dep <= arrival_abs_h + 1e-9) dep += 24.0;
  return snap(dep, interval_h);
}

ledger::Transaction tx(const Channel& ch, const ledger::PeerId& who, ledger::Payload payload) {
  return ledger::make_transaction(ch.config().id, who, std::move(payload));
}

void submit(Channel& ch, const ledger::PeerId& who, ledger::Payload payload) {
  const auto r = ch.submit(tx(ch, who, std::move(payload)));
  if (!r.accepted()) {
    throw std::runtime_error(std::string("ledger refused a simulator transaction (") + ledger::to_string(r.status) +
                             "): " + r.reason);
  }
}

void commit(Channel& ch) {
  const auto report = ch.commit_block();
  if (report && !report->dropped.empty()) {
    throw std::runtime_error("ledger dropped a simulator transaction at commit: " + report->dropped.front().reason);
  }
}

}  // namespace

ScenarioMetrics run_scenario(const ScenarioConfig& cfg, const RunOptions& options) {
  cfg.validate();
  ScenarioMetrics out;
  out.scenario = cfg.name;
  out.interval_h = cfg.interval_h;
  if (cfg.homes.empty()) return out;

  const double dt = cfg.interval_h;
  const std::size_t n = cfg.interval_count();
  const std::int64_t interval_s = cfg.interval_seconds();

  ledger::ChannelConfig channel_cfg;
  channel_cfg.id = cfg.name;
  channel_cfg.operator_peer = "operator";
  for (const auto& h : cfg.homes) channel_cfg.homes.push_back(h.id);
  std::optional<Channel> channel;
  if (options.chain_file) {
    std::filesystem::remove(*options.chain_file);
    auto tip = *options.chain_file;
    tip += ".tip";
    std::filesystem::remove(tip);
    channel.emplace(channel_cfg, *options.chain_file);
  } else {
    channel.emplace(channel_cfg);
  }
  Channel& ch = *channel;

  std::mt19937_64 rng(cfg.seed);
  std::vector<HomeRun> homes(cfg.homes.size());
  auto add_trace = [&](const std::string& home, const std::string& device, const std::string& quantity) {
    out.traces.push_back({home, device, quantity, std::vector<double>(n, kNaN)});
    return out.traces.size() - 1;
  };
  for (std::size_t i = 0; i < homes.size(); ++i) {
    auto& h = homes[i];
    h.cfg = &cfg.homes[i];
    h.metrics.id = h.cfg->id;
    h.trace_power = add_trace(h.cfg->id, "meter", "power_kw");
    if (h.cfg->bess) {
      h.bess_soc = h.cfg->bess->soc0_kwh;
      h.trace_bess = add_trace(h.cfg->id, h.cfg->bess->id, "soc_kwh");
    }
    if (h.cfg->ev) {
      h.ev.next_arrival_h = arrival_time(*h.cfg->ev, 0, dt, rng);
      h.trace_ev = add_trace(h.cfg->id, h.cfg->ev->id, "soc_kwh");
    }
    if (h.cfg->st) {
      h.st_temp = h.cfg->st->initial_c;
      h.trace_st = add_trace(h.cfg->id, h.cfg->st->id, "temperature_c");
    }
  }

  const bool have_weather = !cfg.weather.irradiance.values.empty();
  out.series.reserve(n);

  for (std::size_t k = 0; k < n; ++k) {
    const double t = static_cast<double>(k) * dt;
    const IntervalId id = k + 1;
    const double hod = std::fmod(t, 24.0);
    const auto& window = cfg.tou.at(t);
    const double price = window.price;
    const der::WeatherSample weather = have_weather
                                           ? der::WeatherSample{cfg.weather.irradiance.values[k],
                                                                cfg.weather.temperature_c.values[k]}
                                           : der::WeatherSample{0.0, 25.0};

    // EV plug events at the interval boundary.
    for (auto& h : homes) {
      if (!h.cfg->ev) continue;
      const auto& ev = *h.cfg->ev;
      if (h.ev.present && t >= h.ev.params.t_dep_h - 1e-9) {
        ++out.ev_departures;
        if (!der::ev_departure_ok(h.ev.params, h.ev.soc_kwh + kDepartureSlack)) ++out.ev_violations;
        h.ev.present = false;
        const int day = static_cast<int>(std::floor(h.ev.params.t_arr_h / 24.0 + 1e-9)) + 1;
        h.ev.next_arrival_h = std::max(arrival_time(ev, day, dt, rng), h.ev.params.t_dep_h + dt);
      }
      if (!h.ev.present && t >= h.ev.next_arrival_h - 1e-9) {
        h.ev.present = true;
        h.ev.soc_kwh = ev.soc_arrival_kwh;
        h.ev.params.storage = ev.storage;
        h.ev.params.soc_req_kwh = ev.soc_req_kwh;
        h.ev.params.t_arr_h = t;
        h.ev.params.t_dep_h = departure_after(ev, t, dt);
      }
    }

    submit(ch, "operator", ledger::OpenInterval{id, static_cast<std::int64_t>(k) * interval_s, interval_s,
                                                units::price_round(price)});
    commit(ch);

    bool readings = false;
    for (const auto& h : homes) {
      if (h.cfg->bess) {
        submit(ch, h.cfg->id,
               ledger::Measurement{id, h.cfg->id, h.cfg->bess->id, std::nullopt,
                                   ledger::StorageReading{h.cfg->bess->params, h.bess_soc}});
        readings = true;
      }
      if (h.cfg->ev && h.ev.present) {
        submit(ch, h.cfg->id,
               ledger::Measurement{id, h.cfg->id, h.cfg->ev->id, std::nullopt,
                                   ledger::StorageReading{h.ev.params.storage, h.ev.soc_kwh}});
        readings = true;
      }
    }
    if (readings) commit(ch);

    std::vector<double> load(homes.size());
    std::vector<double> pv(homes.size());
    std::vector<double> excess(homes.size());
    for (std::size_t i = 0; i < homes.size(); ++i) {
      auto& h = homes[i];
      const auto& home = *h.cfg;
      load[i] = home.load_kw.values[k];
      pv[i] = home.pv ? der::pv_power(home.pv->params, weather) : 0.0;
      excess[i] = std::max(0.0, pv[i] - load[i]) * dt;

      bidding::LocalContext ctx;
      ctx.excess_pv_kwh = excess[i];
      ctx.net_load_kwh = std::max(0.0, load[i] - pv[i]) * dt;
      ctx.tou_period = window.period;
      ctx.tou_price = price;
      ctx.price_cap = cfg.price_cap;
      ctx.pv_floor_price = cfg.pv_floor_price;

      std::vector<BidCurve> bids;
      bids.push_back(bidding::load_bid(ctx.net_load_kwh, price, {home.id, "load", id}));
      if (home.pv) bids.push_back(bidding::pv_offer(excess[i], cfg.pv_floor_price, {home.id, home.pv->id, id}));
      if (home.st) {
        bids.push_back(bidding::st_bid_curve(home.st->strategy, home.st->params, h.st_temp, ctx, dt,
                                             {home.id, home.st->id, id}));
      }
      if (home.ev && h.ev.present) {
        bids.push_back(bidding::ev_bid_curve(home.ev->strategy, h.ev.params, h.ev.soc_kwh, t, dt, ctx,
                                             {home.id, home.ev->id, id}));
      }
      if (home.bess) {
        const auto& b = *home.bess;
        const bidding::BidTag tag{home.id, b.id, id};
        if (b.policy == BessPolicy::Toggle) {
          if (k % 2 == 0) {
            const Energy full =
                ledger::storage_limit(ledger::StorageReading{b.params, h.bess_soc}, Side::Buy, dt);
            BidCurve on;
            on.id = default_bid_id(home.id, b.id, id, Side::Buy);
            on.side = Side::Buy;
            on.owner = home.id;
            on.device = b.id;
            on.interval = id;
            if (full > Energy{0}) on.points.push_back({full, units::price_round(cfg.price_cap)});
            bids.push_back(on);
          }
        } else {
          const auto strategy = b.policy == BessPolicy::Helpful ? Strategy::Helpful : Strategy::Selfish;
          for (auto& bid : bidding::bess_bids(strategy, b.params, h.bess_soc, ctx, cfg.tou, dt, tag)) {
            bids.push_back(std::move(bid));
          }
        }
      }
      for (auto& bid : bids) {
        if (!bid.empty()) submit(ch, home.id, std::move(bid));
      }
    }
    commit(ch);

    submit(ch, "operator", ledger::CloseInterval{id});
    commit(ch);
    const auto result = ch.read([&](const ledger::ContractState& s) { return *s.find(id)->result; });

    std::map<std::pair<std::string, std::string>, std::int64_t> setpoint_w;
    for (const auto& s : result.signals) setpoint_w[{s.home, s.device}] = s.setpoint_w;
    std::map<std::string, double> bought;
    std::map<std::string, double> sold;
    std::map<std::pair<std::string, std::string>, double> sold_by_device;
    for (const auto& a : result.awards) {
      const double kwh = units::kwh(a.quantity);
      if (a.bid.side == Side::Buy) {
        bought[a.bid.home] += kwh;
      } else {
        sold[a.bid.home] += kwh;
        sold_by_device[{a.bid.home, a.bid.device}] += kwh;
      }
    }
    std::map<std::string, double> settlement;
    for (const auto& s : result.settlements) settlement[s.home] += units::dollars(s.amount);
    auto power_of = [&](const std::string& home, const std::string& device) {
      auto it = setpoint_w.find({home, device});
      return it == setpoint_w.end() ? 0.0 : static_cast<double>(it->second) / 1000.0;
    };

    double pcc_kw = 0.0;
    double residual_total = 0.0;
    double balance_total = 0.0;
    for (std::size_t i = 0; i < homes.size(); ++i) {
      auto& h = homes[i];
      const auto& home = *h.cfg;
      double consumption = load[i] * dt;
      double production = std::min(pv[i], load[i]) * dt;

      if (home.pv) {
        const double pv_sold = sold_by_device[{home.id, home.pv->id}];
        production += pv_sold;
        h.metrics.curtailed_pv_kwh += std::max(0.0, excess[i] - pv_sold);
      }
      if (home.bess) {
        const double p = power_of(home.id, home.bess->id);
        h.bess_soc = der::bess_step(home.bess->params, h.bess_soc, p, dt);
        if (h.bess_soc < home.bess->params.soc_min_kwh - der::kTolerance ||
            h.bess_soc > home.bess->params.soc_max_kwh + der::kTolerance) {
          ++out.bound_violations;
        }
        consumption += std::max(0.0, p) * dt;
        production += std::max(0.0, -p) * dt;
        out.traces[h.trace_bess].values[k] = h.bess_soc;
      }
      if (home.ev && h.ev.present) {
        const double p = power_of(home.id, home.ev->id);
        h.ev.soc_kwh = der::bess_step(h.ev.params.storage, h.ev.soc_kwh, p, dt);
        consumption += p * dt;
        out.traces[h.trace_ev].values[k] = h.ev.soc_kwh;
      }
      if (home.st) {
        const auto& st = home.st->params;
        const double duty = std::clamp(power_of(home.id, home.st->id) / st.hvac_kw, 0.0, 1.0);
        h.st_temp = der::st_step_duty(st, h.st_temp, weather.temperature_c, duty, dt);
        consumption += duty * st.hvac_kw * dt;
        if (std::abs(h.st_temp - st.setpoint_c) > st.deadband_c + kComfortSlackC) ++out.bound_violations;
        out.traces[h.trace_st].values[k] = h.st_temp;
      }

      const double net = consumption - production;
      const double residual = net - bought[home.id] + sold[home.id];
      h.metrics.grid_import_kwh += residual;
      h.metrics.bought_kwh += bought[home.id];
      h.metrics.sold_kwh += sold[home.id];
      h.metrics.settlement += settlement[home.id];
      h.metrics.cost += -settlement[home.id] + price * residual;
      pcc_kw += net / dt;
      residual_total += residual;
      balance_total += net;
      out.traces[h.trace_power].values[k] = net / dt;
    }
    out.max_conservation_error_kwh = std::max(out.max_conservation_error_kwh, std::abs(residual_total - balance_total));

    for (const auto& h : homes) {
      submit(ch, h.cfg->id,
             ledger::Measurement{id, h.cfg->id, "meter", out.traces[h.trace_power].values[k], std::nullopt});
    }
    submit(ch, "operator", ledger::Measurement{id, "operator", "pcc", pcc_kw, std::nullopt});
    commit(ch);

    Sample sample;
    sample.time_h = t;
    sample.pcc_kw = pcc_kw;
    if (result.mcp) sample.mcp = units::dollars_per_kwh(*result.mcp);
    sample.cleared_kwh = units::kwh(result.cleared);
    sample.grid_price = price;
    out.series.push_back(sample);

    if (pcc_kw > out.peak_kw || k == 0) {
      out.peak_kw = pcc_kw;
      out.peak_time_h = t;
    }
    if (in_night(hod, cfg.night_start_h, cfg.night_end_h)) {
      out.secondary_peak_kw = std::max(out.secondary_peak_kw, pcc_kw);
    }
  }

  for (auto& h : homes) {
    out.community_cost += h.metrics.cost;
    out.curtailed_pv_kwh += h.metrics.curtailed_pv_kwh;
    out.homes.push_back(h.metrics);
  }
  out.blocks = ch.height();
  out.state_digest = ch.state().digest();
  out.tip_hash = ch.tip_hash();
  return out;
}

ScenarioConfig with_helpful_bess(const ScenarioConfig& cfg, std::size_t k) {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < cfg.homes.size(); ++i) {
    if (cfg.homes[i].bess) idx.push_back(i);
  }
  if (k > idx.size()) {
    throw ScenarioError("asked for " + std::to_string(k) + " helpful BESS but only " + std::to_string(idx.size()) +
                        " homes have one");
  }
  std::sort(idx.begin(), idx.end(), [&](auto a, auto b) { return cfg.homes[a].id < cfg.homes[b].id; });
  auto out = cfg;
  for (std::size_t r = 0; r < idx.size(); ++r) {
    out.homes[idx[r]].bess->policy = r < k ? BessPolicy::Helpful : BessPolicy::Selfish;
  }
  return out;
}

std::vector<SweepPoint> sweep_helpful_bess(const ScenarioConfig& cfg, std::size_t k_max) {
  std::vector<SweepPoint> out;
  for (std::size_t k = 0; k <= k_max; ++k) {
    const auto m = run_scenario(with_helpful_bess(cfg, k));
    out.push_back({k, m.peak_kw, m.community_cost, m.ev_violations});
  }
  return out;
}

std::vector<SweepPoint> sweep_helpful_bess(const ScenarioConfig& cfg) {
  const auto n = static_cast<std::size_t>(
      std::count_if(cfg.homes.begin(), cfg.homes.end(), [](const HomeConfig& h) { return h.bess.has_value(); }));
  return sweep_helpful_bess(cfg, n);
}

ScenarioConfig with_ev_mix(const ScenarioConfig& cfg, std::size_t helpful, std::size_t selfish) {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < cfg.homes.size(); ++i) {
    if (cfg.homes[i].ev) idx.push_back(i);
  }
  if (helpful + selfish != idx.size()) {
    throw ScenarioError("EV mix " + std::to_string(helpful) + "H/" + std::to_string(selfish) + "S does not match " +
                        std::to_string(idx.size()) + " EVs");
  }
  std::sort(idx.begin(), idx.end(), [&](auto a, auto b) { return cfg.homes[a].id < cfg.homes[b].id; });
  auto out = cfg;
  for (std::size_t r = 0; r < idx.size(); ++r) {
    out.homes[idx[r]].ev->strategy = r < helpful ? Strategy::Helpful : Strategy::Selfish;
  }
  return out;
}

ReboundResult rebound_analysis(const ScenarioConfig& cfg, std::size_t helpful, std::size_t selfish) {
  const auto m = run_scenario(with_ev_mix(cfg, helpful, selfish));
  return {helpful, selfish, m.peak_kw, m.secondary_peak_kw, m.ev_violations};
}

ScenarioMetrics emulate_field_test(const ScenarioConfig& cfg, const RunOptions& options) {
  const auto toggles = std::count_if(cfg.homes.begin(), cfg.homes.end(), [](const HomeConfig& h) {
    return h.bess && h.bess->policy == BessPolicy::Toggle;
  });
  if (toggles != 1) throw ScenarioError("field-test emulation needs exactly one BESS with the toggle policy");
  return run_scenario(cfg, options);
}

std::vector<double> pcc_steps(const ScenarioMetrics& metrics) {
  std::vector<double> out;
  for (std::size_t i = 1; i < metrics.series.size(); ++i) {
    out.push_back(metrics.series[i].pcc_kw - metrics.series[i - 1].pcc_kw);
  }
  return out;
}

}  // namespace cet::sim
