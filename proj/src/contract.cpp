#include "cet/contract.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace cet::ledger {
namespace {

using Rule = ContractError::Rule;

[[noreturn]] void reject(Rule rule, const std::string& what) { throw ContractError(rule, what); }

}  // namespace

std::vector<PeerId> ChannelConfig::members() const {
  std::vector<PeerId> out = homes;
  out.push_back(operator_peer);
  std::sort(out.begin(), out.end());
  return out;
}

bool ChannelConfig::is_home(const PeerId& peer) const {
  return std::find(homes.begin(), homes.end(), peer) != homes.end();
}

bool ChannelConfig::is_member(const PeerId& peer) const { return peer == operator_peer || is_home(peer); }

std::size_t ChannelConfig::effective_quorum() const {
  const std::size_t majority = (homes.size() + 1) / 2 + 1;
  return quorum == 0 ? majority : quorum;
}

void ChannelConfig::validate() const {
  if (id.empty()) throw std::invalid_argument("channel id must not be empty");
  if (operator_peer.empty()) throw std::invalid_argument("operator peer id must not be empty");
  const auto all = members();
  if (std::adjacent_find(all.begin(), all.end()) != all.end()) {
    throw std::invalid_argument("channel members must be unique");
  }
  const std::size_t majority = all.size() / 2 + 1;
  if (quorum != 0 && (quorum < majority || quorum > all.size())) {
    throw std::invalid_argument("quorum must lie between a majority and the member count");
  }
  if (price_cap < Price{0}) throw std::invalid_argument("price cap must be non-negative");
  if (max_block_txs == 0) throw std::invalid_argument("block size must be positive");
}

const char* to_string(Phase phase) {
  switch (phase) {
    case Phase::Open: return "open";
    case Phase::Closed: return "closed";
    case Phase::Cleared: return "cleared";
  }
  return "unknown";
}

const char* to_string(ContractError::Rule rule) {
  switch (rule) {
    case Rule::WrongChannel: return "wrong-channel";
    case Rule::NotMember: return "not-member";
    case Rule::NotOperator: return "not-operator";
    case Rule::NotOwner: return "not-owner";
    case Rule::IntervalAlreadyOpen: return "interval-already-open";
    case Rule::IntervalNotIncreasing: return "interval-not-increasing";
    case Rule::UnknownInterval: return "unknown-interval";
    case Rule::PhaseViolation: return "phase-violation";
    case Rule::MalformedPayload: return "malformed-payload";
    case Rule::DuplicateBid: return "duplicate-bid";
    case Rule::Infeasible: return "infeasible";
    case Rule::ClearingFailed: return "clearing-failed";
  }
  return "unknown";
}

Energy storage_limit(const StorageReading& reading, Side side, double interval_h) {
  const auto range = der::bess_feasible_range(reading.params, reading.soc_kwh, interval_h);
  const double kwh = side == Side::Buy ? std::max(0.0, range.hi_kw) * interval_h
                                       : std::max(0.0, -range.lo_kw) * interval_h;
  return units::energy_floor(kwh);
}

const IntervalRecord* ContractState::find(IntervalId id) const {
  auto it = intervals_.find(id);
  return it == intervals_.end() ? nullptr : &it->second;
}

std::optional<IntervalId> ContractState::last_interval() const {
  if (intervals_.empty()) return std::nullopt;
  return intervals_.rbegin()->first;
}

void ContractState::check_bid(const BidCurve& bid, const PeerId& submitter, const ChannelConfig& config) const {
  if (bid.owner != submitter) reject(Rule::NotOwner, "bids may only be submitted by the owning home");
  if (!config.is_home(bid.owner)) reject(Rule::NotOwner, "bid owner '" + bid.owner + "' is not a home on this channel");
  if (bid.id.empty() || bid.device.empty()) reject(Rule::MalformedPayload, "bid id and device are required");
  if (bid.empty()) reject(Rule::MalformedPayload, "bid curve has no points");
  try {
    bid.validate(config.price_cap);
  } catch (const CurveError& e) {
    reject(Rule::MalformedPayload, e.what());
  }
  const auto* rec = find(bid.interval);
  if (rec == nullptr) reject(Rule::UnknownInterval, "interval " + std::to_string(bid.interval) + " does not exist");
  if (rec->phase != Phase::Open) {
    reject(Rule::PhaseViolation, "interval " + std::to_string(bid.interval) + " is " + to_string(rec->phase));
  }
  if (rec->bids.contains(bid.id)) reject(Rule::DuplicateBid, "bid id '" + bid.id + "' already submitted");
  if (auto it = storage_.find({bid.owner, bid.device}); it != storage_.end()) {
    const double interval_h = static_cast<double>(rec->spec.length_s) / 3600.0;
    const Energy limit = storage_limit(it->second, bid.side, interval_h);
    if (bid.total() > limit) {
      reject(Rule::Infeasible, "bid of " + std::to_string(bid.total().count()) + " Wh exceeds the device's feasible " +
                                   std::to_string(limit.count()) + " Wh");
    }
  }
}

void ContractState::check(const Transaction& tx, const ChannelConfig& config) const {
  if (tx.channel != config.id) reject(Rule::WrongChannel, "transaction belongs to channel '" + tx.channel + "'");
  if (!config.is_member(tx.submitter)) reject(Rule::NotMember, "'" + tx.submitter + "' is not a channel member");
  if (tx.id != transaction_id(tx)) reject(Rule::MalformedPayload, "transaction id does not match its content");

  std::visit(
      [&](const auto& p) {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, OpenInterval>) {
          if (tx.submitter != config.operator_peer) reject(Rule::NotOperator, "only the operator opens intervals");
          if (open_) reject(Rule::IntervalAlreadyOpen, "interval " + std::to_string(*open_) + " is still open");
          if (p.length_s <= 0) reject(Rule::MalformedPayload, "interval length must be positive");
          if (p.grid_price < Price{0}) reject(Rule::MalformedPayload, "grid price must be non-negative");
          if (const auto last = last_interval(); last && p.interval <= *last) {
            reject(Rule::IntervalNotIncreasing, "interval ids must increase");
          }
          if (p.interval == 0) reject(Rule::IntervalNotIncreasing, "interval ids start at 1");
        } else if constexpr (std::is_same_v<T, BidCurve>) {
          check_bid(p, tx.submitter, config);
        } else if constexpr (std::is_same_v<T, Measurement>) {
          if (tx.submitter != p.home && tx.submitter != config.operator_peer) {
            reject(Rule::NotOwner, "measurements may only be submitted by their home or the operator");
          }
          if (p.home.empty() || p.device.empty()) reject(Rule::MalformedPayload, "measurement needs home and device");
          if (!config.is_member(p.home)) reject(Rule::NotMember, "'" + p.home + "' is not a channel member");
          if (!p.power_kw && !p.storage) reject(Rule::MalformedPayload, "measurement carries no reading");
          if (p.power_kw && !std::isfinite(*p.power_kw)) reject(Rule::MalformedPayload, "power is not finite");
          if (p.storage) {
            try {
              p.storage->params.validate();
            } catch (const der::ModelError& e) {
              reject(Rule::MalformedPayload, e.what());
            }
            const auto& s = *p.storage;
            if (!(s.soc_kwh >= s.params.soc_min_kwh - der::kTolerance &&
                  s.soc_kwh <= s.params.soc_max_kwh + der::kTolerance)) {
              reject(Rule::MalformedPayload, "state of charge outside its bounds");
            }
          }
          if (find(p.interval) == nullptr) {
            reject(Rule::UnknownInterval, "interval " + std::to_string(p.interval) + " does not exist");
          }
        } else {
          if (tx.submitter != config.operator_peer) reject(Rule::NotOperator, "only the operator closes intervals");
          const auto* rec = find(p.interval);
          if (rec == nullptr) reject(Rule::UnknownInterval, "interval " + std::to_string(p.interval) + " does not exist");
          if (rec->phase != Phase::Open) {
            reject(Rule::PhaseViolation, "interval " + std::to_string(p.interval) + " is already " + to_string(rec->phase));
          }
        }
      },
      tx.payload);
}

void ContractState::apply(const Transaction& tx, const ChannelConfig& config) {
  check(tx, config);
  std::visit(
      [&](const auto& p) {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, OpenInterval>) {
          IntervalRecord rec;
          rec.spec = p;
          intervals_.emplace(p.interval, std::move(rec));
          open_ = p.interval;
        } else if constexpr (std::is_same_v<T, BidCurve>) {
          intervals_.at(p.interval).bids.emplace(p.id, p);
        } else if constexpr (std::is_same_v<T, Measurement>) {
          intervals_.at(p.interval).measurements.push_back(p);
          if (p.storage) storage_[{p.home, p.device}] = *p.storage;
        } else {
          auto& rec = intervals_.at(p.interval);
          std::vector<BidCurve> bids;
          bids.reserve(rec.bids.size());
          for (const auto& [id, bid] : rec.bids) bids.push_back(bid);

          const double interval_h = static_cast<double>(rec.spec.length_s) / 3600.0;
          auction::Envelope envelope = [&](const std::string& home,
                                           const std::string& device) -> std::optional<der::PowerRange> {
            auto it = storage_.find({home, device});
            if (it == storage_.end()) return std::nullopt;
            return der::bess_feasible_range(it->second.params, it->second.soc_kwh, interval_h);
          };
          auction::ClearingResult result;
          try {
            result = auction::run_market(bids, p.interval, rec.spec.length_s, rec.spec.grid_price, envelope);
          } catch (const std::exception& e) {
            reject(Rule::ClearingFailed, e.what());
          }
          rec.phase = Phase::Closed;
          rec.result = std::move(result);
          rec.phase = Phase::Cleared;
          open_.reset();
        }
      },
      tx.payload);
}

Bytes ContractState::encode() const {
  Encoder e;
  e.size(intervals_.size());
  for (const auto& [id, rec] : intervals_) {
    e.u64(id);
    ledger::encode(e, Payload{rec.spec});
    e.u8(static_cast<std::uint8_t>(rec.phase));
    e.size(rec.bids.size());
    for (const auto& [bid_id, bid] : rec.bids) ledger::encode(e, bid);
    e.size(rec.measurements.size());
    for (const auto& m : rec.measurements) ledger::encode(e, m);
    e.boolean(rec.result.has_value());
    if (rec.result) ledger::encode(e, *rec.result);
  }
  e.boolean(open_.has_value());
  if (open_) e.u64(*open_);
  e.size(storage_.size());
  for (const auto& [key, reading] : storage_) {
    e.str(key.first);
    e.str(key.second);
    ledger::encode(e, reading.params);
    e.f64(reading.soc_kwh);
  }
  return e.take();
}

}  // namespace cet::ledger
