#pragma once

#include <cmath>
#include <compare>
#include <cstdint>
#include <limits>
#include <stdexcept>

namespace cet {

// Integer quantity with a unit tag. Market-side energy, price and money are
// kept in these so that clearing, settlement and ledger replay are exact.
template <typename Tag>
class Quantity {
 public:
  using rep = std::int64_t;

  constexpr Quantity() = default;
  constexpr explicit Quantity(rep value) : value_(value) {}

  [[nodiscard]] constexpr rep count() const { return value_; }

  constexpr auto operator<=>(const Quantity&) const = default;

  constexpr Quantity& operator+=(Quantity other) {
    value_ += other.value_;
    return *this;
  }
  constexpr Quantity& operator-=(Quantity other) {
    value_ -= other.value_;
    return *this;
  }
  friend constexpr Quantity operator+(Quantity a, Quantity b) { return a += b; }
  friend constexpr Quantity operator-(Quantity a, Quantity b) { return a -= b; }
  friend constexpr Quantity operator-(Quantity a) { return Quantity{-a.value_}; }
  friend constexpr Quantity operator*(Quantity a, rep k) { return Quantity{a.value_ * k}; }

  static constexpr Quantity zero() { return Quantity{0}; }
  static constexpr Quantity max() { return Quantity{std::numeric_limits<rep>::max()}; }

 private:
  rep value_ = 0;
};

/// Energy in watt-hours.
using Energy = Quantity<struct EnergyTag>;
/// Price in milli-dollars per kWh (0.082 $/kWh == 82).
using Price = Quantity<struct PriceTag>;
/// Money in micro-dollars. Price x Energy lands here exactly.
using Money = Quantity<struct MoneyTag>;

constexpr Money operator*(Price p, Energy e) { return Money{p.count() * e.count()}; }
constexpr Money operator*(Energy e, Price p) { return p * e; }

namespace units {

inline constexpr double kWhPerKwh = 1000.0;
inline constexpr double kMilliPerDollar = 1000.0;
inline constexpr double kMicroPerDollar = 1'000'000.0;

// Guards against representation error when a kWh value that is meant to be a
// whole number of Wh lands a hair below it (e.g. 0.3 * 1000).
inline constexpr double kRoundingSlack = 1e-6;

inline Energy energy_floor(double kwh) {
  if (!std::isfinite(kwh)) throw std::invalid_argument("energy is not finite");
  return Energy{static_cast<Energy::rep>(std::floor(kwh * kWhPerKwh + kRoundingSlack))};
}

inline Energy energy_ceil(double kwh) {
  if (!std::isfinite(kwh)) throw std::invalid_argument("energy is not finite");
  return Energy{static_cast<Energy::rep>(std::ceil(kwh * kWhPerKwh - kRoundingSlack))};
}

inline Energy energy_round(double kwh) {
  if (!std::isfinite(kwh)) throw std::invalid_argument("energy is not finite");
  return Energy{static_cast<Energy::rep>(std::llround(kwh * kWhPerKwh))};
}

inline Price price_round(double dollars_per_kwh) {
  if (!std::isfinite(dollars_per_kwh)) throw std::invalid_argument("price is not finite");
  return Price{static_cast<Price::rep>(std::llround(dollars_per_kwh * kMilliPerDollar))};
}

constexpr double kwh(Energy e) { return static_cast<double>(e.count()) / kWhPerKwh; }
constexpr double dollars_per_kwh(Price p) { return static_cast<double>(p.count()) / kMilliPerDollar; }
constexpr double dollars(Money m) { return static_cast<double>(m.count()) / kMicroPerDollar; }

}  // namespace units
}  // namespace cet
