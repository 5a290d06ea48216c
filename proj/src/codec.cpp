#include "cet/codec.hpp"

#include <bit>
#include <limits>

namespace cet {

void Encoder::u32(std::uint32_t v) {
  for (int shift = 24; shift >= 0; shift -= 8) out_.push_back(static_cast<std::uint8_t>(v >> shift));
}

void Encoder::u64(std::uint64_t v) {
  for (int shift = 56; shift >= 0; shift -= 8) out_.push_back(static_cast<std::uint8_t>(v >> shift));
}

void Encoder::f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

void Encoder::size(std::size_t n) {
  if (n > std::numeric_limits<std::uint32_t>::max()) throw std::length_error("sequence too long to encode");
  u32(static_cast<std::uint32_t>(n));
}

void Encoder::str(const std::string& s) {
  size(s.size());
  out_.insert(out_.end(), s.begin(), s.end());
}

void Decoder::need(std::size_t n) const {
  if (remaining() < n) throw DecodeError("truncated input at byte " + std::to_string(pos_));
}

std::uint8_t Decoder::u8() {
  need(1);
  return in_[pos_++];
}

std::uint32_t Decoder::u32() {
  need(4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v = (v << 8) | in_[pos_++];
  return v;
}

std::uint64_t Decoder::u64() {
  need(8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v = (v << 8) | in_[pos_++];
  return v;
}

double Decoder::f64() { return std::bit_cast<double>(u64()); }

bool Decoder::boolean() {
  const auto v = u8();
  if (v > 1) throw DecodeError("invalid boolean byte at " + std::to_string(pos_ - 1));
  return v == 1;
}

std::string Decoder::str() {
  const auto n = size();
  const auto bytes = raw(n);
  return {bytes.begin(), bytes.end()};
}

std::span<const std::uint8_t> Decoder::raw(std::size_t n) {
  need(n);
  auto out = in_.subspan(pos_, n);
  pos_ += n;
  return out;
}

std::size_t Decoder::size(std::size_t min_element_bytes) {
  const std::size_t n = u32();
  if (min_element_bytes > 0 && n > remaining() / min_element_bytes) {
    throw DecodeError("sequence length " + std::to_string(n) + " exceeds input");
  }
  return n;
}

void Decoder::expect_end() const {
  if (remaining() != 0) throw DecodeError(std::to_string(remaining()) + " trailing bytes");
}

}  // namespace cet
