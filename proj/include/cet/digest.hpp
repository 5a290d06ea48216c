#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>

namespace cet {

/// SHA-256 output.
using Digest = std::array<std::uint8_t, 32>;

Digest sha256(std::span<const std::uint8_t> data);

std::string to_hex(const Digest& d);
/// Throws std::invalid_argument unless `hex` is 64 hex characters.
Digest digest_from_hex(const std::string& hex);

}  // namespace cet
