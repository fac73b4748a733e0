#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace kvq {

// Codes form one little-endian bit stream: code i occupies stream bits
// [i*b, (i+1)*b), and stream bit k lives in byte k/8 at bit position k%8.
// Widths that do not divide 8 (3-bit) straddle byte boundaries unpadded.

constexpr std::size_t packed_size(std::size_t count, unsigned bits) {
  return (count * bits + 7) / 8;
}

std::vector<std::uint8_t> pack_codes(std::span<const std::uint8_t> codes, unsigned bits);
std::vector<std::uint8_t> unpack_codes(std::span<const std::uint8_t> packed, std::size_t count,
                                       unsigned bits);
std::uint8_t unpack_code(std::span<const std::uint8_t> packed, std::size_t index, unsigned bits);

/// Appends `code` as stream element `count` (the current number of codes).
void append_code(std::vector<std::uint8_t>& packed, std::size_t count, std::uint8_t code,
                 unsigned bits);

}  // namespace kvq
