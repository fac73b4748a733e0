#include "kvq/bitpack.hpp"

#include <string>

#include "kvq/errors.hpp"

namespace kvq {
namespace {

void check_width(unsigned bits) {
  if (bits < 1 || bits > 8) {
    throw PreconditionError("code width must be 1..8 bits, got " + std::to_string(bits));
  }
}

void write_bits(std::vector<std::uint8_t>& out, std::size_t bit_pos, std::uint8_t code,
                unsigned bits) {
  for (unsigned k = 0; k < bits; ++k, ++bit_pos) {
    if ((code >> k) & 1u) out[bit_pos / 8] |= static_cast<std::uint8_t>(1u << (bit_pos % 8));
  }
}

}  // namespace

std::vector<std::uint8_t> pack_codes(std::span<const std::uint8_t> codes, unsigned bits) {
  check_width(bits);
  std::vector<std::uint8_t> out(packed_size(codes.size(), bits), 0);
  const unsigned limit = 1u << bits;
  for (std::size_t i = 0; i < codes.size(); ++i) {
    if (codes[i] >= limit) {
      throw PreconditionError("code " + std::to_string(codes[i]) + " does not fit in " +
                              std::to_string(bits) + " bits");
    }
    write_bits(out, i * bits, codes[i], bits);
  }
  return out;
}

std::uint8_t unpack_code(std::span<const std::uint8_t> packed, std::size_t index, unsigned bits) {
  std::size_t bit_pos = index * bits;
  unsigned code = 0;
  for (unsigned k = 0; k < bits; ++k, ++bit_pos) {
    code |= ((packed[bit_pos / 8] >> (bit_pos % 8)) & 1u) << k;
  }
  return static_cast<std::uint8_t>(code);
}

std::vector<std::uint8_t> unpack_codes(std::span<const std::uint8_t> packed, std::size_t count,
                                       unsigned bits) {
  check_width(bits);
  if (packed.size() < packed_size(count, bits)) {
    throw CorruptionError("packed buffer holds " + std::to_string(packed.size()) +
                          " bytes, need " + std::to_string(packed_size(count, bits)));
  }
  std::vector<std::uint8_t> out(count);
  for (std::size_t i = 0; i < count; ++i) out[i] = unpack_code(packed, i, bits);
  return out;
}

void append_code(std::vector<std::uint8_t>& packed, std::size_t count, std::uint8_t code,
                 unsigned bits) {
  check_width(bits);
  if (code >= (1u << bits)) throw PreconditionError("code does not fit in width");
  packed.resize(packed_size(count + 1, bits), 0);
  write_bits(packed, count * bits, code, bits);
}

}  // namespace kvq
