#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "kvq/tensor.hpp"

namespace kvq {

inline constexpr float kHalfMax = 65504.0f;
/// Smallest positive binary16 subnormal.
inline constexpr float kHalfMinSubnormal = 5.9604644775390625e-08f;  // 2^-24

/// Round-trip through IEEE-754 binary16, round-to-nearest-even.
float to_half(float x);
std::uint16_t half_bits(float x);
float half_from_bits(std::uint16_t bits);

bool is_half_representable(float x);

/// Element-wise binary16 round-trip. Throws PreconditionError when a value
/// lies outside the finite binary16 range.
Tensor2D to_half(const Tensor2D& t);
std::vector<float> to_half(std::span<const float> values);

}  // namespace kvq
