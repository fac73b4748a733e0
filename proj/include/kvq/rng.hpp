#pragma once

#include <array>
#include <cstdint>

namespace kvq {

/// SplitMix64. Used only to expand a 64-bit seed into xoshiro state.
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}
  std::uint64_t next();

 private:
  std::uint64_t state_;
};

/// xoshiro256** seeded by four successive SplitMix64 outputs.
///
/// Derived streams:
///   uniform()  = (next() >> 11) * 2^-53, redrawn while it equals 0, so the
///                result lies in (0, 1).
///   gaussian() = sqrt(-2 ln u1) * cos(2 pi u2) with u1 then u2 drawn from
///                uniform(); the sine branch is discarded.
///   below(n)   = high 64 bits of next() * n (multiply-shift, no rejection).
class Xoshiro256 {
 public:
  using result_type = std::uint64_t;

  explicit Xoshiro256(std::uint64_t seed);

  std::uint64_t next();
  std::uint64_t operator()() { return next(); }
  static constexpr std::uint64_t min() { return 0; }
  static constexpr std::uint64_t max() { return ~std::uint64_t{0}; }

  double uniform();
  double gaussian();
  std::uint64_t below(std::uint64_t n);
  /// Marsaglia-Tsang; shape < 1 boosted via Gamma(a+1) * u^(1/a).
  double gamma(double shape);
  double student_t(double dof);

 private:
  std::array<std::uint64_t, 4> s_{};
};

}  // namespace kvq
