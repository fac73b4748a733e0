#include "kvq/fp16.hpp"

#include <cmath>

#include <Eigen/Core>

#include "kvq/errors.hpp"

namespace kvq {

float to_half(float x) { return static_cast<float>(Eigen::half(x)); }

std::uint16_t half_bits(float x) { return Eigen::numext::bit_cast<std::uint16_t>(Eigen::half(x)); }

float half_from_bits(std::uint16_t bits) {
  return static_cast<float>(Eigen::numext::bit_cast<Eigen::half>(bits));
}

bool is_half_representable(float x) { return std::isfinite(x) && to_half(x) == x; }

std::vector<float> to_half(std::span<const float> values) {
  std::vector<float> out(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    const float h = to_half(values[i]);
    if (!std::isfinite(h)) {
      throw PreconditionError("value " + std::to_string(values[i]) +
                              " is outside the binary16 range");
    }
    out[i] = h;
  }
  return out;
}

Tensor2D to_half(const Tensor2D& t) {
  const auto h = to_half(t.data());
  return Tensor2D(t.rows(), t.cols(), h);
}

}  // namespace kvq
