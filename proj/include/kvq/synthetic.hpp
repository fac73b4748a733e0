#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "kvq/tensor.hpp"

namespace kvq {

struct Gaussian {};

/// Gaussian base; a seeded subset of ceil(fraction * cols) channels is
/// multiplied by `scale`.
struct ChannelOutlier {
  double fraction = 0.1;
  double scale = 10.0;
};

/// Student-t with `dof` degrees of freedom.
struct HeavyTail {
  double dof = 3.0;
};

using Generator = std::variant<Gaussian, ChannelOutlier, HeavyTail>;

struct SyntheticSpec {
  Generator generator = Gaussian{};
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::uint64_t seed = 0;
};

void validate(const SyntheticSpec& spec);

/// Pure function of `spec`: bit-identical output for identical specs.
Tensor2D generate(const SyntheticSpec& spec);

/// Channels scaled by a ChannelOutlier spec, ascending. Empty otherwise.
std::vector<std::size_t> outlier_channels(const SyntheticSpec& spec);

std::string generator_name(const Generator& g);

}  // namespace kvq
