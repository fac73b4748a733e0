#include "kvq/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "kvq/errors.hpp"
#include "kvq/rng.hpp"

namespace kvq {
namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

// Partial Fisher-Yates over [0, cols); consumes `count` draws from `rng`.
std::vector<std::size_t> pick_channels(Xoshiro256& rng, std::size_t cols, std::size_t count) {
  std::vector<std::size_t> idx(cols);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(cols - i));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(count);
  std::sort(idx.begin(), idx.end());
  return idx;
}

std::size_t outlier_count(const ChannelOutlier& co, std::size_t cols) {
  return std::min(cols, static_cast<std::size_t>(std::ceil(co.fraction * static_cast<double>(cols))));
}

}  // namespace

void validate(const SyntheticSpec& spec) {
  if (spec.rows < 1 || spec.cols < 1) {
    throw ConfigError("synthetic spec needs rows >= 1 and cols >= 1");
  }
  std::visit(overloaded{
                 [](const Gaussian&) {},
                 [](const ChannelOutlier& co) {
                   if (!(co.fraction > 0.0 && co.fraction <= 1.0)) {
                     throw ConfigError("outlier_channel_fraction must be in (0, 1]");
                   }
                   if (!(co.scale >= 1.0) || !std::isfinite(co.scale)) {
                     throw ConfigError("outlier_scale must be >= 1");
                   }
                 },
                 [](const HeavyTail& ht) {
                   if (!(ht.dof > 0.0) || !std::isfinite(ht.dof)) {
                     throw ConfigError("tail_exponent must be a positive finite number");
                   }
                 },
             },
             spec.generator);
}

std::vector<std::size_t> outlier_channels(const SyntheticSpec& spec) {
  validate(spec);
  const auto* co = std::get_if<ChannelOutlier>(&spec.generator);
  if (co == nullptr) return {};
  Xoshiro256 rng(spec.seed);
  return pick_channels(rng, spec.cols, outlier_count(*co, spec.cols));
}

Tensor2D generate(const SyntheticSpec& spec) {
  validate(spec);
  Xoshiro256 rng(spec.seed);
  RowMatrixF m(static_cast<Eigen::Index>(spec.rows), static_cast<Eigen::Index>(spec.cols));

  std::visit(overloaded{
                 [&](const Gaussian&) {
                   for (Eigen::Index i = 0; i < m.size(); ++i) {
                     m.data()[i] = static_cast<float>(rng.gaussian());
                   }
                 },
                 [&](const ChannelOutlier& co) {
                   const auto channels = pick_channels(rng, spec.cols, outlier_count(co, spec.cols));
                   for (Eigen::Index i = 0; i < m.size(); ++i) {
                     m.data()[i] = static_cast<float>(rng.gaussian());
                   }
                   for (auto c : channels) {
                     m.col(static_cast<Eigen::Index>(c)) *= static_cast<float>(co.scale);
                   }
                 },
                 [&](const HeavyTail& ht) {
                   for (Eigen::Index i = 0; i < m.size(); ++i) {
                     m.data()[i] = static_cast<float>(rng.student_t(ht.dof));
                   }
                 },
             },
             spec.generator);
  return Tensor2D(std::move(m));
}

std::string generator_name(const Generator& g) {
  return std::visit(overloaded{
                        [](const Gaussian&) { return std::string("gaussian"); },
                        [](const ChannelOutlier&) { return std::string("channel_outlier"); },
                        [](const HeavyTail&) { return std::string("heavy_tail"); },
                    },
                    g);
}

}  // namespace kvq
