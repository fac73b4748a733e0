#include <gtest/gtest.h>

#include <vector>

#include "kvq/errors.hpp"
#include "kvq/fp16.hpp"
#include "kvq/kv_cache.hpp"
#include "kvq/quantize.hpp"
#include "kvq/rng.hpp"
#include "kvq/synthetic.hpp"

namespace kvq {
namespace {

Tensor2D gauss(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  return generate({Gaussian{}, rows, cols, seed});
}

void append_rows(KVCache& cache, const Tensor2D& k, const Tensor2D& v, std::size_t begin, std::size_t end) {
  for (std::size_t r = begin; r < end; ++r) cache.append(k.row(r), v.row(r));
}

TEST(KVCache, PerTokenGroupMustDivideModelWidth) {
  EXPECT_THROW(KVCache(SchemeConfig::kcvt(4, 128, 128), 64), ConfigError);
  EXPECT_THROW(KVCache(SchemeConfig::group_t(4, 48), 64), ConfigError);
  EXPECT_NO_THROW(KVCache(SchemeConfig::kcvt(4, 128, 64), 64));
}

TEST(KVCache, PassthroughStartsEmpty) {
  KVCache cache(SchemeConfig::passthrough(), 64);
  EXPECT_TRUE(cache.empty());
  EXPECT_FALSE(cache.requantizes_on_range_growth());
  const auto [k, v] = cache.materialize();
  EXPECT_EQ(k.rows(), 0u);
  EXPECT_EQ(k.cols(), 64u);
  EXPECT_EQ(v.rows(), 0u);
}

TEST(KVCache, FullSpanChannelGroupsFlagRequantization) {
  EXPECT_TRUE(KVCache(SchemeConfig::group_cn(4), 8).requantizes_on_range_growth());
  EXPECT_TRUE(KVCache(SchemeConfig::uniform(4), 8).requantizes_on_range_growth());
  EXPECT_FALSE(KVCache(SchemeConfig::group_c(4, 4), 8).requantizes_on_range_growth());
  EXPECT_FALSE(KVCache(SchemeConfig::group_cn(4), 8, CacheMode::Simulation).requantizes_on_range_growth());
}

TEST(KVCache, PrefillLeavesResidualRows) {
  const auto k = gauss(300, 64, 1);
  const auto v = gauss(300, 64, 2);
  KVCache cache(SchemeConfig::kcvt(4, 128, 32), 64);
  cache.prefill(k, v);
  EXPECT_EQ(cache.n_prefill(), 300u);
  EXPECT_EQ(cache.residual_rows(Side::K), 44u);
  EXPECT_EQ(cache.residual_rows(Side::V), 0u);
  const auto qk = cache.snapshot(Side::K);
  EXPECT_EQ(qk.groups.size(), 2u * 64u);
  const auto qv = cache.snapshot(Side::V);
  EXPECT_EQ(qv.groups.size(), 300u * 2u);

  const auto [kh, vh] = cache.materialize();
  const auto half = to_half(k);
  EXPECT_TRUE(bit_equal(kh.slice_rows(256, 44), half.slice_rows(256, 44)));
}

TEST(KVCache, ExactFillHasNoResidual) {
  KVCache cache(SchemeConfig::kcvt(4, 128, 64), 64);
  cache.prefill(gauss(128, 64, 1), gauss(128, 64, 2));
  EXPECT_EQ(cache.residual_rows(Side::K), 0u);
}

TEST(KVCache, ChannelGroupCommitsOnFill) {
  KVCache cache(SchemeConfig::kcvt(2, 4, 8), 8);
  const auto k = gauss(8, 8, 3);
  for (std::size_t r = 0; r < 3; ++r) cache.append(k.row(r), k.row(r));
  EXPECT_EQ(cache.residual_rows(Side::K), 3u);
  EXPECT_TRUE(cache.snapshot(Side::K).groups.empty());
  cache.append(k.row(3), k.row(3));
  EXPECT_EQ(cache.residual_rows(Side::K), 0u);
  EXPECT_EQ(cache.snapshot(Side::K).groups.size(), 8u);
  EXPECT_EQ(cache.n_decoded(), 4u);
}

TEST(KVCache, TokenGroupsCommitPerAppend) {
  KVCache cache(SchemeConfig::kcvt(4, 16, 32), 64);
  const auto k = gauss(5, 64, 4);
  for (std::size_t r = 0; r < 5; ++r) {
    cache.append(k.row(r), k.row(r));
    EXPECT_EQ(cache.snapshot(Side::V).groups.size(), 2u * (r + 1));
  }
}

TEST(KVCache, PassthroughPreservesOrder) {
  KVCache cache(SchemeConfig::passthrough(), 4);
  const auto k = generate({HeavyTail{3.0}, 10, 4, 5});
  const auto v = generate({HeavyTail{3.0}, 10, 4, 6});
  append_rows(cache, k, v, 0, 10);
  const auto [kh, vh] = cache.materialize();
  EXPECT_TRUE(bit_equal(kh, to_half(k)));
  EXPECT_TRUE(bit_equal(vh, to_half(v)));
}

TEST(KVCache, StateAndShapeErrors) {
  KVCache cache(SchemeConfig::group_t(4, 4), 8);
  const auto k = gauss(2, 8, 1);
  cache.prefill(k, k);
  EXPECT_THROW(cache.prefill(k, k), StateError);
  const std::vector<float> short_row(7, 0.0f);
  const std::vector<float> ok_row(8, 0.0f);
  EXPECT_THROW(cache.append(short_row, ok_row), ShapeError);
  EXPECT_THROW(cache.append(ok_row, short_row), ShapeError);
  KVCache fresh(SchemeConfig::group_t(4, 4), 8);
  EXPECT_THROW(fresh.prefill(gauss(2, 8, 1), gauss(3, 8, 1)), ShapeError);
  EXPECT_THROW(fresh.prefill(gauss(2, 6, 1), gauss(2, 6, 1)), ShapeError);
  EXPECT_EQ(cache.size(), 2u);
}

TEST(KVCache, SimulationModeRequantizesMaster) {
  const auto k = gauss(37, 8, 7);
  const auto v = gauss(37, 8, 8);
  KVCache cache(SchemeConfig::group_cn(2), 8, CacheMode::Simulation);
  cache.prefill(k.slice_rows(0, 10), v.slice_rows(0, 10));
  append_rows(cache, k, v, 10, 37);
  const auto [kh, vh] = cache.materialize();
  EXPECT_TRUE(bit_equal(kh, dequantize(quantize_grouped(k, GroupGeometry::per_channel_full(), 2))));
  EXPECT_TRUE(bit_equal(vh, dequantize(quantize_grouped(v, GroupGeometry::per_channel_full(), 2))));
}

TEST(KVCache, StreamingRangeGrowthRequantizes) {
  KVCache cache(SchemeConfig::group_cn(4), 2);
  const std::vector<float> small = {0.5f, -0.5f};
  const std::vector<float> big = {4.0f, -4.0f};
  cache.prefill(Tensor2D(2, 2, std::vector<float>{0, 0, 1, 1}), Tensor2D(2, 2, std::vector<float>{0, 0, 1, 1}));
  cache.append(small, small);
  EXPECT_EQ(cache.requantize_events(), 2u);  // column 1 on each side drops below 0
  cache.append(big, big);
  EXPECT_EQ(cache.requantize_events(), 6u);
  const auto [kh, vh] = cache.materialize();
  EXPECT_EQ(kh.rows(), 4u);
  EXPECT_NEAR(kh(3, 0), 4.0f, 0.5 * 4.5 / 15 + 1e-3);
  EXPECT_NEAR(kh(3, 1), -4.0f, 0.5 * 5.0 / 15 + 1e-3);
}

TEST(KVCache, StreamingOutlierSelectionFrozenAtPrefill) {
  const auto k = generate({ChannelOutlier{0.25, 10.0}, 16, 8, 9});
  KVCache cache(SchemeConfig::outlier_reduced(4, 0.05), 8);
  cache.prefill(k.slice_rows(0, 12), k.slice_rows(0, 12));
  const auto before = cache.snapshot(Side::K).outliers;
  append_rows(cache, k, k, 12, 16);
  EXPECT_EQ(cache.snapshot(Side::K).outliers, before);
  EXPECT_EQ(cache.materialize().first.rows(), 16u);
}

TEST(KVCache, FootprintBitsPerElement) {
  KVCache four(SchemeConfig::group_t(4, 128), 128);
  four.prefill(gauss(16, 128, 1), gauss(16, 128, 2));
  EXPECT_EQ(four.footprint().bits_per_element_k(), 4.25);
  EXPECT_EQ(four.footprint().bits_per_element_v(), 4.25);

  KVCache pass(SchemeConfig::passthrough(), 32);
  pass.prefill(gauss(3, 32, 1), gauss(3, 32, 2));
  EXPECT_EQ(pass.footprint().bits_per_element_k(), 16.0);
  EXPECT_EQ(pass.footprint().total_bytes(), 2u * 3u * 32u * 2u);
}

TEST(KVCache, PrefillExemptKeepsPromptAtHalf) {
  const auto k = gauss(20, 8, 11);
  KVCache cache(SchemeConfig::group_t(2, 8), 8, CacheMode::Streaming, CacheOptions{true});
  cache.prefill(k.slice_rows(0, 12), k.slice_rows(0, 12));
  append_rows(cache, k, k, 12, 20);
  const auto [kh, vh] = cache.materialize();
  const auto half = to_half(k);
  EXPECT_TRUE(bit_equal(kh.slice_rows(0, 12), half.slice_rows(0, 12)));
  EXPECT_TRUE(bit_equal(kh.slice_rows(12, 8),
                        dequantize(quantize_grouped(k.slice_rows(12, 8), GroupGeometry::per_token(8), 2))));
  EXPECT_EQ(cache.snapshot(Side::K).rows, 8u);
}

// Randomized interleavings: streaming == one-shot == simulation for
// token-aligned schemes.
TEST(KVCache, StreamingMatchesOneShotForTokenAlignedSchemes) {
  Xoshiro256 rng(4242);
  const SchemeConfig schemes[] = {SchemeConfig::group_t(2, 8), SchemeConfig::group_c(3, 5),
                                  SchemeConfig::kcvt(4, 7, 16), SchemeConfig::ktvc(2, 3, 4),
                                  SchemeConfig::passthrough()};
  for (int trial = 0; trial < 40; ++trial) {
    const auto& cfg = schemes[trial % 5];
    const std::size_t n = 1 + rng.below(60);
    const std::size_t np = rng.below(n + 1);
    const auto k = generate({ChannelOutlier{0.2, 6.0}, n, 16, rng.next()});
    const auto v = generate({Gaussian{}, n, 16, rng.next()});
    KVCache stream(cfg, 16);
    KVCache sim(cfg, 16, CacheMode::Simulation);
    if (np > 0) {
      stream.prefill(k.slice_rows(0, np), v.slice_rows(0, np));
      sim.prefill(k.slice_rows(0, np), v.slice_rows(0, np));
    }
    append_rows(stream, k, v, np, n);
    append_rows(sim, k, v, np, n);
    const auto [qk, qv] = quantize_kv_pair(k, v, cfg);
    const auto [sk, sv] = stream.materialize();
    const auto [mk, mv] = sim.materialize();
    ASSERT_TRUE(bit_equal(sk, dequantize(qk))) << trial;
    ASSERT_TRUE(bit_equal(sv, dequantize(qv))) << trial;
    ASSERT_TRUE(bit_equal(sk, mk)) << trial;
    ASSERT_TRUE(bit_equal(sv, mv)) << trial;
    ASSERT_EQ(stream.snapshot(Side::K), qk);
    ASSERT_EQ(stream.footprint().k, footprint(qk));
    ASSERT_EQ(stream.requantize_events(), 0u);
  }
}

TEST(KVCache, TokenCountConservedForEveryScheme) {
  const SchemeConfig schemes[] = {SchemeConfig::uniform(2),        SchemeConfig::outlier_reduced(3, 0.1),
                                  SchemeConfig::group_cn(4),       SchemeConfig::kcvt(8, std::nullopt, 4),
                                  SchemeConfig::ktvc(2, std::nullopt, 8), SchemeConfig::group_c(2, 6)};
  for (auto mode : {CacheMode::Streaming, CacheMode::Simulation}) {
    for (const auto& cfg : schemes) {
      KVCache cache(cfg, 8, mode);
      const auto k = generate({HeavyTail{2.5}, 25, 8, 3});
      cache.prefill(k.slice_rows(0, 5), k.slice_rows(0, 5));
      for (std::size_t r = 5; r < 25; ++r) {
        cache.append(k.row(r), k.row(r));
        const auto [kh, vh] = cache.materialize();
        ASSERT_EQ(kh.rows(), r + 1);
        ASSERT_EQ(vh.rows(), r + 1);
        const auto snap = cache.snapshot(Side::K);
        ASSERT_NO_THROW(check_consistency(snap));
      }
    }
  }
}

TEST(KVCache, StreamingRunningRangeStaysWithinBounds) {
  // Requantization compounds error but every value remains inside the
  // final group's [zero_point, zero_point + (2^b - 1) delta] range.
  KVCache cache(SchemeConfig::group_cn(3), 4);
  const auto k = generate({HeavyTail{2.0}, 50, 4, 12});
  cache.prefill(k.slice_rows(0, 1), k.slice_rows(0, 1));
  append_rows(cache, k, k, 1, 50);
  const auto snap = cache.snapshot(Side::K);
  const auto kh = cache.materialize().first;
  for (const auto& g : snap.groups) {
    for (std::size_t r = 0; r < 50; ++r) {
      const float x = kh(r, g.span.col);
      EXPECT_GE(x, g.params.zero_point);
      EXPECT_LE(x, g.params.zero_point + 7.0 * g.params.delta * (1 + 1e-6));
    }
  }
  EXPECT_GT(cache.requantize_events(), 0u);
}

}  // namespace
}  // namespace kvq
