#pragma once

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "kvq/quantize.hpp"
#include "kvq/scheme.hpp"
#include "kvq/tensor.hpp"

namespace kvq {

enum class CacheMode {
  /// Packed groups only; no full-precision history beyond residual rows.
  Streaming,
  /// Keeps a binary16 master and re-quantizes it on every materialize.
  Simulation,
};

struct CacheOptions {
  /// Keep prefill rows at binary16 and quantize only decoded tokens.
  bool prefill_exempt = false;
};

struct MemoryReport {
  Footprint k;
  Footprint v;

  std::size_t total_bytes() const noexcept { return k.total_bytes() + v.total_bytes(); }
  double bits_per_element_k() const noexcept { return k.bits_per_element(); }
  double bits_per_element_v() const noexcept { return v.bits_per_element(); }
};

namespace detail {

/// Storage for one side (K or V) of a cache.
class SideStore {
 public:
  SideStore(SidePlan plan, std::size_t cols, CacheMode mode, bool prefill_exempt);

  void prefill(const Tensor2D& t);
  void append(std::span<const float> row);

  /// Current contents (excluding exempt prefill rows) as a quantized tensor.
  QuantizedTensor snapshot() const;
  Tensor2D materialize() const;
  Footprint footprint() const;

  std::size_t rows() const noexcept { return exempt_rows_ + rows_; }
  std::size_t residual_rows() const noexcept;
  std::size_t requantize_events() const noexcept { return requantize_events_; }
  const SidePlan& plan() const noexcept { return plan_; }

 private:
  void append_half(std::span<const float> half_row);
  void widen_and_append(std::span<const float> half_row);
  void requantize_whole(float lo, float hi, std::span<const float> half_row);
  void requantize_channel(std::size_t c, float lo, float hi, float value);
  bool running_range() const noexcept;

  SidePlan plan_;
  std::size_t cols_;
  CacheMode mode_;
  bool prefill_exempt_;

  std::vector<float> exempt_;  // binary16 prefill rows when exempt
  std::size_t exempt_rows_ = 0;
  std::size_t rows_ = 0;  // rows held in the quantized store

  std::vector<float> master_;  // Simulation: binary16 rows

  std::vector<QuantizedGroup> groups_;
  std::vector<float> fp16_;  // Passthrough rows, or PerChannel residual rows
  std::vector<OutlierEntry> outliers_;
  std::vector<float> lo_;  // running range per growing group
  std::vector<float> hi_;
  std::size_t requantize_events_ = 0;
};

}  // namespace detail

/// Single-layer, batch-1 K/V cache. Single writer; const members are safe to
/// call concurrently on a quiescent cache.
class KVCache {
 public:
  /// Throws ConfigError if the scheme is invalid or a per-token group size
  /// does not divide d_model.
  KVCache(const SchemeConfig& cfg, std::size_t d_model, CacheMode mode = CacheMode::Streaming,
          CacheOptions options = {});

  /// Ingest N_p prompt rows. Throws StateError unless the cache is empty.
  void prefill(const Tensor2D& k, const Tensor2D& v);
  /// Concatenate one token row to each side. Throws ShapeError on length mismatch.
  void append(std::span<const float> k_row, std::span<const float> v_row);

  /// Reconstructed N x d_model K and V in token order.
  std::pair<Tensor2D, Tensor2D> materialize() const;
  MemoryReport footprint() const;

  QuantizedTensor snapshot(Side side) const;

  const SchemeConfig& config() const noexcept { return cfg_; }
  CacheMode mode() const noexcept { return mode_; }
  std::size_t d_model() const noexcept { return d_model_; }
  std::size_t n_prefill() const noexcept { return n_prefill_; }
  std::size_t n_decoded() const noexcept { return n_decoded_; }
  std::size_t size() const noexcept { return n_prefill_ + n_decoded_; }
  bool empty() const noexcept { return size() == 0; }
  std::size_t residual_rows(Side side) const noexcept;

  /// Streaming caches whose step size depends on the whole growing history
  /// (uniform, outlier-reduced, per-channel over N) rebuild a group when an
  /// appended value widens its range.
  bool requantizes_on_range_growth() const noexcept;
  std::size_t requantize_events() const noexcept;

 private:
  SchemeConfig cfg_;
  std::size_t d_model_;
  CacheMode mode_;
  std::size_t n_prefill_ = 0;
  std::size_t n_decoded_ = 0;
  detail::SideStore k_;
  detail::SideStore v_;
};

}  // namespace kvq
