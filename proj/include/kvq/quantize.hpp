#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "kvq/scheme.hpp"
#include "kvq/tensor.hpp"

namespace kvq {

/// Rectangle of a tensor covered by one group: rows [row, row + rows),
/// cols [col, col + cols).
struct GroupSpan {
  std::size_t row = 0;
  std::size_t col = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;

  std::size_t count() const noexcept { return rows * cols; }
  friend bool operator==(const GroupSpan&, const GroupSpan&) = default;
};

/// Step and zero-point of one group, both binary16 values.
struct GroupParams {
  float delta = 0.0f;
  float zero_point = 0.0f;

  friend bool operator==(const GroupParams&, const GroupParams&) = default;
};

/// Uniform asymmetric parameters for a group whose binary16 values span
/// [lo, hi]: zero_point = lo, delta = binary16((hi - lo) / (2^b - 1)),
/// raised to the smallest binary16 subnormal if it would round to zero.
/// A constant group (lo == hi) gets delta = 0.
GroupParams fit_group(float lo, float hi, unsigned bits);

/// round_half_even((x - zero_point) / delta) clamped to [0, 2^b - 1];
/// always 0 when delta == 0.
std::uint8_t encode(float x, const GroupParams& p, unsigned bits);
/// code * delta + zero_point, evaluated in double and rounded once to float.
float decode(std::uint8_t code, const GroupParams& p);

/// One packed group. Codes run row-major over the span.
struct QuantizedGroup {
  GroupSpan span;
  unsigned bits = 0;
  GroupParams params;
  std::vector<std::uint8_t> packed;

  std::size_t count() const noexcept { return span.count(); }
  std::uint8_t code(std::size_t i) const;
  std::vector<std::uint8_t> codes() const;
  /// Packed codes plus binary16 delta and zero-point.
  std::size_t stored_bytes() const noexcept { return packed.size() + 4; }

  friend bool operator==(const QuantizedGroup&, const QuantizedGroup&) = default;
};

/// Quantize `values` (binary16, row-major over `span`) with min/max taken
/// over the values themselves.
QuantizedGroup quantize_group(std::span<const float> values, const GroupSpan& span, unsigned bits);

struct OutlierEntry {
  std::uint64_t index = 0;  // flat row-major position
  float value = 0.0f;       // binary16

  friend bool operator==(const OutlierEntry&, const OutlierEntry&) = default;
};

/// Result of quantizing one tensor with one side plan.
///
/// Groups plus the binary16 rows [fp16_begin, rows) tile the tensor exactly
/// once. Outlier entries shadow the dense codes at their positions.
/// Passthrough stores everything as binary16 rows with fp16_begin = 0.
struct QuantizedTensor {
  SidePlan plan;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<QuantizedGroup> groups;
  std::vector<OutlierEntry> outliers;
  std::size_t fp16_begin = 0;
  Tensor2D fp16_rows;

  std::size_t residual_rows() const noexcept { return fp16_rows.rows(); }

  friend bool operator==(const QuantizedTensor&, const QuantizedTensor&) = default;
};

struct GroupGeometry {
  enum class Kind { PerChannel, PerChannelFull, PerToken };
  Kind kind = Kind::PerChannelFull;
  std::size_t g = 0;

  static GroupGeometry per_channel(std::size_t g) { return {Kind::PerChannel, g}; }
  static GroupGeometry per_channel_full() { return {Kind::PerChannelFull, 0}; }
  static GroupGeometry per_token(std::size_t g) { return {Kind::PerToken, g}; }
};

// All quantizers treat the input as an FP16 cache: values are rounded to
// binary16 first, and values outside the binary16 range are rejected.

QuantizedTensor quantize_passthrough(const Tensor2D& t);
QuantizedTensor quantize_uniform(const Tensor2D& t, unsigned bits);
QuantizedTensor quantize_outlier_reduced(const Tensor2D& t, unsigned bits, double s);
QuantizedTensor quantize_grouped(const Tensor2D& t, GroupGeometry geometry, unsigned bits);
QuantizedTensor quantize(const Tensor2D& t, const SidePlan& plan);

std::pair<QuantizedTensor, QuantizedTensor> quantize_kv_pair(const Tensor2D& k, const Tensor2D& v,
                                                             const SchemeConfig& cfg);

/// Number of outliers kept for fraction `s` of `n` elements: ceil(s * n),
/// with s * n within 1e-9 of an integer treated as that integer.
std::size_t outlier_count(double s, std::size_t n);

/// Throws CorruptionError on any metadata inconsistency.
void check_consistency(const QuantizedTensor& q);
Tensor2D dequantize(const QuantizedTensor& q);

/// Per-element bound on |x - dequantize(q)|: delta/2 + 2^-11 (delta + |zp| +
/// |x_hat|) + 2^-25 for grouped elements; 2^-11 |x_hat| + 2^-25 for elements
/// stored at binary16. The 2^-25 term covers binary16 subnormal rounding.
Tensor2D error_bounds(const QuantizedTensor& q);

struct Footprint {
  std::size_t code_bytes = 0;
  std::size_t meta_bytes = 0;     // 2 B delta + 2 B zero-point per group
  std::size_t fp16_bytes = 0;     // residual and passthrough rows
  std::size_t outlier_bytes = 0;  // 4 B index + 2 B value per outlier
  std::size_t elements = 0;

  std::size_t total_bytes() const noexcept {
    return code_bytes + meta_bytes + fp16_bytes + outlier_bytes;
  }
  double bits_per_element() const noexcept {
    return elements == 0 ? 0.0 : 8.0 * static_cast<double>(total_bytes()) / static_cast<double>(elements);
  }
  Footprint& operator+=(const Footprint& o);
  friend bool operator==(const Footprint&, const Footprint&) = default;
};

inline constexpr std::size_t kOutlierEntryBytes = 6;
inline constexpr std::size_t kGroupMetaBytes = 4;

/// Bytes actually held by `q`.
Footprint footprint(const QuantizedTensor& q);
/// Closed-form byte count for a rows x cols tensor under `plan`.
Footprint footprint_formula(const SidePlan& plan, std::size_t rows, std::size_t cols);

}  // namespace kvq
