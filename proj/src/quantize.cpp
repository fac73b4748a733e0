#include "kvq/quantize.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "kvq/bitpack.hpp"
#include "kvq/errors.hpp"
#include "kvq/fp16.hpp"

namespace kvq {
namespace {

constexpr double kHalfUlpRel = 0x1.0p-11;
constexpr double kHalfSubnormalSlack = 0x1.0p-25;

void require_nonempty(const Tensor2D& t) {
  if (t.empty()) throw PreconditionError("cannot quantize an empty tensor");
}

void require_bits(unsigned bits) {
  if (bits != 2 && bits != 3 && bits != 4 && bits != 8) {
    throw PreconditionError("quantized bit-width must be 2, 3, 4 or 8, got " + std::to_string(bits));
  }
}

// Row-major values of `span` gathered from a binary16 matrix.
std::vector<float> gather(const std::vector<float>& half, std::size_t cols, const GroupSpan& span) {
  std::vector<float> out;
  out.reserve(span.count());
  for (std::size_t r = span.row; r < span.row + span.rows; ++r) {
    for (std::size_t c = span.col; c < span.col + span.cols; ++c) out.push_back(half[r * cols + c]);
  }
  return out;
}

QuantizedTensor make_shell(const Tensor2D& t, const SidePlan& plan) {
  QuantizedTensor q;
  q.plan = plan;
  q.rows = t.rows();
  q.cols = t.cols();
  q.fp16_begin = t.rows();
  q.fp16_rows = Tensor2D(0, t.cols());
  return q;
}

}  // namespace

GroupParams fit_group(float lo, float hi, unsigned bits) {
  GroupParams p;
  p.zero_point = to_half(lo);
  if (!(hi > lo)) return p;
  const double levels = static_cast<double>((1u << bits) - 1);
  const double raw = (static_cast<double>(hi) - static_cast<double>(lo)) / levels;
  p.delta = std::max(to_half(static_cast<float>(raw)), kHalfMinSubnormal);
  return p;
}

std::uint8_t encode(float x, const GroupParams& p, unsigned bits) {
  if (p.delta == 0.0f) return 0;
  const double scaled = (static_cast<double>(x) - p.zero_point) / p.delta;
  const double rounded = std::nearbyint(scaled);  // FE_TONEAREST: ties to even
  const double top = static_cast<double>((1u << bits) - 1);
  return static_cast<std::uint8_t>(std::clamp(rounded, 0.0, top));
}

float decode(std::uint8_t code, const GroupParams& p) {
  return static_cast<float>(static_cast<double>(code) * p.delta + p.zero_point);
}

std::uint8_t QuantizedGroup::code(std::size_t i) const { return unpack_code(packed, i, bits); }

std::vector<std::uint8_t> QuantizedGroup::codes() const { return unpack_codes(packed, count(), bits); }

QuantizedGroup quantize_group(std::span<const float> values, const GroupSpan& span, unsigned bits) {
  QuantizedGroup g;
  g.span = span;
  g.bits = bits;
  if (!values.empty()) {
    const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
    g.params = fit_group(*lo, *hi, bits);
  }
  std::vector<std::uint8_t> codes(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) codes[i] = encode(values[i], g.params, bits);
  g.packed = pack_codes(codes, bits);
  return g;
}

std::size_t outlier_count(double s, std::size_t n) {
  const double x = s * static_cast<double>(n);
  const double nearest = std::round(x);
  const double k = std::abs(x - nearest) <= 1e-9 * std::max(1.0, x) ? nearest : std::ceil(x);
  return std::min(n, static_cast<std::size_t>(std::max(0.0, k)));
}

QuantizedTensor quantize_passthrough(const Tensor2D& t) {
  auto q = make_shell(t, SidePlan{});
  q.fp16_begin = 0;
  q.fp16_rows = to_half(t);
  return q;
}

QuantizedTensor quantize_uniform(const Tensor2D& t, unsigned bits) {
  require_nonempty(t);
  require_bits(bits);
  auto q = make_shell(t, {Grouping::Whole, bits});
  const auto half = to_half(t.data());
  q.groups.push_back(quantize_group(half, {0, 0, t.rows(), t.cols()}, bits));
  return q;
}

QuantizedTensor quantize_outlier_reduced(const Tensor2D& t, unsigned bits, double s) {
  require_nonempty(t);
  require_bits(bits);
  if (!(s >= 0.0 && s <= 1.0)) throw PreconditionError("s must be in [0, 1]");
  auto q = make_shell(t, {Grouping::Outlier, bits, 0, s});
  const auto half = to_half(t.data());
  const std::size_t n = half.size();
  const std::size_t k = outlier_count(s, n);

  // Rank by |original value|, ties to the lower flat index.
  const auto values = t.data();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                    [&](std::size_t a, std::size_t b) {
                      const float ma = std::abs(values[a]);
                      const float mb = std::abs(values[b]);
                      return ma != mb ? ma > mb : a < b;
                    });
  std::vector<bool> is_outlier(n, false);
  for (std::size_t i = 0; i < k; ++i) is_outlier[order[i]] = true;

  float lo = 0.0f;
  float hi = 0.0f;
  bool any = false;
  for (std::size_t i = 0; i < n; ++i) {
    if (is_outlier[i]) {
      q.outliers.push_back({i, half[i]});
      continue;
    }
    lo = any ? std::min(lo, half[i]) : half[i];
    hi = any ? std::max(hi, half[i]) : half[i];
    any = true;
  }

  QuantizedGroup g;
  g.span = {0, 0, t.rows(), t.cols()};
  g.bits = bits;
  if (any) g.params = fit_group(lo, hi, bits);
  std::vector<std::uint8_t> codes(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    if (!is_outlier[i]) codes[i] = encode(half[i], g.params, bits);
  }
  g.packed = pack_codes(codes, bits);
  q.groups.push_back(std::move(g));
  return q;
}

QuantizedTensor quantize_grouped(const Tensor2D& t, GroupGeometry geometry, unsigned bits) {
  require_nonempty(t);
  require_bits(bits);
  const std::size_t rows = t.rows();
  const std::size_t cols = t.cols();
  const auto half = to_half(t.data());

  switch (geometry.kind) {
    case GroupGeometry::Kind::PerChannel: {
      if (geometry.g < 1) throw ConfigError("per-channel group size must be >= 1");
      auto q = make_shell(t, {Grouping::PerChannel, bits, geometry.g});
      const std::size_t blocks = rows / geometry.g;
      q.groups.reserve(blocks * cols);
      for (std::size_t b = 0; b < blocks; ++b) {
        for (std::size_t c = 0; c < cols; ++c) {
          const GroupSpan span{b * geometry.g, c, geometry.g, 1};
          q.groups.push_back(quantize_group(gather(half, cols, span), span, bits));
        }
      }
      q.fp16_begin = blocks * geometry.g;
      const std::size_t tail = rows - q.fp16_begin;
      q.fp16_rows = Tensor2D(tail, cols, std::span<const float>(half).subspan(q.fp16_begin * cols));
      return q;
    }
    case GroupGeometry::Kind::PerChannelFull: {
      auto q = make_shell(t, {Grouping::PerChannelFull, bits});
      for (std::size_t c = 0; c < cols; ++c) {
        const GroupSpan span{0, c, rows, 1};
        q.groups.push_back(quantize_group(gather(half, cols, span), span, bits));
      }
      return q;
    }
    case GroupGeometry::Kind::PerToken: {
      if (geometry.g < 1 || cols % geometry.g != 0) {
        throw ConfigError("per-token group size g=" + std::to_string(geometry.g) +
                          " does not divide cols=" + std::to_string(cols));
      }
      auto q = make_shell(t, {Grouping::PerToken, bits, geometry.g});
      const std::size_t per_row = cols / geometry.g;
      q.groups.reserve(rows * per_row);
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < per_row; ++j) {
          const GroupSpan span{r, j * geometry.g, 1, geometry.g};
          const auto row = std::span<const float>(half).subspan(r * cols + span.col, geometry.g);
          q.groups.push_back(quantize_group(row, span, bits));
        }
      }
      return q;
    }
  }
  throw ConfigError("unknown group geometry");
}

QuantizedTensor quantize(const Tensor2D& t, const SidePlan& plan) {
  check_columns(plan, t.cols());
  switch (plan.grouping) {
    case Grouping::Passthrough:
      return quantize_passthrough(t);
    case Grouping::Whole:
      return quantize_uniform(t, plan.bits);
    case Grouping::Outlier:
      return quantize_outlier_reduced(t, plan.bits, plan.s);
    case Grouping::PerChannel:
      return quantize_grouped(t, GroupGeometry::per_channel(plan.group), plan.bits);
    case Grouping::PerChannelFull:
      return quantize_grouped(t, GroupGeometry::per_channel_full(), plan.bits);
    case Grouping::PerToken:
      return quantize_grouped(t, GroupGeometry::per_token(plan.group), plan.bits);
  }
  throw ConfigError("unknown grouping");
}

std::pair<QuantizedTensor, QuantizedTensor> quantize_kv_pair(const Tensor2D& k, const Tensor2D& v,
                                                             const SchemeConfig& cfg) {
  if (k.rows() != v.rows() || k.cols() != v.cols()) {
    throw ShapeError("K and V must have the same shape");
  }
  return {quantize(k, side_plan(cfg, Side::K)), quantize(v, side_plan(cfg, Side::V))};
}

void check_consistency(const QuantizedTensor& q) {
  const std::size_t n = q.rows * q.cols;
  if (q.fp16_begin > q.rows) throw CorruptionError("fp16_begin beyond tensor rows");
  if (q.fp16_rows.rows() != q.rows - q.fp16_begin ||
      (q.fp16_rows.rows() > 0 && q.fp16_rows.cols() != q.cols)) {
    throw CorruptionError("binary16 row block does not match the tensor tail");
  }
  std::vector<std::uint8_t> cover(n, 0);
  for (std::size_t i = q.fp16_begin * q.cols; i < n; ++i) cover[i] = 1;
  for (const auto& g : q.groups) {
    const auto& s = g.span;
    if (s.rows == 0 || s.cols == 0 || s.row + s.rows > q.fp16_begin || s.col + s.cols > q.cols) {
      throw CorruptionError("group span outside the quantized region");
    }
    if (g.bits < 1 || g.bits > 8) throw CorruptionError("group bit-width out of range");
    if (g.packed.size() != packed_size(g.count(), g.bits)) {
      throw CorruptionError("packed length does not match group size");
    }
    if (!(g.params.delta >= 0.0f) || !std::isfinite(g.params.delta) ||
        !std::isfinite(g.params.zero_point)) {
      throw CorruptionError("invalid group step or zero-point");
    }
    if (g.params.delta == 0.0f) {
      for (auto c : g.codes()) {
        if (c != 0) throw CorruptionError("nonzero code in a zero-step group");
      }
    }
    for (std::size_t r = s.row; r < s.row + s.rows; ++r) {
      for (std::size_t c = s.col; c < s.col + s.cols; ++c) {
        if (++cover[r * q.cols + c] != 1) throw CorruptionError("overlapping groups");
      }
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (cover[i] != 1) throw CorruptionError("groups leave element " + std::to_string(i) + " uncovered");
  }
  std::uint64_t prev = 0;
  for (std::size_t i = 0; i < q.outliers.size(); ++i) {
    const auto idx = q.outliers[i].index;
    if (idx >= n || (i > 0 && idx <= prev)) throw CorruptionError("outlier indices not strictly increasing");
    prev = idx;
  }
}

Tensor2D dequantize(const QuantizedTensor& q) {
  check_consistency(q);
  RowMatrixF out(static_cast<Eigen::Index>(q.rows), static_cast<Eigen::Index>(q.cols));
  float* data = out.data();
  for (const auto& g : q.groups) {
    const auto codes = g.codes();
    std::size_t i = 0;
    for (std::size_t r = g.span.row; r < g.span.row + g.span.rows; ++r) {
      for (std::size_t c = g.span.col; c < g.span.col + g.span.cols; ++c) {
        data[r * q.cols + c] = decode(codes[i++], g.params);
      }
    }
  }
  if (q.fp16_rows.rows() > 0) {
    out.bottomRows(static_cast<Eigen::Index>(q.fp16_rows.rows())) = q.fp16_rows.matrix();
  }
  for (const auto& o : q.outliers) data[o.index] = o.value;
  return Tensor2D(std::move(out));
}

Tensor2D error_bounds(const QuantizedTensor& q) {
  const auto x_hat = dequantize(q);
  RowMatrixF bound(static_cast<Eigen::Index>(q.rows), static_cast<Eigen::Index>(q.cols));
  float* b = bound.data();
  const auto xh = x_hat.data();
  const auto fp16_bound = [](double v) {
    return static_cast<float>(kHalfUlpRel * std::abs(v) * (1.0 + 0x1.0p-10) + kHalfSubnormalSlack);
  };
  for (const auto& g : q.groups) {
    const double delta = g.params.delta;
    const double zp = std::abs(g.params.zero_point);
    for (std::size_t r = g.span.row; r < g.span.row + g.span.rows; ++r) {
      for (std::size_t c = g.span.col; c < g.span.col + g.span.cols; ++c) {
        const std::size_t i = r * q.cols + c;
        b[i] = static_cast<float>(delta / 2 + kHalfUlpRel * (delta + zp + std::abs(xh[i])) +
                                  kHalfSubnormalSlack);
      }
    }
  }
  for (std::size_t i = q.fp16_begin * q.cols; i < q.rows * q.cols; ++i) b[i] = fp16_bound(xh[i]);
  for (const auto& o : q.outliers) b[o.index] = fp16_bound(o.value);
  return Tensor2D(std::move(bound));
}

Footprint& Footprint::operator+=(const Footprint& o) {
  code_bytes += o.code_bytes;
  meta_bytes += o.meta_bytes;
  fp16_bytes += o.fp16_bytes;
  outlier_bytes += o.outlier_bytes;
  elements += o.elements;
  return *this;
}

Footprint footprint(const QuantizedTensor& q) {
  Footprint f;
  for (const auto& g : q.groups) {
    f.code_bytes += g.packed.size();
    f.meta_bytes += kGroupMetaBytes;
  }
  f.fp16_bytes = 2 * q.fp16_rows.size();
  f.outlier_bytes = kOutlierEntryBytes * q.outliers.size();
  f.elements = q.rows * q.cols;
  return f;
}

Footprint footprint_formula(const SidePlan& plan, std::size_t rows, std::size_t cols) {
  Footprint f;
  f.elements = rows * cols;
  if (f.elements == 0) return f;
  const unsigned b = plan.bits;
  const auto groups = [&](std::size_t count, std::size_t size) {
    f.code_bytes += count * packed_size(size, b);
    f.meta_bytes += count * kGroupMetaBytes;
  };
  switch (plan.grouping) {
    case Grouping::Passthrough:
      f.fp16_bytes = 2 * rows * cols;
      break;
    case Grouping::Whole:
      groups(1, rows * cols);
      break;
    case Grouping::Outlier:
      groups(1, rows * cols);
      f.outlier_bytes = kOutlierEntryBytes * outlier_count(plan.s, rows * cols);
      break;
    case Grouping::PerChannel: {
      const std::size_t blocks = rows / plan.group;
      groups(blocks * cols, plan.group);
      f.fp16_bytes = 2 * (rows - blocks * plan.group) * cols;
      break;
    }
    case Grouping::PerChannelFull:
      groups(cols, rows);
      break;
    case Grouping::PerToken:
      check_columns(plan, cols);
      groups(rows * (cols / plan.group), plan.group);
      break;
  }
  return f;
}

}  // namespace kvq
