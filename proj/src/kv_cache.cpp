#include "kvq/kv_cache.hpp"

#include <algorithm>
#include <string>

#include "kvq/bitpack.hpp"
#include "kvq/errors.hpp"
#include "kvq/fp16.hpp"

namespace kvq {
namespace detail {
namespace {

std::pair<float, float> range_of(std::span<const float> v) {
  const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  return {*lo, *hi};
}

}  // namespace

SideStore::SideStore(SidePlan plan, std::size_t cols, CacheMode mode, bool prefill_exempt)
    : plan_(plan), cols_(cols), mode_(mode), prefill_exempt_(prefill_exempt) {}

bool SideStore::running_range() const noexcept {
  return plan_.grouping == Grouping::Whole || plan_.grouping == Grouping::Outlier ||
         plan_.grouping == Grouping::PerChannelFull;
}

std::size_t SideStore::residual_rows() const noexcept {
  return plan_.grouping == Grouping::PerChannel ? rows_ % plan_.group : 0;
}

void SideStore::prefill(const Tensor2D& t) {
  if (t.rows() == 0) return;
  if (prefill_exempt_) {
    exempt_ = to_half(t.data());
    exempt_rows_ = t.rows();
    return;
  }
  if (mode_ == CacheMode::Simulation || !running_range()) {
    for (std::size_t r = 0; r < t.rows(); ++r) append(t.row(r));
    return;
  }

  // Range-tracking kinds start from a one-shot quantization of the prompt.
  const auto half = to_half(t.data());
  QuantizedTensor q = quantize(t, plan_);
  groups_ = std::move(q.groups);
  outliers_ = std::move(q.outliers);
  rows_ = t.rows();
  if (plan_.grouping == Grouping::PerChannelFull) {
    lo_.assign(cols_, 0.0f);
    hi_.assign(cols_, 0.0f);
    for (std::size_t c = 0; c < cols_; ++c) {
      float lo = half[c];
      float hi = half[c];
      for (std::size_t r = 1; r < rows_; ++r) {
        lo = std::min(lo, half[r * cols_ + c]);
        hi = std::max(hi, half[r * cols_ + c]);
      }
      lo_[c] = lo;
      hi_[c] = hi;
    }
    return;
  }
  std::vector<bool> skip(half.size(), false);
  for (const auto& o : outliers_) skip[o.index] = true;
  bool any = false;
  float lo = 0.0f;
  float hi = 0.0f;
  for (std::size_t i = 0; i < half.size(); ++i) {
    if (skip[i]) continue;
    lo = any ? std::min(lo, half[i]) : half[i];
    hi = any ? std::max(hi, half[i]) : half[i];
    any = true;
  }
  if (any) {
    lo_ = {lo};
    hi_ = {hi};
  }
}

void SideStore::append(std::span<const float> row) {
  if (row.size() != cols_) {
    throw ShapeError("row has " + std::to_string(row.size()) + " values, cache expects " +
                     std::to_string(cols_));
  }
  const auto half = to_half(row);
  if (mode_ == CacheMode::Simulation) {
    master_.insert(master_.end(), half.begin(), half.end());
    ++rows_;
    return;
  }
  append_half(half);
}

void SideStore::append_half(std::span<const float> half_row) {
  switch (plan_.grouping) {
    case Grouping::Passthrough:
      fp16_.insert(fp16_.end(), half_row.begin(), half_row.end());
      ++rows_;
      return;
    case Grouping::PerToken:
      for (std::size_t col = 0; col < cols_; col += plan_.group) {
        groups_.push_back(quantize_group(half_row.subspan(col, plan_.group),
                                         {rows_, col, 1, plan_.group}, plan_.bits));
      }
      ++rows_;
      return;
    case Grouping::PerChannel: {
      fp16_.insert(fp16_.end(), half_row.begin(), half_row.end());
      ++rows_;
      if (fp16_.size() / cols_ < plan_.group) return;
      const std::size_t start = rows_ - plan_.group;
      std::vector<float> column(plan_.group);
      for (std::size_t c = 0; c < cols_; ++c) {
        for (std::size_t r = 0; r < plan_.group; ++r) column[r] = fp16_[r * cols_ + c];
        groups_.push_back(quantize_group(column, {start, c, plan_.group, 1}, plan_.bits));
      }
      fp16_.clear();
      return;
    }
    case Grouping::Whole:
    case Grouping::Outlier:
    case Grouping::PerChannelFull:
      widen_and_append(half_row);
      ++rows_;
      return;
  }
}

void SideStore::widen_and_append(std::span<const float> half_row) {
  if (plan_.grouping == Grouping::PerChannelFull) {
    if (groups_.empty()) {
      for (std::size_t c = 0; c < cols_; ++c) {
        groups_.push_back(quantize_group(half_row.subspan(c, 1), {0, c, 1, 1}, plan_.bits));
      }
      lo_.assign(half_row.begin(), half_row.end());
      hi_.assign(half_row.begin(), half_row.end());
      return;
    }
    for (std::size_t c = 0; c < cols_; ++c) {
      const float v = half_row[c];
      if (v < lo_[c] || v > hi_[c]) {
        requantize_channel(c, std::min(lo_[c], v), std::max(hi_[c], v), v);
        continue;
      }
      auto& g = groups_[c];
      append_code(g.packed, g.count(), encode(v, g.params, plan_.bits), plan_.bits);
      ++g.span.rows;
    }
    return;
  }

  const auto [rlo, rhi] = range_of(half_row);
  if (groups_.empty()) {
    groups_.push_back(quantize_group(half_row, {0, 0, 1, cols_}, plan_.bits));
    lo_ = {rlo};
    hi_ = {rhi};
    return;
  }
  if (lo_.empty()) {
    // Every prior value was an outlier; the dense grid is all zero codes.
    requantize_whole(rlo, rhi, half_row);
    lo_ = {rlo};
    hi_ = {rhi};
    return;
  }
  if (rlo < lo_[0] || rhi > hi_[0]) {
    lo_[0] = std::min(lo_[0], rlo);
    hi_[0] = std::max(hi_[0], rhi);
    requantize_whole(lo_[0], hi_[0], half_row);
    return;
  }
  auto& g = groups_[0];
  std::size_t n = g.count();
  for (float v : half_row) append_code(g.packed, n++, encode(v, g.params, plan_.bits), plan_.bits);
  g.span.rows += 1;
}

void SideStore::requantize_whole(float lo, float hi, std::span<const float> half_row) {
  auto& g = groups_[0];
  const auto old_codes = g.codes();
  const GroupParams old = g.params;
  g.params = fit_group(lo, hi, plan_.bits);

  std::vector<std::uint8_t> codes;
  codes.reserve(old_codes.size() + half_row.size());
  auto next_outlier = outliers_.begin();
  for (std::size_t i = 0; i < old_codes.size(); ++i) {
    if (next_outlier != outliers_.end() && next_outlier->index == i) {
      codes.push_back(0);
      ++next_outlier;
      continue;
    }
    codes.push_back(encode(to_half(decode(old_codes[i], old)), g.params, plan_.bits));
  }
  for (float v : half_row) codes.push_back(encode(v, g.params, plan_.bits));
  g.packed = pack_codes(codes, plan_.bits);
  g.span.rows += 1;
  ++requantize_events_;
}

void SideStore::requantize_channel(std::size_t c, float lo, float hi, float value) {
  auto& g = groups_[c];
  const auto old_codes = g.codes();
  const GroupParams old = g.params;
  g.params = fit_group(lo, hi, plan_.bits);
  std::vector<std::uint8_t> codes;
  codes.reserve(old_codes.size() + 1);
  for (auto code : old_codes) codes.push_back(encode(to_half(decode(code, old)), g.params, plan_.bits));
  codes.push_back(encode(value, g.params, plan_.bits));
  g.packed = pack_codes(codes, plan_.bits);
  g.span.rows += 1;
  lo_[c] = lo;
  hi_[c] = hi;
  ++requantize_events_;
}

QuantizedTensor SideStore::snapshot() const {
  QuantizedTensor q;
  q.plan = plan_;
  q.rows = rows_;
  q.cols = cols_;
  q.fp16_begin = rows_;
  q.fp16_rows = Tensor2D(0, cols_);
  if (rows_ == 0) return q;
  if (mode_ == CacheMode::Simulation) return quantize(Tensor2D(rows_, cols_, master_), plan_);

  q.groups = groups_;
  q.outliers = outliers_;
  if (!fp16_.empty()) {
    const std::size_t n = fp16_.size() / cols_;
    q.fp16_begin = rows_ - n;
    q.fp16_rows = Tensor2D(n, cols_, fp16_);
  }
  return q;
}

Tensor2D SideStore::materialize() const {
  Tensor2D body = dequantize(snapshot());
  if (exempt_rows_ == 0) return body;
  const Tensor2D parts[] = {Tensor2D(exempt_rows_, cols_, exempt_), std::move(body)};
  return vstack(parts, cols_);
}

Footprint SideStore::footprint() const {
  Footprint f = kvq::footprint(snapshot());
  Footprint exempt;
  exempt.fp16_bytes = 2 * exempt_.size();
  exempt.elements = exempt_.size();
  f += exempt;
  return f;
}

}  // namespace detail

KVCache::KVCache(const SchemeConfig& cfg, std::size_t d_model, CacheMode mode, CacheOptions options)
    : cfg_(cfg),
      d_model_(d_model),
      mode_(mode),
      k_(side_plan(cfg, Side::K), d_model, mode, options.prefill_exempt),
      v_(side_plan(cfg, Side::V), d_model, mode, options.prefill_exempt) {
  if (d_model < 1) throw ConfigError("d_model must be >= 1");
  check_columns(k_.plan(), d_model);
  check_columns(v_.plan(), d_model);
}

void KVCache::prefill(const Tensor2D& k, const Tensor2D& v) {
  if (!empty()) throw StateError("prefill requires an empty cache");
  if (k.rows() != v.rows() || k.cols() != d_model_ || v.cols() != d_model_) {
    throw ShapeError("prefill expects two N x " + std::to_string(d_model_) + " tensors");
  }
  k_.prefill(k);
  v_.prefill(v);
  n_prefill_ = k.rows();
}

void KVCache::append(std::span<const float> k_row, std::span<const float> v_row) {
  if (k_row.size() != d_model_ || v_row.size() != d_model_) {
    throw ShapeError("append expects rows of length " + std::to_string(d_model_));
  }
  k_.append(k_row);
  v_.append(v_row);
  ++n_decoded_;
}

std::pair<Tensor2D, Tensor2D> KVCache::materialize() const { return {k_.materialize(), v_.materialize()}; }

MemoryReport KVCache::footprint() const { return {k_.footprint(), v_.footprint()}; }

QuantizedTensor KVCache::snapshot(Side side) const {
  return side == Side::K ? k_.snapshot() : v_.snapshot();
}

std::size_t KVCache::residual_rows(Side side) const noexcept {
  return side == Side::K ? k_.residual_rows() : v_.residual_rows();
}

bool KVCache::requantizes_on_range_growth() const noexcept {
  if (mode_ != CacheMode::Streaming) return false;
  const auto grows = [](const SidePlan& p) {
    return p.grouping == Grouping::Whole || p.grouping == Grouping::Outlier ||
           p.grouping == Grouping::PerChannelFull;
  };
  return grows(k_.plan()) || grows(v_.plan());
}

std::size_t KVCache::requantize_events() const noexcept {
  return k_.requantize_events() + v_.requantize_events();
}

}  // namespace kvq
