#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>

namespace kvq {

enum class SchemeKind {
  Passthrough16,
  Uniform,
  OutlierReduced,
  GroupC,      // g x 1 per-channel groups
  GroupCN,     // one N x 1 group per channel
  GroupT,      // 1 x g per-token groups
  HybridKCVT,  // K per-channel, V per-token
  HybridKTVC,  // K per-token, V per-channel
};

std::string_view kind_name(SchemeKind kind);
/// Accepts the names produced by kind_name. Throws ConfigError otherwise.
SchemeKind parse_kind(std::string_view name);

/// One compression configuration for a K/V pair.
///
/// Group-size convention for the hybrids: `g1` is always the per-channel
/// (token-dimension) group and `g2` the per-token (channel-dimension) group,
/// so KCVT puts g1 on K and KTVC puts g1 on V. An unset g1 means the
/// per-channel side spans all N tokens.
struct SchemeConfig {
  SchemeKind kind = SchemeKind::Passthrough16;
  unsigned b_k = 16;
  unsigned b_v = 16;
  std::optional<std::size_t> g;
  std::optional<std::size_t> g1;
  std::optional<std::size_t> g2;
  std::optional<double> s;

  static SchemeConfig passthrough() { return {}; }
  static SchemeConfig make(SchemeKind kind, unsigned b) {
    SchemeConfig c;
    c.kind = kind;
    c.b_k = c.b_v = b;
    return c;
  }
  static SchemeConfig uniform(unsigned b) { return make(SchemeKind::Uniform, b); }
  static SchemeConfig outlier_reduced(unsigned b, double s) {
    auto c = make(SchemeKind::OutlierReduced, b);
    c.s = s;
    return c;
  }
  static SchemeConfig group_c(unsigned b, std::size_t g) {
    auto c = make(SchemeKind::GroupC, b);
    c.g = g;
    return c;
  }
  static SchemeConfig group_cn(unsigned b) { return make(SchemeKind::GroupCN, b); }
  static SchemeConfig group_t(unsigned b, std::size_t g) {
    auto c = make(SchemeKind::GroupT, b);
    c.g = g;
    return c;
  }
  static SchemeConfig kcvt(unsigned b, std::optional<std::size_t> g1, std::size_t g2) {
    auto c = make(SchemeKind::HybridKCVT, b);
    c.g1 = g1;
    c.g2 = g2;
    return c;
  }
  static SchemeConfig ktvc(unsigned b, std::optional<std::size_t> g1, std::size_t g2) {
    auto c = make(SchemeKind::HybridKTVC, b);
    c.g1 = g1;
    c.g2 = g2;
    return c;
  }

  friend bool operator==(const SchemeConfig&, const SchemeConfig&) = default;
};

/// Field-level checks: bit-widths, required and forbidden fields per kind.
/// Shape-dependent divisibility is checked when a scheme meets a tensor.
void validate(const SchemeConfig& cfg);

enum class Side { K, V };

enum class Grouping {
  Passthrough,     // binary16 storage
  Whole,           // one group over the tensor
  Outlier,         // tensor-global top-s at binary16 + one dense group
  PerChannel,      // g x 1
  PerChannelFull,  // N x 1
  PerToken,        // 1 x g
};

/// The geometry and width applied to one side of a scheme.
struct SidePlan {
  Grouping grouping = Grouping::Passthrough;
  unsigned bits = 16;
  std::size_t group = 0;  // PerChannel / PerToken only
  double s = 0.0;         // Outlier only

  friend bool operator==(const SidePlan&, const SidePlan&) = default;
};

/// b = 16 on a side always yields Passthrough.
SidePlan side_plan(const SchemeConfig& cfg, Side side);

/// Throws ConfigError if `plan` cannot be applied to tensors with `cols`
/// channels (per-token divisibility).
void check_columns(const SidePlan& plan, std::size_t cols);

/// True when group boundaries depend only on token position and min/max are
/// group-local, so streaming ingestion can match one-shot quantization.
bool token_aligned(const SidePlan& plan);

std::string describe(const SidePlan& plan);

}  // namespace kvq
