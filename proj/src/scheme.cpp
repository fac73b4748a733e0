#include "kvq/scheme.hpp"

#include <array>
#include <cmath>
#include <utility>

#include "kvq/errors.hpp"

namespace kvq {
namespace {

constexpr std::array<std::pair<SchemeKind, std::string_view>, 8> kNames{{
    {SchemeKind::Passthrough16, "passthrough16"},
    {SchemeKind::Uniform, "uniform"},
    {SchemeKind::OutlierReduced, "outlier_reduced"},
    {SchemeKind::GroupC, "group_c"},
    {SchemeKind::GroupCN, "group_cn"},
    {SchemeKind::GroupT, "group_t"},
    {SchemeKind::HybridKCVT, "hybrid_kcvt"},
    {SchemeKind::HybridKTVC, "hybrid_ktvc"},
}};

bool valid_bits(unsigned b) { return b == 2 || b == 3 || b == 4 || b == 8 || b == 16; }

void forbid(bool present, std::string_view field, SchemeKind kind) {
  if (present) {
    throw ConfigError(std::string(field) + " is not used by scheme " + std::string(kind_name(kind)));
  }
}

std::size_t require_group(const std::optional<std::size_t>& v, std::string_view field,
                          SchemeKind kind) {
  if (!v) {
    throw ConfigError("scheme " + std::string(kind_name(kind)) + " requires " + std::string(field));
  }
  if (*v < 1) throw ConfigError(std::string(field) + " must be >= 1");
  return *v;
}

}  // namespace

std::string_view kind_name(SchemeKind kind) {
  for (const auto& [k, name] : kNames) {
    if (k == kind) return name;
  }
  return "unknown";
}

SchemeKind parse_kind(std::string_view name) {
  for (const auto& [k, n] : kNames) {
    if (n == name) return k;
  }
  throw ConfigError("unknown scheme kind '" + std::string(name) + "'");
}

void validate(const SchemeConfig& cfg) {
  const auto kind = cfg.kind;
  if (kind == SchemeKind::Passthrough16) return;
  if (!valid_bits(cfg.b_k) || !valid_bits(cfg.b_v)) {
    throw ConfigError("bit-widths must be one of {2,3,4,8,16}, got b_k=" + std::to_string(cfg.b_k) +
                      " b_v=" + std::to_string(cfg.b_v));
  }
  switch (kind) {
    case SchemeKind::Uniform:
    case SchemeKind::GroupCN:
      forbid(cfg.g.has_value(), "g", kind);
      forbid(cfg.g1.has_value(), "g1", kind);
      forbid(cfg.g2.has_value(), "g2", kind);
      forbid(cfg.s.has_value(), "s", kind);
      break;
    case SchemeKind::OutlierReduced:
      forbid(cfg.g.has_value(), "g", kind);
      forbid(cfg.g1.has_value(), "g1", kind);
      forbid(cfg.g2.has_value(), "g2", kind);
      if (!cfg.s) throw ConfigError("scheme outlier_reduced requires s");
      if (!(*cfg.s >= 0.0 && *cfg.s <= 1.0)) throw ConfigError("s must be in [0, 1]");
      break;
    case SchemeKind::GroupC:
    case SchemeKind::GroupT:
      require_group(cfg.g, "g", kind);
      forbid(cfg.g1.has_value(), "g1", kind);
      forbid(cfg.g2.has_value(), "g2", kind);
      forbid(cfg.s.has_value(), "s", kind);
      break;
    case SchemeKind::HybridKCVT:
    case SchemeKind::HybridKTVC:
      forbid(cfg.g.has_value(), "g", kind);
      forbid(cfg.s.has_value(), "s", kind);
      require_group(cfg.g2, "g2", kind);
      if (cfg.g1) require_group(cfg.g1, "g1", kind);
      break;
    case SchemeKind::Passthrough16:
      break;
  }
}

SidePlan side_plan(const SchemeConfig& cfg, Side side) {
  validate(cfg);
  const unsigned bits = side == Side::K ? cfg.b_k : cfg.b_v;
  if (cfg.kind == SchemeKind::Passthrough16 || bits == 16) return {};

  const auto per_channel = [&] {
    return cfg.g1 ? SidePlan{Grouping::PerChannel, bits, *cfg.g1}
                  : SidePlan{Grouping::PerChannelFull, bits};
  };
  const auto per_token = [&] { return SidePlan{Grouping::PerToken, bits, *cfg.g2}; };

  switch (cfg.kind) {
    case SchemeKind::Uniform:
      return {Grouping::Whole, bits};
    case SchemeKind::OutlierReduced:
      return {Grouping::Outlier, bits, 0, *cfg.s};
    case SchemeKind::GroupC:
      return {Grouping::PerChannel, bits, *cfg.g};
    case SchemeKind::GroupCN:
      return {Grouping::PerChannelFull, bits};
    case SchemeKind::GroupT:
      return {Grouping::PerToken, bits, *cfg.g};
    case SchemeKind::HybridKCVT:
      return side == Side::K ? per_channel() : per_token();
    case SchemeKind::HybridKTVC:
      return side == Side::K ? per_token() : per_channel();
    case SchemeKind::Passthrough16:
      break;
  }
  return {};
}

void check_columns(const SidePlan& plan, std::size_t cols) {
  if (plan.grouping == Grouping::PerToken && (plan.group == 0 || cols % plan.group != 0)) {
    throw ConfigError("per-token group size " + std::to_string(plan.group) +
                      " does not divide cols=" + std::to_string(cols));
  }
  if (plan.grouping == Grouping::PerChannel && plan.group == 0) {
    throw ConfigError("per-channel group size must be >= 1");
  }
}

bool token_aligned(const SidePlan& plan) {
  switch (plan.grouping) {
    case Grouping::Passthrough:
    case Grouping::PerChannel:
    case Grouping::PerToken:
      return true;
    default:
      return false;
  }
}

std::string describe(const SidePlan& plan) {
  const std::string b = std::to_string(plan.bits);
  switch (plan.grouping) {
    case Grouping::Passthrough:
      return "fp16";
    case Grouping::Whole:
      return "uniform/b" + b;
    case Grouping::Outlier:
      return "outlier(s=" + std::to_string(plan.s) + ")/b" + b;
    case Grouping::PerChannel:
      return "per_channel(" + std::to_string(plan.group) + ")/b" + b;
    case Grouping::PerChannelFull:
      return "per_channel(N)/b" + b;
    case Grouping::PerToken:
      return "per_token(" + std::to_string(plan.group) + ")/b" + b;
  }
  return "?";
}

}  // namespace kvq
