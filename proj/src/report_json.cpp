#include "kvq/report_json.hpp"

#include <vector>

#include "kvq/base64.hpp"
#include "kvq/fp16.hpp"

namespace kvq {
namespace {

template <typename T>
ordered_json optional_field(const std::optional<T>& v) {
  return v ? ordered_json(*v) : ordered_json(nullptr);
}

std::string half_base64(std::span<const float> values) {
  std::vector<std::uint8_t> bytes;
  bytes.reserve(values.size() * 2);
  for (float v : values) {
    const auto h = half_bits(v);
    bytes.push_back(static_cast<std::uint8_t>(h & 0xff));
    bytes.push_back(static_cast<std::uint8_t>(h >> 8));
  }
  return base64_encode(bytes);
}

}  // namespace

ordered_json divergence_json(const DivergenceReport& report, const SchemeConfig& scheme, std::uint64_t seed,
                             std::optional<bool> teacher_forced) {
  ordered_json j;
  j["scheme"] = kind_name(scheme.kind);
  j["b_K"] = scheme.b_k;
  j["b_V"] = scheme.b_v;
  j["g1"] = optional_field(scheme.g1);
  j["g2"] = optional_field(scheme.g2);
  j["s"] = optional_field(scheme.s);
  j["exact_prefix_len"] = report.exact_prefix_len;
  j["mean_logit_kl"] = report.mean_logit_kl;
  j["attn_output_cosine"] = report.attn_output_cosine;
  j["tokens_generated"] = report.tokens_generated;
  j["seed"] = seed;
  if (teacher_forced) j["teacher_forced"] = *teacher_forced;
  return j;
}

ordered_json awq_json(const AwqResult& res) {
  ordered_json j;
  j["alpha_star"] = res.alpha_star;
  j["b"] = res.bits;
  j["g_w"] = res.group;
  ordered_json curve = ordered_json::array();
  for (const auto& [alpha, obj] : res.objective_curve) curve.push_back({alpha, obj});
  j["objective_curve"] = std::move(curve);
  j["scales"] = half_base64(res.scales);
  return j;
}

ordered_json quantized_tensor_json(const QuantizedTensor& q) {
  ordered_json j;
  j["scheme"] = describe(q.plan);
  j["shape"] = {q.rows, q.cols};
  j["fp16_begin"] = q.fp16_begin;
  ordered_json groups = ordered_json::array();
  for (const auto& g : q.groups) {
    ordered_json e;
    e["origin"] = {g.span.row, g.span.col};
    e["span"] = {g.span.rows, g.span.cols};
    e["delta"] = g.params.delta;
    e["zero_point"] = g.params.zero_point;
    e["codes"] = base64_encode(g.packed);
    groups.push_back(std::move(e));
  }
  j["groups"] = std::move(groups);
  ordered_json outliers = ordered_json::array();
  for (const auto& o : q.outliers) outliers.push_back({o.index, o.value});
  j["outliers"] = std::move(outliers);
  j["fp16_rows"] = half_base64(q.fp16_rows.data());
  return j;
}

ordered_json memory_json(const MemoryEstimate& e, const std::optional<SchemeConfig>& scheme) {
  ordered_json j;
  j["kv_bytes"] = e.kv_bytes;
  j["model_bytes"] = e.model_bytes;
  j["ratio"] = e.ratio;
  if (scheme && e.quantized_kv_bytes) {
    j["scheme"] = kind_name(scheme->kind);
    j["quantized_kv_bytes"] = *e.quantized_kv_bytes;
    j["bpe_k"] = *e.bits_per_element_k;
    j["bpe_v"] = *e.bits_per_element_v;
    j["compression"] = optional_field(e.compression());
  }
  return j;
}

}  // namespace kvq
