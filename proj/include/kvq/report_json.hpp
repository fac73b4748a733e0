#pragma once

#include <cstdint>
#include <optional>

#include "json.hpp"
#include "kvq/awq.hpp"
#include "kvq/decoder.hpp"
#include "kvq/memory.hpp"
#include "kvq/quantize.hpp"
#include "kvq/scheme.hpp"

namespace kvq {

using ordered_json = nlohmann::ordered_json;

// Field names and order below are frozen output contracts.

/// {scheme, b_K, b_V, g1, g2, s, exact_prefix_len, mean_logit_kl,
///  attn_output_cosine, tokens_generated, seed[, teacher_forced]}
ordered_json divergence_json(const DivergenceReport& report, const SchemeConfig& scheme, std::uint64_t seed,
                             std::optional<bool> teacher_forced = std::nullopt);

/// {alpha_star, b, g_w, objective_curve: [[alpha, mse], ...], scales: base64 binary16 LE}
ordered_json awq_json(const AwqResult& res);

/// Debug dump: {scheme, shape, fp16_begin, groups: [{origin, span, delta,
/// zero_point, codes}], outliers: [[index, value], ...], fp16_rows: base64}
ordered_json quantized_tensor_json(const QuantizedTensor& q);

/// {kv_bytes, model_bytes, ratio[, scheme, quantized_kv_bytes, bpe_k, bpe_v, compression]}
ordered_json memory_json(const MemoryEstimate& e, const std::optional<SchemeConfig>& scheme);

}  // namespace kvq
