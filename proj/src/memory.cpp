#include "kvq/memory.hpp"

#include "kvq/errors.hpp"
#include "kvq/quantize.hpp"

namespace kvq {

void validate(const MemoryScenario& s) {
  if (s.n_layers == 0 || s.d_model == 0 || s.seq_len == 0 || s.batch == 0 || s.bytes_per_value == 0 ||
      s.model_params == 0 || s.bytes_per_param == 0) {
    throw ConfigError("memory scenario fields must all be >= 1");
  }
}

MemoryEstimate estimate_memory(const MemoryScenario& s, const std::optional<SchemeConfig>& scheme) {
  validate(s);
  MemoryEstimate e;
  e.kv_bytes = 2 * s.n_layers * s.seq_len * s.d_model * s.batch * s.bytes_per_value;
  e.model_bytes = s.model_params * s.bytes_per_param;
  e.ratio = static_cast<double>(e.kv_bytes) / static_cast<double>(e.model_bytes);
  if (scheme) {
    const auto k = footprint_formula(side_plan(*scheme, Side::K), s.seq_len, s.d_model);
    const auto v = footprint_formula(side_plan(*scheme, Side::V), s.seq_len, s.d_model);
    e.quantized_kv_bytes = (k.total_bytes() + v.total_bytes()) * s.n_layers * s.batch;
    e.bits_per_element_k = k.bits_per_element();
    e.bits_per_element_v = v.bits_per_element();
  }
  return e;
}

}  // namespace kvq
