#pragma once

#include <cstdint>
#include <optional>

#include "kvq/scheme.hpp"

namespace kvq {

struct MemoryScenario {
  std::uint64_t n_layers = 32;
  std::uint64_t d_model = 4096;
  std::uint64_t seq_len = 1000;
  std::uint64_t batch = 1;
  std::uint64_t bytes_per_value = 2;
  std::uint64_t model_params = 7'000'000'000;
  std::uint64_t bytes_per_param = 2;
};

void validate(const MemoryScenario& s);

struct MemoryEstimate {
  std::uint64_t kv_bytes = 0;     // 2 * layers * seq * d_model * batch * bytes_per_value
  std::uint64_t model_bytes = 0;  // params * bytes_per_param
  double ratio = 0.0;             // kv_bytes / model_bytes

  // Present when a scheme is given: exact stored bytes per K/V sequence
  // (codes + binary16 metadata + residuals + outliers) times layers * batch.
  std::optional<std::uint64_t> quantized_kv_bytes;
  std::optional<double> bits_per_element_k;
  std::optional<double> bits_per_element_v;

  std::optional<double> compression() const {
    if (!quantized_kv_bytes || *quantized_kv_bytes == 0) return std::nullopt;
    return static_cast<double>(kv_bytes) / static_cast<double>(*quantized_kv_bytes);
  }
};

MemoryEstimate estimate_memory(const MemoryScenario& s, const std::optional<SchemeConfig>& scheme = {});

}  // namespace kvq
