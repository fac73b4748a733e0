#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "kvq/kv_cache.hpp"
#include "kvq/scheme.hpp"
#include "kvq/tensor.hpp"

namespace kvq {

struct ToyModelConfig {
  std::size_t n_layers = 2;
  std::size_t d_model = 64;
  std::size_t n_heads = 4;
  std::size_t vocab = 256;
  std::size_t max_seq = 256;
  std::uint64_t seed = 42;

  std::size_t d_head() const noexcept { return d_model / n_heads; }
};

void validate(const ToyModelConfig& cfg);

struct LayerWeights {
  RowMatrixF wq, wk, wv, wo;  // d_model x d_model, y = W x
  RowMatrixF w1;              // 4 d_model x d_model
  RowMatrixF w2;              // d_model x 4 d_model
};

/// Pre-norm decoder: token embedding plus sinusoidal positions, then per
/// layer x += Wo attn(Wq n(x), Wk n(x), Wv n(x)) and x += W2 gelu(W1 n(x)),
/// where n is unit-gain RMSNorm. Logits = E n(x) / sqrt(d_model) with the
/// embedding E tied as the LM head.
struct Model {
  ToyModelConfig cfg;
  RowMatrixF embedding;  // vocab x d_model
  std::vector<LayerWeights> layers;
};

/// Weights drawn N(0, 1/fan_in) (embedding N(0, 1)) from one Xoshiro256
/// stream in the order embedding, then per layer wq wk wv wo w1 w2.
Model build_model(const ToyModelConfig& cfg);

/// Multi-head attention of one query row over materialized K and V.
RowVectorF attend(std::span<const float> q, const Tensor2D& k, const Tensor2D& v, std::size_t n_heads);
/// Materializes `cache` and attends over it. Throws StateError when empty.
RowVectorF attend(std::span<const float> q, const KVCache& cache, std::size_t n_heads);

struct DivergenceReport {
  std::size_t exact_prefix_len = 0;
  double mean_logit_kl = 0.0;  // nats, KL(baseline || quantized)
  double attn_output_cosine = 1.0;
  std::size_t tokens_generated = 0;
};

struct GenerateOptions {
  CacheMode mode = CacheMode::Streaming;
  bool prefill_exempt = false;
  /// Feed the baseline's tokens to the quantized run instead of its own.
  bool teacher_forced = false;
};

struct Generation {
  std::vector<int> tokens;           // quantized run
  std::vector<int> baseline_tokens;  // FP16 run
  DivergenceReport report;
};

/// Greedy decoding of the binary16 baseline and the `scheme` cache in
/// lockstep on the same weights. All prompt tokens but the last are ingested
/// via prefill; every generated token comes from a decode step that appends
/// to the cache and attends over it.
Generation generate(const Model& model, std::span<const int> prompt, std::size_t n_new,
                    const SchemeConfig& scheme, const GenerateOptions& options = {});

/// Seeded prompt of `length` tokens drawn uniformly from the vocabulary.
std::vector<int> synthetic_prompt(const ToyModelConfig& cfg, std::size_t length, std::uint64_t seed);

}  // namespace kvq
