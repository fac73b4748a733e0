#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "kvq/quantize.hpp"
#include "kvq/tensor.hpp"

namespace kvq {

/// Calibration activations, n_samples x d_in.
struct CalibrationBatch {
  Tensor2D x;
};

struct AwqResult {
  double alpha_star = 0.0;
  unsigned bits = 4;
  std::size_t group = 128;
  std::vector<float> scales;  // per input channel, binary16, in (0, 1]
  QuantizedTensor q_weights;  // Q(W diag(scales)), per-token groups along d_in
  std::vector<std::pair<double, double>> objective_curve;  // (alpha, output mse)

  double objective_at_zero() const { return objective_curve.front().second; }
  double objective_star() const;
};

/// Mean |X[:, j]| per input channel.
std::vector<double> channel_importance(const CalibrationBatch& calib);

/// importance^alpha normalized to max 1, rounded to binary16 and floored at
/// 2^-14. Channels with zero importance get scale 1.
std::vector<float> awq_scales(std::span<const double> importance, double alpha);

/// Group-wise weight quantization of `w` (d_out x d_in) along d_in; b = 16
/// stores binary16 weights.
QuantizedTensor quantize_weights(const Tensor2D& w, unsigned bits, std::size_t group);

/// Mean over samples of || W x - Q(W diag(s)) diag(s)^-1 x ||^2.
double awq_objective(const Tensor2D& w, const CalibrationBatch& calib, std::span<const float> scales,
                     unsigned bits, std::size_t group);

/// Grid search over alpha_i = i / (n_alpha - 1) (just {0} when n_alpha = 1);
/// the smallest objective wins, ties going to the smaller alpha.
AwqResult awq_quantize(const Tensor2D& w, const CalibrationBatch& calib, unsigned bits,
                       std::size_t group, std::size_t n_alpha);

/// y = dequantize(q_weights) (x / scales).
RowVectorF apply_quantized_linear(const AwqResult& res, std::span<const float> x);

/// Gaussian activations with log-normal(0, 0.5) per-channel magnitudes.
CalibrationBatch synthetic_calibration(std::size_t n_samples, std::size_t d_in, std::uint64_t seed);

struct SaliencyCase {
  Tensor2D w;
  CalibrationBatch calib;
};

/// W ~ N(0, 1) (d_out x d_in) and synthetic calibration whose channel
/// `salient_channel` is amplified by `factor`.
SaliencyCase saliency_case(std::size_t d_out = 64, std::size_t d_in = 128, std::size_t n_samples = 128,
                           std::size_t salient_channel = 0, double factor = 100.0,
                           std::uint64_t seed = 1234);

}  // namespace kvq
