#include "kvq/awq.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "kvq/errors.hpp"
#include "kvq/fp16.hpp"
#include "kvq/rng.hpp"

namespace kvq {
namespace {

constexpr float kMinScale = 6.103515625e-05f;  // 2^-14, smallest normal binary16

void check_inputs(const Tensor2D& w, const CalibrationBatch& calib, unsigned bits, std::size_t group) {
  if (w.empty()) throw ConfigError("weight matrix is empty");
  if (calib.x.rows() < 1) throw ConfigError("calibration batch is empty");
  if (calib.x.cols() != w.cols()) {
    throw ConfigError("calibration has " + std::to_string(calib.x.cols()) + " channels, weights expect " +
                      std::to_string(w.cols()));
  }
  if (group < 1 || w.cols() % group != 0) {
    throw ConfigError("group size g_w=" + std::to_string(group) + " does not divide d_in=" +
                      std::to_string(w.cols()));
  }
  if (bits != 2 && bits != 3 && bits != 4 && bits != 8 && bits != 16) {
    throw ConfigError("weight bit-width must be one of {2,3,4,8,16}");
  }
}

Eigen::MatrixXd unscaled_weights(const QuantizedTensor& q, std::span<const float> scales) {
  Eigen::MatrixXd wq = dequantize(q).matrix().cast<double>();
  for (Eigen::Index j = 0; j < wq.cols(); ++j) wq.col(j) /= static_cast<double>(scales[static_cast<std::size_t>(j)]);
  return wq;
}

Tensor2D scale_columns(const Tensor2D& w, std::span<const float> scales) {
  RowMatrixF ws = w.matrix();
  for (Eigen::Index j = 0; j < ws.cols(); ++j) ws.col(j) *= scales[static_cast<std::size_t>(j)];
  return Tensor2D(std::move(ws));
}

}  // namespace

double AwqResult::objective_star() const {
  for (const auto& [a, obj] : objective_curve) {
    if (a == alpha_star) return obj;
  }
  return objective_curve.front().second;
}

std::vector<double> channel_importance(const CalibrationBatch& calib) {
  const Eigen::VectorXd mean_abs = calib.x.matrix().cast<double>().cwiseAbs().colwise().mean().transpose();
  return {mean_abs.data(), mean_abs.data() + mean_abs.size()};
}

std::vector<float> awq_scales(std::span<const double> importance, double alpha) {
  std::vector<double> raw(importance.size(), 1.0);
  double peak = 0.0;
  for (std::size_t j = 0; j < importance.size(); ++j) {
    if (importance[j] > 0.0) {
      raw[j] = std::pow(importance[j], alpha);
      peak = std::max(peak, raw[j]);
    }
  }
  std::vector<float> scales(importance.size(), 1.0f);
  for (std::size_t j = 0; j < importance.size(); ++j) {
    if (importance[j] > 0.0 && peak > 0.0) {
      scales[j] = std::max(to_half(static_cast<float>(raw[j] / peak)), kMinScale);
    }
  }
  return scales;
}

QuantizedTensor quantize_weights(const Tensor2D& w, unsigned bits, std::size_t group) {
  if (bits == 16) return quantize_passthrough(w);
  return quantize_grouped(w, GroupGeometry::per_token(group), bits);
}

double awq_objective(const Tensor2D& w, const CalibrationBatch& calib, std::span<const float> scales,
                     unsigned bits, std::size_t group) {
  check_inputs(w, calib, bits, group);
  const Eigen::MatrixXd x = calib.x.matrix().cast<double>();
  const Eigen::MatrixXd reference = x * w.matrix().cast<double>().transpose();
  const auto q = quantize_weights(scale_columns(w, scales), bits, group);
  const Eigen::MatrixXd approx = x * unscaled_weights(q, scales).transpose();
  return (reference - approx).squaredNorm() / static_cast<double>(x.rows());
}

AwqResult awq_quantize(const Tensor2D& w, const CalibrationBatch& calib, unsigned bits, std::size_t group,
                       std::size_t n_alpha) {
  check_inputs(w, calib, bits, group);
  if (n_alpha < 1) throw ConfigError("n_alpha must be >= 1");
  const auto importance = channel_importance(calib);

  AwqResult res;
  res.bits = bits;
  res.group = group;
  double best = 0.0;
  for (std::size_t i = 0; i < n_alpha; ++i) {
    const double alpha = n_alpha == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(n_alpha - 1);
    const auto scales = awq_scales(importance, alpha);
    const double obj = awq_objective(w, calib, scales, bits, group);
    res.objective_curve.emplace_back(alpha, obj);
    if (i == 0 || obj < best) {
      best = obj;
      res.alpha_star = alpha;
      res.scales = scales;
    }
  }
  res.q_weights = quantize_weights(scale_columns(w, res.scales), bits, group);
  return res;
}

RowVectorF apply_quantized_linear(const AwqResult& res, std::span<const float> x) {
  if (x.size() != res.scales.size()) {
    throw ShapeError("input has " + std::to_string(x.size()) + " values, layer expects " +
                     std::to_string(res.scales.size()));
  }
  RowVectorF xs(static_cast<Eigen::Index>(x.size()));
  for (std::size_t j = 0; j < x.size(); ++j) xs(static_cast<Eigen::Index>(j)) = x[j] / res.scales[j];
  return xs * dequantize(res.q_weights).matrix().transpose();
}

CalibrationBatch synthetic_calibration(std::size_t n_samples, std::size_t d_in, std::uint64_t seed) {
  if (n_samples < 1 || d_in < 1) throw ConfigError("calibration needs n_samples >= 1 and d_in >= 1");
  Xoshiro256 rng(seed);
  std::vector<double> magnitude(d_in);
  for (auto& m : magnitude) m = std::exp(0.5 * rng.gaussian());
  RowMatrixF x(static_cast<Eigen::Index>(n_samples), static_cast<Eigen::Index>(d_in));
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
      x(r, c) = static_cast<float>(rng.gaussian() * magnitude[static_cast<std::size_t>(c)]);
    }
  }
  return {Tensor2D(std::move(x))};
}

SaliencyCase saliency_case(std::size_t d_out, std::size_t d_in, std::size_t n_samples,
                           std::size_t salient_channel, double factor, std::uint64_t seed) {
  if (salient_channel >= d_in) throw ConfigError("salient channel out of range");
  Xoshiro256 rng(seed);
  RowMatrixF w(static_cast<Eigen::Index>(d_out), static_cast<Eigen::Index>(d_in));
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = static_cast<float>(rng.gaussian());
  auto calib = synthetic_calibration(n_samples, d_in, seed + 1);
  RowMatrixF x = calib.x.matrix();
  x.col(static_cast<Eigen::Index>(salient_channel)) *= static_cast<float>(factor);
  return {Tensor2D(std::move(w)), {Tensor2D(std::move(x))}};
}

}  // namespace kvq
