#include "kvq/decoder.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "kvq/errors.hpp"
#include "kvq/rng.hpp"

namespace kvq {
namespace {

using VectorF = Eigen::VectorXf;

RowMatrixF random_matrix(Xoshiro256& rng, std::size_t rows, std::size_t cols, double stddev) {
  RowMatrixF m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<float>(rng.gaussian() * stddev);
  return m;
}

VectorF rms_norm(const VectorF& x) {
  const float ms = x.squaredNorm() / static_cast<float>(x.size());
  return x / std::sqrt(ms + 1e-6f);
}

VectorF gelu(const VectorF& x) {
  return x.unaryExpr([](float v) {
    return 0.5f * v * (1.0f + std::erf(v / static_cast<float>(std::numbers::sqrt2)));
  });
}

VectorF position_encoding(std::size_t pos, std::size_t d) {
  VectorF pe(static_cast<Eigen::Index>(d));
  for (std::size_t i = 0; i < d; ++i) {
    const double freq = std::pow(10000.0, -static_cast<double>(i - i % 2) / static_cast<double>(d));
    const double a = static_cast<double>(pos) * freq;
    pe(static_cast<Eigen::Index>(i)) = static_cast<float>(i % 2 == 0 ? std::sin(a) : std::cos(a));
  }
  return pe;
}

void softmax_inplace(Eigen::Ref<VectorF> scores) {
  const float m = scores.maxCoeff();
  scores = (scores.array() - m).exp();
  scores /= scores.sum();
}

Eigen::VectorXd log_softmax(const VectorF& logits) {
  const Eigen::VectorXd l = logits.cast<double>();
  const double m = l.maxCoeff();
  const double lse = m + std::log((l.array() - m).exp().sum());
  return l.array() - lse;
}

double kl_divergence(const VectorF& base_logits, const VectorF& quant_logits) {
  const Eigen::VectorXd lp = log_softmax(base_logits);
  const Eigen::VectorXd lq = log_softmax(quant_logits);
  return (lp.array().exp() * (lp - lq).array()).sum();
}

double cosine(const VectorF& a, const VectorF& b) {
  const double na = a.cast<double>().norm();
  const double nb = b.cast<double>().norm();
  if (na == 0.0 && nb == 0.0) return 1.0;
  if (na == 0.0 || nb == 0.0) return 0.0;
  return std::clamp(a.cast<double>().dot(b.cast<double>()) / (na * nb), -1.0, 1.0);
}

int argmax(const VectorF& v) {
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < v.size(); ++i) {
    if (v(i) > v(best)) best = i;
  }
  return static_cast<int>(best);
}

// One autoregressive run: one cache per layer.
class Runner {
 public:
  Runner(const Model& model, const SchemeConfig& scheme, const GenerateOptions& options)
      : model_(model) {
    for (std::size_t l = 0; l < model.cfg.n_layers; ++l) {
      caches_.emplace_back(scheme, model.cfg.d_model, options.mode,
                           CacheOptions{options.prefill_exempt});
    }
  }

  // Processes prompt[0..n) with exact causal attention and prefills caches.
  void prefill(std::span<const int> tokens) {
    const auto& cfg = model_.cfg;
    const auto n = static_cast<Eigen::Index>(tokens.size());
    const auto d = static_cast<Eigen::Index>(cfg.d_model);
    if (n == 0) return;
    RowMatrixF x(n, d);
    for (Eigen::Index p = 0; p < n; ++p) x.row(p) = embed(tokens[static_cast<std::size_t>(p)], static_cast<std::size_t>(p)).transpose();

    const float inv_sqrt = 1.0f / std::sqrt(static_cast<float>(cfg.d_head()));
    const auto dh = static_cast<Eigen::Index>(cfg.d_head());
    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
      const auto& w = model_.layers[l];
      RowMatrixF h(n, d);
      for (Eigen::Index p = 0; p < n; ++p) h.row(p) = rms_norm(x.row(p).transpose()).transpose();
      const RowMatrixF q = h * w.wq.transpose();
      const RowMatrixF k = h * w.wk.transpose();
      const RowMatrixF v = h * w.wv.transpose();
      caches_[l].prefill(Tensor2D(k), Tensor2D(v));

      RowMatrixF attn(n, d);
      for (Eigen::Index p = 0; p < n; ++p) {
        for (Eigen::Index head = 0; head < static_cast<Eigen::Index>(cfg.n_heads); ++head) {
          VectorF scores = k.block(0, head * dh, p + 1, dh) * q.row(p).segment(head * dh, dh).transpose();
          scores *= inv_sqrt;
          softmax_inplace(scores);
          attn.row(p).segment(head * dh, dh) = scores.transpose() * v.block(0, head * dh, p + 1, dh);
        }
      }
      x += attn * w.wo.transpose();
      for (Eigen::Index p = 0; p < n; ++p) {
        const VectorF hn = rms_norm(x.row(p).transpose());
        x.row(p) += (w.w2 * gelu(w.w1 * hn)).transpose();
      }
    }
    position_ = tokens.size();
  }

  // Feeds `token` at the next position; returns logits and records
  // per-layer attention outputs.
  VectorF step(int token) {
    const auto& cfg = model_.cfg;
    VectorF x = embed(token, position_);
    attn_outputs_.clear();
    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
      const auto& w = model_.layers[l];
      const VectorF h = rms_norm(x);
      const VectorF q = w.wq * h;
      const VectorF k = w.wk * h;
      const VectorF v = w.wv * h;
      caches_[l].append(std::span<const float>(k.data(), static_cast<std::size_t>(k.size())),
                        std::span<const float>(v.data(), static_cast<std::size_t>(v.size())));
      const RowVectorF a = attend(std::span<const float>(q.data(), static_cast<std::size_t>(q.size())),
                                  caches_[l], cfg.n_heads);
      attn_outputs_.push_back(a.transpose());
      x += w.wo * a.transpose();
      x += w.w2 * gelu(w.w1 * rms_norm(x));
    }
    ++position_;
    const float scale = 1.0f / std::sqrt(static_cast<float>(cfg.d_model));
    return (model_.embedding * rms_norm(x)) * scale;
  }

  const std::vector<VectorF>& attn_outputs() const { return attn_outputs_; }

 private:
  VectorF embed(int token, std::size_t pos) const {
    return model_.embedding.row(token).transpose() + position_encoding(pos, model_.cfg.d_model);
  }

  const Model& model_;
  std::vector<KVCache> caches_;
  std::vector<VectorF> attn_outputs_;
  std::size_t position_ = 0;
};

}  // namespace

void validate(const ToyModelConfig& cfg) {
  if (cfg.n_layers < 1 || cfg.d_model < 1 || cfg.n_heads < 1 || cfg.vocab < 1 || cfg.max_seq < 1) {
    throw ConfigError("model dimensions must all be >= 1");
  }
  if (cfg.d_model % cfg.n_heads != 0) {
    throw ConfigError("d_model=" + std::to_string(cfg.d_model) + " is not divisible by n_heads=" +
                      std::to_string(cfg.n_heads));
  }
}

Model build_model(const ToyModelConfig& cfg) {
  validate(cfg);
  Xoshiro256 rng(cfg.seed);
  const std::size_t d = cfg.d_model;
  const double s_d = 1.0 / std::sqrt(static_cast<double>(d));
  const double s_ff = 1.0 / std::sqrt(static_cast<double>(4 * d));
  Model m;
  m.cfg = cfg;
  m.embedding = random_matrix(rng, cfg.vocab, d, 1.0);
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    LayerWeights w;
    w.wq = random_matrix(rng, d, d, s_d);
    w.wk = random_matrix(rng, d, d, s_d);
    w.wv = random_matrix(rng, d, d, s_d);
    w.wo = random_matrix(rng, d, d, s_d);
    w.w1 = random_matrix(rng, 4 * d, d, s_d);
    w.w2 = random_matrix(rng, d, 4 * d, s_ff);
    m.layers.push_back(std::move(w));
  }
  return m;
}

RowVectorF attend(std::span<const float> q, const Tensor2D& k, const Tensor2D& v, std::size_t n_heads) {
  const std::size_t d = q.size();
  if (k.rows() == 0) throw StateError("attention over an empty cache");
  if (k.cols() != d || v.cols() != d || k.rows() != v.rows()) throw ShapeError("attend: shape mismatch");
  if (n_heads == 0 || d % n_heads != 0) throw ConfigError("attend: d_model not divisible by heads");
  const auto dh = static_cast<Eigen::Index>(d / n_heads);
  const Eigen::Map<const RowVectorF> qrow(q.data(), static_cast<Eigen::Index>(d));
  const float inv_sqrt = 1.0f / std::sqrt(static_cast<float>(dh));
  RowVectorF out(static_cast<Eigen::Index>(d));
  const auto n = static_cast<Eigen::Index>(k.rows());
  for (Eigen::Index head = 0; head < static_cast<Eigen::Index>(n_heads); ++head) {
    VectorF scores = k.matrix().block(0, head * dh, n, dh) * qrow.segment(head * dh, dh).transpose();
    scores *= inv_sqrt;
    softmax_inplace(scores);
    out.segment(head * dh, dh) = scores.transpose() * v.matrix().block(0, head * dh, n, dh);
  }
  return out;
}

RowVectorF attend(std::span<const float> q, const KVCache& cache, std::size_t n_heads) {
  if (cache.empty()) throw StateError("attention over an empty cache");
  if (q.size() != cache.d_model()) throw ShapeError("attend: query length != d_model");
  const auto [k, v] = cache.materialize();
  return attend(q, k, v, n_heads);
}

Generation generate(const Model& model, std::span<const int> prompt, std::size_t n_new,
                    const SchemeConfig& scheme, const GenerateOptions& options) {
  const auto& cfg = model.cfg;
  if (prompt.empty()) throw ConfigError("prompt must contain at least one token");
  if (prompt.size() + n_new > cfg.max_seq) {
    throw ConfigError("prompt length " + std::to_string(prompt.size()) + " + n_new " +
                      std::to_string(n_new) + " exceeds max_seq " + std::to_string(cfg.max_seq));
  }
  for (int t : prompt) {
    if (t < 0 || static_cast<std::size_t>(t) >= cfg.vocab) throw ConfigError("prompt token out of vocabulary");
  }
  validate(scheme);

  Runner base(model, SchemeConfig::passthrough(), {});
  Runner quant(model, scheme, options);
  const auto head = prompt.first(prompt.size() - 1);
  base.prefill(head);
  quant.prefill(head);

  Generation out;
  int base_tok = prompt.back();
  int quant_tok = prompt.back();
  double kl_sum = 0.0;
  double cos_sum = 0.0;
  std::size_t cos_count = 0;
  bool prefix_alive = true;
  for (std::size_t i = 0; i < n_new; ++i) {
    const VectorF base_logits = base.step(base_tok);
    const VectorF quant_logits = quant.step(options.teacher_forced ? base_tok : quant_tok);
    kl_sum += kl_divergence(base_logits, quant_logits);
    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
      cos_sum += cosine(base.attn_outputs()[l], quant.attn_outputs()[l]);
      ++cos_count;
    }
    base_tok = argmax(base_logits);
    quant_tok = argmax(quant_logits);
    out.baseline_tokens.push_back(base_tok);
    out.tokens.push_back(quant_tok);
    prefix_alive = prefix_alive && base_tok == quant_tok;
    if (prefix_alive) ++out.report.exact_prefix_len;
  }
  out.report.tokens_generated = n_new;
  out.report.mean_logit_kl = n_new == 0 ? 0.0 : kl_sum / static_cast<double>(n_new);
  out.report.attn_output_cosine = cos_count == 0 ? 1.0 : cos_sum / static_cast<double>(cos_count);
  return out;
}

std::vector<int> synthetic_prompt(const ToyModelConfig& cfg, std::size_t length, std::uint64_t seed) {
  Xoshiro256 rng(seed ^ 0x70726f6d7074ULL);
  std::vector<int> tokens(length);
  for (auto& t : tokens) t = static_cast<int>(rng.below(cfg.vocab));
  return tokens;
}

}  // namespace kvq
