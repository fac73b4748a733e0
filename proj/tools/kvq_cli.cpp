// kvq: sweep, decode, memory, awq and quantize drivers.
//
// Exit codes: 0 success, 2 configuration or schema error, 3 IO error.

#include <cmath>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "kvq/awq.hpp"
#include "kvq/decoder.hpp"
#include "kvq/errors.hpp"
#include "kvq/kvt1.hpp"
#include "kvq/memory.hpp"
#include "kvq/quantize.hpp"
#include "kvq/report_json.hpp"
#include "kvq/sweep.hpp"

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitIo = 3;

struct SchemeFlags {
  std::string kind = "passthrough16";
  std::optional<unsigned> bits, b_k, b_v;
  std::optional<std::size_t> g, g1, g2;
  std::optional<double> s;

  void attach(CLI::App* app, const std::string& default_kind) {
    kind = default_kind;
    app->add_option("--scheme", kind,
                    "passthrough16|uniform|outlier_reduced|group_c|group_cn|group_t|hybrid_kcvt|hybrid_ktvc")
        ->capture_default_str();
    app->add_option("--bits", bits, "bit-width for both K and V");
    app->add_option("--b-k", b_k, "K bit-width (overrides --bits)");
    app->add_option("--b-v", b_v, "V bit-width (overrides --bits)");
    app->add_option("--g", g, "group size (group_c, group_t)");
    app->add_option("--g1", g1, "per-channel group size (hybrids; omit for full N)");
    app->add_option("--g2", g2, "per-token group size (hybrids)");
    app->add_option("--s", s, "outlier fraction (outlier_reduced)");
  }

  kvq::SchemeConfig build() const {
    kvq::SchemeConfig cfg;
    cfg.kind = kvq::parse_kind(kind);
    const unsigned base = bits.value_or(cfg.kind == kvq::SchemeKind::Passthrough16 ? 16 : 4);
    cfg.b_k = b_k.value_or(base);
    cfg.b_v = b_v.value_or(base);
    cfg.g = g;
    cfg.g1 = g1;
    cfg.g2 = g2;
    cfg.s = s;
    kvq::validate(cfg);
    return cfg;
  }
};

void emit(const std::string& text, const std::string& out_path) {
  if (out_path.empty()) {
    std::cout << text;
    return;
  }
  std::ofstream out(out_path, std::ios::trunc);
  if (!out) throw kvq::IoError("cannot open " + out_path + " for writing");
  out << text;
  if (!out) throw kvq::IoError("short write to " + out_path);
}

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw kvq::IoError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::uint64_t to_count(double v, const char* name) {
  if (!(v >= 1.0) || v != std::floor(v) || v > 1.8e19) {
    throw kvq::ConfigError(std::string(name) + " must be a positive integer");
  }
  return static_cast<std::uint64_t>(v);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"KV-cache and weight quantization toolkit"};
  app.require_subcommand(1);

  // sweep
  auto* sweep = app.add_subcommand("sweep", "evaluate every (tensor spec, scheme) pair from a JSON config");
  std::string sweep_config;
  std::string sweep_out;
  std::optional<std::string> sweep_mode;
  bool sweep_exempt = false;
  std::optional<std::uint64_t> sweep_seed;
  std::size_t sweep_threads = 0;
  bool no_timing = false;
  sweep->add_option("config", sweep_config, "sweep config (JSON)")->required();
  sweep->add_option("--out", sweep_out, "CSV path (default stdout)");
  sweep->add_option("--mode", sweep_mode, "streaming|simulation (overrides config)");
  sweep->add_flag("--prefill-exempt", sweep_exempt, "keep prefill rows at binary16");
  sweep->add_option("--seed", sweep_seed, "added to every spec seed");
  sweep->add_option("--threads", sweep_threads, "worker threads (0 = all cores)");
  sweep->add_flag("--no-timing", no_timing, "write wall_ms as 0 for byte-reproducible output");

  // decode
  auto* decode = app.add_subcommand("decode", "greedy decode with a quantized cache against the FP16 baseline");
  kvq::ToyModelConfig model_cfg;
  std::size_t prompt_len = 32;
  std::size_t n_new = 64;
  std::string decode_mode = "streaming";
  bool decode_exempt = false;
  bool teacher_forced = false;
  std::string decode_out;
  SchemeFlags decode_scheme;
  decode->add_option("--layers", model_cfg.n_layers)->capture_default_str();
  decode->add_option("--d-model", model_cfg.d_model)->capture_default_str();
  decode->add_option("--heads", model_cfg.n_heads)->capture_default_str();
  decode->add_option("--vocab", model_cfg.vocab)->capture_default_str();
  decode->add_option("--max-seq", model_cfg.max_seq)->capture_default_str();
  decode->add_option("--seed", model_cfg.seed, "model and prompt seed")->capture_default_str();
  decode->add_option("--prompt-len", prompt_len)->capture_default_str();
  decode->add_option("--n-new", n_new)->capture_default_str();
  decode->add_option("--mode", decode_mode, "streaming|simulation")->capture_default_str();
  decode->add_flag("--prefill-exempt", decode_exempt, "keep prefill rows at binary16");
  decode->add_flag("--teacher-forced", teacher_forced, "feed baseline tokens to the quantized run");
  decode->add_option("--out", decode_out, "JSON path (default stdout)");
  decode_scheme.attach(decode, "passthrough16");

  // memory
  auto* memory = app.add_subcommand("memory", "KV cache vs model memory calculator");
  double layers = 32, d_model = 4096, seq = 1000, batch = 1, bpv = 2, params = 7e9, bpp = 2;
  std::string memory_out;
  SchemeFlags memory_scheme;
  memory->add_option("--layers", layers)->capture_default_str();
  memory->add_option("--d-model", d_model)->capture_default_str();
  memory->add_option("--seq", seq)->capture_default_str();
  memory->add_option("--batch", batch)->capture_default_str();
  memory->add_option("--bytes-per-value", bpv)->capture_default_str();
  memory->add_option("--params", params)->capture_default_str();
  memory->add_option("--bytes-per-param", bpp)->capture_default_str();
  memory->add_option("--out", memory_out, "JSON path (default stdout)");
  memory_scheme.attach(memory, "");

  // awq
  auto* awq = app.add_subcommand("awq", "activation-aware scale search and group-wise weight quantization");
  std::string weights_path, calib_path, awq_out;
  unsigned awq_bits = 4;
  std::size_t g_w = 128, n_alpha = 21, d_out = 64, d_in = 128, samples = 128, salient = 0;
  double factor = 100.0;
  std::uint64_t awq_seed = 1234;
  awq->add_option("--weights", weights_path, "KVT1 weight matrix (d_out x d_in)");
  awq->add_option("--calib", calib_path, "KVT1 calibration activations (n x d_in)");
  awq->add_option("--b", awq_bits)->capture_default_str();
  awq->add_option("--g-w", g_w)->capture_default_str();
  awq->add_option("--n-alpha", n_alpha)->capture_default_str();
  awq->add_option("--d-out", d_out, "built-in case")->capture_default_str();
  awq->add_option("--d-in", d_in, "built-in case")->capture_default_str();
  awq->add_option("--samples", samples, "built-in case")->capture_default_str();
  awq->add_option("--salient-channel", salient, "built-in case")->capture_default_str();
  awq->add_option("--salient-factor", factor, "built-in case")->capture_default_str();
  awq->add_option("--seed", awq_seed)->capture_default_str();
  awq->add_option("--out", awq_out, "JSON path (default stdout)");

  // quantize
  auto* quant = app.add_subcommand("quantize", "quantize/dequantize a KVT1 tensor and report error stats");
  std::string quant_in, quant_out, quant_dump, side = "k";
  SchemeFlags quant_scheme;
  quant->add_option("--in", quant_in, "input KVT1 tensor")->required();
  quant->add_option("--out", quant_out, "write the dequantized tensor (KVT1)");
  quant->add_option("--dump", quant_dump, "write the debug JSON dump of the quantized tensor");
  quant->add_option("--side", side, "k|v: which side of the scheme to apply")->capture_default_str();
  quant_scheme.attach(quant, "group_t");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitConfig;
  }

  try {
    if (*sweep) {
      auto cfg = kvq::parse_sweep_config_text(read_file(sweep_config));
      if (sweep_mode) cfg.mode = kvq::parse_mode(*sweep_mode);
      if (sweep_exempt) cfg.prefill_exempt = true;
      if (sweep_seed) {
        for (auto& s : cfg.specs) s.tensor.seed += *sweep_seed;
      }
      const auto rows = kvq::run_sweep(cfg, sweep_threads);
      std::ostringstream csv;
      kvq::write_sweep_csv(csv, rows, !no_timing);
      emit(csv.str(), sweep_out);
      for (const auto& r : rows) {
        if (r.status == kvq::RowStatus::ConfigError) {
          std::cerr << "config_error [" << r.spec_id << ", " << kvq::kind_name(r.scheme.kind) << "]: " << r.message
                    << '\n';
        }
      }
    } else if (*decode) {
      const auto scheme = decode_scheme.build();
      kvq::GenerateOptions opts{kvq::parse_mode(decode_mode), decode_exempt, teacher_forced};
      const auto model = kvq::build_model(model_cfg);
      const auto prompt = kvq::synthetic_prompt(model_cfg, prompt_len, model_cfg.seed);
      const auto gen = kvq::generate(model, prompt, n_new, scheme, opts);
      const auto j = kvq::divergence_json(gen.report, scheme, model_cfg.seed,
                                          teacher_forced ? std::optional<bool>(true) : std::nullopt);
      emit(j.dump(2) + "\n", decode_out);
    } else if (*memory) {
      kvq::MemoryScenario s{to_count(layers, "--layers"), to_count(d_model, "--d-model"), to_count(seq, "--seq"),
                            to_count(batch, "--batch"),   to_count(bpv, "--bytes-per-value"),
                            to_count(params, "--params"), to_count(bpp, "--bytes-per-param")};
      std::optional<kvq::SchemeConfig> scheme;
      if (!memory_scheme.kind.empty()) scheme = memory_scheme.build();
      const auto e = kvq::estimate_memory(s, scheme);
      emit(kvq::memory_json(e, scheme).dump(2) + "\n", memory_out);
    } else if (*awq) {
      kvq::Tensor2D w;
      kvq::CalibrationBatch calib;
      if (!weights_path.empty() || !calib_path.empty()) {
        if (weights_path.empty() || calib_path.empty()) {
          throw kvq::ConfigError("--weights and --calib must be given together");
        }
        w = kvq::read_tensor(weights_path);
        calib.x = kvq::read_tensor(calib_path);
      } else {
        auto c = kvq::saliency_case(d_out, d_in, samples, salient, factor, awq_seed);
        w = std::move(c.w);
        calib = std::move(c.calib);
      }
      const auto res = kvq::awq_quantize(w, calib, awq_bits, g_w, n_alpha);
      emit(kvq::awq_json(res).dump(2) + "\n", awq_out);
    } else if (*quant) {
      const auto scheme = quant_scheme.build();
      if (side != "k" && side != "v") throw kvq::ConfigError("--side must be k or v");
      const auto t = kvq::read_tensor(quant_in);
      const auto plan = kvq::side_plan(scheme, side == "k" ? kvq::Side::K : kvq::Side::V);
      const auto q = kvq::quantize(t, plan);
      const auto t_hat = kvq::dequantize(q);
      if (!quant_out.empty()) kvq::write_tensor(quant_out, t_hat);
      if (!quant_dump.empty()) emit(kvq::quantized_tensor_json(q).dump(2) + "\n", quant_dump);
      kvq::ordered_json stats;
      stats["plan"] = kvq::describe(plan);
      stats["rows"] = t.rows();
      stats["cols"] = t.cols();
      stats["mse"] = kvq::mean_squared_error(t, t_hat);
      stats["max_abs_err"] = kvq::max_abs_error(t, t_hat);
      stats["bpe"] = kvq::footprint(q).bits_per_element();
      std::cout << stats.dump(2) << '\n';
    }
  } catch (const kvq::IoError& e) {
    std::cerr << "io error: " << e.what() << '\n';
    return kExitIo;
  } catch (const kvq::FormatError& e) {
    std::cerr << "format error: " << e.what() << '\n';
    return kExitIo;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const kvq::StateError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  }
  return 0;
}
