#include "kvq/sweep.hpp"

#include <atomic>
#include <chrono>
#include <cstdio>
#include <functional>
#include <set>
#include <thread>

#include "kvq/quantize.hpp"

namespace kvq {
namespace {

using nlohmann::json;

std::string ptr(const std::string& base, const std::string& key) { return base + "/" + key; }
std::string ptr(const std::string& base, std::size_t i) { return base + "/" + std::to_string(i); }

void reject_unknown(const json& obj, const std::string& where, const std::set<std::string>& allowed) {
  for (const auto& [key, _] : obj.items()) {
    if (!allowed.contains(key)) throw SchemaError(ptr(where, key), "unknown field");
  }
}

std::uint64_t as_uint(const json& v, const std::string& where) {
  if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<std::int64_t>() < 0)) {
    throw SchemaError(where, "expected a non-negative integer");
  }
  return v.get<std::uint64_t>();
}

double as_number(const json& v, const std::string& where) {
  if (!v.is_number()) throw SchemaError(where, "expected a number");
  return v.get<double>();
}

std::string as_string(const json& v, const std::string& where) {
  if (!v.is_string()) throw SchemaError(where, "expected a string");
  return v.get<std::string>();
}

SweepSpec parse_spec(const json& j, const std::string& where) {
  if (!j.is_object()) throw SchemaError(where, "expected an object");
  reject_unknown(j, where,
                 {"id", "generator", "rows", "cols", "seed", "outlier_channel_fraction", "outlier_scale",
                  "tail_exponent"});
  for (const char* required : {"id", "generator", "rows", "cols", "seed"}) {
    if (!j.contains(required)) throw SchemaError(ptr(where, required), "missing required field");
  }
  SweepSpec s;
  s.id = as_string(j["id"], ptr(where, "id"));
  if (s.id.empty() || s.id.find_first_of(",\"\r\n") != std::string::npos) {
    throw SchemaError(ptr(where, "id"), "id must be non-empty without commas, quotes or newlines");
  }
  s.tensor.rows = as_uint(j["rows"], ptr(where, "rows"));
  s.tensor.cols = as_uint(j["cols"], ptr(where, "cols"));
  s.tensor.seed = as_uint(j["seed"], ptr(where, "seed"));
  const auto gen = as_string(j["generator"], ptr(where, "generator"));
  const auto only = [&](std::initializer_list<const char*> keys) {
    for (const char* k : {"outlier_channel_fraction", "outlier_scale", "tail_exponent"}) {
      const bool allowed = std::find_if(keys.begin(), keys.end(), [&](const char* a) {
                             return std::string(a) == k;
                           }) != keys.end();
      if (!allowed && j.contains(k)) throw SchemaError(ptr(where, k), "not used by generator " + gen);
    }
  };
  if (gen == "gaussian") {
    only({});
    s.tensor.generator = Gaussian{};
  } else if (gen == "channel_outlier") {
    only({"outlier_channel_fraction", "outlier_scale"});
    ChannelOutlier co;
    if (j.contains("outlier_channel_fraction")) {
      co.fraction = as_number(j["outlier_channel_fraction"], ptr(where, "outlier_channel_fraction"));
    }
    if (j.contains("outlier_scale")) co.scale = as_number(j["outlier_scale"], ptr(where, "outlier_scale"));
    s.tensor.generator = co;
  } else if (gen == "heavy_tail") {
    only({"tail_exponent"});
    HeavyTail ht;
    if (j.contains("tail_exponent")) ht.dof = as_number(j["tail_exponent"], ptr(where, "tail_exponent"));
    s.tensor.generator = ht;
  } else {
    throw SchemaError(ptr(where, "generator"), "unknown generator '" + gen + "'");
  }
  return s;
}

// Values of one scheme field: a scalar or a non-empty array of scalars.
std::vector<json> alternatives(const json& table, const char* key, const std::string& where) {
  if (!table.contains(key)) return {json()};
  const auto& v = table[key];
  if (!v.is_array()) return {v};
  if (v.empty()) throw SchemaError(ptr(where, key), "empty array");
  return {v.begin(), v.end()};
}

void parse_scheme_table(const json& table, const std::string& where, std::vector<SchemeConfig>& out) {
  if (!table.is_object()) throw SchemaError(where, "expected an object");
  reject_unknown(table, where, {"kind", "b", "b_k", "b_v", "g", "g1", "g2", "s"});
  if (!table.contains("kind")) throw SchemaError(ptr(where, "kind"), "missing required field");
  if (table.contains("b") && (table.contains("b_k") || table.contains("b_v"))) {
    throw SchemaError(ptr(where, "b"), "give either b or b_k/b_v");
  }

  const char* keys[] = {"kind", "b", "b_k", "b_v", "g", "g1", "g2", "s"};
  std::vector<std::vector<json>> axes;
  for (const char* k : keys) axes.push_back(alternatives(table, k, where));

  std::vector<std::size_t> idx(axes.size(), 0);
  for (;;) {
    SchemeConfig cfg;
    const auto at = [&](std::size_t axis) -> const json& { return axes[axis][idx[axis]]; };
    const auto field = [&](std::size_t axis) {
      return axes[axis].size() > 1 ? ptr(ptr(where, keys[axis]), idx[axis]) : ptr(where, keys[axis]);
    };
    const auto kind = as_string(at(0), field(0));
    try {
      cfg.kind = parse_kind(kind);
    } catch (const ConfigError& e) {
      throw SchemaError(field(0), e.what());
    }
    const bool lossless = cfg.kind == SchemeKind::Passthrough16;
    unsigned b = 16;
    if (!at(1).is_null()) b = static_cast<unsigned>(as_uint(at(1), field(1)));
    cfg.b_k = at(2).is_null() ? b : static_cast<unsigned>(as_uint(at(2), field(2)));
    cfg.b_v = at(3).is_null() ? b : static_cast<unsigned>(as_uint(at(3), field(3)));
    if (!lossless && at(1).is_null() && (at(2).is_null() || at(3).is_null())) {
      throw SchemaError(ptr(where, "b"), "scheme " + kind + " needs b or both b_k and b_v");
    }
    if (!at(4).is_null()) cfg.g = as_uint(at(4), field(4));
    if (!at(5).is_null()) cfg.g1 = as_uint(at(5), field(5));
    if (!at(6).is_null()) cfg.g2 = as_uint(at(6), field(6));
    if (!at(7).is_null()) cfg.s = as_number(at(7), field(7));
    out.push_back(cfg);

    std::size_t axis = axes.size();
    while (axis > 0) {
      --axis;
      if (++idx[axis] < axes[axis].size()) break;
      idx[axis] = 0;
      if (axis == 0) return;
    }
  }
}

std::string fmt_num(double v, const char* pattern = "%.10g") {
  char buf[64];
  std::snprintf(buf, sizeof buf, pattern, v);
  return buf;
}

template <typename T>
std::string fmt_opt(const std::optional<T>& v) {
  if (!v) return "";
  if constexpr (std::is_floating_point_v<T>) {
    return fmt_num(*v);
  } else {
    return std::to_string(*v);
  }
}

SweepRow evaluate(const SweepSpec& spec, const SchemeConfig& scheme, const SweepConfig& cfg) {
  SweepRow row;
  row.spec_id = spec.id;
  row.scheme = scheme;
  row.mode = cfg.mode;
  const auto start = std::chrono::steady_clock::now();
  try {
    const Tensor2D k = generate(spec.tensor);
    SyntheticSpec vspec = spec.tensor;
    vspec.seed += 1;
    const Tensor2D v = generate(vspec);

    KVCache cache(scheme, k.cols(), cfg.mode, CacheOptions{cfg.prefill_exempt});
    const std::size_t n_prefill = std::min(cfg.prefill_rows.value_or(k.rows()), k.rows());
    cache.prefill(k.slice_rows(0, n_prefill), v.slice_rows(0, n_prefill));
    for (std::size_t r = n_prefill; r < k.rows(); ++r) cache.append(k.row(r), v.row(r));
    const auto [k_hat, v_hat] = cache.materialize();

    const double n = static_cast<double>(k.size());
    row.mse = (mean_squared_error(k, k_hat) * n + mean_squared_error(v, v_hat) * n) / (2.0 * n);
    row.max_abs_err = std::max(max_abs_error(k, k_hat), max_abs_error(v, v_hat));
    const auto mem = cache.footprint();
    row.bpe_k = mem.bits_per_element_k();
    row.bpe_v = mem.bits_per_element_v();
  } catch (const ConfigError& e) {
    row.status = RowStatus::ConfigError;
    row.message = e.what();
  } catch (const PreconditionError& e) {
    row.status = RowStatus::ConfigError;
    row.message = e.what();
  }
  row.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  return row;
}

}  // namespace

std::string_view mode_name(CacheMode mode) {
  return mode == CacheMode::Streaming ? "streaming" : "simulation";
}

CacheMode parse_mode(std::string_view name) {
  if (name == "streaming") return CacheMode::Streaming;
  if (name == "simulation") return CacheMode::Simulation;
  throw ConfigError("mode must be 'streaming' or 'simulation', got '" + std::string(name) + "'");
}

SweepConfig parse_sweep_config(const json& doc) {
  if (!doc.is_object()) throw SchemaError("", "sweep document must be an object");
  reject_unknown(doc, "", {"specs", "schemes", "mode", "prefill_rows", "prefill_exempt"});
  SweepConfig cfg;
  if (!doc.contains("specs") || !doc["specs"].is_array()) throw SchemaError("/specs", "expected an array");
  if (!doc.contains("schemes") || !doc["schemes"].is_array()) {
    throw SchemaError("/schemes", "expected an array");
  }
  for (std::size_t i = 0; i < doc["specs"].size(); ++i) {
    cfg.specs.push_back(parse_spec(doc["specs"][i], ptr("/specs", i)));
  }
  for (std::size_t i = 0; i < doc["schemes"].size(); ++i) {
    parse_scheme_table(doc["schemes"][i], ptr("/schemes", i), cfg.schemes);
  }
  if (doc.contains("mode")) {
    try {
      cfg.mode = parse_mode(as_string(doc["mode"], "/mode"));
    } catch (const SchemaError&) {
      throw;
    } catch (const ConfigError& e) {
      throw SchemaError("/mode", e.what());
    }
  }
  if (doc.contains("prefill_rows")) cfg.prefill_rows = as_uint(doc["prefill_rows"], "/prefill_rows");
  if (doc.contains("prefill_exempt")) {
    if (!doc["prefill_exempt"].is_boolean()) throw SchemaError("/prefill_exempt", "expected a boolean");
    cfg.prefill_exempt = doc["prefill_exempt"].get<bool>();
  }
  return cfg;
}

SweepConfig parse_sweep_config_text(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw SchemaError("byte " + std::to_string(e.byte), "invalid JSON: " + std::string(e.what()));
  }
  return parse_sweep_config(doc);
}

std::vector<SweepRow> run_sweep(const SweepConfig& cfg, std::size_t threads) {
  const std::size_t n = cfg.specs.size() * cfg.schemes.size();
  std::vector<SweepRow> rows(n);
  if (n == 0) return rows;
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = std::min(threads, n);

  std::atomic<std::size_t> next{0};
  const auto work = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      rows[i] = evaluate(cfg.specs[i / cfg.schemes.size()], cfg.schemes[i % cfg.schemes.size()], cfg);
    }
  };
  std::vector<std::jthread> pool;
  for (std::size_t t = 1; t < threads; ++t) pool.emplace_back(work);
  work();
  return rows;
}

void write_sweep_csv(std::ostream& out, const std::vector<SweepRow>& rows, bool timing) {
  out << kSweepCsvHeader << '\n';
  for (const auto& r : rows) {
    const auto& s = r.scheme;
    const bool ok = r.status == RowStatus::Ok;
    out << r.spec_id << ',' << kind_name(s.kind) << ',' << s.b_k << ',' << s.b_v << ',' << fmt_opt(s.g) << ','
        << fmt_opt(s.g1) << ',' << fmt_opt(s.g2) << ',' << fmt_opt(s.s) << ',' << mode_name(r.mode) << ','
        << (ok ? fmt_num(r.mse) : "") << ',' << (ok ? fmt_num(r.max_abs_err) : "") << ','
        << (ok ? fmt_num(r.bpe_k) : "") << ',' << (ok ? fmt_num(r.bpe_v) : "") << ','
        << fmt_num(timing ? r.wall_ms : 0.0, "%.3f") << ',' << (ok ? "ok" : "config_error") << '\n';
  }
}

}  // namespace kvq
