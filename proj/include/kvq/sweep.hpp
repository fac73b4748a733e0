#pragma once

#include <cstddef>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "json.hpp"
#include "kvq/errors.hpp"
#include "kvq/kv_cache.hpp"
#include "kvq/scheme.hpp"
#include "kvq/synthetic.hpp"

namespace kvq {

/// Malformed sweep document. `where` is a JSON pointer ("/schemes/2/b_k").
class SchemaError : public ConfigError {
 public:
  SchemaError(const std::string& where, const std::string& what)
      : ConfigError(where + ": " + what), where_(where) {}
  const std::string& where() const noexcept { return where_; }

 private:
  std::string where_;
};

struct SweepSpec {
  std::string id;
  SyntheticSpec tensor;  // K; V uses seed + 1
};

struct SweepConfig {
  std::vector<SweepSpec> specs;
  std::vector<SchemeConfig> schemes;
  CacheMode mode = CacheMode::Simulation;
  std::optional<std::size_t> prefill_rows;  // default: every row is prefill
  bool prefill_exempt = false;
};

/// Parses the sweep document. Scheme-table fields may hold arrays, which
/// expand to their Cartesian product in the order kind, b, b_k, b_v, g, g1,
/// g2, s. Field contradictions are kept and reported as config_error rows.
SweepConfig parse_sweep_config(const nlohmann::json& doc);
SweepConfig parse_sweep_config_text(const std::string& text);

enum class RowStatus { Ok, ConfigError };

struct SweepRow {
  std::string spec_id;
  SchemeConfig scheme;
  CacheMode mode = CacheMode::Simulation;
  RowStatus status = RowStatus::Ok;
  double mse = 0.0;          // over K and V together
  double max_abs_err = 0.0;  // over K and V together
  double bpe_k = 0.0;
  double bpe_v = 0.0;
  double wall_ms = 0.0;
  std::string message;  // config_error detail, not emitted in CSV
};

/// One row per (spec, scheme) in spec-major order, evaluated on `threads`
/// workers (0 = hardware concurrency).
std::vector<SweepRow> run_sweep(const SweepConfig& cfg, std::size_t threads = 0);

inline constexpr const char* kSweepCsvHeader =
    "spec_id,kind,b_k,b_v,g,g1,g2,s,mode,mse,max_abs_err,bpe_k,bpe_v,wall_ms,status";

/// Writes the header and rows. With `timing` false, wall_ms is written as 0.
void write_sweep_csv(std::ostream& out, const std::vector<SweepRow>& rows, bool timing = true);

std::string_view mode_name(CacheMode mode);
CacheMode parse_mode(std::string_view name);

}  // namespace kvq
