#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include "json.hpp"
#include <sstream>
#include <string>

#include "kvq/errors.hpp"
#include "kvq/kvt1.hpp"
#include "kvq/memory.hpp"
#include "kvq/report_json.hpp"
#include "kvq/sweep.hpp"
#include "kvq/synthetic.hpp"

namespace kvq {
namespace {

namespace fs = std::filesystem;

std::string csv(const std::vector<SweepRow>& rows, bool timing = false) {
  std::ostringstream out;
  write_sweep_csv(out, rows, timing);
  return out.str();
}

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

std::vector<std::string> fields(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

std::string schema_where(const std::string& text) {
  try {
    (void)parse_sweep_config_text(text);
  } catch (const SchemaError& e) {
    return e.where();
  }
  return "<no error>";
}

constexpr const char* kOutlierSpec =
    R"({"id": "co", "generator": "channel_outlier", "rows": 64, "cols": 64, "seed": 3,
        "outlier_channel_fraction": 0.1, "outlier_scale": 10})";

TEST(SweepConfig, ParsesSpecsAndSchemes) {
  const auto cfg = parse_sweep_config_text(std::string(R"({"specs": [)") + kOutlierSpec +
                                           R"(, {"id": "h", "generator": "heavy_tail", "rows": 8, "cols": 8,
                                                 "seed": 1, "tail_exponent": 2.5}],
         "schemes": [{"kind": "group_t", "b": 4, "g": 32}, {"kind": "passthrough16"}],
         "mode": "streaming", "prefill_rows": 10})");
  ASSERT_EQ(cfg.specs.size(), 2u);
  EXPECT_EQ(cfg.specs[0].id, "co");
  const auto& co = std::get<ChannelOutlier>(cfg.specs[0].tensor.generator);
  EXPECT_EQ(co.fraction, 0.1);
  EXPECT_EQ(std::get<HeavyTail>(cfg.specs[1].tensor.generator).dof, 2.5);
  ASSERT_EQ(cfg.schemes.size(), 2u);
  EXPECT_EQ(cfg.schemes[0], SchemeConfig::group_t(4, 32));
  EXPECT_EQ(cfg.schemes[1], SchemeConfig::passthrough());
  EXPECT_EQ(cfg.mode, CacheMode::Streaming);
  EXPECT_EQ(cfg.prefill_rows, 10u);
}

TEST(SweepConfig, SchemaErrorsCarryPointers) {
  EXPECT_EQ(schema_where(R"({"specs": [], "schemes": [], "extra": 1})"), "/extra");
  EXPECT_EQ(schema_where(R"({"schemes": []})"), "/specs");
  EXPECT_EQ(schema_where(R"({"specs": [{"id": "a", "generator": "gaussian", "rows": -1, "cols": 2, "seed": 0}],
                             "schemes": []})"),
            "/specs/0/rows");
  EXPECT_EQ(schema_where(R"({"specs": [{"id": "a", "generator": "cauchy", "rows": 1, "cols": 2, "seed": 0}],
                             "schemes": []})"),
            "/specs/0/generator");
  EXPECT_EQ(schema_where(R"({"specs": [{"id": "a", "generator": "gaussian", "rows": 1, "cols": 2, "seed": 0,
                                        "tail_exponent": 3}], "schemes": []})"),
            "/specs/0/tail_exponent");
  EXPECT_EQ(schema_where(R"({"specs": [], "schemes": [{"kind": "group_t", "b": 4, "g": 8}, {"kind": "nope", "b": 2}]})"),
            "/schemes/1/kind");
  EXPECT_EQ(schema_where(R"({"specs": [], "schemes": [{"kind": "group_t", "b": [4, "x"], "g": 8}]})"),
            "/schemes/0/b/1");
  EXPECT_EQ(schema_where(R"({"specs": [], "schemes": [{"kind": "group_t", "b": 4, "gg": 8}]})"), "/schemes/0/gg");
  EXPECT_EQ(schema_where(R"({"specs": [], "schemes": [], "mode": "fast"})"), "/mode");
  EXPECT_EQ(schema_where("{not json").rfind("byte ", 0), 0u);
  EXPECT_THROW(parse_sweep_config_text(R"({"specs": [{"id": "a,b", "generator": "gaussian", "rows": 1,
                                          "cols": 1, "seed": 0}], "schemes": []})"),
               ConfigError);
}

TEST(Sweep, BitPairsExpandToNineRows) {
  const auto cfg = parse_sweep_config_text(std::string(R"({"specs": [)") + kOutlierSpec +
                                           R"(], "schemes": [{"kind": "hybrid_kcvt", "b_k": [2, 3, 4],
                                              "b_v": [2, 3, 4], "g1": 32, "g2": 32}]})");
  const auto rows = run_sweep(cfg, 2);
  ASSERT_EQ(rows.size(), 9u);
  std::size_t i = 0;
  for (unsigned bk : {2u, 3u, 4u}) {
    for (unsigned bv : {2u, 3u, 4u}) {
      EXPECT_EQ(rows[i].scheme.b_k, bk);
      EXPECT_EQ(rows[i].scheme.b_v, bv);
      EXPECT_EQ(rows[i].status, RowStatus::Ok);
      EXPECT_GT(rows[i].mse, 0.0);
      ++i;
    }
  }
  // More bits on both sides never hurts here.
  EXPECT_LT(rows[8].mse, rows[0].mse);
}

TEST(Sweep, SmallerChannelGroupsCostMoreBits) {
  const auto cfg = parse_sweep_config_text(
      R"({"specs": [{"id": "g", "generator": "gaussian", "rows": 128, "cols": 128, "seed": 1}],
          "schemes": [{"kind": "hybrid_kcvt", "b": 4, "g1": [128, 64, 32], "g2": 128}]})");
  const auto rows = run_sweep(cfg, 1);
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[0].bpe_k, 4.25);
  EXPECT_EQ(rows[1].bpe_k, 4.5);
  EXPECT_EQ(rows[2].bpe_k, 5.0);
  EXPECT_EQ(rows[0].bpe_v, 4.25);
}

TEST(Sweep, EmptySchemeListGivesHeaderOnly) {
  const auto cfg = parse_sweep_config_text(std::string(R"({"specs": [)") + kOutlierSpec + R"(], "schemes": []})");
  EXPECT_EQ(csv(run_sweep(cfg)), std::string(kSweepCsvHeader) + "\n");
}

TEST(Sweep, InvalidCombinationsBecomeRows) {
  const auto cfg = parse_sweep_config_text(std::string(R"({"specs": [)") + kOutlierSpec +
                                           R"(], "schemes": [{"kind": "group_t", "b": 4, "g": [48, 32]},
                                              {"kind": "uniform", "b": 5}, {"kind": "uniform", "b": 2, "g": 4}]})");
  const auto rows = run_sweep(cfg, 3);
  ASSERT_EQ(rows.size(), 4u);
  EXPECT_EQ(rows[0].status, RowStatus::ConfigError);
  EXPECT_NE(rows[0].message.find("48"), std::string::npos);
  EXPECT_EQ(rows[1].status, RowStatus::Ok);
  EXPECT_EQ(rows[2].status, RowStatus::ConfigError);
  EXPECT_EQ(rows[3].status, RowStatus::ConfigError);
  const auto out = lines(csv(rows));
  EXPECT_EQ(out[1], "co,group_t,4,4,48,,,,simulation,,,,,0.000,config_error");
  EXPECT_EQ(fields(out[2]).back(), "ok");
}

TEST(Sweep, RowsAreDeterministicAcrossThreadCounts) {
  const auto cfg = parse_sweep_config_text(
      std::string(R"({"specs": [)") + kOutlierSpec +
      R"(, {"id": "g", "generator": "gaussian", "rows": 40, "cols": 16, "seed": 5}],
         "schemes": [{"kind": ["uniform", "group_cn"], "b": [2, 8]}, {"kind": "outlier_reduced", "b": 2, "s": 0.01},
                     {"kind": "group_c", "b": 3, "g": 16}], "mode": "streaming", "prefill_rows": 20})");
  const auto one = csv(run_sweep(cfg, 1));
  EXPECT_EQ(csv(run_sweep(cfg, 4)), one);
  const auto out = lines(one);
  ASSERT_EQ(out.size(), 1u + 2u * 6u);
  EXPECT_EQ(fields(out[1])[0], "co");
  EXPECT_EQ(fields(out[1])[1], "uniform");
  EXPECT_EQ(fields(out[2])[1], "uniform");
  EXPECT_EQ(fields(out[3])[1], "group_cn");
  EXPECT_EQ(fields(out[7])[0], "g");
  for (std::size_t i = 1; i < out.size(); ++i) {
    const auto f = fields(out[i]);
    ASSERT_EQ(f.size(), 15u);
    EXPECT_GE(std::stod(f[9]), 0.0);
    EXPECT_GT(std::stod(f[11]), 0.0);
    EXPECT_LE(std::stod(f[11]), 16.0);
  }
}

TEST(Sweep, PassthroughRowIsLosslessAtHalf) {
  const auto cfg = parse_sweep_config_text(
      R"({"specs": [{"id": "g", "generator": "gaussian", "rows": 8, "cols": 8, "seed": 1}],
          "schemes": [{"kind": "passthrough16"}, {"kind": "group_t", "b": 16, "g": 8}]})");
  const auto rows = run_sweep(cfg);
  for (const auto& r : rows) {
    EXPECT_EQ(r.bpe_k, 16.0);
    EXPECT_LE(r.max_abs_err, 0x1.0p-11 * 5.0);
  }
}

TEST(Memory, SevenBillionParameterScenario) {
  MemoryScenario s;
  s.batch = 100;
  const auto e = estimate_memory(s);
  EXPECT_EQ(e.kv_bytes, 52'428'800'000u);
  EXPECT_EQ(e.model_bytes, 14'000'000'000u);
  EXPECT_DOUBLE_EQ(e.ratio, 52'428'800'000.0 / 14'000'000'000.0);
  EXPECT_GE(e.ratio, 3.5);
  EXPECT_LE(e.ratio, 4.0);

  const auto q = estimate_memory(s, SchemeConfig::group_t(4, 128));
  EXPECT_EQ(*q.bits_per_element_k, 4.25);
  EXPECT_DOUBLE_EQ(*q.compression(), 16.0 / 4.25);
}

TEST(Memory, SingleTokenSingleBatch) {
  MemoryScenario s;
  s.seq_len = 1;
  EXPECT_EQ(estimate_memory(s).kv_bytes, 2u * 32u * 4096u * 2u);
  s.batch = 0;
  EXPECT_THROW(estimate_memory(s), ConfigError);
}

TEST(Json, DivergenceFieldOrder) {
  DivergenceReport r;
  r.exact_prefix_len = 3;
  r.tokens_generated = 5;
  const auto j = divergence_json(r, SchemeConfig::kcvt(4, std::nullopt, 16), 7);
  std::vector<std::string> keys;
  for (const auto& [k, _] : j.items()) keys.push_back(k);
  EXPECT_EQ(keys, (std::vector<std::string>{"scheme", "b_K", "b_V", "g1", "g2", "s", "exact_prefix_len",
                                            "mean_logit_kl", "attn_output_cosine", "tokens_generated", "seed"}));
  EXPECT_TRUE(j["g1"].is_null());
  EXPECT_EQ(j["g2"], 16);
  EXPECT_EQ(divergence_json(r, SchemeConfig::passthrough(), 7, true)["teacher_forced"], true);
}

TEST(Json, AwqFieldOrder) {
  AwqResult res;
  res.alpha_star = 0.5;
  res.bits = 3;
  res.group = 64;
  res.scales = {1.0f, 0.5f};
  res.objective_curve = {{0.0, 2.0}, {0.5, 1.0}};
  const auto j = awq_json(res);
  std::vector<std::string> keys;
  for (const auto& [k, _] : j.items()) keys.push_back(k);
  EXPECT_EQ(keys, (std::vector<std::string>{"alpha_star", "b", "g_w", "objective_curve", "scales"}));
  // binary16 1.0 = 0x3c00, 0.5 = 0x3800, little-endian -> 00 3c 00 38
  EXPECT_EQ(j["scales"], "ADwAOA==");
  EXPECT_EQ(j["objective_curve"][1][1], 1.0);
}

// CLI end-to-end.

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("kvq_cli_" + std::to_string(::getpid()));
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  int run(const std::string& args, std::string* out = nullptr) {
    const auto stdout_path = dir_ / "stdout.txt";
    const std::string cmd = std::string(KVQ_CLI_PATH) + " " + args + " > " + stdout_path.string() + " 2> " +
                            (dir_ / "stderr.txt").string();
    const int status = std::system(cmd.c_str());
    if (out) *out = slurp(stdout_path);
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  }

  static std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
  }

  fs::path write(const std::string& name, const std::string& text) {
    const auto p = dir_ / name;
    std::ofstream(p) << text;
    return p;
  }

  fs::path dir_;
};

TEST_F(Cli, DecodePassthroughAndDeterminism) {
  std::string a;
  std::string b;
  ASSERT_EQ(run("decode --scheme passthrough16 --n-new 16", &a), 0);
  ASSERT_EQ(run("decode --scheme passthrough16 --n-new 16", &b), 0);
  EXPECT_EQ(a, b);
  const auto j = nlohmann::json::parse(a);
  EXPECT_EQ(j["exact_prefix_len"], 16);
  EXPECT_EQ(j["mean_logit_kl"], 0.0);
  EXPECT_FALSE(j.contains("teacher_forced"));

  std::string c;
  ASSERT_EQ(run("decode --scheme hybrid_kcvt --bits 2 --g1 16 --g2 16 --n-new 8 --teacher-forced", &c), 0);
  EXPECT_EQ(nlohmann::json::parse(c)["teacher_forced"], true);
}

TEST_F(Cli, DecodeConfigErrors) {
  EXPECT_EQ(run("decode --d-model 65"), 2);
  EXPECT_EQ(run("decode --scheme group_t --bits 4 --g 48"), 2);
  EXPECT_EQ(run("decode --prompt-len 250 --n-new 10"), 2);
  EXPECT_EQ(run("decode --no-such-flag"), 2);
  EXPECT_EQ(run("decode --scheme bogus"), 2);
}

TEST_F(Cli, Memory) {
  std::string out;
  ASSERT_EQ(run("memory --batch 100", &out), 0);
  const auto j = nlohmann::json::parse(out);
  EXPECT_EQ(j["kv_bytes"], 52428800000ULL);
  EXPECT_DOUBLE_EQ(j["ratio"].get<double>(), 52428800000.0 / 14e9);
  ASSERT_EQ(run("memory --batch 100 --scheme group_t --bits 4 --g 128", &out), 0);
  EXPECT_EQ(nlohmann::json::parse(out)["bpe_k"], 4.25);
  EXPECT_EQ(run("memory --layers 0"), 2);
}

TEST_F(Cli, Awq) {
  std::string out;
  ASSERT_EQ(run("awq --n-alpha 1 --b 3", &out), 0);
  EXPECT_EQ(nlohmann::json::parse(out)["alpha_star"], 0.0);

  ASSERT_EQ(run("awq --b 16 --n-alpha 3", &out), 0);
  for (const auto& point : nlohmann::json::parse(out)["objective_curve"]) {
    EXPECT_LT(point[1].get<double>(), 1e-2);
  }

  ASSERT_EQ(run("awq --b 3", &out), 0);
  const auto j = nlohmann::json::parse(out);
  EXPECT_GT(j["alpha_star"].get<double>(), 0.0);
  double at_zero = j["objective_curve"][0][1];
  double best = at_zero;
  for (const auto& p : j["objective_curve"]) best = std::min(best, p[1].get<double>());
  EXPECT_LT(best, at_zero);
  EXPECT_EQ(run("awq --g-w 100"), 2);
  EXPECT_EQ(run("awq --weights /nonexistent.kvt1 --calib /nonexistent.kvt1"), 3);
}

TEST_F(Cli, SweepGoldenHeaderAndByteStability) {
  const auto config = write("sweep.json", std::string(R"({"specs": [)") + kOutlierSpec +
                                              R"(], "schemes": [{"kind": "group_t", "b": [2, 4], "g": 32},
                                                 {"kind": "group_t", "b": 4, "g": 48}]})");
  const auto out1 = dir_ / "a.csv";
  const auto out2 = dir_ / "b.csv";
  ASSERT_EQ(run("sweep " + config.string() + " --no-timing --out " + out1.string()), 0);
  ASSERT_EQ(run("sweep " + config.string() + " --no-timing --threads 1 --out " + out2.string()), 0);
  const auto a = slurp(out1);
  EXPECT_EQ(a, slurp(out2));
  const auto l = lines(a);
  ASSERT_EQ(l.size(), 4u);
  EXPECT_EQ(l[0], "spec_id,kind,b_k,b_v,g,g1,g2,s,mode,mse,max_abs_err,bpe_k,bpe_v,wall_ms,status");
  EXPECT_EQ(fields(l[3]).back(), "config_error");

  std::string shifted;
  ASSERT_EQ(run("sweep " + config.string() + " --no-timing --seed 1", &shifted), 0);
  EXPECT_NE(shifted, a);
}

TEST_F(Cli, SweepErrors) {
  EXPECT_EQ(run("sweep " + write("bad.json", R"({"specs": [], "schemes": [{"kind": "x"}]})").string()), 2);
  EXPECT_NE(slurp(dir_ / "stderr.txt").find("/schemes/0/kind"), std::string::npos);
  EXPECT_EQ(run("sweep /nonexistent/config.json"), 3);
}

TEST_F(Cli, QuantizeRoundTrip) {
  const auto in = dir_ / "t.kvt1";
  write_tensor(in, generate({Gaussian{}, 16, 32, 1}));
  const auto out = dir_ / "r.kvt1";
  const auto dump = dir_ / "d.json";
  std::string stats;
  ASSERT_EQ(run("quantize --in " + in.string() + " --scheme group_t --bits 4 --g 32 --out " + out.string() +
                    " --dump " + dump.string(),
                &stats),
            0);
  EXPECT_EQ(read_tensor(out).rows(), 16u);
  const auto d = nlohmann::json::parse(slurp(dump));
  EXPECT_EQ(d["groups"].size(), 16u);
  EXPECT_FALSE(stats.empty());

  write("junk.kvt1", "XXXXjunk");
  EXPECT_EQ(run("quantize --scheme uniform --bits 2 --in " + (dir_ / "junk.kvt1").string()), 3);
  EXPECT_EQ(run("quantize --in " + in.string() + " --scheme group_t --bits 4 --g 48"), 2);
}

}  // namespace
}  // namespace kvq
