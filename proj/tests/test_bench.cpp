#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include <gtest/gtest.h>
#include <json.hpp>

#include "dastab/bench.hpp"
#include "dastab/errors.hpp"
#include "dastab/io.hpp"
#include "dastab/lqr.hpp"
#include "dastab/matops.hpp"
#include "test_util.hpp"

namespace dastab {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

class TempDir {
 public:
  explicit TempDir(const std::string& name) : path_(fs::temp_directory_path() / name) {
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  std::string str() const { return path_.string(); }
  std::string file(const std::string& name) const { return (path_ / name).string(); }

 private:
  fs::path path_;
};

// x+ = x/2 + x^2 + u. With u = 0 the basin is (-1, 1/2): x = 1/2 is a
// repelling fixed point and x = -1 maps onto it.
class Quadratic final : public NonlinearSystem {
 public:
  Eigen::Index state_dim() const override { return 1; }
  Eigen::Index input_dim() const override { return 1; }
  std::string descriptor() const override { return "quadratic"; }
  void step(const Eigen::Ref<const VectorXd>& x, const Eigen::Ref<const VectorXd>& u,
            Eigen::Ref<VectorXd> next) const override {
    next(0) = 0.5 * x(0) + x(0) * x(0) + u(0);
  }
  void jacobian(const Eigen::Ref<const VectorXd>& x, const Eigen::Ref<const VectorXd>&,
                Eigen::Ref<MatrixXd> dx, Eigen::Ref<MatrixXd> du) const override {
    dx(0, 0) = 0.5 + 2.0 * x(0);
    du(0, 0) = 1.0;
  }
};

TEST(Roa, KnownBasin) {
  const Quadratic sys;
  RoaConfig cfg;
  const MatrixXd k = MatrixXd::Zero(1, 1);
  const double up = roa_radius(sys, k, VectorXd::Ones(1), cfg);
  const double down = roa_radius(sys, k, -VectorXd::Ones(1), cfg);
  EXPECT_LE(up, 0.5);
  EXPECT_GE(up, 0.5 - cfg.bisect_tol);
  EXPECT_LE(down, 1.0);
  EXPECT_GE(down, 1.0 - cfg.bisect_tol);
  cfg.directions = 8;
  const RoaReport r = estimate_roa(sys, k, cfg, "zero");
  EXPECT_EQ(r.controller, "zero");
  EXPECT_EQ(r.radii.size(), 8u);
  EXPECT_NEAR(r.rho_roa, 0.5, cfg.bisect_tol);
}

TEST(Roa, StableLinearLoopHitsTheCeiling) {
  const LinearSystem lin{0.5 * MatrixXd::Identity(2, 2), MatrixXd::Ones(2, 1)};
  RoaConfig cfg;
  cfg.directions = 4;
  EXPECT_EQ(estimate_roa(*linear_as_nonlinear(lin), MatrixXd::Zero(1, 2), cfg).rho_roa,
            cfg.ceiling);
}

TEST(Roa, OpenLoopCartPoleHasNoBasin) {
  RoaConfig cfg;
  cfg.directions = 8;
  EXPECT_EQ(estimate_roa(*cartpole(), MatrixXd::Zero(1, 4), cfg).rho_roa, 0.0);
}

TEST(Roa, CartPoleLqrGain) {
  const auto cp = cartpole();
  const auto [a, b] = jacobian_linearization(*cp);
  const MatrixXd k = solve_dare(LinearSystem{a, b}, CostSpec::scaled_identity(4, 1, 0.05), 1.0).gain;
  Eigen::RowVectorXd ref(4);
  ref << 0.8997, -8.8786, 3.6539, -7.8355;
  EXPECT_LE((k - ref).cwiseAbs().maxCoeff(), 1e-4);
  const RoaReport r = estimate_roa(*cp, k, RoaConfig{});
  EXPECT_NEAR(r.rho_roa, 0.703, 0.05);
}

TEST(Roa, ConvergesRejectsBlowup) {
  const LinearSystem lin{MatrixXd::Constant(1, 1, 2.0), MatrixXd::Ones(1, 1)};
  EXPECT_FALSE(converges(*linear_as_nonlinear(lin), MatrixXd::Zero(1, 1), VectorXd::Ones(1), 100,
                         1e-3));
  EXPECT_TRUE(converges(*linear_as_nonlinear(lin), MatrixXd::Constant(1, 1, -1.9),
                        VectorXd::Ones(1), 100, 1e-3));
}

TEST(RandomSystems, SpectralRadiusInRange) {
  Rng rng(1);
  for (int i = 0; i < 50; ++i) {
    const auto dx = testing::uniform_int(rng, 1, 4);
    const LinearSystem s = random_unstable_system(rng, dx, 1, 1.0, 2.0);
    const double rho = spectral_radius(s.a);
    EXPECT_GE(rho, 1.0 - 1e-12);
    EXPECT_LE(rho, 2.0 + 1e-12);
    EXPECT_LE(solve_dare(s, CostSpec::identity(dx, 1), 1.0).value.trace(), 1e6);
  }
  EXPECT_THROW(random_unstable_system(rng, 0, 1, 1.0, 2.0), std::invalid_argument);
}

ExperimentConfig parse(const std::string& text, const std::string& out) {
  json j = json::parse(text);
  j["out_dir"] = out;
  return ExperimentConfig::from_json(j);
}

TEST(Suite, SmallExactSuite) {
  TempDir dir("dastab_bench_suite");
  const ExperimentConfig cfg =
      parse(R"({"seed": 3, "system": {"type": "linear", "A": [[2]], "B": [[1]]},
                "suite": {"instances": 3, "dims": [2, 3]}})",
            dir.str());
  const auto rows = run_linear_suite(cfg);
  ASSERT_EQ(rows.size(), 3u);
  for (const auto& r : rows) {
    EXPECT_EQ(r.status, "ok") << r.message;
    EXPECT_LT(r.rho_closed, 1.0);
    EXPECT_LE(r.gap, static_cast<double>(r.state_dim) * (1 + 1e-9));
    EXPECT_GE(r.rho_open, 1.0 - 1e-12);
    EXPECT_LE(r.max_search_queries, r.search_budget);
  }
  EXPECT_EQ(rows[0].state_dim, 2);
  EXPECT_EQ(rows[1].state_dim, 3);
  const CsvTable t = read_csv_file(dir.file("linear_suite.csv"));
  EXPECT_EQ(t.rows.size(), 3u);
  EXPECT_EQ(t.comments.front(), "config_hash " + hex64(cfg.hash()));
  EXPECT_EQ(t.rows[2][t.column("status")], "ok");

  // Same seed, same suite.
  const auto again = run_linear_suite(cfg);
  for (std::size_t i = 0; i < rows.size(); ++i) EXPECT_EQ(again[i].final_cost, rows[i].final_cost);
}

TEST(Counterexample, FileIsReproducible) {
  TempDir dir("dastab_bench_counter");
  const ExperimentConfig cfg = parse(R"({"seed": 1})", dir.str());
  const CounterexampleReport a = run_counterexample(cfg);
  const std::string first = read_text_file(dir.file("counterexample.json"));
  run_counterexample(cfg);
  EXPECT_EQ(read_text_file(dir.file("counterexample.json")), first);
  EXPECT_LT(a.witness.rho_damped, 1.0);
  EXPECT_GT(a.witness.rho_undamped, 1.0);
  EXPECT_EQ(json::parse(first)["gamma"].get<double>(), 0.225);
}

const char* kTinyCartPole = R"({
  "seed": 5,
  "system": {"type": "cartpole"},
  "oracle": {"samples": 20, "horizon": 150},
  "pg": {"max_steps": 20},
  "roa": {"directions": 4, "horizon": 400},
  "cartpole": {"radii": [0.05], "trials": 1}
})";

TEST(CartPoleStudy, WritesArtifactsAndResumes) {
  TempDir dir("dastab_bench_cartpole");
  const ExperimentConfig cfg = parse(kTinyCartPole, dir.str());
  const CartPoleSummary s = run_cartpole(cfg);
  ASSERT_EQ(s.trials.size(), 1u);
  const CsvTable table = read_csv_file(dir.file("table1.csv"));
  const std::vector<std::string> cols = {"r", "roa_min", "roa_max", "trials", "iters_max",
                                         "final_cost_min", "final_cost_max"};
  EXPECT_EQ(table.header, cols);
  EXPECT_EQ(table.rows.size(), 1u);
  EXPECT_EQ(table.comments[0], "config_hash " + hex64(cfg.hash()));
  EXPECT_EQ(table.comments[1], "seed 5");

  const std::string trial_dir = dir.file("r0.05/trial0");
  const json manifest = json::parse(read_text_file(trial_dir + "/manifest.json"));
  EXPECT_EQ(manifest["config_hash"], hex64(cfg.hash()));
  EXPECT_EQ(manifest["seed"], 5);
  EXPECT_TRUE(fs::exists(trial_dir + "/queries.jsonl"));
  EXPECT_TRUE(fs::exists(trial_dir + "/trace.csv"));
  EXPECT_TRUE(fs::exists(dir.file("baselines.csv")));
  if (s.trials[0].status == "ok") {
    EXPECT_EQ(manifest["status"], "finished");
    EXPECT_EQ(read_matrix_csv(trial_dir + "/gain.csv"), s.trials[0].state.gain);
    EXPECT_TRUE(fs::exists(trial_dir + "/rollout.csv"));
  }

  // A finished run resumes to the same artifacts without new queries.
  const std::string table_before = read_text_file(dir.file("table1.csv"));
  const std::string log_before = read_text_file(trial_dir + "/queries.jsonl");
  const CartPoleSummary resumed = run_cartpole(cfg, true);
  EXPECT_EQ(read_text_file(dir.file("table1.csv")), table_before);
  if (s.trials[0].status == "ok") {
    EXPECT_EQ(read_text_file(trial_dir + "/queries.jsonl"), log_before);
    EXPECT_EQ(resumed.trials[0].state.gain, s.trials[0].state.gain);
  }

  // A fresh rerun with the same seed reproduces the study bit for bit.
  run_cartpole(cfg, false);
  EXPECT_EQ(read_text_file(dir.file("table1.csv")), table_before);

  json j = json::parse(kTinyCartPole);
  j["out_dir"] = dir.str();
  j["oracle"]["horizon"] = 151;
  EXPECT_THROW(run_cartpole(ExperimentConfig::from_json(j), true), ConfigError);
}

TEST(Baseline, CartPoleRows) {
  TempDir dir("dastab_bench_baseline");
  ExperimentConfig cfg = parse(R"({"roa": {"directions": 8}})", dir.str());
  const RoaReport r = run_baseline_lqr(cfg);
  const CsvTable t = read_csv_file(dir.file("baselines.csv"));
  ASSERT_EQ(t.rows.size(), 2u);
  EXPECT_EQ(t.rows[0][0], "lqr");
  EXPECT_EQ(parse_double(t.rows[0][1]), r.rho_roa);
  EXPECT_EQ(t.rows[0][2], "computed");
  EXPECT_EQ(t.rows[1][0], "hinf");
  EXPECT_EQ(t.rows[1][2], "external");
  EXPECT_EQ(read_matrix_csv(dir.file("lqr_gain.csv")).cols(), 4);
}

// --- command line ---------------------------------------------------------

struct CliResult {
  int code;
  std::string out;
  std::string err;
};

CliResult run_cli(const std::string& args, const TempDir& dir) {
  const std::string out = dir.file("stdout.txt"), err = dir.file("stderr.txt");
  const std::string cmd =
      std::string(DASTAB_CLI_PATH) + " " + args + " > " + out + " 2> " + err;
  const int status = std::system(cmd.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, read_text_file(out), read_text_file(err)};
}

TEST(Cli, Counterexample) {
  TempDir dir("dastab_cli_counter");
  const CliResult r = run_cli("counterexample --out " + dir.file("o") + " --seed 9", dir);
  ASSERT_EQ(r.code, 0) << r.err;
  const json out = json::parse(r.out);
  EXPECT_EQ(out["seed"], 9);
  EXPECT_LT(out["rho_damped"].get<double>(), 1.0);
  EXPECT_TRUE(fs::exists(dir.file("o/counterexample.json")));
}

TEST(Cli, AnnealLinearSystem) {
  TempDir dir("dastab_cli_linear");
  {
    std::ofstream cfg(dir.file("cfg.json"));
    cfg << R"({"system": {"type": "linear", "A": [[1.5, 0.2], [0, 0.7]], "B": [[1], [0.5]]}})";
  }
  const CliResult r = run_cli("anneal-linear --config " + dir.file("cfg.json") + " --out " +
                                  dir.file("o") + " --oracle exact",
                              dir);
  ASSERT_EQ(r.code, 0) << r.err;
  const json out = json::parse(r.out);
  EXPECT_EQ(out["run"]["status"], "ok");
  EXPECT_TRUE(fs::exists(dir.file("o/gain.csv")));
  EXPECT_TRUE(fs::exists(dir.file("o/manifest.json")));
  EXPECT_TRUE(fs::exists(dir.file("o/rollout.csv")));
}

TEST(Cli, ErrorsAreJson) {
  TempDir dir("dastab_cli_errors");
  {
    std::ofstream cfg(dir.file("bad.json"));
    cfg << R"({"sytem": {}})";
  }
  CliResult r = run_cli("counterexample --config " + dir.file("bad.json"), dir);
  EXPECT_EQ(r.code, 2);
  json e = json::parse(r.err);
  EXPECT_EQ(e["error"]["kind"], "ConfigError");
  EXPECT_NE(e["error"]["message"].get<std::string>().find("sytem"), std::string::npos);

  r = run_cli("no-such-command", dir);
  EXPECT_EQ(r.code, 2);
  EXPECT_EQ(json::parse(r.err)["error"]["kind"], "UsageError");

  r = run_cli("roa --oracle psychic", dir);
  EXPECT_EQ(r.code, 2);

  write_matrix_csv(dir.file("k.csv"), MatrixXd::Zero(1, 3));
  r = run_cli("roa --gain " + dir.file("k.csv") + " --out " + dir.file("o"), dir);
  EXPECT_EQ(r.code, 2);
  EXPECT_EQ(json::parse(r.err)["error"]["kind"], "ConfigError");

  {
    std::ofstream cfg(dir.file("cp.json"));
    cfg << R"({"system": {"type": "cartpole"}})";
  }
  r = run_cli("anneal-cartpole --oracle exact --config " + dir.file("cp.json"), dir);
  EXPECT_EQ(r.code, 2);
}

TEST(Cli, RoaOfSavedGain) {
  TempDir dir("dastab_cli_roa");
  {
    std::ofstream cfg(dir.file("cfg.json"));
    cfg << R"({"roa": {"directions": 4}})";
  }
  write_matrix_csv(dir.file("k.csv"), MatrixXd::Zero(1, 4));
  const CliResult r = run_cli("roa --config " + dir.file("cfg.json") + " --gain " +
                                  dir.file("k.csv") + " --out " + dir.file("o"),
                              dir);
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(json::parse(r.out)["rho_roa"].get<double>(), 0.0);
  const json saved = json::parse(read_text_file(dir.file("o/roa.json")));
  EXPECT_EQ(saved["radii"].size(), 4u);
}

}  // namespace
}  // namespace dastab
