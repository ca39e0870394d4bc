#pragma once

// Experiment drivers: region-of-attraction estimates, the random linear
// suite, the cart-pole study and the reward-shaping counterexample. Every
// driver takes an ExperimentConfig and writes its artifacts below out_dir.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "dastab/anneal.hpp"
#include "dastab/dynamics.hpp"
#include "dastab/linear_system.hpp"
#include "dastab/lqr.hpp"
#include "dastab/rng.hpp"

namespace dastab {

struct RoaConfig {
  long directions = 64;
  long horizon = 2000;
  double convergence_tol = 1e-3;  // converged when ||x_T|| <= tol * radius
  double bisect_tol = 1e-3;
  double scan_step = 0.05;
  double ceiling = 3.0;  // radii are not searched past this
  std::uint64_t seed = 0;

  void validate() const;
};

struct RoaReport {
  std::string controller;
  std::vector<double> radii;  // per direction, capped at the ceiling
  double rho_roa = 0.0;       // min over directions
  long directions = 0;
};

/// True when the undamped closed loop x+ = G(x, Kx) from x0 ends within
/// tol * ||x0|| of the origin after `horizon` steps without blowing up.
bool converges(const NonlinearSystem& sys, const MatrixXd& gain,
               const VectorXd& x0, long horizon, double tol);

/// Largest radius along `direction` (unit) such that the closed loop
/// converges from every scanned radius up to it. Scans in scan_step
/// increments to the first failure, then bisects.
double roa_radius(const NonlinearSystem& sys, const MatrixXd& gain,
                  const VectorXd& direction, const RoaConfig& cfg);

/// Min of roa_radius over cfg.directions seeded random unit directions.
RoaReport estimate_roa(const NonlinearSystem& sys, const MatrixXd& gain,
                       const RoaConfig& cfg, std::string controller = "");

/// Random (A, B) with rho(A) uniform in [rho_min, rho_max], Gaussian entries
/// and a finite undiscounted optimum below max_optimal_cost. Redraws until
/// the DARE converges.
LinearSystem random_unstable_system(Rng& rng, Eigen::Index state_dim,
                                    Eigen::Index input_dim, double rho_min,
                                    double rho_max,
                                    double max_optimal_cost = 1e6);

struct SystemSpec {
  enum class Kind { kLinear, kCartPole };
  Kind kind = Kind::kCartPole;
  LinearSystem linear;
  CartPoleParams cartpole;
};

SystemPtr make_system(const SystemSpec& spec);

struct SuiteConfig {
  long instances = 10;
  std::vector<long> dims{2, 3, 4};
  double rho_min = 1.0;
  double rho_max = 2.0;
  bool sampled = false;  // also run every instance with the sampled oracle
};

struct CartPoleStudy {
  std::vector<double> radii{0.1};
  long trials = 3;
};

struct ExperimentConfig {
  std::string name = "experiment";
  std::uint64_t seed = 0;
  std::string out_dir = "out";
  SystemSpec system;
  /// Q = scale I and R = scale I. Defaults to the time step for the
  /// cart-pole and 1 for linear systems.
  std::optional<double> cost_scale;
  RunConfig run;
  /// When set, the Adam learning rate is lr_over_radius / r.
  std::optional<double> lr_over_radius;
  RoaConfig roa;
  SuiteConfig suite;
  CartPoleStudy cartpole;
  double counterexample_gamma = 0.225;

  CostSpec cost() const;
  /// Fully resolved config; the config hash is taken over this.
  nlohmann::json to_json() const;
  static ExperimentConfig from_json(const nlohmann::json& j);
  std::uint64_t hash() const;
};

ExperimentConfig load_experiment_config(const std::string& path);

/// One anneal run with its own seed and query radius.
struct TrialSpec {
  long index = 0;
  double radius = 0.1;
  std::uint64_t seed = 0;
};

struct TrialOutcome {
  TrialSpec trial;
  std::string status = "ok";  // "ok" or an error kind
  std::string message;
  AnnealState state;
  std::optional<RoaReport> roa;
  double final_cost = 0.0;
  std::vector<double> lin_gain_error;  // ||K_t - K_lin(g_t)||_F per iteration
};

/// Runs (or resumes from dir/manifest.json when it exists and `resume` is set)
/// one anneal of the configured system, writing the manifest after every
/// iteration and the query transcript next to it.
TrialOutcome run_trial(const ExperimentConfig& cfg, const TrialSpec& trial,
                       const std::string& dir, bool resume);

struct CartPoleSummary {
  std::vector<TrialOutcome> trials;
  std::optional<RoaReport> lqr_roa;
  nlohmann::json table;  // table1 rows
};

/// Trials over every (r, trial) pair plus the LQR baseline. Writes
/// table1.csv, baselines.csv, traces.csv and trials.csv.
CartPoleSummary run_cartpole(const ExperimentConfig& cfg, bool resume = false);

struct SuiteRow {
  long instance = 0;
  std::string mode;
  Eigen::Index state_dim = 0;
  Eigen::Index input_dim = 0;
  double rho_open = 0.0;
  double optimal_cost = 0.0;  // tr(P*)
  double final_cost = 0.0;
  double gap = 0.0;
  long outer_iterations = 0;
  long max_search_queries = 0;
  long search_budget = 0;  // 3 (ceil(4 log tr P*) + 10)
  long total_queries = 0;
  double rho_closed = 0.0;
  std::string status = "ok";
  std::string message;
};

std::vector<SuiteRow> run_linear_suite(const ExperimentConfig& cfg);

/// Single linear run from cfg.system (which must be linear).
TrialOutcome run_linear(const ExperimentConfig& cfg, bool resume = false);

struct CounterexampleReport {
  double gamma = 0.0;
  RewardShapingWitness witness;
  nlohmann::json record;
};

CounterexampleReport run_counterexample(const ExperimentConfig& cfg);

/// DARE gain of the Jacobian linearization and its region of attraction.
RoaReport run_baseline_lqr(const ExperimentConfig& cfg);

/// The published H-infinity baseline radius for the unit cart-pole.
inline constexpr double kHinfReferenceRoa = 0.506;

}  // namespace dastab
