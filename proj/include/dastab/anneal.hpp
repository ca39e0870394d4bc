#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "dastab/dynamics.hpp"
#include "dastab/oracles.hpp"

namespace dastab {

enum class Optimizer { kPlainGd, kAdam };

/// kCertifiedGap stops once J(K | g) - min_K J(K | g) <= gap target, which
/// needs an oracle that knows the optimum. kFixedSteps runs max_steps steps.
enum class PgStop { kCertifiedGap, kFixedSteps };

struct PgConfig {
  Optimizer optimizer = Optimizer::kPlainGd;
  PgStop stop = PgStop::kCertifiedGap;
  /// Plain GD: initial step size (adapted by backtracking when the oracle is
  /// exact). Adam: learning rate.
  double step_size = 1e-3;
  long max_steps = 200;
  /// Defaults to d_x times the cost scale.
  std::optional<double> gap_target;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
  /// Consecutive failed steps tolerated before InnerDiverged.
  int guard_steps = 5;

  void validate() const;
};

struct PgResult {
  MatrixXd gain;
  long steps = 0;
  double initial_cost = 0.0;
  double final_cost = 0.0;
  std::optional<double> optimal_cost;  // certified mode only
  std::vector<double> cost_trace;      // cost at each visited iterate
};

/// Minimizes J(. | g) from `initial_gain` with the oracle's gradients.
/// Throws InnerDiverged if the initial gain has infinite cost or the guard
/// trips.
PgResult policy_gradient(CostOracle& oracle, const MatrixXd& initial_gain,
                         double gamma, const PgConfig& cfg);

/// Accept band for the discount search. A query value a is accepted by
/// bisection when lower + tolerance <= a <= upper + tolerance; random search
/// accepts lower <= a <= upper.
struct SearchBracket {
  double lower = 0.0;      // f1 estimate, in [2.5, 3] J
  double upper = 0.0;      // f2 estimate, in [7, 7.5] J
  double tolerance = 0.0;  // query accuracy eps
  long budget = 0;         // maximum queries, including the one at g = 1
  double cap = 0.0;        // value passed to capped cost queries

  void validate() const;
};

/// Ratios c1 < c2 of the search target c1 J <= J(K | g') <= c2 J.
struct BracketRatios {
  double low = 2.5;
  double high = 8.0;
};

/// Builds the bracket around an estimate of the current cost: lower =
/// (c1 + 0.25) J, upper = (c2 - 0.75) J, cap = c2 J + 2 eps, and budget
/// 3 (ceil(4 ln J) + 10) unless overridden.
SearchBracket make_bracket(double current_cost, double tolerance,
                           const BracketRatios& ratios = {},
                           std::optional<long> budget = std::nullopt);

/// Capped cost as a function of the discount.
using DiscountEvaluator = std::function<double(double gamma)>;

struct SearchResult {
  double gamma = 1.0;
  double value = 0.0;  // query value at the returned discount
  long queries = 0;
  bool reached_one = false;  // returned through the g = 1 branch
  std::vector<std::pair<double, double>> transcript;  // (g, value)
};

/// Bisection on [gamma_t, 1]. Queries g = 1 first and returns 1 when that
/// value does not exceed the band. Throws BudgetExceeded.
SearchResult binary_search_gamma(const DiscountEvaluator& evaluator,
                                 double gamma_t, const SearchBracket& bracket);

/// Uniform sampling on [gamma_t, 1] until a value lands in [lower, upper],
/// with the same g = 1 branch. Throws BudgetExceeded after max_iters samples.
SearchResult random_search_gamma(const DiscountEvaluator& evaluator,
                                 double gamma_t, const SearchBracket& bracket,
                                 long max_iters, std::uint64_t seed);

enum class SearchMode { kAuto, kBinary, kRandom };

struct AnnealConfig {
  PgConfig pg;
  BracketRatios ratios;
  /// Query accuracy eps as a multiple of d_x times the cost scale. Defaults to
  /// 0.1 for binary search and 0.01 for random search.
  std::optional<double> tolerance_factor;
  std::optional<long> search_budget;
  SearchMode search = SearchMode::kAuto;
  long random_search_max_iters = 200;
  long max_outer_iterations = 10'000;
  std::uint64_t seed = 0;

  void validate() const;
};

struct IterationRecord {
  long t = 0;
  double gamma = 0.0;
  long pg_steps = 0;
  double cost_start = 0.0;  // J(K_t | g_t)
  double cost_end = 0.0;    // J(K_{t+1} | g_t)
  std::optional<double> optimal_cost;
  double next_gamma = 1.0;
  double next_cost = 0.0;   // search value J(K_{t+1} | g_{t+1})
  long search_queries = 0;
  long eval_queries = 0;    // this iteration, search included
  long grad_queries = 0;    // this iteration
  std::vector<std::pair<double, double>> transcript;
  MatrixXd gain;            // K_{t+1}
};

struct AnnealState {
  long t = 0;
  double gamma = 0.0;
  MatrixXd gain;
  std::vector<IterationRecord> history;
  bool finished = false;
  std::uint64_t next_query_index = 0;

  /// Number of discount increases performed.
  long outer_iterations() const;
};

using IterationCallback = std::function<void(const AnnealState&)>;

/// 0.9 / ||A_jac||_2^2.
double default_initial_gamma(const NonlinearSystem& sys);

/// Fresh state at (initial_gamma, K = 0).
AnnealState initial_anneal_state(Eigen::Index state_dim, Eigen::Index input_dim,
                                 double initial_gamma);

/// Alternates policy gradient and discount search until g = 1, then runs
/// policy gradient once more. `state` is advanced in place, so a run can be
/// resumed from a saved state. `linear` selects bisection under
/// SearchMode::kAuto. Errors are rethrown with the iteration index attached.
void discount_anneal(CostOracle& oracle, bool linear, const AnnealConfig& cfg,
                     AnnealState& state,
                     const IterationCallback& on_iteration = {});

enum class OracleMode { kExact, kSampled };

struct RunConfig {
  OracleMode mode = OracleMode::kSampled;
  OracleConfig oracle;
  AnnealConfig anneal;
  std::optional<double> initial_gamma;
};

/// Convenience entry point that builds the oracle for `sys`. Exact mode
/// requires a LinearDynamics system.
AnnealState discount_anneal(const SystemPtr& sys, const CostSpec& cost,
                            const RunConfig& cfg,
                            const IterationCallback& on_iteration = {});

}  // namespace dastab
