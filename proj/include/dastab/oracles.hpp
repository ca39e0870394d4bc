#pragma once

// Noisy cost and gradient queries. Every Monte-Carlo query is a pure function
// of its inputs and (seed, query index): rollout i of query q draws from the
// stream substream_seed(seed, q, i).

#include <cstdint>
#include <fstream>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <string>

#include <Eigen/Dense>

#include "dastab/dynamics.hpp"
#include "dastab/linear_system.hpp"

namespace dastab {

enum class GradientEstimator { kSensitivity, kZerothOrder };

struct OracleConfig {
  long samples = 1000;  // rollouts per query
  long horizon = 400;
  double radius = 0.1;  // initial states uniform on radius * sphere
  std::uint64_t seed = 0;
  double cap = 1e9;
  double smoothing_radius = 1e-2;  // zeroth-order only
  GradientEstimator estimator = GradientEstimator::kSensitivity;
  double blowup_factor = 1e6;

  void validate() const;
};

struct QueryResult {
  double value = 0.0;
  double std_error = 0.0;
  MatrixXd gradient;            // empty for cost queries
  MatrixXd gradient_std_error;  // elementwise, same shape as gradient
  bool capped = false;
  long rollouts_used = 0;
  long rollouts_diverged = 0;
};

/// Capped Monte-Carlo estimate of the normalized finite-horizon cost
/// (d_x / r^2) * mean_i J^(H)(K | g, x_i), x_i ~ r S^{d_x - 1}. The value is
/// min(estimate, cap); `capped` is set when any rollout diverged or the
/// estimate reached the cap.
QueryResult eps_eval(const NonlinearSystem& sys, const MatrixXd& gain,
                     double gamma, const OracleConfig& cfg,
                     const CostSpec& cost, std::uint64_t query_index = 0);

/// Exact gradient of the same finite-horizon sample average, obtained by
/// propagating dx_t/dK along each rollout. Diverged rollouts are dropped and
/// counted; `value` is the mean normalized cost of the retained rollouts.
/// Throws DivergedAll when no rollout survives.
QueryResult eps_grad_sensitivity(const NonlinearSystem& sys,
                                 const MatrixXd& gain, double gamma,
                                 const OracleConfig& cfg, const CostSpec& cost,
                                 std::uint64_t query_index = 0);

/// Objective for the two-point estimator: the cost of `gain` on sample
/// `sample`, evaluated for the +/- perturbation `side`. Returns nullopt when
/// the evaluation diverged.
using SampleObjective = std::function<std::optional<double>(
    const MatrixXd& gain, long sample, int side)>;

/// Two-point smoothing estimator
///   mean_i (d_K / (2 r_s)) [f(K + r_s U_i) - f(K - r_s U_i)] U_i
/// with U_i uniform on the unit Frobenius sphere of gain matrices.
QueryResult zeroth_order_gradient(const SampleObjective& objective,
                                  const MatrixXd& gain, long directions,
                                  double smoothing_radius, std::uint64_t seed,
                                  std::uint64_t query_index = 0);

/// zeroth_order_gradient with f = one capped rollout cost from a shared
/// initial state per direction.
QueryResult eps_grad_zeroth_order(const NonlinearSystem& sys,
                                  const MatrixXd& gain, double gamma,
                                  const OracleConfig& cfg,
                                  const CostSpec& cost,
                                  std::uint64_t query_index = 0);

/// Appends one JSON object per query to a log file.
class QueryLog {
 public:
  explicit QueryLog(const std::string& path);

  void record(const std::string& kind, std::uint64_t inputs_hash,
              const QueryResult& result);

 private:
  std::ofstream out_;
};

/// FNV-1a over the bit patterns of the query inputs.
std::uint64_t hash_query_inputs(const MatrixXd& gain, double gamma,
                                std::uint64_t seed, std::uint64_t query_index);

/// Cost/gradient access used by the annealer. Implementations count their
/// queries.
class CostOracle {
 public:
  virtual ~CostOracle() = default;

  virtual Eigen::Index state_dim() const = 0;
  virtual Eigen::Index input_dim() const = 0;

  /// Cost at (K, g), truncated at `cap`.
  virtual QueryResult eval(const MatrixXd& gain, double gamma, double cap) = 0;
  /// Cost and gradient at (K, g).
  virtual QueryResult grad(const MatrixXd& gain, double gamma) = 0;

  /// min_K J(K | g) when it can be computed exactly.
  virtual std::optional<double> optimal_cost(double) { return std::nullopt; }

  virtual bool exact() const = 0;
  /// Scale of the stage cost, min eigenvalue of Q and R.
  virtual double cost_scale() const = 0;

  long eval_count() const { return eval_count_; }
  long grad_count() const { return grad_count_; }

 protected:
  long eval_count_ = 0;
  long grad_count_ = 0;
};

/// Closed-form LQR cost and gradient.
class ExactLinearOracle final : public CostOracle {
 public:
  ExactLinearOracle(LinearSystem sys, CostSpec cost);

  Eigen::Index state_dim() const override { return sys_.state_dim(); }
  Eigen::Index input_dim() const override { return sys_.input_dim(); }
  QueryResult eval(const MatrixXd& gain, double gamma, double cap) override;
  QueryResult grad(const MatrixXd& gain, double gamma) override;
  std::optional<double> optimal_cost(double gamma) override;
  bool exact() const override { return true; }
  double cost_scale() const override { return cost_.min_eigenvalue(); }

 private:
  LinearSystem sys_;
  CostSpec cost_;
};

/// Simulator-only oracle backed by eps_eval and one of the gradient
/// estimators. Query indices advance by one per query.
class SampledOracle final : public CostOracle {
 public:
  SampledOracle(SystemPtr sys, CostSpec cost, OracleConfig cfg,
                std::shared_ptr<QueryLog> log = nullptr);

  Eigen::Index state_dim() const override { return sys_->state_dim(); }
  Eigen::Index input_dim() const override { return sys_->input_dim(); }
  QueryResult eval(const MatrixXd& gain, double gamma, double cap) override;
  QueryResult grad(const MatrixXd& gain, double gamma) override;
  bool exact() const override { return false; }
  double cost_scale() const override { return cost_.min_eigenvalue(); }

  std::uint64_t next_query_index() const { return next_query_; }
  void set_next_query_index(std::uint64_t q) { next_query_ = q; }
  const OracleConfig& config() const { return cfg_; }

 private:
  SystemPtr sys_;
  CostSpec cost_;
  OracleConfig cfg_;
  std::shared_ptr<QueryLog> log_;
  std::uint64_t next_query_ = 0;
};

}  // namespace dastab
